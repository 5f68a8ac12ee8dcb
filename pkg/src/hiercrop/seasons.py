"""Season calendar: season ``n`` runs from 1 October of year n to 1 October of n+1."""
import datetime as dt
import math

SEASON_START_MONTH = 10
GRID_STEP_DAYS = 4


def season_start(season):
    return dt.date(season, SEASON_START_MONTH, 1)


def season_length(season):
    return (season_start(season + 1) - season_start(season)).days


def day_of_season(date, season):
    """Days since 1 October of ``season``; day 0 is 1 October."""
    return (date - season_start(season)).days


def season_offsets(seasons):
    """Day offset of each season's origin relative to the first one."""
    seasons = sorted(seasons)
    base = season_start(seasons[0])
    return {s: (season_start(s) - base).days for s in seasons}


def grid_length(season, step_days=GRID_STEP_DAYS):
    return math.ceil(season_length(season) / step_days)
