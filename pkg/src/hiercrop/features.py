"""Fixed-size modality inputs: RS window functionals, crop one-hots, local crop shares."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .signal import VARIABLES

N_WINDOWS = 24
N_FUNCTIONALS = 7
WINDOW_DAYS = 30
WINDOW_STEP_DAYS = 15
FUNCTIONAL_NAMES = ("mean", "std", "min", "max", "median", "q1", "q3")
SHARE_QUANTUM = 10_000  # shares are stored as multiples of 1e-4
STD_FLOOR = 1e-12


def feature_length(n_variables=len(VARIABLES)):
    return n_variables * N_WINDOWS * N_FUNCTIONALS


@dataclass
class SeasonFeatures:
    foi_id: str
    season: int
    values: np.ndarray
    missing: tuple = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def missing_rs(self):
        """True when no variable was available for the season."""
        return len(self.missing) * N_WINDOWS * N_FUNCTIONALS == len(self.values)

    def as_windows(self, n_variables=None):
        """(24, n_variables * 7) view: one row per window, [variable][functional] columns."""
        return to_windows(self.values, n_variables)


def to_windows(values, n_variables=None):
    values = np.asarray(values)
    n_var = n_variables or values.shape[-1] // (N_WINDOWS * N_FUNCTIONALS)
    lead = values.shape[:-1]
    cube = values.reshape(*lead, n_var, N_WINDOWS, N_FUNCTIONALS)
    cube = np.moveaxis(cube, -3, -2)
    return cube.reshape(*lead, N_WINDOWS, n_var * N_FUNCTIONALS)


def from_windows(windows, n_variables):
    windows = np.asarray(windows)
    lead = windows.shape[:-2]
    cube = windows.reshape(*lead, N_WINDOWS, n_variables, N_FUNCTIONALS)
    cube = np.moveaxis(cube, -2, -3)
    return cube.reshape(*lead, n_variables * N_WINDOWS * N_FUNCTIONALS)


def window_bounds(n_windows=N_WINDOWS, window_days=WINDOW_DAYS, step_days=WINDOW_STEP_DAYS):
    starts = step_days * np.arange(n_windows)
    return np.stack([starts, starts + window_days], axis=1)


def windowize(series, window_days=WINDOW_DAYS, step_days=WINDOW_STEP_DAYS, n_windows=N_WINDOWS):
    """Split a season series into ``n_windows`` overlapping day windows [start, start + W)."""
    days = series.days
    span = int(days[-1] - days[0]) + series.step_days if len(series) else 0
    if span < window_days:
        raise ValueError(f"series spans {span} days, shorter than one {window_days}-day window")
    out = []
    for lo, hi in window_bounds(n_windows, window_days, step_days):
        mask = (days >= series.start_day + lo) & (days < series.start_day + hi)
        if not mask.any():
            raise ValueError(f"window [{lo}, {hi}) holds no samples")
        out.append(series.values[mask])
    return out


def functionals(window):
    """mean, std (population), min, max, median, q1, q3 with linear quantiles."""
    x = np.asarray(window, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty window")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    return np.array([x.mean(), x.std(), x.min(), x.max(), med, q1, q3])


def season_features(series_by_var, foi_id="", season=0, variables=VARIABLES):
    """Concatenate window functionals in [variable][window][functional] order.

    Absent variables contribute a zero block and are listed in ``missing``.
    """
    block = N_WINDOWS * N_FUNCTIONALS
    values = np.zeros(len(variables) * block)
    missing = []
    for k, var in enumerate(variables):
        series = series_by_var.get(var)
        if series is None:
            missing.append(var)
            continue
        feats = np.concatenate([functionals(w) for w in windowize(series)])
        values[k * block : (k + 1) * block] = feats
    return SeasonFeatures(foi_id, season, values, tuple(missing))


def window_functionals(values, days, start_day=0):
    """Functionals of every window for many series sharing one day grid.

    ``values`` is (n, L) on ``days`` (L,); returns (n, 24, 7).
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    days = np.asarray(days)
    out = np.empty((values.shape[0], N_WINDOWS, N_FUNCTIONALS))
    for k, (lo, hi) in enumerate(window_bounds()):
        mask = (days >= start_day + lo) & (days < start_day + hi)
        if not mask.any():
            raise ValueError(f"window [{lo}, {hi}) holds no samples")
        x = values[:, mask]
        q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75], axis=1)
        out[:, k] = np.stack([x.mean(axis=1), x.std(axis=1), x.min(axis=1), x.max(axis=1), med, q1, q3], axis=1)
    return out


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_norm_stats(train):
    x = np.asarray(train, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 training rows")
    return NormStats(x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR))


def apply_norm(features, stats):
    return stats.apply(features)


@dataclass
class CropVocab:
    codes: tuple
    unknown: bool = False
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        codes = tuple(sorted(set(self.codes)))
        if len(codes) != len(self.codes):
            raise ValueError("crop codes must be unique")
        self.codes = codes
        self.index = {c: i for i, c in enumerate(codes)}

    def __len__(self):
        return len(self.codes) + (1 if self.unknown else 0)

    def __contains__(self, code):
        return code in self.index

    @property
    def unknown_index(self):
        if not self.unknown:
            raise KeyError("vocabulary has no UNKNOWN slot")
        return len(self.codes)

    def lookup(self, code):
        try:
            return self.index[code]
        except KeyError:
            if self.unknown:
                return len(self.codes)
            raise KeyError(f"crop code {code!r} not in vocabulary") from None


def crop_onehot(code, vocab):
    out = np.zeros(len(vocab))
    out[vocab.lookup(code)] = 1.0
    return out


def crop_distribution(xy, areas, crop_idx, n_codes, centers=None, radius_km=10.0):
    """Area share of each crop within ``radius_km`` of every center.

    ``xy``/``areas``/``crop_idx`` describe the reference-season parcels;
    ``centers`` defaults to the parcels themselves (each FOI counts itself).
    Returns integer shares in units of 1e-4, shape (n_centers, n_codes).
    """
    xy = np.asarray(xy, dtype=np.float64)
    areas = np.asarray(areas, dtype=np.float64)
    crop_idx = np.asarray(crop_idx, dtype=np.int64)
    centers = xy if centers is None else np.asarray(centers, dtype=np.float64)
    out = np.zeros((centers.shape[0], n_codes), dtype=np.int64)
    if xy.shape[0] == 0:
        warnings.warn("empty reference season, all crop distributions are zero", stacklevel=2)
        return out
    tree = cKDTree(xy)
    hits = tree.query_ball_point(centers, r=radius_km)
    empty = 0
    for i, nb in enumerate(hits):
        if not nb:
            empty += 1
            continue
        nb = np.asarray(nb)
        per_crop = np.bincount(crop_idx[nb], weights=areas[nb], minlength=n_codes)
        out[i] = np.rint(per_crop / areas[nb].sum() * SHARE_QUANTUM).astype(np.int64)
    if empty:
        warnings.warn(f"{empty} FOIs have an empty neighbourhood", stacklevel=2)
    return out


def shares_to_float(shares):
    return np.asarray(shares, dtype=np.float64) / SHARE_QUANTUM
