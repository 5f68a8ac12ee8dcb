"""Conditioning of irregular per-FOI observation series.

Chain: Hampel outlier flagging on RED (upward, clouds) and NIR (downward,
shadows), linear gap-filling on a 2-day grid, expectile Whittaker smoothing
with the smoothing parameter picked on a V-curve, resampling to a 4-day grid.
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import accel
from .seasons import GRID_STEP_DAYS, grid_length, season_length, season_offsets

VARIABLES = ("LAI", "FAPAR", "RED", "NIR")

_DIRECTIONS = {"both": 0, "up": 1, "down": -1}
_AUTO_DIRECTION = {"RED": "up", "NIR": "down"}


class ShortSeriesWarning(UserWarning):
    """Series too short for the requested Hampel window; returned unchanged."""


class InsufficientObservations(ValueError):
    pass


@dataclass
class ObservationSeries:
    variable_id: str
    timestamps: np.ndarray
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        n = self.timestamps.shape[0]
        if self.values.shape != (n,) or self.valid.shape != (n,):
            raise ValueError("timestamps, values and valid must have equal length")
        if n > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise ValueError(f"{self.variable_id}: timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.values[self.valid])):
            raise ValueError(f"{self.variable_id}: non-finite value flagged valid")

    def __len__(self):
        return self.timestamps.shape[0]

    @property
    def n_valid(self):
        return int(self.valid.sum())


@dataclass
class RegularSeries:
    variable_id: str
    start_day: int
    step_days: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.step_days < 1:
            raise ValueError("step_days must be >= 1")

    def __len__(self):
        return self.values.shape[0]

    @property
    def days(self):
        return self.start_day + self.step_days * np.arange(len(self))


@dataclass(frozen=True)
class WhittakerConfig:
    difference_order: int = 2
    envelope: float = 0.9
    log10_lambda_min: float = -1.0
    log10_lambda_max: float = 1.0
    n_lambdas: int = 21
    interp_step_days: int = 2
    max_iter: int = 50
    tol: float = 1e-3

    def __post_init__(self):
        if not 0.5 < self.envelope <= 1.0:
            raise ValueError("envelope must lie in (0.5, 1]")
        if not self.log10_lambda_min < self.log10_lambda_max:
            raise ValueError("log10_lambda_min must be below log10_lambda_max")
        if self.n_lambdas < 2:
            raise ValueError("need at least 2 lambda candidates")

    def lambda_grid(self, n=None):
        """log10 lambda candidates."""
        return np.linspace(self.log10_lambda_min, self.log10_lambda_max, n or self.n_lambdas)


def _resolve_direction(direction, variable_id):
    if direction == "auto":
        direction = _AUTO_DIRECTION.get(variable_id, "both")
    try:
        return _DIRECTIONS[direction]
    except KeyError:
        raise ValueError(f"unknown Hampel direction {direction!r}") from None


def hampel_filter(series, half_window=3, n_sigmas=3.0, direction="both"):
    """Flag outliers as invalid; values are left untouched.

    Windows run over the finite samples (valid or not), so re-running on the
    output yields the same flags. ``direction`` is "both", "up", "down" or
    "auto" (RED up, NIR down, anything else both).
    """
    if half_window < 1:
        raise ValueError("half_window must be >= 1")
    if n_sigmas <= 0:
        raise ValueError("n_sigmas must be > 0")
    sign = _resolve_direction(direction, series.variable_id)
    idx = np.flatnonzero(np.isfinite(series.values))
    if idx.shape[0] < 2 * half_window + 1:
        warnings.warn(
            f"{series.variable_id}: {idx.shape[0]} samples < window {2 * half_window + 1}, "
            "Hampel filter skipped",
            ShortSeriesWarning,
            stacklevel=2,
        )
        return dataclasses.replace(series, valid=series.valid.copy())
    flags = accel.hampel_flags(series.values[idx], half_window, n_sigmas, sign)
    valid = series.valid.copy()
    valid[idx[flags.astype(bool)]] = False
    return dataclasses.replace(series, valid=valid)


def linear_gapfill(series, step_days=2, start_day=None, end_day=None):
    """Interpolate valid samples onto a regular grid.

    Outside the first/last valid sample the boundary value is held.
    """
    if step_days < 1:
        raise ValueError("step_days must be >= 1")
    t = series.timestamps[series.valid]
    v = series.values[series.valid]
    if t.shape[0] < 2:
        raise InsufficientObservations(
            f"insufficient observations: {series.variable_id} has {t.shape[0]} valid samples"
        )
    start = int(series.timestamps[0]) if start_day is None else int(start_day)
    end = int(series.timestamps[-1]) if end_day is None else int(end_day)
    grid = np.arange(start, end + 1, step_days)
    return RegularSeries(series.variable_id, start, step_days, np.interp(grid, t, v))


def resample(series, step_days, n=None):
    """Linear resampling of a regular series onto a coarser/finer step."""
    if n is None:
        span = (len(series) - 1) * series.step_days
        n = span // step_days + 1
    grid = series.start_day + step_days * np.arange(n)
    values = np.interp(grid, series.days, series.values)
    return RegularSeries(series.variable_id, series.start_day, step_days, values)


def _weights(series, weights):
    n = len(series)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"weights length {w.shape} does not match series length {n}")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not np.any(w > 0):
        raise ValueError("no anchoring weight")
    return w


def whittaker_smooth(series, lam, weights=None, d=2, out_step_days=None):
    """Minimise sum w (y - z)^2 + lam |D^d z|^2 via a banded SPD solve."""
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    if d not in (1, 2):
        raise ValueError("difference order must be 1 or 2")
    w = _weights(series, weights)
    try:
        z = accel.whittaker_solve(series.values, w, float(lam), d)
    except np.linalg.LinAlgError:
        raise ValueError("no anchoring weight: system is singular") from None
    out = RegularSeries(series.variable_id, series.start_day, series.step_days, z)
    if out_step_days is not None and out_step_days != series.step_days:
        out = resample(out, out_step_days)
    return out


def asymmetric_weights(y, z, envelope):
    """``envelope`` where the data lies above the fit, ``1 - envelope`` elsewhere."""
    if not 0.5 <= envelope <= 1.0:
        raise ValueError("envelope must lie in [0.5, 1]")
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return np.where(y > z, envelope, 1.0 - envelope)


def expectile_smooth(series, lam, cfg=WhittakerConfig(), weights=None):
    """Fixed-point asymmetric smoothing; returns (smoothed series, weights, iterations)."""
    w = _weights(series, weights)
    z, wa, n_iter = accel.asym_whittaker(
        series.values, w, float(lam), cfg.envelope, cfg.difference_order, cfg.max_iter, cfg.tol
    )
    return RegularSeries(series.variable_id, series.start_day, series.step_days, z), wa, n_iter


def _is_degenerate(y, d):
    if y.shape[0] <= d + 1:
        return True
    scale = max(1.0, float(np.max(np.abs(y))))
    return float(np.ptp(y)) <= 1e-12 * scale


def vcurve(series, cfg=WhittakerConfig(), weights=None, n_points=None):
    """V-curve on the log10 lambda grid.

    Returns (log10 lambdas, log10 fidelity, log10 roughness, v) where ``v[k]``
    is the distance between points k and k+1 per unit of log10 lambda.
    """
    w = _weights(series, weights)
    y = series.values
    d = cfg.difference_order
    llas = cfg.lambda_grid(n_points)
    fits = np.empty(llas.shape[0])
    pens = np.empty(llas.shape[0])
    for k, lla in enumerate(llas):
        z, wa, _ = accel.asym_whittaker(y, w, 10.0**lla, cfg.envelope, d, cfg.max_iter, cfg.tol)
        fits[k] = np.sum(wa * (y - z) ** 2)
        pens[k] = np.sum(np.diff(z, d) ** 2)
    tiny = np.finfo(float).tiny
    lf = np.log10(np.maximum(fits, tiny))
    lp = np.log10(np.maximum(pens, tiny))
    v = np.hypot(np.diff(lf), np.diff(lp)) / np.diff(llas)
    return llas, lf, lp, v


def vcurve_select_lambda(series, cfg=WhittakerConfig(), weights=None):
    """Lambda at the midpoint of the shortest V-curve segment."""
    if _is_degenerate(series.values, cfg.difference_order):
        return 10.0**cfg.log10_lambda_min
    llas, _, _, v = vcurve(series, cfg, weights)
    k = int(np.argmin(v))
    return 10.0 ** (0.5 * (llas[k] + llas[k + 1]))


def smooth_vcurve(series, cfg=WhittakerConfig(), weights=None):
    """Expectile smoothing at the V-curve lambda; returns (series, lambda)."""
    lam = vcurve_select_lambda(series, cfg, weights)
    z, _, _ = expectile_smooth(series, lam, cfg, weights)
    return z, lam


def _contiguous_runs(seasons):
    runs = []
    for s in sorted(seasons):
        if runs and s == runs[-1][-1] + 1:
            runs[-1].append(s)
        else:
            runs.append([s])
    return runs


def _concat(per_season, var, offsets):
    ts, vs, ok = [], [], []
    for season, by_var in sorted(per_season.items()):
        obs = by_var.get(var)
        if obs is None or len(obs) == 0:
            continue
        ts.append(obs.timestamps + offsets[season])
        vs.append(obs.values)
        ok.append(obs.valid)
    if not ts:
        return None
    return ObservationSeries(var, np.concatenate(ts), np.concatenate(vs), np.concatenate(ok))


def condition_foi(
    observations: Mapping[int, Mapping[str, ObservationSeries]],
    cfg: WhittakerConfig = WhittakerConfig(),
    half_window: int = 3,
    n_sigmas: float = 3.0,
    out_step_days: int = GRID_STEP_DAYS,
):
    """Run the full chain for one FOI.

    ``observations`` maps season -> variable -> series in day-of-season units.
    Consecutive seasons are smoothed as one uninterrupted series and split
    afterwards. Returns season -> variable -> RegularSeries on the 4-day grid;
    variables that cannot be smoothed are absent.
    """
    with_data = [s for s, by_var in observations.items() if any(len(o) for o in by_var.values())]
    out = {}
    for run in _contiguous_runs(with_data):
        sub = {s: observations[s] for s in run}
        offsets = season_offsets(run)
        end_day = offsets[run[-1]] + season_length(run[-1]) - 1
        concat = {v: _concat(sub, v, offsets) for v in VARIABLES}
        bad = np.empty(0, dtype=np.int64)
        for var in ("RED", "NIR"):
            series = concat.get(var)
            if series is None:
                continue
            # masked (cloudy) readings would dominate the windows, so only valid samples enter
            ok = series.valid
            clear = ObservationSeries(var, series.timestamps[ok], series.values[ok], ok[ok])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ShortSeriesWarning)
                filtered = hampel_filter(clear, half_window, n_sigmas, direction="auto")
            bad = np.union1d(bad, clear.timestamps[~filtered.valid])
        for var, series in concat.items():
            if series is None:
                continue
            if bad.size:
                series = dataclasses.replace(
                    series, valid=series.valid & ~np.isin(series.timestamps, bad)
                )
            try:
                filled = linear_gapfill(series, cfg.interp_step_days, 0, end_day)
            except InsufficientObservations:
                continue
            smoothed, _ = smooth_vcurve(filled, cfg)
            for s in run:
                n = grid_length(s, out_step_days)
                days = offsets[s] + out_step_days * np.arange(n)
                vals = np.interp(days, smoothed.days, smoothed.values)
                out.setdefault(s, {})[var] = RegularSeries(var, 0, out_step_days, vals)
    return out
