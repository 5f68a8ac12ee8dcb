"""Dataset-level glue: observation series -> smoothed series -> RS features, and CD vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import N_FUNCTIONALS, N_WINDOWS, crop_distribution, window_functionals
from .seasons import GRID_STEP_DAYS, grid_length
from .signal import VARIABLES, WhittakerConfig, condition_foi

# bump when the conditioning chain changes so cached feature tables are rebuilt
FEATURE_VERSION = 2


@dataclass
class FeatureTable:
    """RS features of every FOI-season; rows follow ``foi_ids``, columns ``seasons``."""

    foi_ids: tuple
    seasons: tuple
    values: np.ndarray  # (n, S, 672) float32, [variable][window][functional]
    missing: np.ndarray  # (n, S) bool, no RS at all
    var_missing: np.ndarray  # (n, S, 4) bool

    def rows(self):
        """Flat (foi_id, season, vector, missing) rows in FOI-major order."""
        for i, fid in enumerate(self.foi_ids):
            for j, s in enumerate(self.seasons):
                yield fid, s, self.values[i, j], bool(self.missing[i, j])


def condition_dataset(dataset, cfg=WhittakerConfig(), half_window=3, n_sigmas=3.0, progress=None):
    """Smooth every record; returns (foi_id, season) -> variable -> RegularSeries."""
    out = {}
    for k, rec in enumerate(dataset.records):
        obs = {s: rec.observations.get(s, {}) for s in dataset.seasons}
        for s, by_var in condition_foi(obs, cfg, half_window, n_sigmas, GRID_STEP_DAYS).items():
            out[(rec.foi_id, s)] = by_var
        if progress is not None:
            progress(k + 1, len(dataset.records))
    return out


def featurize(smoothed, foi_ids, seasons, variables=VARIABLES):
    """Window functionals for all FOI-seasons from conditioned series."""
    foi_ids, seasons = tuple(foi_ids), tuple(seasons)
    n, S, V = len(foi_ids), len(seasons), len(variables)
    block = N_WINDOWS * N_FUNCTIONALS
    values = np.zeros((n, S, V * block), dtype=np.float32)
    var_missing = np.ones((n, S, V), dtype=bool)
    for j, season in enumerate(seasons):
        L = grid_length(season)
        days = GRID_STEP_DAYS * np.arange(L)
        for v, var in enumerate(variables):
            rows, series = [], []
            for i, fid in enumerate(foi_ids):
                s = smoothed.get((fid, season), {}).get(var)
                if s is not None:
                    rows.append(i)
                    series.append(s.values[:L])
            if not rows:
                continue
            f = window_functionals(np.stack(series), days)
            values[rows, j, v * block : (v + 1) * block] = f.reshape(len(rows), block)
            var_missing[rows, j, v] = False
    return FeatureTable(foi_ids, seasons, values, var_missing.all(axis=2), var_missing)


def featurize_dataset(dataset, cfg=WhittakerConfig(), progress=None):
    smoothed = condition_dataset(dataset, cfg, progress=progress)
    return featurize(smoothed, [r.foi_id for r in dataset.records], dataset.seasons)


def distributions(dataset, vocab, reference_season, radius_km=10.0):
    """Integer CD shares (units of 1e-4) of every FOI from the reference season's parcels."""
    xy = np.array([[r.x_km, r.y_km] for r in dataset.records])
    area = np.array([r.area_ha for r in dataset.records])
    ref = [k for k, r in enumerate(dataset.records) if reference_season in r.crops]
    idx = np.array([vocab.lookup(dataset.records[k].crops[reference_season]) for k in ref], dtype=np.int64)
    return crop_distribution(xy[ref], area[ref], idx, len(vocab), centers=xy, radius_km=radius_km)


def save_feature_table(path, table):
    np.savez_compressed(path, foi_ids=np.array(table.foi_ids), seasons=np.array(table.seasons),
                        values=table.values, var_missing=table.var_missing)


def load_feature_table(path):
    z = np.load(path, allow_pickle=False)
    vm = z["var_missing"]
    return FeatureTable(tuple(z["foi_ids"].tolist()), tuple(int(s) for s in z["seasons"]), z["values"],
                        vm.all(axis=2), vm)


def cached_features(dataset, cache_dir, key, cfg=WhittakerConfig()):
    """Featurize ``dataset`` once per ``key``; later calls read the stored table."""
    import hashlib
    import os

    os.makedirs(cache_dir, exist_ok=True)
    digest = hashlib.sha256(f"{FEATURE_VERSION}|{key}|{cfg}".encode()).hexdigest()[:16]
    path = os.path.join(cache_dir, f"features-{digest}.npz")
    if os.path.exists(path):
        return load_feature_table(path)
    table = featurize_dataset(dataset, cfg)
    tmp = path + ".tmp.npz"
    save_feature_table(tmp, table)
    os.replace(tmp, path)
    return table
