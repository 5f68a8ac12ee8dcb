"""Dataset file formats (CSV) and their assembly into per-FOI records.

Every file starts with a ``# hiercrop <kind> v<version>`` line followed by a
regular CSV header. Floats are written with ``repr`` so a write/read cycle is
lossless. Seasons are integers; day 0 of season ``n`` is 1 October of year n.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .features import CropVocab, feature_length
from .signal import VARIABLES, ObservationSeries, RegularSeries
from .taxonomy import TaxonomyTree, parse_code

FORMAT_VERSION = 1
SEASON_CONVENTION = "season n runs from 1 October of year n to 1 October of year n+1"

CROP_COLUMNS = ("foi_id", "season", "crop_code", "x_km", "y_km", "area_ha")
SERIES_COLUMNS = ("foi_id", "season", "variable", "day", "value", "valid")
REGULAR_PREFIX = ("foi_id", "season", "variable", "start_day", "step_days")
DIST_COLUMNS = ("foi_id", "crop_code", "share")
LEGEND_COLUMNS = ("code", "name", "permanent_flag")


class MalformedCSVError(ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path, self.line = str(path), line


@dataclass
class ParcelRecord:
    foi_id: str
    x_km: float
    y_km: float
    area_ha: float
    crops: dict = field(default_factory=dict)  # season -> crop code
    observations: dict = field(default_factory=dict)  # season -> variable -> ObservationSeries

    def has_rs(self, season):
        obs = self.observations.get(season, {})
        return any(len(s) for s in obs.values())


@dataclass
class DatasetManifest:
    country: str
    seasons: tuple
    files: dict = field(default_factory=dict)  # role -> {"path", "sha256"}
    season_convention: str = SEASON_CONVENTION

    def to_json(self):
        d = dict(country=self.country, seasons=list(self.seasons), files=self.files,
                 season_convention=self.season_convention)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["country"], tuple(d["seasons"]), d.get("files", {}),
                   d.get("season_convention", SEASON_CONVENTION))


@dataclass
class Dataset:
    country: str
    seasons: tuple
    records: list
    legend: TaxonomyTree | None = None
    manifest: DatasetManifest | None = None
    rs_missing: dict = field(default_factory=dict)  # (foi_id, season) -> True for zero-padded seasons

    def __len__(self):
        return len(self.records)

    def codes(self):
        if self.legend is not None:
            return legend_codes(self.legend)
        return sorted({c for r in self.records for c in r.crops.values()})


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# low-level reading --------------------------------------------------------------------

def _open_rows(path, kind, columns=None, prefix=None):
    """Yield (line_number, header, row) after checking the version line and header."""
    fh = open(path, newline="")
    try:
        first = fh.readline()
        line = 1
        if first.startswith("#"):
            parts = first[1:].split()
            if len(parts) != 3 or parts[0] != "hiercrop" or parts[1] != kind:
                raise MalformedCSVError(path, 1, f"expected '# hiercrop {kind} v{FORMAT_VERSION}' header")
            if parts[2] != f"v{FORMAT_VERSION}":
                raise MalformedCSVError(path, 1, f"unsupported format version {parts[2]}")
            header_line = fh.readline()
            line = 2
        else:
            header_line = first
        header = next(csv.reader([header_line]), [])
        header = [h.strip() for h in header]
        if columns is not None and tuple(header) != tuple(columns):
            raise MalformedCSVError(path, line, f"expected columns {','.join(columns)}, got {','.join(header)}")
        if prefix is not None and tuple(header[: len(prefix)]) != tuple(prefix):
            raise MalformedCSVError(path, line, f"expected leading columns {','.join(prefix)}")
        for row in csv.reader(fh):
            line += 1
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedCSVError(path, line, f"expected {len(header)} fields, got {len(row)}")
            yield line, header, row
    finally:
        fh.close()


def _num(path, line, text, kind=float, name="value", allow_nan=False):
    try:
        v = kind(text)
    except ValueError:
        raise MalformedCSVError(path, line, f"bad {name} {text!r}") from None
    if kind is float and not math.isfinite(v) and not (allow_nan and text.strip().lower() == "nan"):
        raise MalformedCSVError(path, line, f"non-finite {name} {text!r}")
    return v


def _writer(path, kind, header):
    fh = open(path, "w", newline="")
    fh.write(f"# hiercrop {kind} v{FORMAT_VERSION}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    return fh, w


# crops ----------------------------------------------------------------------------------

def write_crops(path, records):
    fh, w = _writer(path, "crops", CROP_COLUMNS)
    with fh:
        for r in sorted(records, key=lambda r: r.foi_id):
            for season in sorted(r.crops):
                w.writerow([r.foi_id, season, r.crops[season], repr(float(r.x_km)), repr(float(r.y_km)),
                            repr(float(r.area_ha))])


def read_crops(path):
    """Returns foi_id -> ParcelRecord (without observations)."""
    records = {}
    for line, _, row in _open_rows(path, "crops", CROP_COLUMNS):
        fid = row[0].strip()
        if not fid:
            raise MalformedCSVError(path, line, "empty foi_id")
        season = _num(path, line, row[1], int, "season")
        try:
            code = str(parse_code(row[2]))
        except ValueError as exc:
            raise MalformedCSVError(path, line, str(exc)) from None
        x, y, area = (_num(path, line, row[k], float, CROP_COLUMNS[k]) for k in (3, 4, 5))
        if not area > 0:
            raise MalformedCSVError(path, line, f"area_ha must be positive, got {row[5]}")
        rec = records.get(fid)
        if rec is None:
            rec = records[fid] = ParcelRecord(fid, x, y, area)
        elif (rec.x_km, rec.y_km, rec.area_ha) != (x, y, area):
            raise MalformedCSVError(path, line, f"inconsistent location/area for {fid}")
        if season in rec.crops:
            raise ValueError(f"{path}:{line}: duplicate crop row for foi_id={fid} season={season}")
        rec.crops[season] = code
    return records


# irregular series -----------------------------------------------------------------------

def write_series(path, records):
    fh, w = _writer(path, "series", SERIES_COLUMNS)
    with fh:
        for r in sorted(records, key=lambda r: r.foi_id):
            for season in sorted(r.observations):
                by_var = r.observations[season]
                for var in VARIABLES:
                    s = by_var.get(var)
                    if s is None:
                        continue
                    fh.write("".join(
                        f"{r.foi_id},{season},{var},{d},{v!r},{int(ok)}\n"
                        for d, v, ok in zip(s.timestamps.tolist(), s.values.tolist(), s.valid.tolist())
                    ))


def read_series(path):
    """Returns foi_id -> season -> variable -> ObservationSeries."""
    raw = {}
    for line, _, row in _open_rows(path, "series", SERIES_COLUMNS):
        fid, var = row[0].strip(), row[2].strip()
        if var not in VARIABLES:
            raise MalformedCSVError(path, line, f"unknown variable {var!r}")
        season = _num(path, line, row[1], int, "season")
        day = _num(path, line, row[3], int, "day")
        value = _num(path, line, row[4], float, "value", allow_nan=True)
        valid = row[5].strip()
        if valid not in ("0", "1"):
            raise MalformedCSVError(path, line, f"valid must be 0 or 1, got {valid!r}")
        if valid == "1" and not math.isfinite(value):
            raise MalformedCSVError(path, line, "non-finite value flagged valid")
        if var in ("FAPAR",) and valid == "1" and not -0.05 <= value <= 1.05:
            raise MalformedCSVError(path, line, f"FAPAR out of range: {value}")
        raw.setdefault(fid, {}).setdefault(season, {}).setdefault(var, []).append((day, value, valid == "1"))
    out = {}
    for fid, seasons in raw.items():
        for season, by_var in seasons.items():
            for var, rows in by_var.items():
                rows.sort(key=lambda t: t[0])
                days = [t[0] for t in rows]
                if len(set(days)) != len(days):
                    raise ValueError(f"{path}: duplicate day in {fid} season {season} {var}")
                out.setdefault(fid, {}).setdefault(season, {})[var] = ObservationSeries(
                    var, days, [t[1] for t in rows], [t[2] for t in rows]
                )
    return out


# regular series -------------------------------------------------------------------------

def write_regular(path, table):
    """``table`` maps (foi_id, season) -> variable -> RegularSeries."""
    n = max((len(s) for by_var in table.values() for s in by_var.values()), default=0)
    fh, w = _writer(path, "regular", (*REGULAR_PREFIX, *(f"v{k}" for k in range(n))))
    with fh:
        for (fid, season) in sorted(table):
            for var in VARIABLES:
                s = table[(fid, season)].get(var)
                if s is None:
                    continue
                vals = [repr(v) for v in s.values.tolist()] + [""] * (n - len(s))
                w.writerow([fid, season, var, s.start_day, s.step_days, *vals])


def read_regular(path):
    out = {}
    for line, header, row in _open_rows(path, "regular", prefix=REGULAR_PREFIX):
        fid, var = row[0].strip(), row[2].strip()
        season = _num(path, line, row[1], int, "season")
        start = _num(path, line, row[3], int, "start_day")
        step = _num(path, line, row[4], int, "step_days")
        vals = [_num(path, line, v, float) for v in row[5:] if v.strip() != ""]
        out.setdefault((fid, season), {})[var] = RegularSeries(var, start, step, np.array(vals))
    return out


# features -------------------------------------------------------------------------------

def write_features(path, foi_ids, seasons, values, missing=None):
    """Rows of (foi_id, season, f0..fK); ``missing`` adds a trailing rs_missing column."""
    values = np.asarray(values, dtype=np.float64)
    header = ["foi_id", "season", *(f"f{k}" for k in range(values.shape[1]))]
    if missing is not None:
        header.append("rs_missing")
    fh, w = _writer(path, "features", header)
    with fh:
        for k, (fid, season) in enumerate(zip(foi_ids, seasons)):
            row = [fid, int(season), *map(repr, values[k].tolist())]
            if missing is not None:
                row.append(int(bool(missing[k])))
            w.writerow(row)


def read_features(path):
    """Returns (foi_ids, seasons, values (n, F), rs_missing (n,) bool)."""
    ids, seasons, rows, miss = [], [], [], []
    for line, header, row in _open_rows(path, "features", prefix=("foi_id", "season")):
        has_flag = header[-1] == "rs_missing"
        vals = row[2:-1] if has_flag else row[2:]
        ids.append(row[0].strip())
        seasons.append(_num(path, line, row[1], int, "season"))
        rows.append([_num(path, line, v, float, "feature") for v in vals])
        miss.append(has_flag and row[-1].strip() == "1")
    width = len(rows[0]) if rows else feature_length()
    return ids, np.array(seasons, dtype=np.int64), np.array(rows, dtype=np.float64).reshape(-1, width), \
        np.array(miss, dtype=bool)


# crop distributions ---------------------------------------------------------------------

def write_distributions(path, foi_ids, codes, shares):
    """Sparse rows (foi_id, crop_code, share) for nonzero integer shares (units of 1e-4)."""
    shares = np.asarray(shares)
    fh, w = _writer(path, "distribution", DIST_COLUMNS)
    with fh:
        for i, fid in enumerate(foi_ids):
            for j in np.nonzero(shares[i])[0]:
                w.writerow([fid, codes[j], f"{shares[i, j] / 10_000:.4f}"])


def read_distributions(path, foi_ids, vocab):
    index = {f: i for i, f in enumerate(foi_ids)}
    out = np.zeros((len(foi_ids), len(vocab)), dtype=np.int64)
    for line, _, row in _open_rows(path, "distribution", DIST_COLUMNS):
        fid = row[0].strip()
        if fid not in index:
            continue
        share = _num(path, line, row[2], float, "share")
        if not 0.0 <= share <= 1.0:
            raise MalformedCSVError(path, line, f"share out of [0, 1]: {share}")
        code = row[1].strip()
        if code not in vocab:
            raise MalformedCSVError(path, line, f"crop code {code} not in vocabulary")
        out[index[fid], vocab.lookup(code)] = int(round(share * 10_000))
    return out


# legend ---------------------------------------------------------------------------------

def write_legend(path, entries):
    """``entries``: iterable of (code, name, permanent)."""
    fh, w = _writer(path, "legend", LEGEND_COLUMNS)
    with fh:
        for code, name, perm in sorted(entries):
            w.writerow([code, name, int(bool(perm))])


def read_legend(path):
    """Returns the list of (code, name, permanent) rows and a TaxonomyTree holding them."""
    rows = []
    for line, _, row in _open_rows(path, "legend", LEGEND_COLUMNS):
        try:
            code = str(parse_code(row[0]))
        except ValueError as exc:
            raise MalformedCSVError(path, line, str(exc)) from None
        flag = row[2].strip()
        if flag not in ("0", "1"):
            raise MalformedCSVError(path, line, f"permanent_flag must be 0 or 1, got {flag!r}")
        rows.append((code, row[1], flag == "1"))
    tree = TaxonomyTree()
    for code, name, perm in rows:
        tree.add(code, name, perm)
    tree.propagate_permanent()
    tree.legend = tuple(sorted(c for c, _, _ in rows))
    return rows, tree


def legend_codes(tree):
    codes = getattr(tree, "legend", None)
    if codes is not None:
        return list(codes)
    return sorted(str(c) for c, n in tree.nodes.items() if not n.children and not c.is_root)


# assembly -------------------------------------------------------------------------------

def load_dataset(crops_path, series_path=None, legend_path=None, country=""):
    """Read crop and (optionally) series files into a Dataset.

    Seasons present in the crop file but without RS samples are recorded in
    ``rs_missing`` so features can be zero-padded downstream.
    """
    files = {"crops": crops_path, "series": series_path, "legend": legend_path}
    records = read_crops(crops_path)
    if series_path is not None:
        series = read_series(series_path)
        unknown = sorted(set(series) - set(records))
        if unknown:
            raise ValueError(f"{series_path}: series for FOIs absent from the crop file: {unknown[:5]}")
        for fid, obs in series.items():
            records[fid].observations = obs
    seasons = sorted({s for r in records.values() for s in r.crops})
    if seasons and seasons != list(range(seasons[0], seasons[-1] + 1)):
        raise ValueError(f"seasons must be contiguous, got {seasons}")
    legend = read_legend(legend_path)[1] if legend_path is not None else None
    ordered = [records[k] for k in sorted(records)]
    rs_missing = {(r.foi_id, s): True for r in ordered for s in r.crops if not r.has_rs(s)}
    manifest = DatasetManifest(
        country, tuple(seasons),
        {k: {"path": str(p), "sha256": file_sha256(p)} for k, p in files.items() if p is not None},
    )
    return Dataset(country, tuple(seasons), ordered, legend, manifest, rs_missing)


def save_dataset(dataset, out_dir, prefix=""):
    """Write crops/series/legend files; returns role -> path."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "crops": os.path.join(out_dir, f"{prefix}crops.csv"),
        "series": os.path.join(out_dir, f"{prefix}series.csv"),
    }
    write_crops(paths["crops"], dataset.records)
    write_series(paths["series"], dataset.records)
    if dataset.legend is not None:
        paths["legend"] = os.path.join(out_dir, f"{prefix}legend.csv")
        write_legend(paths["legend"], legend_entries(dataset.legend))
    return paths


def legend_entries(tree):
    return [(c, tree.node(c).name, tree.is_permanent(parse_code(c))) for c in legend_codes(tree)]


def build_vocab(datasets, unknown=False):
    """Lexicographically ordered union of the crop codes of all datasets."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("need at least one dataset")
    codes = set()
    for d in datasets:
        codes.update(d.codes() if isinstance(d, Dataset) else d)
    return CropVocab(tuple(sorted(codes)), unknown=unknown)

