"""Synthetic multi-country crop datasets with known ground truth.

Parcels sit in spatial clusters (regions). Each parcel follows a hidden
Markov rotation over the country's major crops whose transition matrix mixes
region/farm crop preferences with agronomic rotation affinities; a small
fraction of declarations are replaced by minor codes so that label aggregation
has something to merge. Every crop maps to a phenology archetype: LAI is a sum
of double-logistic cycles (optionally with mowing cuts), FAPAR/RED/NIR are
derived from LAI, and observations are taken at an irregular two-sensor
cadence with cloud flags and undetected cloud spikes (RED up, NIR down).
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .ingest import Dataset, DatasetManifest, ParcelRecord
from .seasons import season_length
from .signal import VARIABLES, ObservationSeries
from .taxonomy import TaxonomyTree, parse_code

# crop catalogue ------------------------------------------------------------------------
#
# Two synthetic countries share part of one code tree. Explicit codes carry
# the crops that matter; filler codes pad each legend to its size.

LEGEND_SIZES = {"NL": 141, "FR": 151}
N_SHARED = 67

_EXPLICIT = [
    # code, name, archetype, countries
    ("31-01-01-00-00", "permanent grassland", "grass_perm", "NF"),
    ("31-01-02-00-00", "temporary grassland", "grass_temp", "NF"),
    ("32-01-01-00-00", "apple orchard", "orchard", "NF"),
    ("32-01-02-00-00", "pear orchard", "orchard", "NF"),
    ("32-01-03-00-00", "cherry orchard", "orchard", "N"),
    ("32-02-01-00-00", "vineyard", "vineyard", "NF"),
    ("32-03-01-00-00", "tree nursery", "orchard", "NF"),
    ("32-04-01-00-00", "small fruit", "orchard", "N"),
    ("32-05-01-00-00", "olive grove", "vineyard", "F"),
    ("33-01-01-01-00", "winter wheat", "winter_wheat", "NF"),
    ("33-01-01-02-00", "spring wheat", "spring_wheat", "NF"),
    ("33-01-01-03-00", "durum wheat", "winter_wheat", "NF"),
    ("33-01-01-04-00", "spelt", "winter_wheat", "NF"),
    ("33-01-02-01-00", "winter barley", "winter_barley", "NF"),
    ("33-01-02-02-00", "spring barley", "spring_barley", "NF"),
    ("33-01-03-01-00", "grain maize", "grain_maize", "NF"),
    ("33-01-03-02-00", "silage maize", "silage_maize", "NF"),
    ("33-01-04-01-00", "winter rye", "winter_barley", "NF"),
    ("33-01-05-01-00", "winter oats", "winter_barley", "N"),
    ("33-01-05-02-00", "summer oats", "spring_barley", "NF"),
    ("33-01-06-01-00", "winter triticale", "winter_wheat", "NF"),
    ("33-01-07-01-00", "sorghum", "grain_maize", "F"),
    ("33-02-01-01-00", "ware potatoes", "ware_potato", "NF"),
    ("33-02-01-02-00", "seed potatoes", "seed_potato", "NF"),
    ("33-02-01-03-00", "starch potatoes", "starch_potato", "N"),
    ("33-02-02-00-00", "sugar beet", "sugar_beet", "NF"),
    ("33-03-01-00-00", "winter rapeseed", "rapeseed", "NF"),
    ("33-03-02-00-00", "sunflower", "sunflower", "F"),
    ("33-04-01-00-00", "field peas", "peas", "NF"),
    ("33-04-02-00-00", "field beans", "beans", "NF"),
    ("33-04-03-00-00", "soybean", "soy", "F"),
    ("33-05-01-00-00", "onions", "onion", "NF"),
    ("33-05-02-00-00", "carrots", "vegetable", "NF"),
    ("33-05-03-00-00", "leek", "vegetable", "NF"),
    ("33-05-04-00-00", "cabbage", "vegetable", "NF"),
    ("33-05-05-00-00", "lettuce", "vegetable", "NF"),
    ("33-05-06-00-00", "spinach", "vegetable", "N"),
    ("33-05-07-00-00", "green beans", "vegetable", "NF"),
    ("33-05-08-00-00", "celeriac", "vegetable", "N"),
    ("33-05-09-00-00", "chicory", "vegetable", "N"),
    ("33-05-10-00-00", "pumpkin", "vegetable", "NF"),
    ("33-05-11-00-00", "asparagus", "vegetable", "NF"),
    ("33-05-12-00-00", "sprouts", "vegetable", "N"),
    ("33-05-13-00-00", "cauliflower", "vegetable", "NF"),
    ("33-05-14-00-00", "melon", "vegetable", "F"),
    ("33-05-15-00-00", "tomato", "vegetable", "F"),
    ("33-06-01-00-00", "tulips", "bulb_early", "N"),
    ("33-06-02-00-00", "lilies", "bulb_late", "N"),
    ("33-06-03-00-00", "hyacinths", "bulb_early", "N"),
    ("33-06-04-00-00", "narcissus", "bulb_early", "N"),
    ("33-07-01-00-00", "alfalfa", "alfalfa", "NF"),
    ("33-07-02-00-00", "clover", "alfalfa", "NF"),
    ("33-07-03-00-00", "fodder beet", "sugar_beet", "NF"),
    ("34-01-00-00-00", "black fallow", "fallow", "NF"),
    ("34-02-00-00-00", "green fallow", "fallow", "NF"),
]

# filler families: (family prefix levels, archetype)
_FILLER_FAMILIES = [
    ((31, 2), "grass_temp"),
    ((33, 8), "vegetable"),
    ((33, 9), "spring_barley"),
    ((34, 3), "fallow"),
    ((35, 1), "fallow"),
    ((35, 2), "fallow"),
]


@dataclass(frozen=True)
class CodeInfo:
    code: str
    name: str
    archetype: str
    countries: str  # subset of "NF"

    @property
    def permanent(self):
        return self.code.startswith("32-")


def build_catalogue():
    """All 225 codes of both synthetic countries, sorted by code."""
    out = [CodeInfo(c, n, a, k) for c, n, a, k in _EXPLICIT]
    tags = [e.countries for e in out]
    need = {
        "NF": N_SHARED - tags.count("NF"),
        "N": LEGEND_SIZES["NL"] - N_SHARED - tags.count("N"),
        "F": LEGEND_SIZES["FR"] - N_SHARED - tags.count("F"),
    }
    slot = [0] * len(_FILLER_FAMILIES)
    k = 0
    for tag in ("NF", "N", "F"):
        if need[tag] < 0:
            raise RuntimeError("catalogue overflow")
        for _ in range(need[tag]):
            fam = k % len(_FILLER_FAMILIES)
            (a, b), arch = _FILLER_FAMILIES[fam]
            slot[fam] += 1
            code = f"{a:02d}-{b:02d}-{slot[fam]:02d}-00-00"
            out.append(CodeInfo(code, f"minor crop {a:02d}.{b:02d}.{slot[fam]:02d}", arch, tag))
            k += 1
    return sorted(out, key=lambda e: e.code)


CATALOGUE = build_catalogue()
CODE_INFO = {e.code: e for e in CATALOGUE}


def country_legend(country):
    tag = {"NL": "N", "FR": "F"}[country]
    return [e for e in CATALOGUE if tag in e.countries]


def legend_tree(country):
    tree = TaxonomyTree()
    for e in country_legend(country):
        tree.add(e.code, e.name, e.permanent)
    tree.propagate_permanent()
    tree.legend = tuple(e.code for e in country_legend(country))
    return tree


# phenology -------------------------------------------------------------------------------
#
# LAI = base + sum_k amp_k [sigma((t - sos_k) / up_k) - sigma((t - eos_k) / down_k)],
# days counted from 1 October. Cuts multiply LAI by 1 - depth * exp(-(t - day) / 14).

ARCHETYPES = {
    "grass_perm": dict(base=1.2, cycles=[(3.0, 165, 345, 12, 15)], cuts=[(225, 0.55), (270, 0.5), (320, 0.45)]),
    "grass_temp": dict(base=1.0, cycles=[(3.2, 162, 342, 11, 15)], cuts=[(220, 0.55), (262, 0.5), (305, 0.5)]),
    "alfalfa": dict(base=0.6, cycles=[(3.2, 180, 340, 10, 12)], cuts=[(240, 0.7), (285, 0.7), (330, 0.6)]),
    "winter_wheat": dict(base=0.2, cycles=[(0.9, 40, 290, 10, 6), (4.2, 175, 278, 12, 6)]),
    "winter_barley": dict(base=0.2, cycles=[(1.1, 35, 265, 10, 6), (3.6, 165, 258, 12, 6)]),
    "spring_wheat": dict(base=0.2, cycles=[(3.6, 210, 300, 9, 6)]),
    "spring_barley": dict(base=0.2, cycles=[(3.3, 203, 290, 9, 6)]),
    "grain_maize": dict(base=0.2, cycles=[(4.6, 255, 358, 8, 8)]),
    "silage_maize": dict(base=0.2, cycles=[(4.4, 252, 335, 8, 4)]),
    "ware_potato": dict(base=0.2, cycles=[(4.0, 232, 318, 7, 6)]),
    "seed_potato": dict(base=0.2, cycles=[(3.6, 225, 290, 7, 3)]),
    "starch_potato": dict(base=0.2, cycles=[(4.2, 238, 345, 7, 8)]),
    "sugar_beet": dict(base=0.2, cycles=[(4.8, 230, 400, 9, 10)]),
    "rapeseed": dict(base=0.3, cycles=[(1.8, 25, 280, 8, 6), (2.8, 150, 262, 10, 6)]),
    "peas": dict(base=0.2, cycles=[(3.2, 200, 280, 8, 5)]),
    "beans": dict(base=0.2, cycles=[(3.5, 205, 305, 8, 6)]),
    "onion": dict(base=0.15, cycles=[(2.0, 215, 320, 10, 8)]),
    "vegetable": dict(base=0.2, cycles=[(2.6, 235, 310, 8, 6)]),
    "bulb_early": dict(base=0.2, cycles=[(2.6, 160, 245, 8, 4)]),
    "bulb_late": dict(base=0.2, cycles=[(3.0, 200, 300, 8, 6)]),
    "fallow": dict(base=0.4, cycles=[(0.9, 190, 320, 15, 15)]),
    "sunflower": dict(base=0.2, cycles=[(3.8, 235, 330, 8, 7)]),
    "soy": dict(base=0.2, cycles=[(3.9, 240, 340, 8, 7)]),
    "orchard": dict(base=1.0, cycles=[(2.2, 200, 335, 10, 12)]),
    "vineyard": dict(base=0.5, cycles=[(1.8, 215, 345, 10, 10)]),
}
ARCHETYPE_NAMES = tuple(sorted(ARCHETYPES))

CATEGORY = {
    "grass_perm": "grass_perm", "grass_temp": "grass_temp", "alfalfa": "fodder",
    "winter_wheat": "cereal_w", "winter_barley": "cereal_w", "spring_wheat": "cereal_s",
    "spring_barley": "cereal_s", "grain_maize": "maize", "silage_maize": "maize",
    "ware_potato": "potato", "seed_potato": "potato", "starch_potato": "potato",
    "sugar_beet": "beet", "rapeseed": "oilseed", "sunflower": "oilseed", "peas": "legume",
    "beans": "legume", "soy": "legume", "onion": "veg", "vegetable": "veg", "bulb_early": "bulb",
    "bulb_late": "bulb", "fallow": "fallow", "orchard": "perm", "vineyard": "perm",
}

# multiplicative preference of moving from category a to category b
ROTATION_AFFINITY = {
    ("grass_perm", "grass_perm"): 80.0, ("grass_temp", "grass_temp"): 4.0, ("fodder", "fodder"): 3.0,
    ("maize", "maize"): 3.0, ("cereal_w", "cereal_w"): 0.6, ("cereal_s", "cereal_s"): 0.4,
    ("potato", "potato"): 0.05, ("beet", "beet"): 0.05, ("veg", "veg"): 0.2, ("bulb", "bulb"): 0.2,
    ("oilseed", "oilseed"): 0.1, ("legume", "legume"): 0.2, ("fallow", "fallow"): 2.0,
    ("potato", "cereal_w"): 4.0, ("beet", "cereal_w"): 3.0, ("potato", "beet"): 1.5,
    ("beet", "potato"): 1.5, ("cereal_w", "potato"): 2.5, ("cereal_w", "beet"): 2.5,
    ("cereal_w", "veg"): 2.0, ("cereal_w", "bulb"): 2.0, ("bulb", "cereal_w"): 2.0,
    ("legume", "cereal_w"): 3.0, ("oilseed", "cereal_w"): 3.0, ("cereal_w", "oilseed"): 2.0,
    ("grass_temp", "maize"): 3.0, ("maize", "grass_temp"): 2.0, ("cereal_s", "potato"): 2.0,
    ("veg", "cereal_s"): 2.0, ("fodder", "cereal_w"): 2.0,
}


def rotation_affinity(a, b):
    ca, cb = CATEGORY[a], CATEGORY[b]
    if cb == "grass_perm" and ca != "grass_perm":
        return 0.05
    if ca == cb and (ca, cb) not in ROTATION_AFFINITY:
        return 0.25
    return ROTATION_AFFINITY.get((ca, cb), 1.0)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def double_logistic(t, base, amp, sos, eos, up, down):
    return base + amp * (_sigmoid((t - sos) / up) - _sigmoid((t - eos) / down))


def lai_curve(t, params):
    """LAI at days ``t`` for a parameter dict (base, cycles, cuts)."""
    t = np.asarray(t, dtype=np.float64)
    lai = np.full(t.shape, float(params["base"]))
    for amp, sos, eos, up, down in params["cycles"]:
        lai += double_logistic(t, 0.0, amp, sos, eos, up, down)
    for day, depth in params.get("cuts", ()):
        after = t >= day
        lai[after] *= 1.0 - depth * np.exp(-(t[after] - day) / 14.0)
    for h, regrow in params.get("harvest", ()):
        lai = lai * (1.0 - _sigmoid((t - h) / 3.0)) + regrow * _sigmoid((t - h - 20.0) / 6.0)
    return np.clip(lai, 0.0, 8.0)


def late_reveal_params(archetype, reveal_day):
    """Shared curve before ``reveal_day``; per-archetype harvest date and regrowth after."""
    k = ARCHETYPE_NAMES.index(archetype)
    harvest = reveal_day + 8.0 + 12.0 * (k % 5)
    regrow = 1.5 if (k // 5) % 2 else 0.0
    return dict(base=0.3, cycles=[(3.5, 175, 520, 10, 10)], cuts=[], harvest=[(harvest, regrow)])


def reflectances(lai):
    """(LAI, FAPAR, RED, NIR) stacked along axis 0."""
    fapar = 0.94 * (1.0 - np.exp(-0.55 * lai))
    red = 0.025 + 0.10 * np.exp(-0.75 * lai)
    nir = 0.16 + 0.32 * (1.0 - np.exp(-0.45 * lai))
    return np.stack([lai, fapar, red, nir])


NOISE_SIGMA = np.array([0.15, 0.02, 0.004, 0.01])  # LAI, FAPAR, RED, NIR
SPIKE_SIGN = np.array([-1.0, -1.0, 1.0, -1.0])
CLOUDY_READING = np.array([0.2, 0.1, 0.25, 0.35])
VALUE_RANGE = (np.array([0.0, 0.0, 0.0, 0.0]), np.array([8.0, 1.0, 1.0, 1.0]))


# configuration -------------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    name: str = "custom"
    country: str = "NL"
    n_fois: int = 200
    seasons: tuple = (2016, 2017, 2018, 2019, 2020)
    seed: int = 0
    n_regions: int = 4
    region_spacing_km: float = 35.0
    region_sd_km: float = 8.0
    area_median_ha: float = 3.0
    area_sigma: float = 0.6
    farm_concentration: float = 1.5
    permanent_rate: float = 0.02
    orphan_rate: float = 0.003
    jitter_days: float = 6.0
    season_shift_days: float = 4.0
    amp_jitter: float = 0.12
    noise_scale: float = 1.0
    s2_revisit_days: int = 5
    l8_revisit_days: int = 8
    clear_prob_winter: float = 0.3
    clear_prob_summer: float = 0.65
    cloud_local_flip: float = 0.1
    contamination_rate: float = 0.03
    spike_sigma: float = 20.0
    spike_spread: float = 0.5
    missing_rs_rate: float = 0.01
    late_reveal_day: float = 0.0
    majors: dict = field(default_factory=dict)  # code -> per-region weights
    pools: dict = field(default_factory=dict)  # family code -> declaration rate
    permanent: dict = field(default_factory=dict)  # code -> weight
    crops_of_interest: tuple = ()
    grassland: tuple = ()

    def __post_init__(self):
        if self.country not in LEGEND_SIZES:
            raise ValueError(f"unknown country {self.country!r}")
        legend = {e.code for e in country_legend(self.country)}
        for code, w in self.majors.items():
            if code not in legend:
                raise ValueError(f"major crop {code} not in the {self.country} legend")
            if len(w) != self.n_regions or min(w) < 0 or sum(w) <= 0:
                raise ValueError(f"major crop {code}: need {self.n_regions} nonnegative region weights")
        if not 0 <= self.contamination_rate <= 1:
            raise ValueError("contamination_rate must lie in [0, 1]")
        if self.n_fois < 1 or len(self.seasons) < 1:
            raise ValueError("need at least one FOI and one season")

    @property
    def major_codes(self):
        return tuple(sorted(self.majors))

    def region_weights(self):
        codes = self.major_codes
        return np.array([self.majors[c] for c in codes], dtype=np.float64).T  # (regions, majors)

    def affinity(self):
        arch = [CODE_INFO[c].archetype for c in self.major_codes]
        return np.array([[rotation_affinity(a, b) for b in arch] for a in arch])

    def region_transitions(self):
        """Transition matrix of each region (without the per-farm preference)."""
        A = self.affinity()
        out = []
        for w in self.region_weights():
            P = A * w[None, :]
            out.append(P / P.sum(axis=1, keepdims=True))
        return np.stack(out)


_SCALARS = {f: f for f in (
    "name", "country", "n_fois", "seed", "n_regions", "region_spacing_km", "region_sd_km",
    "area_median_ha", "area_sigma", "farm_concentration", "permanent_rate", "orphan_rate",
    "jitter_days", "season_shift_days", "amp_jitter", "noise_scale", "s2_revisit_days",
    "l8_revisit_days", "clear_prob_winter", "clear_prob_summer", "cloud_local_flip",
    "contamination_rate", "spike_sigma", "spike_spread", "missing_rs_rate", "late_reveal_day",
)}


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def parse_scenario(text, **overrides):
    """Parse an INI-style scenario description."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    kw = {}
    types = ScenarioConfig.__annotations__
    if cp.has_section("scenario"):
        for key, value in cp.items("scenario"):
            if key == "seasons":
                kw["seasons"] = tuple(int(v) for v in _floats(value))
            elif key in ("crops_of_interest", "grassland"):
                kw[key] = tuple(value.split())
            elif key in _SCALARS:
                kind = types[key]
                kw[key] = int(value) if kind == "int" else (float(value) if kind == "float" else value)
            else:
                raise ValueError(f"unknown scenario key {key!r}")
    for section in ("majors", "pools", "permanent"):
        if cp.has_section(section):
            vals = {k: _floats(v) for k, v in cp.items(section)}
            kw[section] = vals if section == "majors" else {k: v[0] for k, v in vals.items()}
    kw.update(overrides)
    return ScenarioConfig(**kw)


def scenario_text(cfg):
    """INI text that ``parse_scenario`` reads back to an equal config."""
    lines = ["[scenario]"]
    for key in _SCALARS:
        lines.append(f"{key} = {getattr(cfg, key)!r}".replace("'", "") if key in ("name", "country")
                     else f"{key} = {getattr(cfg, key)!r}")
    lines.append("seasons = " + " ".join(map(str, cfg.seasons)))
    lines.append("crops_of_interest = " + " ".join(cfg.crops_of_interest))
    lines.append("grassland = " + " ".join(cfg.grassland))
    for section in ("majors", "pools", "permanent"):
        lines.append(f"[{section}]")
        for code, v in getattr(cfg, section).items():
            vals = v if section == "majors" else (v,)
            lines.append(f"{code} = " + " ".join(repr(float(x)) for x in vals))
    return "\n".join(lines) + "\n"


PRESETS = ("tiny", "nl-analog", "fr-analog", "nl-early")


def preset_text(name):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("hiercrop").joinpath("presets").joinpath(f"{name}.cfg").read_text()


def load_scenario(name_or_path, **overrides):
    if os.path.exists(str(name_or_path)):
        with open(name_or_path) as fh:
            return parse_scenario(fh.read(), **overrides)
    return parse_scenario(preset_text(name_or_path), **overrides)


# generators ------------------------------------------------------------------------------

def gen_rotations(P, init, n_seasons, rng):
    """Markov sequences: ``P`` (K, K) or per-sequence (n, K, K), ``init`` (n,) first states."""
    P = np.asarray(P, dtype=np.float64)
    init = np.asarray(init, dtype=np.int64)
    n = init.shape[0]
    if not np.allclose(P.sum(axis=-1), 1.0):
        raise ValueError("transition rows must sum to 1")
    cum = np.cumsum(P, axis=-1)
    cum[..., -1] = 1.0
    out = np.empty((n, n_seasons), dtype=np.int64)
    out[:, 0] = init
    rows = np.arange(n)
    for t in range(1, n_seasons):
        c = cum[out[:, t - 1]] if P.ndim == 2 else cum[rows, out[:, t - 1]]
        u = rng.random(n)
        out[:, t] = (u[:, None] >= c).sum(axis=1)
    return out


def acquisition_days(n_days, rng, s2=5, l8=8):
    d2 = np.arange(rng.integers(0, s2), n_days, s2)
    d8 = np.arange(rng.integers(0, l8), n_days, l8)
    return np.union1d(d2, d8)


def clear_probability(days, winter, summer):
    """Lowest at the end of December (day 90), highest at the end of June."""
    return winter + (summer - winter) * 0.5 * (1.0 - np.cos(2.0 * np.pi * (np.asarray(days) - 90.0) / 365.0))


def gen_observations(lai_params, days, rng, noise_scale=1.0, contamination=0.0, spike_sigma=20.0,
                     spike_spread=0.0, clear=None):
    """Sample one FOI-season.

    Returns (values (4, n), valid (n,), spikes (n,) bool). Values at valid dates
    are curve + Gaussian noise; a ``contamination`` fraction of valid dates gets
    a spike of ``spike_sigma`` noise units (RED up, the other variables down).
    """
    days = np.asarray(days)
    n = days.shape[0]
    clean = reflectances(lai_curve(days, lai_params))
    valid = np.ones(n, dtype=bool) if clear is None else np.asarray(clear, dtype=bool).copy()
    sigma = NOISE_SIGMA * noise_scale
    values = clean + sigma[:, None] * rng.standard_normal((4, n))
    spikes = valid & (rng.random(n) < contamination)
    if spikes.any():
        k = spike_sigma * (1.0 + spike_spread * rng.exponential(1.0, spikes.sum()))
        values[:, spikes] += SPIKE_SIGN[:, None] * NOISE_SIGMA[:, None] * k[None, :]
    cloudy = ~valid
    if cloudy.any():
        values[:, cloudy] = CLOUDY_READING[:, None] + sigma[:, None] * rng.standard_normal((4, cloudy.sum()))
    values = np.clip(values, VALUE_RANGE[0][:, None], VALUE_RANGE[1][:, None])
    return np.round(values, 6), valid, spikes


@dataclass
class GroundTruth:
    region: np.ndarray  # (n,)
    hidden: np.ndarray  # (n, S) index into major_codes, -1 for permanent parcels
    major_codes: tuple
    transitions: np.ndarray  # (regions, K, K)
    spikes: dict  # (foi_id, season) -> spike days
    reveal_day: dict  # archetype -> first day carrying class information
    archetype: dict  # code -> archetype


def _jittered(params, rng, cfg, shift):
    cyc = []
    for amp, sos, eos, up, down in params["cycles"]:
        a = amp * np.exp(cfg.amp_jitter * rng.standard_normal())
        cyc.append((a, sos + shift, eos + shift + 0.5 * cfg.jitter_days * rng.standard_normal(), up, down))
    cuts = [(d + shift + 8.0 * rng.standard_normal(), depth) for d, depth in params.get("cuts", ())]
    harvest = [(h + 2.0 * rng.standard_normal(), g) for h, g in params.get("harvest", ())]
    base = params["base"] * np.exp(0.2 * rng.standard_normal())
    return dict(base=base, cycles=cyc, cuts=cuts, harvest=harvest)


def generate(cfg: ScenarioConfig, seed=None):
    """Build a Dataset plus GroundTruth for a scenario."""
    seed = cfg.seed if seed is None else seed
    ss = np.random.SeedSequence(seed)
    r_geo, r_lab, r_phen, r_obs = (np.random.default_rng(s) for s in ss.spawn(4))
    n, S = cfg.n_fois, len(cfg.seasons)
    legend = country_legend(cfg.country)
    codes = cfg.major_codes
    K = len(codes)

    # geometry
    region = r_geo.integers(0, cfg.n_regions, n)
    side = int(np.ceil(np.sqrt(cfg.n_regions)))
    centers = cfg.region_spacing_km * np.array([(r % side, r // side) for r in range(cfg.n_regions)], float)
    xy = np.round(centers[region] + cfg.region_sd_km * r_geo.standard_normal((n, 2)), 4)
    area = np.round(cfg.area_median_ha * np.exp(cfg.area_sigma * r_geo.standard_normal(n)), 4)
    area = np.maximum(area, 0.05)

    # labels
    W = cfg.region_weights()
    A = cfg.affinity()
    farm = r_lab.gamma(cfg.farm_concentration, 1.0 / cfg.farm_concentration, (n, K))
    pref = W[region] * farm
    P = A[None, :, :] * pref[:, None, :]
    P /= P.sum(axis=2, keepdims=True)
    init = (np.cumsum(pref / pref.sum(axis=1, keepdims=True), axis=1) < r_lab.random(n)[:, None]).sum(axis=1)
    burn = 3
    hidden = gen_rotations(P, np.minimum(init, K - 1), S + burn, r_lab)[:, burn:]
    labels = np.array(codes, dtype=object)[hidden]

    pool_members = {
        fam: [e.code for e in legend if parse_code(e.code).is_descendant_of(parse_code(fam))
              and e.code not in cfg.majors]
        for fam in cfg.pools
    }
    in_pool = {c for m in pool_members.values() for c in m}
    orphans = [e.code for e in legend if e.code not in cfg.majors and e.code not in in_pool
               and not e.permanent]
    u = r_lab.random((n, S))
    lo = 0.0
    for fam, rate in sorted(cfg.pools.items()):
        hit = (u >= lo) & (u < lo + rate)
        labels[hit] = np.array(pool_members[fam], dtype=object)[r_lab.integers(0, len(pool_members[fam]), hit.sum())]
        lo += rate
    hit = (u >= lo) & (u < lo + cfg.orphan_rate)
    labels[hit] = np.array(orphans, dtype=object)[r_lab.integers(0, len(orphans), hit.sum())]

    perm_codes = sorted(cfg.permanent) or [e.code for e in legend if e.permanent]
    perm_w = np.array([cfg.permanent.get(c, 1.0) for c in perm_codes])
    is_perm = r_lab.random(n) < cfg.permanent_rate
    perm_pick = np.array(perm_codes, dtype=object)[
        (np.cumsum(perm_w / perm_w.sum()) < r_lab.random(n)[:, None]).sum(axis=1).clip(0, len(perm_codes) - 1)
    ]
    labels[is_perm] = perm_pick[is_perm][:, None]
    hidden = np.where(is_perm[:, None], -1, hidden)

    # observations
    shifts = cfg.season_shift_days * r_phen.standard_normal((S, cfg.n_regions))
    acq = [[acquisition_days(season_length(s), r_obs, cfg.s2_revisit_days, cfg.l8_revisit_days)
            for _ in range(cfg.n_regions)] for s in cfg.seasons]
    region_clear = [[r_obs.random(d.shape[0]) < clear_probability(d, cfg.clear_prob_winter, cfg.clear_prob_summer)
                     for d in row] for row in acq]
    width = len(str(n))
    records, spikes = [], {}
    for i in range(n):
        fid = f"{cfg.country}{i:0{width}d}"
        rec = ParcelRecord(fid, float(xy[i, 0]), float(xy[i, 1]), float(area[i]))
        for j, season in enumerate(cfg.seasons):
            code = labels[i, j]
            rec.crops[season] = code
            if r_obs.random() < cfg.missing_rs_rate:
                continue
            arch = CODE_INFO[code].archetype
            base = late_reveal_params(arch, cfg.late_reveal_day) if cfg.late_reveal_day else ARCHETYPES[arch]
            shift = shifts[j, region[i]] + cfg.jitter_days * r_phen.standard_normal()
            params = _jittered(base, r_phen, cfg, shift)
            days = acq[j][region[i]]
            clear = region_clear[j][region[i]] ^ (r_obs.random(days.shape[0]) < cfg.cloud_local_flip)
            values, valid, spk = gen_observations(
                params, days, r_obs, cfg.noise_scale, cfg.contamination_rate, cfg.spike_sigma,
                cfg.spike_spread, clear,
            )
            if spk.any():
                spikes[(fid, season)] = days[spk]
            rec.observations[season] = {
                var: ObservationSeries(var, days, values[k], valid) for k, var in enumerate(VARIABLES)
            }
        records.append(rec)

    tree = legend_tree(cfg.country)
    if cfg.late_reveal_day:
        reveal = {a: late_reveal_params(a, cfg.late_reveal_day)["harvest"][0][0] - 12.0 for a in ARCHETYPE_NAMES}
    else:
        reveal = {a: 0.0 for a in ARCHETYPE_NAMES}
    truth = GroundTruth(region, hidden, codes, cfg.region_transitions(), spikes, reveal,
                        {e.code: e.archetype for e in legend})
    ds = Dataset(cfg.country, tuple(cfg.seasons), records, tree, DatasetManifest(cfg.country, tuple(cfg.seasons)),
                 {(r.foi_id, s): True for r in records for s in r.crops if not r.has_rs(s)})
    return ds, truth


def write_truth(path, cfg, truth):
    """JSON sidecar: true transition matrices, spike positions, discriminative day per crop."""
    import json

    doc = {
        "scenario": cfg.name,
        "major_codes": list(truth.major_codes),
        "region_transitions": np.round(truth.transitions, 12).tolist(),
        "discriminative_day": {c: truth.reveal_day[a] for c, a in sorted(truth.archetype.items())},
        "spikes": [{"foi_id": f, "season": s, "days": d.tolist()} for (f, s), d in sorted(truth.spikes.items())],
        "region": {"counts": np.bincount(truth.region, minlength=cfg.n_regions).tolist()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
