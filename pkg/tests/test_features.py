import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiercrop import features as F
from hiercrop.ingest import build_vocab
from hiercrop.signal import VARIABLES, RegularSeries
from oracles import cd_oracle, quantile_oracle


def season_series(rng, var="LAI"):
    return RegularSeries(var, 0, 4, rng.normal(size=92))


def test_full_season_gives_24_windows():
    s = season_series(np.random.default_rng(0))
    wins = F.windowize(s)
    assert len(wins) == 24
    assert all(7 <= len(w) <= 8 for w in wins[:-1]) and len(wins[-1]) == 5


def test_windows_overlap_by_half_and_tile():
    days = 4 * np.arange(92)
    b = F.window_bounds()
    assert np.all(b[1:, 0] - b[:-1, 0] == 15) and np.all(b[:, 1] - b[:, 0] == 30)
    covered = np.zeros(92, bool)
    for lo, hi in b:
        covered |= (days >= lo) & (days < hi)
    assert covered.all()
    m0 = (days >= b[0, 0]) & (days < b[0, 1])
    m1 = (days >= b[1, 0]) & (days < b[1, 1])
    shared = days[m0 & m1]
    assert shared.min() >= 15 and shared.max() < 30


def test_short_series_rejected():
    with pytest.raises(ValueError):
        F.windowize(RegularSeries("LAI", 0, 4, np.ones(5)))


def test_functionals_examples():
    assert np.array_equal(F.functionals([3.0] * 4), [3, 0, 3, 3, 3, 3, 3])
    f = F.functionals([1, 2, 3, 4])
    assert f[0] == 2.5 and f[2] == 1 and f[3] == 4 and f[4] == 2.5
    with pytest.raises(ValueError, match="empty window"):
        F.functionals([])


def test_functionals_match_sort_oracle():
    x = np.random.default_rng(4).normal(size=11)
    f = F.functionals(x)
    mean = sum(x) / 11
    std = (sum((v - mean) ** 2 for v in x) / 11) ** 0.5
    expect = [mean, std, min(x), max(x), quantile_oracle(x, 0.5), quantile_oracle(x, 0.25), quantile_oracle(x, 0.75)]
    assert np.max(np.abs(f - expect)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_functionals_ordered(xs):
    mean, std, lo, hi, med, q1, q3 = F.functionals(xs)
    assert lo <= q1 <= med <= q3 <= hi and std >= 0


def test_window_functionals_matches_per_window():
    rng = np.random.default_rng(2)
    series = [season_series(rng) for _ in range(3)]
    batch = F.window_functionals(np.stack([s.values for s in series]), series[0].days)
    for s, b in zip(series, batch):
        ref = np.stack([F.functionals(w) for w in F.windowize(s)])
        assert np.allclose(b, ref, atol=1e-12)


def test_season_features_layout_and_missing():
    rng = np.random.default_rng(1)
    full = {v: season_series(rng, v) for v in VARIABLES}
    sf = F.season_features(full)
    assert sf.values.shape == (672,) and F.feature_length() == 672
    assert F.N_WINDOWS * F.N_FUNCTIONALS * len(VARIABLES) == 672
    part = dict(full)
    del part["RED"]
    sp = F.season_features(part)
    k = VARIABLES.index("RED")
    assert np.count_nonzero(sp.values[k * 168 : (k + 1) * 168]) == 0
    assert sp.missing == ("RED",)
    assert np.array_equal(np.delete(sp.values, np.s_[k * 168 : (k + 1) * 168]),
                          np.delete(sf.values, np.s_[k * 168 : (k + 1) * 168]))
    shuffled = {v: full[v] for v in reversed(VARIABLES)}
    assert np.array_equal(F.season_features(shuffled).values, sf.values)
    assert F.season_features({}).missing_rs


def test_windows_round_trip():
    x = np.random.default_rng(0).normal(size=(5, 3, 672))
    w = F.to_windows(x)
    assert w.shape == (5, 3, 24, 28)
    assert np.array_equal(F.from_windows(w, 4), x)
    # window k row holds every variable's 7 functionals for that window
    assert np.array_equal(w[0, 0, 2, 7:14], x[0, 0, 168 + 14 : 168 + 21])


def test_normalization():
    rng = np.random.default_rng(0)
    x = rng.normal(3, 5, size=(200, 6))
    x[:, 2] = 7.0
    st_ = F.fit_norm_stats(x)
    z = F.apply_norm(x, st_)
    live = [0, 1, 3, 4, 5]
    assert np.all(np.abs(z[:, live].mean(axis=0)) < 1e-8)
    assert np.all(np.abs(z[:, live].std(axis=0) - 1) < 1e-6)
    assert np.all(z[:, 2] == 0)
    assert np.max(np.abs(st_.invert(z) - x)) < 1e-8
    with pytest.raises(ValueError):
        F.fit_norm_stats(x[:1])


def test_onehot_and_vocab():
    vocab = F.CropVocab(("b", "a", "c"))
    assert np.array_equal(F.crop_onehot("a", vocab), [1, 0, 0])
    assert F.crop_onehot("c", vocab).sum() == 1
    with pytest.raises(KeyError):
        F.crop_onehot("z", vocab)
    unk = F.CropVocab(("a", "b"), unknown=True)
    assert len(unk) == 3 and F.crop_onehot("z", unk)[2] == 1
    with pytest.raises(ValueError):
        F.CropVocab(("a", "a"))


def test_two_country_vocab_union():
    from hiercrop.synth import country_legend

    nl, fr = (set(e.code for e in country_legend(c)) for c in ("NL", "FR"))
    assert len(nl) == 141 and len(fr) == 151 and len(nl & fr) == 67
    assert len(nl | fr) == 225


def test_distribution_simple_cases():
    one = F.crop_distribution([[0, 0], [1, 0]], [2, 3], [1, 1], 3)
    assert np.array_equal(one, [[0, 10000, 0]] * 2)
    half = F.crop_distribution([[0, 0], [1, 0]], [2, 2], [0, 2], 3)
    assert np.array_equal(half, [[5000, 0, 5000]] * 2)


def test_distribution_matches_bruteforce():
    rng = np.random.default_rng(9)
    xy = rng.uniform(0, 40, size=(50, 2))
    area = rng.lognormal(1, 0.7, 50)
    crop = rng.integers(0, 6, 50)
    got = F.crop_distribution(xy, area, crop, 6)
    assert got.tolist() == cd_oracle(xy, area, crop, 6)
    assert got.dtype.kind == "i"


def test_distribution_rounds_tiny_share_to_zero():
    # a 1e-3 ha parcel next to a 100 ha one: share 1e-5 < 0.5e-4
    got = F.crop_distribution([[0, 0], [0.5, 0]], [100.0, 1e-3], [0, 1], 2, centers=[[0, 0]])
    assert got[0, 1] == 0 and got[0, 0] == 10000


def test_distribution_empty_neighbourhood_warns():
    with pytest.warns(UserWarning):
        got = F.crop_distribution([[0, 0]], [1.0], [0], 2, centers=[[100, 100]])
    assert not got.any()
    with pytest.warns(UserWarning):
        F.crop_distribution(np.empty((0, 2)), [], [], 2, centers=[[0, 0]])


def test_build_vocab_union_sorted():
    from hiercrop.synth import load_scenario, generate

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, _ = generate(load_scenario("tiny"))
    v = build_vocab([a])
    assert list(v.codes) == sorted(v.codes)
