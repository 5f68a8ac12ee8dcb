import copy
import hashlib
import warnings

import numpy as np
import pytest

from hiercrop import signal as S
from hiercrop import synth
from hiercrop.ingest import build_vocab, save_dataset
from hiercrop.seasons import season_offsets
from hiercrop.taxonomy import aggregate_labels


def test_identity_transitions_constant():
    rng = np.random.default_rng(0)
    seq = synth.gen_rotations(np.eye(4), rng.integers(0, 4, 50), 6, rng)
    assert np.all(seq == seq[:, :1])


def test_two_cycle_alternates():
    rng = np.random.default_rng(0)
    seq = synth.gen_rotations(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0, 1]), 7, rng)
    assert seq[0].tolist() == [0, 1, 0, 1, 0, 1, 0] and seq[1].tolist() == [1, 0, 1, 0, 1, 0, 1]


def test_empirical_transition_frequencies():
    rng = np.random.default_rng(1)
    P = rng.dirichlet(np.ones(4), size=4)
    seq = synth.gen_rotations(P, rng.integers(0, 4, 25_000), 5, rng)
    counts = np.zeros((4, 4))
    np.add.at(counts, (seq[:, :-1].ravel(), seq[:, 1:].ravel()), 1)
    assert counts.sum() == 100_000
    assert np.max(np.abs(counts / counts.sum(axis=1, keepdims=True) - P)) < 0.01
    with pytest.raises(ValueError):
        synth.gen_rotations(np.ones((2, 2)), np.array([0]), 3, rng)


def test_zero_noise_on_curve():
    params = synth.ARCHETYPES[synth.ARCHETYPE_NAMES[0]]
    days = np.arange(0, 365, 5)
    vals, valid, spikes = synth.gen_observations(params, days, np.random.default_rng(0), noise_scale=0.0)
    clean = synth.reflectances(synth.lai_curve(days, params))
    assert np.max(np.abs(vals - clean)) <= 5e-7 and valid.all() and not spikes.any()


def test_contamination_rate():
    params = synth.ARCHETYPES[synth.ARCHETYPE_NAMES[0]]
    n = 10_000
    _, _, spikes = synth.gen_observations(params, np.arange(n) % 365, np.random.default_rng(2), contamination=0.1)
    sd = np.sqrt(n * 0.1 * 0.9)
    assert abs(spikes.sum() - 1000) <= 3 * sd


def test_values_within_ranges(tiny):
    for r in tiny.dataset.records[:20]:
        for by_var in r.observations.values():
            assert 0 <= by_var["FAPAR"].values.min() and by_var["FAPAR"].values.max() <= 1
            assert by_var["LAI"].values.min() >= 0


def spike_recall(cfg):
    """Share of injected spike dates flagged by the RED-up / NIR-down Hampel pass."""
    d, truth = synth.generate(cfg)
    off = season_offsets(d.seasons)
    hit = total = 0
    for r in d.records:
        flagged = set()
        for var in ("RED", "NIR"):
            parts = [(o.timestamps + off[s], o.values, o.valid) for s in d.seasons
                     if (o := r.observations.get(s, {}).get(var)) is not None]
            if not parts:
                continue
            t, v, ok = (np.concatenate(x) for x in zip(*parts))
            clear = S.ObservationSeries(var, t[ok], v[ok], ok[ok])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out = S.hampel_filter(clear, 3, 3.0, direction="auto")
            flagged |= set(clear.timestamps[~out.valid].tolist())
        spikes = {int(day) + off[s] for (fid, s), days in truth.spikes.items() if fid == r.foi_id for day in days}
        hit += len(spikes & flagged)
        total += len(spikes)
    return hit / total


def test_hampel_recovers_five_sigma_spikes():
    cfg = synth.load_scenario("tiny", n_fois=200, spike_sigma=5.0, spike_spread=0.0)
    assert spike_recall(cfg) >= 0.95


def _hash_dir(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


def test_fixed_seed_byte_identical(tmp_path):
    cfg = synth.load_scenario("tiny", n_fois=15)
    for k in ("a", "b"):
        d, truth = synth.generate(cfg)
        save_dataset(d, tmp_path / k)
        synth.write_truth(tmp_path / k / "truth.json", cfg, truth)
    assert _hash_dir(tmp_path / "a") == _hash_dir(tmp_path / "b")
    other, _ = synth.generate(cfg, seed=cfg.seed + 1)
    save_dataset(other, tmp_path / "c")
    assert _hash_dir(tmp_path / "c")["crops.csv"] != _hash_dir(tmp_path / "a")["crops.csv"]


def test_two_country_legends():
    nl = {e.code for e in synth.country_legend("NL")}
    fr = {e.code for e in synth.country_legend("FR")}
    assert (len(nl), len(fr), len(nl | fr)) == (141, 151, 225)
    assert len(build_vocab([nl, fr])) == 225


def test_nl_analog_group_count():
    cfg = synth.load_scenario("nl-analog")
    d, _ = synth.generate(cfg)
    tree = copy.deepcopy(d.legend)
    tree.count_labels([c for r in d.records for c in r.crops.values()])
    assert aggregate_labels(tree, 0.003).n_groups == 24


def test_late_reveal_shared_prefix():
    # windows seen at cutoff 18 end on day 285; curves there differ by far less than LAI noise
    t = np.arange(0, 285)
    curves = [synth.lai_curve(t, synth.late_reveal_params(a, 300)) for a in synth.ARCHETYPE_NAMES]
    assert max(np.max(np.abs(c - curves[0])) for c in curves) < 0.1 * synth.NOISE_SIGMA[0]
    tail = np.arange(300, 365)
    ends = {synth.lai_curve(tail, synth.late_reveal_params(a, 300)).tobytes() for a in synth.ARCHETYPE_NAMES}
    assert len(ends) > 1


def test_scenario_text_round_trip():
    for name in synth.PRESETS:
        cfg = synth.load_scenario(name)
        assert synth.parse_scenario(synth.scenario_text(cfg)) == cfg
