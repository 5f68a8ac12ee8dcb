import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiercrop.taxonomy import (
    OTHERS, ROOT, AggregationMap, TaxonomyTree, aggregate_labels, parse_code, project_labels,
)
from oracles import merge_oracle, tree_with

A, A1, A2, A3 = "33-00-00-00-00", "33-01-00-00-00", "33-02-00-00-00", "33-03-00-00-00"
B = "34-00-00-00-00"


def test_parse_and_ancestors():
    c = parse_code("33-01-01-05-01")
    assert str(c.parent()) == "33-01-01-05-00"
    assert str(c.parent().parent()) == "33-01-01-00-00"
    top = parse_code("33-00-00-00-00")
    assert top.depth == 1 and top.parent() == ROOT
    with pytest.raises(ValueError, match="3x"):
        parse_code("33-3x-00-00-00")
    with pytest.raises(ValueError):
        parse_code("33-00-01-00-00")
    with pytest.raises(ValueError):
        parse_code("33-01")


def test_round_trip_random_codes():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        depth = rng.integers(0, 6)
        levels = [int(v) for v in rng.integers(1, 100, depth)] + [0] * (5 - depth)
        text = "-".join(f"{v:02d}" for v in levels)
        assert str(parse_code(text)) == text


def test_hand_fixture():
    counts = {A1: 5, A2: 5, A3: 990, B: 1000}
    agg = aggregate_labels(tree_with(counts), 0.006)
    assert agg.threshold == pytest.approx(12)
    oracle = merge_oracle({"root": [A, B], A: [A1, A2, A3]}, counts, 12)
    assert agg.groups == oracle == {A3: 990, B: 1000, OTHERS: 10}
    assert agg.group_of(A1) == OTHERS and agg.group_of(A3) == A3


def test_pooled_parent_reaches_threshold():
    counts = {A1: 8, A2: 8, A3: 984, B: 1000}
    agg = aggregate_labels(tree_with(counts), 0.006)
    assert agg.groups == {A: 16, A3: 984, B: 1000}
    assert agg.group_of(A1) == agg.group_of(A2) == A


def test_identity_when_all_above():
    counts = {A1: 300, A2: 300, A3: 400, B: 1000}
    agg = aggregate_labels(tree_with(counts), 0.003)
    assert project_labels(list(counts), agg) == list(counts)


def test_permanent_collapsed():
    p1, p2 = "32-01-01-00-00", "32-02-00-00-00"
    counts = {p1: 500, p2: 500, B: 1000}
    agg = aggregate_labels(tree_with(counts, permanent=("32-00-00-00-00",)), 0.003)
    assert agg.group_of(p1) == agg.group_of(p2) == "32-00-00-00-00"


def test_empty_tree_rejected():
    with pytest.raises(ValueError):
        aggregate_labels(TaxonomyTree())
    with pytest.raises(ValueError):
        aggregate_labels(tree_with({A1: 1}), 0.0)


def test_csv_round_trip(tmp_path):
    counts = {A1: 5, A2: 5, A3: 990, B: 1000}
    t = tree_with(counts)
    agg = aggregate_labels(t, 0.006)
    agg.to_csv(tmp_path / "agg.csv")
    back = AggregationMap.from_csv(tmp_path / "agg.csv")
    assert back.mapping == agg.mapping
    t.to_csv(tmp_path / "legend.csv")
    assert set(TaxonomyTree.from_csv(tmp_path / "legend.csv").nodes) == set(t.nodes)


codes = st.sampled_from([
    "33-01-01-01-00", "33-01-01-02-00", "33-01-02-00-00", "33-02-01-00-00", "33-02-02-00-00",
    "34-01-00-00-00", "34-02-00-00-00", "31-01-01-00-00", "32-01-00-00-00",
])
count_maps = st.dictionaries(codes, st.integers(0, 500), min_size=1).filter(lambda d: sum(d.values()) > 0)


@settings(max_examples=80, deadline=None)
@given(count_maps, st.floats(0.001, 0.3))
def test_mass_conservation_and_threshold(counts, frac):
    t = tree_with(counts, permanent=("32-01-00-00-00",))
    agg = aggregate_labels(t, frac)
    assert sum(agg.groups.values()) == sum(counts.values())
    labels = [c for c, n in counts.items() for _ in range(n)]
    projected = project_labels(labels, agg)
    assert len(projected) == len(labels)
    for g, n in agg.groups.items():
        assert projected.count(g) == n
        if g not in (OTHERS, "32-01-00-00-00"):
            assert n >= agg.threshold


@settings(max_examples=80, deadline=None)
@given(count_maps, st.floats(0.001, 0.3))
def test_idempotent(counts, frac):
    agg = aggregate_labels(tree_with(counts), frac)
    regrouped = {g: n for g, n in agg.groups.items() if g != OTHERS}
    again = aggregate_labels(tree_with(regrouped), frac, total=sum(counts.values()))
    assert again.groups == regrouped


@settings(max_examples=80, deadline=None)
@given(count_maps, st.floats(0.001, 0.15), st.floats(1.0, 3.0))
def test_monotone_in_threshold(counts, frac, factor):
    lo = aggregate_labels(tree_with(counts), frac)
    hi = aggregate_labels(tree_with(counts), min(frac * factor, 0.99))
    assert hi.n_groups <= lo.n_groups
