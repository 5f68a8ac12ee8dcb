"""End-to-end experiment runners shared by the CLI and the acceptance suite."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import evaluation as E
from . import synth
from .features import CropVocab
from .ingest import legend_codes
from .model import ModelSpec
from .pipeline import cached_features, featurize_dataset
from .train import (
    SplitPolicy, fewshot_subsets, group_labels, model_for, predict_samples, prepare_experiment, train_model,
)

MODEL_SIZES = {
    # small enough to train on one CPU core; one recurrent layer because a 3-deep stack of
    # 32-unit LSTMs sits on the class-prior plateau for many epochs
    "desk": dict(embed_dim=16, rnn_dim=32, rs_proj_dim=32, stacked_lstm=1),
    "full": dict(embed_dim=64, rnn_dim=256, rs_proj_dim=128, stacked_lstm=3),
}

DESK_TRAIN = dict(batch_size=64, lr=3e-3)


def default_cache_dir():
    return os.environ.get("HIERCROP_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "hiercrop"))


@dataclass
class Loaded:
    cfg: object
    dataset: object
    truth: object
    table: object


def load_preset(name, cache_dir=None, **overrides):
    """Generate a preset scenario and featurize it (cached on disk when ``cache_dir`` is set)."""
    cfg = synth.load_scenario(name, **overrides)
    dataset, truth = synth.generate(cfg)
    if cache_dir:
        table = cached_features(dataset, cache_dir, f"{name}|{cfg}")
    else:
        table = featurize_dataset(dataset)
    return Loaded(cfg, dataset, truth, table)


def experiment(loaded, seed=0, mode="temporal", codes=None):
    codes = codes if codes is not None else legend_codes(loaded.dataset.legend)
    return prepare_experiment(loaded.dataset, loaded.table, CropVocab(tuple(codes)), SplitPolicy(mode), seed)


def build_model(exp, variant, size="desk"):
    return model_for(ModelSpec(variant, len(exp.codes), **MODEL_SIZES[size]))


def fit(exp, variant, config, size="desk", train=None, params=None, val=None):
    model = build_model(exp, variant, size)
    train = exp.splits.train if train is None else train
    val = exp.splits.val if val is None else val
    result = train_model(model, exp.data, train, val, config, params=params)
    return model, result


def predicted_codes(exp, model, params, samples, n_windows=24):
    idx = predict_samples(model, params, exp.data, samples, n_windows)
    return [exp.codes[k] for k in idx]


def true_codes(exp, samples):
    return [exp.codes[k] for k in exp.data.crops[samples[:, 0], samples[:, 1]]]


def level_spec(exp, cfg):
    return E.LevelSpec(exp.agg, tuple(cfg.crops_of_interest), tuple(cfg.grassland))


def test_metrics(exp, model, params, cfg, samples=None, n_windows=24):
    samples = exp.splits.test if samples is None else samples
    return E.compute_metrics(true_codes(exp, samples), predicted_codes(exp, model, params, samples, n_windows),
                             level_spec(exp, cfg))


def early_curve(exp, model, params, cfg, cutoffs, samples=None):
    samples = exp.splits.test if samples is None else samples
    truth = true_codes(exp, samples)
    return E.early_season_curve(lambda t: predicted_codes(exp, model, params, samples, t), truth, cutoffs,
                                level_spec(exp, cfg))


def fewshot_plan(exp, exponents, seed):
    """Nested few-shot training subsets drawn per aggregated class."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(4)[3])
    train = exp.splits.train
    return fewshot_subsets(train, group_labels(exp, train), exponents, rng)
