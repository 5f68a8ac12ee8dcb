"""Experiment assembly, training loop, early-season augmentation, few-shot and transfer.

Random streams are derived from one seed with ``numpy.random.SeedSequence``:
``init`` (parameter initialisation), ``shuffle`` (mini-batch order),
``augment`` (early-season cut points) and ``sample`` (split holdout, few-shot
subsets).
"""
from __future__ import annotations

import copy
import csv
import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels as K
from .features import N_FUNCTIONALS, N_WINDOWS, NormStats, fit_norm_stats, shares_to_float, to_windows
from .model import Batch, HierCropModel, bag_of_crops
from .taxonomy import aggregate_labels

STREAMS = ("init", "shuffle", "augment", "sample")
MIN_CUTOFF = 10


class TrainingDiverged(FloatingPointError):
    pass


def rng_streams(seed):
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


# splits ----------------------------------------------------------------------------------

@dataclass
class SplitPolicy:
    mode: str = "temporal"  # or "spatio-temporal"
    holdout_fraction: float = 0.10
    min_history: int = 1

    def __post_init__(self):
        if self.mode not in ("temporal", "spatio-temporal"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in (0, 1)")


@dataclass
class Splits:
    """Sample arrays of (foi index, season index); the last season is test, the one before validation."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    train_seasons: tuple
    val_season: int
    test_season: int
    test_fois: np.ndarray  # FOI indices whose test-season labels are scored

    def role_of(self, name):
        return getattr(self, name)


def make_splits(n_fois, seasons, policy=SplitPolicy(), rng=None, labelled=None):
    """Role-disjoint sample sets.

    ``labelled`` (n, S) marks samples with a usable target. Training targets
    are the seasons before validation that have at least ``min_history``
    seasons of history (falling back to all of them if that leaves none).
    """
    S = len(seasons)
    if S < 3:
        raise ValueError(f"need at least 3 seasons for train/val/test, got {S}")
    labelled = np.ones((n_fois, S), dtype=bool) if labelled is None else np.asarray(labelled, dtype=bool)
    train_idx = [j for j in range(S - 2) if j >= policy.min_history] or list(range(S - 2))
    fois = np.arange(n_fois)
    if policy.mode == "spatio-temporal":
        rng = rng if rng is not None else np.random.default_rng(0)
        n_test = int(round(policy.holdout_fraction * n_fois))
        perm = rng.permutation(n_fois)
        test_fois = np.sort(perm[:n_test])
        train_fois = np.sort(perm[n_test:])
    else:
        test_fois = train_fois = fois

    def pairs(fs, js):
        out = [(i, j) for j in js for i in fs if labelled[i, j]]
        return np.array(out, dtype=np.int64).reshape(-1, 2)

    return Splits(
        pairs(train_fois, train_idx), pairs(train_fois, [S - 2]), pairs(test_fois, [S - 1]),
        tuple(seasons[j] for j in train_idx), seasons[S - 2], seasons[S - 1], test_fois,
    )


# sequence data -----------------------------------------------------------------------------

@dataclass
class SequenceData:
    foi_ids: tuple
    seasons: tuple
    crops: np.ndarray  # (n, S) vocab index, -1 when absent
    rs: np.ndarray  # (n, S, 24, F) normalised windows, zeros where RS is missing
    rs_missing: np.ndarray  # (n, S)
    cd: np.ndarray  # (n, V) float shares
    vocab_size: int
    n_variables: int = 4

    def __len__(self):
        return len(self.foi_ids)


def build_sequence_data(foi_ids, seasons, crops, features, missing, cd, vocab_size, norm: NormStats):
    """Normalise flat features and reshape them to windows; missing seasons become zero blocks."""
    n, S, F = features.shape
    n_var = F // (N_WINDOWS * N_FUNCTIONALS)
    z = norm.apply(features.reshape(-1, F)).reshape(n, S, F)
    z[missing] = 0.0
    rs = to_windows(z, n_var).astype(np.float32)
    return SequenceData(tuple(foi_ids), tuple(seasons), np.asarray(crops, dtype=np.int64), rs,
                        np.asarray(missing, dtype=bool), np.asarray(cd, dtype=np.float64), vocab_size, n_var)


def make_batch(data, samples, n_windows=N_WINDOWS):
    """Batch for samples sharing one target season index."""
    samples = np.asarray(samples)
    fi, js = samples[:, 0], samples[:, 1]
    if np.any(js != js[0]):
        raise ValueError("all samples of a batch must share the target season")
    T = int(js[0]) + 1
    hist = data.crops[fi, : T - 1]
    prev = np.full((len(fi), T), data.vocab_size, dtype=np.int64)
    prev[:, 1:] = np.where(hist >= 0, hist, data.vocab_size)
    return Batch(
        crops_prev=prev,
        rs=data.rs[fi, :T, :n_windows].astype(np.float64),
        boc=bag_of_crops(hist, data.vocab_size),
        cd=data.cd[fi],
        target=data.crops[fi, T - 1],
    )


def iter_batches(samples, batch_size, rng=None):
    """Chunks of ``samples`` grouped by target season; shuffled when ``rng`` is given."""
    samples = np.asarray(samples).reshape(-1, 2)
    chunks = []
    for j in np.unique(samples[:, 1]):
        group = samples[samples[:, 1] == j]
        if rng is not None:
            group = group[rng.permutation(len(group))]
        chunks.extend(group[k : k + batch_size] for k in range(0, len(group), batch_size))
    if rng is not None:
        chunks = [chunks[k] for k in rng.permutation(len(chunks))]
    return chunks


def early_season_crop(batch, rng, low=MIN_CUTOFF, high=N_WINDOWS):
    """Truncate every season's RS windows to one cut point t ~ U{low..high}; returns (batch, t)."""
    t = int(rng.integers(low, high + 1))
    return truncate(batch, t), t


def truncate(batch, t):
    if batch.rs is None or t >= batch.rs.shape[2]:
        return batch
    return replace(batch, rs=batch.rs[:, :, :t])


# training ----------------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 25
    lr: float = 1e-3
    augment: bool = False
    seed: int = 0
    eval_batch_size: int = 1024
    max_steps: int = 0  # 0 = no cap; otherwise stop after this many updates

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)  # (epoch, split, metric, value)
    best_epoch: int = 0
    best_val: float = float("nan")


def copy_params(params):
    return {k: v.copy() for k, v in params.items()}


def predict_samples(model, params, data, samples, n_windows=N_WINDOWS, batch_size=1024):
    """Predicted class index per sample, in the order of ``samples``."""
    samples = np.asarray(samples).reshape(-1, 2)
    out = np.empty(len(samples), dtype=np.int64)
    order = np.lexsort((np.arange(len(samples)), samples[:, 1]))
    pos = 0
    for chunk in iter_batches(samples[order], batch_size):
        out[order[pos : pos + len(chunk)]] = model.predict(params, make_batch(data, chunk, n_windows))
        pos += len(chunk)
    return out


def accuracy(model, params, data, samples, n_windows=N_WINDOWS, batch_size=1024):
    if len(samples) == 0:
        return float("nan")
    pred = predict_samples(model, params, data, samples, n_windows, batch_size)
    return float(np.mean(pred == data.crops[samples[:, 0], samples[:, 1]]))


def train_model(model, data, train_samples, val_samples, config=TrainConfig(), params=None, log=None):
    """Mini-batch Adam on cross-entropy; keeps the parameters of the best validation epoch."""
    streams = rng_streams(config.seed)
    if params is None:
        params = model.init_params(streams["init"])
    params = copy_params(params)
    result = TrainResult(copy_params(params))
    if config.max_epochs == 0:
        return result
    state = K.AdamState(lr=config.lr)
    best = -np.inf
    steps = 0
    for epoch in range(1, config.max_epochs + 1):
        losses, correct, seen = [], 0, 0
        for b, chunk in enumerate(iter_batches(train_samples, config.batch_size, streams["shuffle"])):
            batch = make_batch(data, chunk)
            if config.augment:
                batch, _ = early_season_crop(batch, streams["augment"])
            loss, grads, logits = model.loss_and_grads(params, batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} batch {b + 1}")
            K.adam_step(params, grads, state)
            losses.append(loss * len(chunk))
            correct += int(np.sum(np.argmax(logits, axis=1) == batch.target))
            seen += len(chunk)
            steps += 1
            if config.max_steps and steps >= config.max_steps:
                break
        result.history.append((epoch, "train", "loss", float(np.sum(losses) / max(seen, 1))))
        result.history.append((epoch, "train", "accuracy", correct / max(seen, 1)))
        val = accuracy(model, params, data, val_samples, batch_size=config.eval_batch_size)
        result.history.append((epoch, "val", "accuracy", val))
        if log is not None:
            log(epoch, result.history[-3:])
        score = val if np.isfinite(val) else -result.history[-3][3]
        if score > best:
            best = score
            result.params = copy_params(params)
            result.best_epoch = epoch
            result.best_val = val
        if config.max_steps and steps >= config.max_steps:
            break
    return result


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "metric", "value"])
        for epoch, split, metric, value in history:
            w.writerow([epoch, split, metric, repr(float(value))])


# few-shot and transfer ---------------------------------------------------------------------

@dataclass
class FewShotPlan:
    exponents: tuple = (4, 6, 8, 10)
    seed: int = 0


def fewshot_subsets(samples, groups, exponents=(4, 6, 8, 10), rng=None):
    """Nested per-class subsets: 2**N samples of each group (or all it has).

    One permutation per group is drawn and every subset takes its prefix, so a
    smaller subset is always contained in a larger one.
    """
    samples = np.asarray(samples).reshape(-1, 2)
    groups = np.asarray(groups)
    rng = rng if rng is not None else np.random.default_rng(0)
    order = {g: np.flatnonzero(groups == g) for g in sorted(set(groups.tolist()))}
    order = {g: idx[rng.permutation(len(idx))] for g, idx in order.items()}
    out = {}
    for N in sorted(exponents):
        take = np.concatenate([idx[: 2**N] for idx in order.values()]) if order else np.empty(0, np.int64)
        out[N] = samples[np.sort(take)]
    return out


def vocab_fingerprint(codes):
    return hashlib.sha256("\n".join(codes).encode()).hexdigest()[:16]


def pretrain_finetune(model, source_params, source_meta, target_codes, data, train_samples, val_samples,
                      config=TrainConfig(), zero_shot=False):
    """Continue training a source checkpoint on target samples (no frozen layers).

    ``zero_shot`` returns the source parameters untouched.
    """
    expected = source_meta.get("vocab") if source_meta else None
    if expected is not None and expected != vocab_fingerprint(target_codes):
        raise ValueError("vocabulary mismatch between source checkpoint and target data")
    for k, v in model.init_params(np.random.default_rng(0)).items():
        if k not in source_params or source_params[k].shape != v.shape:
            raise ValueError(f"source checkpoint does not match the model: {k}")
    if zero_shot:
        return TrainResult(copy_params(source_params))
    return train_model(model, data, train_samples, val_samples, config, params=source_params)


# experiment assembly -----------------------------------------------------------------------

@dataclass
class Experiment:
    data: SequenceData
    splits: Splits
    norm: NormStats
    agg: object  # AggregationMap
    codes: tuple  # vocab codes, index -> code


def label_matrix(dataset, vocab):
    """(n, S) vocab indices of the declared crops, -1 when absent or out of vocabulary."""
    out = np.full((len(dataset.records), len(dataset.seasons)), -1, dtype=np.int64)
    for i, r in enumerate(dataset.records):
        for j, s in enumerate(dataset.seasons):
            c = r.crops.get(s)
            if c is not None and c in vocab:
                out[i, j] = vocab.lookup(c)
    return out


def prepare_experiment(dataset, table, vocab, policy=SplitPolicy(), seed=0, cd_shares=None,
                       threshold_fraction=0.003):
    """Splits, train-only normalisation, validation-season CD and the aggregation map."""
    from .pipeline import distributions

    seasons = tuple(dataset.seasons)
    if tuple(table.seasons) != seasons or list(table.foi_ids) != [r.foi_id for r in dataset.records]:
        raise ValueError("feature table does not match the dataset")
    crops = label_matrix(dataset, vocab)
    splits = make_splits(len(dataset.records), seasons, policy, rng_streams(seed)["sample"], crops >= 0)
    n_val = seasons.index(splits.val_season)
    train_fois = np.setdiff1d(np.arange(len(dataset.records)), splits.test_fois) \
        if policy.mode == "spatio-temporal" else np.arange(len(dataset.records))
    rows = table.values[train_fois, :n_val][~table.missing[train_fois, :n_val]]
    norm = fit_norm_stats(rows)
    if cd_shares is None:
        cd_shares = distributions(dataset, vocab, splits.val_season)
    data = build_sequence_data(table.foi_ids, seasons, crops, table.values.astype(np.float64), table.missing,
                               shares_to_float(cd_shares), len(vocab), norm)
    tree = copy.deepcopy(dataset.legend)
    labels = [dataset.records[i].crops[s] for i in train_fois for s in seasons[: n_val + 1]
              if s in dataset.records[i].crops]
    if tree is None:
        from .taxonomy import TaxonomyTree

        tree = TaxonomyTree()
    tree.count_labels(labels)
    agg = aggregate_labels(tree, threshold_fraction)
    return Experiment(data, splits, norm, agg, tuple(vocab.codes))


def group_labels(exp, samples):
    """Aggregated group of each sample's target crop."""
    idx = exp.data.crops[samples[:, 0], samples[:, 1]]
    return np.array([exp.agg.group_of(exp.codes[k]) for k in idx], dtype=object)


def model_for(spec):
    return HierCropModel(spec)
