"""Classification metrics at several label granularities, confusion matrices and reports.

Levels:

* ``all``: declared crop codes as they are.
* ``aggregated``: codes projected through an AggregationMap.
* ``interest``: crops of interest kept, grassland codes merged into
  ``grassland`` and everything else into ``others``.
* ``interest_only``: samples whose true class is not a crop of interest are
  dropped, then scores are micro-averaged over the crops of interest (a
  prediction outside that set is a miss, not a false positive).

Macro averages run over the union of true and predicted labels; a label that
is predicted but never true has recall 0 and so F1 0.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

LEVELS = ("all", "aggregated", "interest", "interest_only")
GRASSLAND = "grassland"
OTHERS = "others"


def _labels(truth, pred, labels=None):
    if labels is not None:
        return list(labels)
    return sorted(set(map(str, truth)) | set(map(str, pred)))


def confusion_matrix(truth, pred, labels=None):
    """(labels, counts) with counts[i, j] = #(truth == labels[i], pred == labels[j])."""
    truth = np.asarray(truth).astype(str)
    pred = np.asarray(pred).astype(str)
    if truth.shape != pred.shape:
        raise ValueError(f"truth {truth.shape} and prediction {pred.shape} differ in length")
    labels = _labels(truth, pred, labels)
    index = {c: k for k, c in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    keep = np.array([t in index and p in index for t, p in zip(truth, pred)], dtype=bool)
    if keep.any():
        ti = np.array([index[t] for t in truth[keep]])
        pi = np.array([index[p] for p in pred[keep]])
        np.add.at(counts, (ti, pi), 1)
    return labels, counts


def column_percentages(counts):
    """Each predicted-class column scaled to sum to 100; empty columns stay 0."""
    counts = np.asarray(counts, dtype=np.float64)
    col = counts.sum(axis=0, keepdims=True)
    return np.divide(100.0 * counts, col, out=np.zeros_like(counts), where=col > 0)


def per_class_scores(truth, pred, labels=None):
    """Dict label -> (precision, recall, f1, support)."""
    labels, cm = confusion_matrix(truth, pred, labels)
    tp = np.diag(cm).astype(np.float64)
    n_pred = cm.sum(axis=0)
    n_true = cm.sum(axis=1)
    prec = np.divide(tp, n_pred, out=np.zeros_like(tp), where=n_pred > 0)
    rec = np.divide(tp, n_true, out=np.zeros_like(tp), where=n_true > 0)
    den = prec + rec
    f1 = np.divide(2 * prec * rec, den, out=np.zeros_like(tp), where=den > 0)
    return {c: (prec[k], rec[k], f1[k], int(n_true[k])) for k, c in enumerate(labels)}


def accuracy(truth, pred):
    truth, pred = np.asarray(truth).astype(str), np.asarray(pred).astype(str)
    return float(np.mean(truth == pred)) if len(truth) else float("nan")


def micro_f1(truth, pred, labels=None):
    """Micro-averaged F1 over ``labels`` (all observed labels by default)."""
    truth, pred = np.asarray(truth).astype(str), np.asarray(pred).astype(str)
    labels = set(_labels(truth, pred, labels))
    in_t = np.isin(truth, list(labels))
    in_p = np.isin(pred, list(labels))
    hit = truth == pred
    tp = np.sum(hit & in_t)
    fp = np.sum(in_p & ~hit)
    fn = np.sum(in_t & ~hit)
    den = 2 * tp + fp + fn
    return float(2 * tp / den) if den else float("nan")


def macro_scores(truth, pred, labels=None):
    scores = per_class_scores(truth, pred, labels)
    if not scores:
        return {"precision": float("nan"), "recall": float("nan"), "f1": float("nan")}
    arr = np.array([s[:3] for s in scores.values()])
    return {"precision": float(arr[:, 0].mean()), "recall": float(arr[:, 1].mean()), "f1": float(arr[:, 2].mean())}


# levels ---------------------------------------------------------------------------------

@dataclass
class LevelSpec:
    agg: object = None  # AggregationMap
    interest: tuple = ()
    grassland: tuple = ()


def project(codes, level, spec: LevelSpec):
    codes = [str(c) for c in codes]
    if level == "all" or level == "interest_only":
        return codes
    if level == "aggregated":
        if spec.agg is None:
            raise ValueError("aggregated level needs an aggregation map")
        return [spec.agg.group_of(c) for c in codes]
    if level == "interest":
        coi, grass = set(spec.interest), set(spec.grassland)
        return [c if c in coi else GRASSLAND if c in grass else OTHERS for c in codes]
    raise ValueError(f"unknown level {level!r}; choose from {', '.join(LEVELS)}")


@dataclass
class LevelReport:
    level: str
    n: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    micro_f1: float
    per_class: dict = field(default_factory=dict)  # label -> (precision, recall, f1, support)

    def summary(self):
        d = asdict(self)
        d.pop("per_class")
        return d


def level_report(truth, pred, level, spec=LevelSpec()):
    if len(truth) != len(pred):
        raise ValueError(f"truth ({len(truth)}) and predictions ({len(pred)}) differ in length")
    t, p = project(truth, level, spec), project(pred, level, spec)
    labels = None
    if level == "interest_only":
        if not spec.interest:
            raise ValueError("interest_only level needs crops of interest")
        labels = sorted(spec.interest)
        keep = [k for k, c in enumerate(t) if c in spec.interest]
        t, p = [t[k] for k in keep], [p[k] for k in keep]
    if not t:
        raise ValueError(f"empty evaluation set at level {level}")
    macro = macro_scores(t, p, labels)
    return LevelReport(level, len(t), accuracy(t, p), macro["precision"], macro["recall"], macro["f1"],
                       micro_f1(t, p, labels), per_class_scores(t, p, labels))


def compute_metrics(truth, pred, spec=LevelSpec(), levels=None):
    """LevelReport per level; levels that need missing inputs are skipped by default."""
    if levels is None:
        levels = ["all"]
        if spec.agg is not None:
            levels.append("aggregated")
        if spec.interest:
            levels += ["interest", "interest_only"]
    return {lv: level_report(truth, pred, lv, spec) for lv in levels}


def early_season_curve(predict_at, truth, cutoffs, spec=LevelSpec(), level="interest_only"):
    """LevelReport per cutoff of ``predict_at(cutoff) -> predicted codes``."""
    return {int(t): level_report(truth, predict_at(t), level, spec) for t in cutoffs}


# outputs ---------------------------------------------------------------------------------

def write_level_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "label", "precision", "recall", "f1", "support"])
        for lv, r in reports.items():
            for label, (p, rc, f, n) in r.per_class.items():
                w.writerow([lv, label, repr(float(p)), repr(float(rc)), repr(float(f)), n])


def write_summary_json(path, reports, extra=None):
    out = {"levels": {lv: r.summary() for lv, r in reports.items()}}
    if extra:
        out.update(extra)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_confusion_csv(path, labels, counts, percent=True):
    """Rows are true classes, columns predicted classes headed by class code."""
    table = column_percentages(counts) if percent else np.asarray(counts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *labels])
        for label, row in zip(labels, table):
            w.writerow([label, *(repr(float(x)) if percent else int(x) for x in row)])


def write_curve_csv(path, curve):
    """Rows (cutoff, label, f1); label ``*micro`` holds the pooled micro-F1."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cutoff", "label", "f1"])
        for t, r in curve.items():
            w.writerow([t, "*micro", repr(float(r.micro_f1))])
            for label, (_, _, f, _) in r.per_class.items():
                w.writerow([t, label, repr(float(f))])
