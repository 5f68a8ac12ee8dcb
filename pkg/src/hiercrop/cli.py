"""Command line entry points.

Subcommands: synth, smooth, featurize, aggregate, train, eval, fewshot.
Every run writes ``run_manifest.json`` into its output directory.
Exit codes: 0 success, 1 other failure, 2 usage error or unknown variant,
3 malformed input file.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time

OUT_ENV = "HIERCROP_OUT"
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_MALFORMED = 0, 1, 2, 3

TRAIN_KEYS = {"batch_size": int, "max_epochs": int, "lr": float, "augment": lambda s: s.lower() in ("1", "true", "yes"),
              "max_steps": int}


class UsageError(Exception):
    pass


# config and manifest ----------------------------------------------------------------------

def read_config(path):
    """Key-value config: [train] TrainConfig fields, [model] size/variant, [split] mode, [eval] options."""
    cp = configparser.ConfigParser()
    if path:
        with open(path) as fh:
            cp.read_file(fh)
    return cp


def train_config(cp, seed, augment=None):
    from .train import TrainConfig

    kw = {}
    if cp.has_section("train"):
        for k, v in cp.items("train"):
            if k not in TRAIN_KEYS:
                raise UsageError(f"unknown [train] key {k!r}; valid: {', '.join(sorted(TRAIN_KEYS))}")
            kw[k] = TRAIN_KEYS[k](v)
    if augment is not None:
        kw["augment"] = augment
    return TrainConfig(seed=seed, **kw)


def config_hash(cp, args):
    text = json.dumps({s: dict(cp.items(s)) for s in cp.sections()}, sort_keys=True)
    opts = json.dumps({k: v for k, v in vars(args).items() if k not in ("func", "out_dir")}, sort_keys=True,
                      default=str)
    return hashlib.sha256((text + opts).encode()).hexdigest()


def write_manifest(out_dir, argv, cp, args, inputs, outputs, started):
    from . import __version__
    from .ingest import file_sha256

    manifest = {
        "command": ["hiercrop", *argv],
        "config_sha256": config_hash(cp, args),
        "inputs": {k: {"path": p, "sha256": file_sha256(p)} for k, p in sorted(inputs.items()) if p},
        "seed": args.seed,
        "version": __version__,
        "outputs": sorted(os.path.relpath(p, out_dir) for p in outputs),
        "wall_clock_s": round(time.time() - started, 3),
    }
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# data loading -----------------------------------------------------------------------------

def data_paths(data_dir):
    paths = {k: os.path.join(data_dir, f"{k}.csv") for k in ("crops", "series", "legend")}
    if not os.path.exists(paths["crops"]):
        raise UsageError(f"{data_dir}: no crops.csv")
    return {k: p for k, p in paths.items() if os.path.exists(p)}


def load_data(args):
    """Dataset from --data (a directory written by ``synth``) or --preset; returns (dataset, cfg, inputs)."""
    from . import synth
    from .ingest import load_dataset

    if args.data:
        paths = data_paths(args.data)
        cfg = None
        scenario = os.path.join(args.data, "scenario.cfg")
        if os.path.exists(scenario):
            cfg = synth.load_scenario(scenario)
        ds = load_dataset(paths["crops"], paths.get("series"), paths.get("legend"), cfg.country if cfg else "")
        if ds.legend is None:
            ds.legend = synth.legend_tree(cfg.country) if cfg else None
        return ds, cfg, paths
    if args.preset:
        cfg = synth.load_scenario(args.preset, **({"seed": args.seed} if args.preset_seed else {}))
        return synth.generate(cfg)[0], cfg, {}
    raise UsageError("give --data DIR or --preset NAME")


def feature_table(args, ds, inputs):
    from .pipeline import FeatureTable, featurize_dataset

    path = getattr(args, "features", None)
    if not path:
        return featurize_dataset(ds)
    import numpy as np

    from .ingest import read_features

    inputs["features"] = path
    ids, seasons, values, missing = read_features(path)
    fois = [r.foi_id for r in ds.records]
    pos = {(f, s): k for k, (f, s) in enumerate(zip(ids, seasons.tolist()))}
    out = np.zeros((len(fois), len(ds.seasons), values.shape[1]), dtype=np.float32)
    miss = np.ones((len(fois), len(ds.seasons)), dtype=bool)
    for i, f in enumerate(fois):
        for j, s in enumerate(ds.seasons):
            k = pos.get((f, s))
            if k is not None:
                out[i, j] = values[k]
                miss[i, j] = missing[k]
    var_missing = np.repeat(miss[:, :, None], values.shape[1] // 168, axis=2)
    return FeatureTable(tuple(fois), tuple(ds.seasons), out, miss, var_missing)


def vocab_for(ds):
    from .features import CropVocab
    from .ingest import build_vocab, legend_codes

    if ds.legend is not None:
        codes = set(legend_codes(ds.legend)) | set(ds.codes())
        return CropVocab(tuple(sorted(codes)))
    return build_vocab([ds])


def prepared(args, cp):
    from .train import SplitPolicy, prepare_experiment

    ds, cfg, inputs = load_data(args)
    table = feature_table(args, ds, inputs)
    mode = cp.get("split", "mode", fallback="temporal")
    exp = prepare_experiment(ds, table, vocab_for(ds), SplitPolicy(mode), args.seed)
    return ds, cfg, inputs, exp


def check_variant_arg(variant):
    from .model import VARIANTS

    if variant not in VARIANTS:
        print(f"unknown variant {variant!r}; valid variants: {', '.join(VARIANTS)}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    return variant


# subcommands ----------------------------------------------------------------------------

def cmd_synth(args, cp, out):
    from . import synth
    from .ingest import save_dataset

    if not args.preset and not args.config_scenario:
        raise UsageError("synth needs --preset NAME or --scenario FILE")
    cfg = synth.load_scenario(args.config_scenario or args.preset, seed=args.seed)
    ds, truth = synth.generate(cfg)
    paths = list(save_dataset(ds, out).values())
    tpath = os.path.join(out, "truth.json")
    synth.write_truth(tpath, cfg, truth)
    spath = os.path.join(out, "scenario.cfg")
    with open(spath, "w") as fh:
        fh.write(synth.scenario_text(cfg))
    return {}, paths + [tpath, spath]


def cmd_smooth(args, cp, out):
    from .ingest import write_regular
    from .pipeline import condition_dataset

    ds, _, inputs = load_data(args)
    path = os.path.join(out, "smoothed.csv")
    write_regular(path, condition_dataset(ds))
    return inputs, [path]


def cmd_featurize(args, cp, out):
    from .ingest import write_features

    ds, _, inputs = load_data(args)
    table = feature_table(args, ds, inputs)
    ids, seasons, vals, miss = [], [], [], []
    for fid, s, v, m in table.rows():
        ids.append(fid)
        seasons.append(s)
        vals.append(v)
        miss.append(m)
    path = os.path.join(out, "features.csv")
    write_features(path, ids, seasons, vals, miss)
    return inputs, [path]


def cmd_aggregate(args, cp, out):
    import copy

    from .taxonomy import aggregate_labels

    ds, _, inputs = load_data(args)
    if ds.legend is None:
        raise UsageError("aggregate needs a legend")
    tree = copy.deepcopy(ds.legend)
    seasons = ds.seasons[:-1] if args.exclude_test else ds.seasons
    tree.count_labels([r.crops[s] for r in ds.records for s in seasons if s in r.crops])
    agg = aggregate_labels(tree, args.threshold)
    path = os.path.join(out, "aggregation.csv")
    agg.to_csv(path)
    return inputs, [path]


def checkpoint_meta(args, spec, exp, cfg, tcfg):
    from .train import vocab_fingerprint

    return {"spec": spec.to_dict(), "codes": list(exp.codes), "vocab": vocab_fingerprint(exp.codes),
            "seed": args.seed, "train": {k: getattr(tcfg, k) for k in ("batch_size", "max_epochs", "lr", "augment")},
            "preset": cfg.name if cfg else None}


def cmd_train(args, cp, out):
    from . import kernels as K
    from .experiments import MODEL_SIZES
    from .model import ModelSpec
    from .train import model_for, train_model, write_history

    variant = check_variant_arg(args.variant or cp.get("model", "variant", fallback="HierE_final"))
    ds, cfg, inputs, exp = prepared(args, cp)
    size = cp.get("model", "size", fallback="desk")
    spec = ModelSpec(variant, len(exp.codes), **MODEL_SIZES[size])
    model = model_for(spec)
    tcfg = train_config(cp, args.seed, True if args.augment else None)
    result = train_model(model, exp.data, exp.splits.train, exp.splits.val, tcfg)
    ck = os.path.join(out, "checkpoint.hcck")
    K.save_checkpoint(ck, result.params, checkpoint_meta(args, spec, exp, cfg, tcfg))
    hist = os.path.join(out, "history.csv")
    write_history(hist, result.history)
    outputs = [ck, hist] + write_eval(out, exp, model, result.params, cfg, args, "test")
    return inputs, outputs


def write_eval(out, exp, model, params, cfg, args, prefix):
    from . import evaluation as E
    from .experiments import level_spec, predicted_codes, true_codes

    samples = exp.splits.test
    cutoff = args.cutoff or 24
    truth = true_codes(exp, samples)
    pred = predicted_codes(exp, model, params, samples, cutoff)
    spec = level_spec(exp, cfg) if cfg else E.LevelSpec(exp.agg)
    levels = [args.level] if args.level else None
    reports = E.compute_metrics(truth, pred, spec, levels)
    paths = [os.path.join(out, f"{prefix}_metrics.csv"), os.path.join(out, f"{prefix}_summary.json"),
             os.path.join(out, f"{prefix}_confusion.csv")]
    E.write_level_csv(paths[0], reports)
    E.write_summary_json(paths[1], reports, {"cutoff": cutoff, "n_test": len(truth)})
    lv = args.level or ("aggregated" if spec.agg is not None else "all")
    labels, counts = E.confusion_matrix(E.project(truth, lv, spec), E.project(pred, lv, spec))
    E.write_confusion_csv(paths[2], labels, counts)
    return paths


def load_model(path, exp):
    from . import kernels as K
    from .model import ModelSpec
    from .train import model_for

    params, meta = K.load_checkpoint(path)
    if list(meta.get("codes", exp.codes)) != list(exp.codes):
        raise UsageError(f"{path}: checkpoint vocabulary does not match the data")
    return model_for(ModelSpec.from_dict(meta["spec"])), params, meta


def cmd_eval(args, cp, out):
    from .evaluation import write_curve_csv
    from .experiments import early_curve

    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    ds, cfg, inputs, exp = prepared(args, cp)
    inputs["checkpoint"] = args.checkpoint
    model, params, _ = load_model(args.checkpoint, exp)
    outputs = write_eval(out, exp, model, params, cfg, args, "eval")
    if args.curve:
        if cfg is None:
            raise UsageError("early-season curve needs crops of interest (data written by synth)")
        path = os.path.join(out, "early_season.csv")
        write_curve_csv(path, early_curve(exp, model, params, cfg, range(10, 25)))
        outputs.append(path)
    return inputs, outputs


def cmd_fewshot(args, cp, out):
    from . import kernels as K
    from .experiments import fewshot_plan
    from .train import pretrain_finetune, write_history

    if not args.checkpoint:
        raise UsageError("fewshot needs --checkpoint (source model)")
    ds, cfg, inputs, exp = prepared(args, cp)
    inputs["checkpoint"] = args.checkpoint
    model, params, meta = load_model(args.checkpoint, exp)
    tcfg = train_config(cp, args.seed)
    subset = fewshot_plan(exp, (args.shots,), args.seed)[args.shots]
    result = pretrain_finetune(model, params, meta, exp.codes, exp.data, subset, exp.splits.val, tcfg,
                               zero_shot=args.zero_shot)
    ck = os.path.join(out, "checkpoint.hcck")
    K.save_checkpoint(ck, result.params, {**meta, "fewshot": args.shots, "seed": args.seed})
    hist = os.path.join(out, "history.csv")
    write_history(hist, result.history)
    return inputs, [ck, hist] + write_eval(out, exp, model, result.params, cfg, args, "test")


COMMANDS = {"synth": cmd_synth, "smooth": cmd_smooth, "featurize": cmd_featurize, "aggregate": cmd_aggregate,
            "train": cmd_train, "eval": cmd_eval, "fewshot": cmd_fewshot}


def build_parser():
    p = argparse.ArgumentParser(prog="hiercrop", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="key-value config file")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread limit")
        s.add_argument("--out-dir", help=f"output directory (default: ${OUT_ENV}/<command>)")
        s.add_argument("--data", help="directory with crops.csv, series.csv, legend.csv")
        s.add_argument("--preset", help="synthetic scenario preset")
        s.add_argument("--preset-seed", action="store_true", help="reseed the preset scenario with --seed")
        s.add_argument("--features", help="features CSV (skips featurization)")
        s.add_argument("--variant")
        s.add_argument("--level", choices=("all", "aggregated", "interest", "interest_only"))
        s.add_argument("--cutoff", type=int, help="number of 30-day windows visible (10..24)")
        if name == "synth":
            s.add_argument("--scenario", dest="config_scenario", help="scenario config file")
        if name == "aggregate":
            s.add_argument("--threshold", type=float, default=0.003)
            s.add_argument("--exclude-test", action="store_true", help="count labels of all but the last season")
        if name == "train":
            s.add_argument("--augment", action="store_true", help="early-season augmentation")
        if name in ("eval", "fewshot"):
            s.add_argument("--checkpoint")
        if name == "eval":
            s.add_argument("--curve", action="store_true", help="also write the early-season curve")
        if name == "fewshot":
            s.add_argument("--shots", type=int, default=4, help="exponent N: 2**N samples per class")
            s.add_argument("--zero-shot", action="store_true", help="evaluate the source model without fine-tuning")
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("--threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    if args.cutoff is not None and not 10 <= args.cutoff <= 24:
        print("--cutoff must lie in 10..24", file=sys.stderr)
        return EXIT_USAGE
    if args.variant is not None:
        check_variant_arg(args.variant)
    out = args.out_dir or os.path.join(os.environ.get(OUT_ENV, "hiercrop-out"), args.command)
    os.makedirs(out, exist_ok=True)

    from .ingest import MalformedCSVError

    started = time.time()
    try:
        cp = read_config(args.config)
        inputs, outputs = COMMANDS[args.command](args, cp, out)
    except MalformedCSVError as exc:
        print(f"malformed input: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except (UsageError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.config:
        inputs = {**inputs, "config": args.config}
    write_manifest(out, argv, cp, args, inputs, outputs, started)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
