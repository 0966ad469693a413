"""Command-line interface: ``pixelhop {train,eval,predict,diagnose,sweep}``.

Exit codes: 0 success, 2 configuration or argument error, 3 data format or
consistency error, 4 numeric failure, 5 file I/O error.
"""

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, ConfigError, load_config, parse_overrides, parse_value
from .datasets import DATA_ENV_VAR, dataset_files, load_dataset, subsample_indices
from .diagnostics import (diagnostics_convergence, diagnostics_energy, write_convergence_csv,
                          write_energy_csv)
from .exceptions import (ArgumentError, ConsistencyError, DataIOError, FormatError,
                         InsufficientDataError, NumericError, PixelHopError)
from .modelfile import load_model, save_model
from .pipeline import PixelHopClassifier, evaluate, infer, prepare_images, sweep, train

logger = logging.getLogger("pixelhop")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


def exit_code(exc):
    if isinstance(exc, (ConfigError, ArgumentError)):
        return EXIT_CONFIG
    if isinstance(exc, (FormatError, ConsistencyError, InsufficientDataError)):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataIOError, OSError)):
        return EXIT_IO
    return 1


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def _data_hashes(dataset, splits, root):
    return {str(p): sha256(p) for split in splits for p in dataset_files(dataset, split, root)}


def _load(dataset, split, root):
    return load_dataset(dataset, split, root, dtype=np.float32)


def _provenance(args, config, overrides):
    return {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": config.to_dict(),
        "config_source": args.config,
        "overrides": overrides,
        "seeds": {"seed": config.seed},
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def _resolve_config(args):
    overrides = parse_overrides(args.set)
    return load_config(args.config, overrides), overrides


def cmd_train(args):
    config, overrides = _resolve_config(args)
    out = _out_dir(args.out)
    train_ds = _load(config.dataset, "train", args.data_dir)
    start = time.perf_counter()
    tp = train(config, train_ds)
    elapsed = time.perf_counter() - start
    model_path = out / "model.sslpxh"
    save_model(tp, model_path)
    report = _provenance(args, config, overrides)
    train_pred = None
    if args.train_accuracy:
        train_pred = infer(tp, train_ds if config.train_fraction == 1 else
                           train_ds.take(_fraction_indices(train_ds, config)))
    report.update({
        "n_train": tp.info["n_train"],
        "n_features": tp.info["n_features"],
        "unit_channels": tp.info["unit_channels"],
        "n_support_vectors": int(len(tp.model.svc_.support_)),
        "timings": {**tp.info["timings"], "total": elapsed},
        "hashes": {"model": sha256(model_path),
                   "data": _data_hashes(config.dataset, ["train"], args.data_dir)},
    })
    if train_pred is not None:
        labels = (train_ds.labels if config.train_fraction == 1
                  else train_ds.labels[_fraction_indices(train_ds, config)])
        report["train_accuracy"] = float(np.mean(train_pred == labels))
    _write_json(out / "report.json", report)
    print(f"model written to {model_path} ({tp.info['n_train']} training images, "
          f"F={tp.info['n_features']})")
    return EXIT_OK


def _fraction_indices(ds, config):
    return subsample_indices(len(ds), config.train_fraction, config.seed)


def write_confusion_csv(path, confusion):
    j = confusion.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["true\\predicted"] + [str(k) for k in range(j)])
        for i in range(j):
            w.writerow([str(i)] + [f"{v:.6f}" for v in confusion[i]])


def cmd_eval(args):
    tp = load_model(args.model)
    out = _out_dir(args.out)
    config = tp.config
    ds = _load(config.dataset, args.split, args.data_dir)
    train_ds = _load(config.dataset, "train", args.data_dir) if args.per_unit else None
    report = evaluate(tp, ds, train_ds=train_ds)
    write_confusion_csv(out / "confusion.csv", report.confusion)
    summary = {
        "command": "eval",
        "argv": sys.argv[1:],
        "model": str(args.model),
        "split": args.split,
        "config": config.to_dict(),
        "seeds": {"seed": config.seed},
        **report.to_dict(),
        "hashes": {"model": sha256(args.model),
                   "data": _data_hashes(config.dataset, [args.split], args.data_dir)},
    }
    _write_json(out / "summary.json", summary)
    print(f"accuracy {report.accuracy:.4f} on {report.n_samples} {args.split} images")
    return EXIT_OK


def cmd_predict(args):
    tp = load_model(args.model)
    out = _out_dir(args.out)
    ds = _load(tp.config.dataset, args.split, args.data_dir)
    if args.limit:
        ds = ds.take(np.arange(min(args.limit, len(ds))))
    pred = infer(tp, ds)
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["index", "predicted", "label"])
        for i, (p, y) in enumerate(zip(pred, ds.labels)):
            w.writerow([i, int(p), int(y)])
    print(f"{len(pred)} predictions written to {out / 'predictions.csv'}")
    return EXIT_OK


def _parse_list(text, name):
    values = parse_value(text)
    values = values if isinstance(values, list) else [values]
    if any(isinstance(v, str) for v in values):
        raise ConfigError(f"cannot parse {name} list {text!r}")
    return values


def cmd_diagnose(args):
    out = _out_dir(args.out)
    record = {"command": "diagnose", "argv": sys.argv[1:], "mode": args.mode}
    if args.mode == "energy":
        if args.model:
            tp = load_model(args.model)
            cascades = tp.model.cascades_
            record["model"] = str(args.model)
            record["config"] = tp.config.to_dict()
        else:
            if not args.config:
                raise ConfigError("energy mode needs --model or --config")
            config, overrides = _resolve_config(args)
            ds = _load(config.dataset, "train", args.data_dir)
            if config.train_fraction < 1:
                ds = ds.take(_fraction_indices(ds, config))
            X = prepare_images(ds, config)
            cascades = PixelHopClassifier.from_config(config).fit_cascades(X)
            record.update(config=config.to_dict(), overrides=overrides)
        paths = write_energy_csv(diagnostics_energy(cascades), out)
    else:
        if not args.config:
            raise ConfigError("convergence mode needs --config")
        config, overrides = _resolve_config(args)
        schedule = [int(v) for v in _parse_list(args.schedule, "schedule")]
        ds = _load(config.dataset, "train", args.data_dir)
        X = prepare_images(ds, config)
        group = config.channel_groups[args.group] if args.group < len(config.channel_groups) \
            else None
        if group is None:
            raise ConfigError(f"group {args.group} does not exist for color mode {config.color_mode}")
        units = [int(u) for u in _parse_list(args.units, "units")] if args.units else None
        thr = config.energy_threshold
        # every patch of the selected images unless a limit is asked for explicitly
        limit = config.patch_sample_limit if "patch_sample_limit" in overrides else None
        diags = diagnostics_convergence(
            X[..., group], schedule, n_units=config.n_units, energy_threshold=thr,
            patch_sample_limit=limit, padding=config.padding,
            runs=args.runs, n_filters=args.filters, random_state=config.seed, units=units)
        paths = write_convergence_csv(diags, out)
        record.update(config=config.to_dict(), overrides=overrides, schedule=schedule,
                      runs=args.runs, filters=args.filters, group=args.group,
                      seeds={"seed": config.seed})
    record["outputs"] = {str(p): sha256(p) for p in paths}
    _write_json(out / "diagnose.json", record)
    print(f"{len(paths)} CSV files written to {out}")
    return EXIT_OK


def _sweep_one(config, fraction, seed, data_dir):
    train_ds = _load(config.dataset, "train", data_dir)
    test_ds = _load(config.dataset, "test", data_dir)
    runs, _ = sweep(config, train_ds, test_ds, [fraction], [seed])
    return runs[0]


def cmd_sweep(args):
    config, overrides = _resolve_config(args)
    fractions = [float(f) for f in _parse_list(args.fractions, "fractions")]
    seeds = [int(s) for s in _parse_list(args.seeds, "seeds")]
    if any(not 0 < f <= 1 for f in fractions):
        raise ConfigError(f"fractions must lie in (0, 1], got {fractions}")
    out = _out_dir(args.out)
    jobs = [(f, s) for f in fractions for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            runs = list(pool.map(_sweep_one, [config] * len(jobs), *zip(*jobs),
                                 [args.data_dir] * len(jobs)))
    else:
        train_ds = _load(config.dataset, "train", args.data_dir)
        test_ds = _load(config.dataset, "test", args.data_dir)
        runs, _ = sweep(config, train_ds, test_ds, fractions, seeds)
    with open(out / "runs.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["fraction", "seed", "n_train", "accuracy"])
        for r in runs:
            w.writerow([r["fraction"], r["seed"], r["n_train"], f"{r['accuracy']:.6f}"])
    rows = []
    for fraction in fractions:
        accs = np.array([r["accuracy"] for r in runs if r["fraction"] == fraction])
        n_train = next(r["n_train"] for r in runs if r["fraction"] == fraction)
        rows.append([fraction, n_train, len(accs), accs.mean(),
                     accs.std(ddof=1) if len(accs) > 1 else 0.0])
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["fraction", "n_train", "n_seeds", "mean_accuracy", "std_accuracy"])
        for row in rows:
            w.writerow(row[:3] + [f"{row[3]:.6f}", f"{row[4]:.6f}"])
    record = _provenance(args, config, overrides)
    record.update(fractions=fractions, seeds={"seeds": seeds}, runs=runs,
                  hashes={"data": _data_hashes(config.dataset, ["train", "test"], args.data_dir),
                          "sweep.csv": sha256(out / "sweep.csv")})
    _write_json(out / "sweep.json", record)
    print(f"{len(runs)} runs summarised in {out / 'sweep.csv'}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pixelhop", description="PixelHop image classification experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--data-dir", default=None,
                       help=f"dataset root (default: ${DATA_ENV_VAR})")
        p.add_argument("--out", required=True, help="output directory")
        if config:
            p.add_argument("--config", help=f"preset ({', '.join(PRESETS)}) or config file")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help="override a configuration key (repeatable)")

    p = sub.add_parser("train", help="train a model and write model.sslpxh + report.json")
    common(p)
    p.add_argument("--train-accuracy", action="store_true",
                   help="also report accuracy on the training images")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model; writes confusion.csv + summary.json")
    common(p, config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--per-unit", action="store_true",
                   help="retrain the classifier on each unit's attributes alone")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write predictions.csv for a dataset split")
    common(p, config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--limit", type=int, default=None, help="only the first N images")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diagnose", help="energy or convergence CSV series")
    common(p)
    p.add_argument("--mode", choices=("energy", "convergence"), required=True)
    p.add_argument("--model", help="trained model (energy mode)")
    p.add_argument("--schedule", default="500,1000,2500,5000,10000",
                   help="increasing image counts (convergence mode)")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--filters", type=int, default=5, help="leading AC filters compared")
    p.add_argument("--units", default=None, help="comma list of 1-based units")
    p.add_argument("--group", type=int, default=0, help="channel group index")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="accuracy versus training fraction")
    common(p)
    p.add_argument("--fractions", default="1,1/4,1/16")
    p.add_argument("--seeds", default="0")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if getattr(args, "config", None) is None and args.command in ("train", "sweep"):
        parser.error("--config is required")
    try:
        return args.func(args)
    except PixelHopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
