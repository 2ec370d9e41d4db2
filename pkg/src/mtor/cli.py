"""Command-line front end: ``mtor generate | train | eval | cv``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from mtor import __version__
from mtor.baselines import StlModels, StlSetting, train_stl_deep, train_stl_shallow
from mtor.core import DataError, NumericalError, RmtorModel, validate_dataset
from mtor.data import IngestSpec, SynthSpec, load_csv, synthesize, write_csv
from mtor.deep import DmtorArchitecture, DmtorModel, SgdConfig, train_dmtor
from mtor.evaluation import evaluate, kfold_select_lambda
from mtor.optimizer import AlternatingConfig, FistaConfig, train_rmtor

SCHEMA_VERSION = 1

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

class UsageError(Exception):
    """Flags that parse but do not make sense together."""


# ---------------------------------------------------------------- helpers


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive_floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("grid values must be positive")
    return vals


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("MTOR_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MTOR_SEED must be an integer, got {env!r}") from None


def _fingerprint(path: Path) -> str:
    return "sha256:" + hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(command: str, config: dict, seed: int, data_path: Path | None, started: float) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "dataset_fingerprint": _fingerprint(data_path) if data_path else None,
        "duration_seconds": time.perf_counter() - started,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
    }


def _write_json(path: Path, doc: dict) -> None:
    # json writes floats with repr, the shortest string that round-trips exactly
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _config_of(args: argparse.Namespace) -> dict:
    skip = {"func", "no_manifest", "verbose"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, Path):
            v = str(v)
        out[k] = v
    return out


def _ingest_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, type=Path, help="CSV file with task, label and feature columns")
    p.add_argument("--label-column", default="label")
    p.add_argument("--task-column", default="task")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--bias", action="store_true", help="append a constant-1 feature column")


def _ingest_spec(args) -> IngestSpec:
    return IngestSpec(args.data, args.label_column, args.task_column, None, args.bias, args.delimiter)


def _optimizer_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iter", type=int, default=500, help="FISTA iterations per weight update")
    p.add_argument("--tol", type=float, default=1e-6, help="FISTA relative tolerance")
    p.add_argument("--outer-max", type=int, default=100)
    p.add_argument("--outer-tol", type=float, default=1e-5)
    p.add_argument("--threshold-steps", type=int, default=20)
    p.add_argument("--threshold-lr", type=float, default=0.01)


def _optimizer_configs(args) -> tuple[FistaConfig, AlternatingConfig]:
    try:
        return (
            FistaConfig(args.max_iter, args.tol),
            AlternatingConfig(args.outer_max, args.outer_tol, args.threshold_steps, args.threshold_lr),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- model documents


def model_document(model, kind: str, ingest: dict) -> dict:
    """Serializable form of a trained MTL model or an STL mapping."""
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind, "ingest": ingest}
    if isinstance(model, StlModels):
        distinct = model.distinct_models
        index = {id(m): i for i, m in enumerate(distinct)}
        doc["setting"] = model.setting.value
        doc["models"] = [m.to_dict() for m in distinct]
        doc["assignment"] = {tid: index[id(m)] for tid, m in model.items()}
    else:
        doc["setting"] = "mtl"
        doc["model"] = model.to_dict()
    return doc


def load_model_document(doc: dict):
    """Inverse of :func:`model_document`; returns a predictor."""
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataError(f"unsupported model schema version {version!r} (expected {SCHEMA_VERSION})")
    kind = doc.get("kind")
    if kind not in ("rmtor", "dmtor", "stl-shallow", "stl-deep"):
        raise DataError(f"unknown model kind {kind!r}")
    cls = DmtorModel if kind in ("dmtor", "stl-deep") else RmtorModel
    if doc["setting"] == "mtl":
        return cls.from_dict(doc["model"])
    models = [cls.from_dict(m) for m in doc["models"]]
    return StlModels(StlSetting(doc["setting"]), {tid: models[i] for tid, i in doc["assignment"].items()})


def _model_dims(predictor) -> tuple[int, int]:
    first = predictor.distinct_models[0] if isinstance(predictor, StlModels) else predictor
    return first.num_features, first.num_classes


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args.seed)
    try:
        spec = SynthSpec(args.tasks, args.n, args.features, args.classes, args.rho, args.noise,
                         args.sparsity, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data, truth = synthesize(spec)
    out = args.out
    write_csv(data, out)
    truth_path = args.truth or out.with_suffix(".truth.json")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "task_ids": list(data.task_ids),
        "weights": truth.weights.tolist(),
        "thresholds": truth.thresholds.to_dict(),
        "spec": {
            "num_tasks": spec.num_tasks, "per_task_n": list(spec.per_task_n),
            "num_features": spec.num_features, "num_classes": spec.num_classes,
            "relatedness": spec.relatedness, "noise_sd": spec.noise_sd,
            "sparsity": spec.sparsity, "seed": spec.seed,
        },
    }
    if not args.no_manifest:
        doc["manifest"] = _manifest("generate", _config_of(args) | {"seed": seed}, seed, out, started)
    _write_json(truth_path, doc)
    print(f"wrote {data.num_instances} rows to {out} and ground truth to {truth_path}")
    return EXIT_OK


def _check_train_flags(args) -> None:
    mtl = args.model in ("rmtor", "dmtor")
    if mtl and args.setting not in (None, "mtl"):
        raise UsageError(f"--setting {args.setting} needs an stl model, not --model {args.model}")
    if not mtl and args.setting not in ("global", "individual"):
        raise UsageError(f"--model {args.model} needs --setting global or individual")
    shallow = args.model in ("rmtor", "stl-shallow")
    if shallow and args.lam is None:
        raise UsageError(f"--model {args.model} needs --lambda")
    if not shallow and args.lam is not None:
        raise UsageError(f"--lambda does not apply to --model {args.model}")
    if args.lam is not None and args.lam < 0:
        raise UsageError("--lambda must be nonnegative")


def cmd_train(args) -> int:
    started = time.perf_counter()
    _check_train_flags(args)
    seed = _resolve_seed(args.seed)
    data = load_csv(_ingest_spec(args))
    fcfg, acfg = _optimizer_configs(args)
    try:
        sgd = SgdConfig(args.lr, args.batch_size, args.epochs, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    if args.model == "rmtor":
        model = train_rmtor(data, args.variant, args.lam, fcfg, acfg)
    elif args.model == "stl-shallow":
        model = train_stl_shallow(data, args.setting, args.variant, args.lam, fcfg, acfg, args.threads)
    elif args.model == "dmtor":
        try:
            arch = DmtorArchitecture(data.num_features, data.num_tasks, data.num_classes,
                                     args.shared_widths, args.task_widths)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        model = train_dmtor(data, args.variant, arch, sgd)
    else:
        if not args.stl_widths:
            raise UsageError("--stl-widths needs at least one layer")
        model = train_stl_deep(data, args.setting, args.variant, args.stl_widths, sgd, args.threads)

    names = [n for n in data.feature_names if not (args.bias and n == "bias")] if data.feature_names else None
    ingest = {
        "label_column": args.label_column, "task_column": args.task_column,
        "feature_columns": names, "add_bias_feature": args.bias, "delimiter": args.delimiter,
    }
    doc = model_document(model, args.model, ingest)
    if not args.no_manifest:
        doc["manifest"] = _manifest("train", _config_of(args) | {"seed": seed}, seed, args.data, started)
    _write_json(args.out, doc)
    print(f"trained {args.model} ({args.variant}) on {data.num_tasks} tasks, "
          f"{data.num_instances} instances; model written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.perf_counter()
    try:
        doc = json.loads(args.model.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.model}: not a JSON model file ({exc})") from None
    predictor = load_model_document(doc)
    ing = doc["ingest"]
    G, U = _model_dims(predictor)
    spec = IngestSpec(args.data, ing["label_column"], ing["task_column"], None,
                      ing["add_bias_feature"], ing["delimiter"])
    with warnings.catch_warnings():
        # a test file need not contain every class
        warnings.simplefilter("ignore")
        data = load_csv(spec)
    if data.num_features != G:
        raise DataError(f"feature dimension mismatch: model expects {G} features, data has {data.num_features}")
    expected = ing["feature_columns"]
    found = [n for n in data.feature_names if not (ing["add_bias_feature"] and n == "bias")]
    if expected is not None and found != expected:
        raise DataError(f"feature columns {found} differ from the training columns {expected}")
    if data.num_classes > U:
        raise DataError(f"test labels reach {data.num_classes} but the model has only {U} classes")
    if isinstance(predictor, StlModels):
        if predictor.setting is StlSetting.INDIVIDUAL and (unknown := [t for t in data.task_ids if t not in predictor]):
            raise DataError(f"tasks {unknown} have no model in the individual setting")
    elif unknown := [t for t in data.task_ids if t not in predictor.task_ids]:
        raise DataError(f"tasks {unknown} were not seen by the multi-task model")

    report = evaluate(predictor, data)
    print(report.table(doc["kind"]))
    if args.out:
        out = report.to_dict() | {"schema_version": SCHEMA_VERSION, "kind": doc["kind"]}
        if not args.no_manifest:
            out["manifest"] = _manifest("eval", _config_of(args), 0, args.data, started)
        _write_json(args.out, out)
    return EXIT_OK


def cmd_cv(args) -> int:
    started = time.perf_counter()
    if args.k < 2:
        raise UsageError("--k must be at least 2")
    seed = _resolve_seed(args.seed)
    fcfg, acfg = _optimizer_configs(args)
    data = validate_dataset(load_csv(_ingest_spec(args)))
    best, scores = kfold_select_lambda(data, args.variant, args.grid, args.k, fcfg, acfg, seed, args.threads)
    print(f"{'lambda':>12}  {'mean accuracy':>14}")
    for lam, acc in scores.items():
        print(f"{lam:>12g}  {acc:>14.4f}")
    print(f"best lambda: {best:g}")
    if args.out:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "variant": args.variant,
            "k": args.k,
            "scores": [{"lambda": lam, "mean_accuracy": acc} for lam, acc in scores.items()],
            "best_lambda": best,
        }
        if not args.no_manifest:
            doc["manifest"] = _manifest("cv", _config_of(args) | {"seed": seed}, seed, args.data, started)
        _write_json(args.out, doc)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtor", description="Multi-task ordinal regression toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="defaults to $MTOR_SEED, then 0")
    common.add_argument("--no-manifest", action="store_true",
                        help="omit the run manifest so repeated runs give identical files")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent fits")

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    g.add_argument("--tasks", type=int, default=4)
    g.add_argument("--n", type=_int_list, default=(200,), help="instances per task, one value or one per task")
    g.add_argument("--features", type=int, default=10)
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--rho", type=float, default=0.8, help="task relatedness in [0, 1]")
    g.add_argument("--noise", type=float, default=0.5)
    g.add_argument("--sparsity", type=float, default=0.0)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--truth", type=Path, default=None, help="ground-truth JSON (default: OUT with .truth.json)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="fit a model and save it as JSON")
    _ingest_args(t)
    t.add_argument("--model", choices=["rmtor", "dmtor", "stl-shallow", "stl-deep"], default="rmtor")
    t.add_argument("--variant", choices=["immediate", "all"], default="immediate")
    t.add_argument("--setting", choices=["mtl", "global", "individual"], default=None)
    t.add_argument("--lambda", dest="lam", type=float, default=None)
    _optimizer_args(t)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--shared-widths", type=_int_list, default=(64, 64, 64))
    t.add_argument("--task-widths", type=_int_list, default=(32, 32, 32))
    t.add_argument("--stl-widths", type=_int_list, default=(64, 64, 64))
    t.add_argument("--out", type=Path, required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score a saved model on a CSV")
    e.add_argument("--model", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--out", type=Path, default=None, help="write the report as JSON")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cv", parents=[common], help="choose lambda by stratified k-fold CV")
    _ingest_args(c)
    c.add_argument("--variant", choices=["immediate", "all"], default="immediate")
    c.add_argument("--grid", type=_positive_floats, default=[0.001, 0.01, 0.1, 1.0])
    c.add_argument("--k", type=int, default=10)
    _optimizer_args(c)
    c.add_argument("--out", type=Path, default=None)
    c.set_defaults(func=cmd_cv)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.print_usage(sys.stderr)
        print("mtor: error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mtor: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"mtor: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"mtor: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"mtor: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
