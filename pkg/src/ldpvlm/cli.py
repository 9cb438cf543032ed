"""Command-line interface.

Exit codes: 0 success, 2 invalid input (arguments, config, data, model files),
3 runtime failure (divergence, I/O, anything unexpected).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .analysis import (BoundQuery, bound_simulation_oracle, bound_summary,
                       private_grid_search, private_validation)
from .classifier import (NoiseAwareClassifier, PrivatizedDataset, split_budget,
                         train_on_private)
from .dp_optim import DpAdamConfig
from .exceptions import ValidationError
from .mechanisms import FlipMechanismSpec, flip_labels
from .rng import RandomnessSource
from .vlm import (LaplaceVLM, privatize_to_features, privatize_to_latent, train_stage_one,
                  train_stage_two_dp)

log = logging.getLogger("ldpvlm")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _float(text):
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _eps_pretrain(text):
    return None if text == "learned" else _float(text)


def _load_matrix(path):
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path, allow_pickle=False)
    if path.suffix == ".csv":
        return np.loadtxt(path, delimiter=",", ndmin=2)
    raise ValidationError(f"{path}: expected a .npy or .csv matrix")


def _write_json(obj, out):
    text = json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _jsonable_float(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _config(args, **overrides):
    from .pipeline.config import ExperimentConfig, load_config
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig.from_dict()
    overrides.setdefault("seed", args.seed)
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None})


# --- subcommands ----------------------------------------------------------

def cmd_train_vlm(args):
    from .pipeline.io import save_model
    rng = RandomnessSource(args.seed)
    groups = ()
    if args.input:
        X = _load_matrix(args.input)
    else:
        from .pipeline.experiments import load_task_data
        from .pipeline.splits import split_datasets
        cfg = _config(args)
        data = load_task_data(cfg)
        if cfg.task == "data_join":
            js = split_datasets(data.table, "data_join")
            _, cols = js.train.columns_for(js.private_names)
            X = js.train.X[:, cols]
            from .pipeline.experiments import _groups
            groups = _groups(js.train.onehot_slices, js.private_names, js.train.schema)
        else:
            task = cfg.task if cfg.task != "benchmark" else cfg["benchmark.task"]
            splits = split_datasets(data.pool, task, rng.spawn("trial", 0).spawn("split"),
                                    novel_class=cfg["data.novel_class"])
            X, groups = splits.vlm_train.X, data.categorical_groups
    vlm = LaplaceVLM(latent_dim=args.latent_dim, clip_radius=args.clip_radius,
                     epsilon_pretrain=args.epsilon_pretrain, n_epochs=args.epochs,
                     categorical_groups=groups, random_state=args.seed)
    train_stage_one(vlm, X, rng=rng.spawn("stage1"))
    if math.isfinite(args.central_epsilon):
        dp = DpAdamConfig(noise_multiplier=args.noise_multiplier,
                          batch_size=min(args.dp_batch_size, len(X)), dataset_size=len(X),
                          learning_rate=args.dp_learning_rate)
        vlm = train_stage_two_dp(vlm, X, args.target, dp, args.central_epsilon,
                                 n_steps=args.max_steps, rng=rng.spawn("stage2"))
    save_model(vlm, args.out)
    _write_json({"model": str(args.out), "n_records": len(X), "n_features": X.shape[1],
                 "final_loss": vlm.training_log_[-1]["loss"] if vlm.training_log_ else None,
                 "cdp_stamp": vlm.cdp_stamp_}, None)


def cmd_privatize(args):
    from .pipeline.io import load_model
    vlm = load_model(args.model)
    if not isinstance(vlm, LaplaceVLM):
        raise ValidationError(f"{args.model} is not a VLM model file")
    X = _load_matrix(args.input)
    ids = np.load(args.ids) if args.ids else np.arange(len(X), dtype=np.uint64)
    rng = RandomnessSource(args.seed)
    budget = split_budget(args.epsilon, args.lam)
    lat = privatize_to_latent(vlm, X, budget.epsilon_x, rng.spawn("x"), ids)
    feats = lat.z_tilde if args.level == "latent" else privatize_to_features(vlm, lat).x_tilde
    payload = {"features": feats, "record_ids": lat.record_ids,
               "epsilon_x": budget.epsilon_x, "level": args.level}
    if args.labels:
        if not budget.labels_collected:
            raise ValidationError("--labels given but lambda = 1 leaves no label budget")
        y = np.load(args.labels).astype(np.int64)
        if args.n_classes is None:
            raise ValidationError("--labels needs --n-classes")
        payload["labels"] = flip_labels(y, FlipMechanismSpec(args.n_classes, budget.epsilon_y),
                                        rng.spawn("y"))
        payload["epsilon_y"] = budget.epsilon_y
        payload["num_classes"] = args.n_classes
    np.savez(args.out, **payload)
    _write_json({"out": str(args.out), "n_records": len(X), "epsilon_x": budget.epsilon_x,
                 "epsilon_y": _jsonable_float(payload.get("epsilon_y", 0.0)),
                 "noise_scale": lat.noise_scale}, None)


def _load_private_dataset(path, n_classes=None, labels_path=None):
    with np.load(path, allow_pickle=False) as npz:
        d = {k: npz[k] for k in npz.files}
    if "labels" in d:
        labels, eps_y, source = d["labels"], float(d["epsilon_y"]), "flipped"
        k = int(d["num_classes"])
    else:
        if labels_path is None or n_classes is None:
            raise ValidationError(f"{path} holds no labels; pass --labels and --n-classes")
        labels, eps_y, source, k = np.load(labels_path), 0.0, "constructed", n_classes
    return PrivatizedDataset(d["features"], labels.astype(np.int64), str(d["level"]),
                             float(d["epsilon_x"]), eps_y, k, d["record_ids"], source)


def _classifier_from_args(args, data):
    return NoiseAwareClassifier(n_classes=data.num_classes, level=data.level,
                                n_epochs=args.epochs, learning_rate=args.learning_rate,
                                batch_size=args.batch_size, random_state=args.seed)


def cmd_train_classifier(args):
    from .pipeline.io import save_model
    data = _load_private_dataset(args.data, args.n_classes, args.labels)
    clf = train_on_private(_classifier_from_args(args, data), data)
    save_model(clf, args.out)
    _write_json({"model": str(args.out), "n_records": len(data.labels),
                 "flip_prob": clf.flip_prob, "final_loss": clf.training_log_[-1]}, None)


def _validation_inputs(args):
    from .pipeline.io import load_model
    X = _load_matrix(args.input)
    y = np.load(args.labels).astype(np.int64)
    if args.vlm:
        X = load_model(args.vlm).encode_mean(X)
    return X, y


def cmd_validate_private(args):
    from .pipeline.io import load_model
    clf = load_model(args.model)
    X, y = _validation_inputs(args)
    report = private_validation(clf, X, y, args.epsilon, RandomnessSource(args.seed))
    _write_json(report.as_dict(), args.out)


def cmd_grid_search(args):
    from sklearn.model_selection import ParameterGrid
    data = _load_private_dataset(args.data, args.n_classes, args.train_labels)
    X_val, y_val = _validation_inputs(args)
    try:
        grid = json.loads(args.grid)
    except json.JSONDecodeError as err:
        raise ValidationError(f"--grid is not valid JSON: {err}") from err
    settings = list(ParameterGrid(grid))
    base = _classifier_from_args(args, data)
    candidates = [base.__class__(**{**base.get_params(), **s}) for s in settings]
    result = private_grid_search(
        candidates, data, None, X_val, y_val, args.epsilon_per_query,
        RandomnessSource(args.seed), fit=lambda c, d, _: train_on_private(c, d))
    if args.model_out:
        from .pipeline.io import save_model
        save_model(result.best, args.model_out)
    _write_json({
        "best_index": result.best_index, "best_params": settings[result.best_index],
        "reports": [None if r is None else r.as_dict() for r in result.reports],
        "failures": {str(k): v for k, v in result.failures.items()},
        "n_queries": result.n_queries, "epsilon_per_query": result.epsilon_per_query,
        "respondent_epsilon_spent": result.respondent_epsilon_spent,
    }, args.out)


def cmd_evaluate_bound(args):
    query = BoundQuery(args.classes, args.epsilon, args.latent_dim)
    out = bound_summary(query)
    if args.simulate:
        acc, se = bound_simulation_oracle(args.classes, args.latent_dim or args.classes // 2,
                                          args.epsilon, args.simulate, RandomnessSource(args.seed))
        out["simulated"] = acc
        out["simulated_se"] = se
    _write_json(out, args.out)


def cmd_run_experiment(args):
    from .pipeline.experiments import run_experiment
    from .pipeline.report import emit_report
    cfg = _config(args, trials=args.trials)
    report = run_experiment(cfg)
    fmt = args.format or ("json" if str(args.out).endswith(".json") else "csv")
    text = emit_report(report, fmt, args.out)
    if args.out is None:
        sys.stdout.write(text)
    for failure in report.failures:
        log.warning("cell failed: %s", failure)


def cmd_emit_report(args):
    from .pipeline.report import emit_report, report_from_json
    report = report_from_json(Path(args.input))
    text = emit_report(report, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)


# --- parser ---------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="ldpvlm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None)
        p.set_defaults(func=func)
        return p

    p = add("train-vlm", cmd_train_vlm, "train a VLM (stage one, optionally DP stage two)")
    p.add_argument("--config")
    p.add_argument("--input", help="train on this .npy/.csv matrix instead of the configured data")
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--clip-radius", type=_float, default=5.0)
    p.add_argument("--epsilon-pretrain", type=_eps_pretrain, default=None,
                   help="number, or 'learned' (default)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--central-epsilon", type=_float, default=math.inf)
    p.add_argument("--target", choices=("encoder", "decoder"), default="encoder")
    p.add_argument("--noise-multiplier", type=_float, default=0.7)
    p.add_argument("--dp-batch-size", type=int, default=64)
    p.add_argument("--dp-learning-rate", type=_float, default=5e-4)
    p.add_argument("--max-steps", type=int, default=1000)

    p = add("privatize", cmd_privatize, "privatize records (and optionally labels) with a VLM")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--ids")
    p.add_argument("--labels")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--epsilon", type=_float, required=True)
    p.add_argument("--lambda", dest="lam", type=_float, default=1.0)
    p.add_argument("--level", choices=("latent", "feature"), default="latent")

    def classifier_args(p):
        p.add_argument("--data", required=True, help=".npz written by 'privatize'")
        p.add_argument("--n-classes", type=int)
        p.add_argument("--epochs", type=int, default=50)
        p.add_argument("--learning-rate", type=_float, default=1e-3)
        p.add_argument("--batch-size", type=int, default=64)

    p = add("train-classifier", cmd_train_classifier, "train a noise-aware classifier")
    classifier_args(p)
    p.add_argument("--labels", help="clean labels when the data file has none")

    def validation_args(p):
        p.add_argument("--input", required=True)
        p.add_argument("--labels", required=True)
        p.add_argument("--vlm", help="encode clean inputs with this VLM first")

    p = add("validate-private", cmd_validate_private, "randomized-response validation")
    p.add_argument("--model", required=True)
    validation_args(p)
    p.add_argument("--epsilon", type=_float, required=True)

    p = add("grid-search", cmd_grid_search, "private hyperparameter search")
    classifier_args(p)
    p.add_argument("--train-labels")
    validation_args(p)
    p.add_argument("--grid", required=True, help='JSON, e.g. {"n_epochs": [10, 50]}')
    p.add_argument("--epsilon-per-query", type=_float, required=True)
    p.add_argument("--model-out")

    p = add("evaluate-bound", cmd_evaluate_bound, "private-accuracy upper bound")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--epsilon", type=_float, required=True)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--simulate", type=int, default=0, help="Monte Carlo samples (0: skip)")

    p = add("run-experiment", cmd_run_experiment, "run a configured experiment")
    p.add_argument("--config")
    p.add_argument("--trials", type=int)
    p.add_argument("--format", choices=("csv", "json"))

    p = add("emit-report", cmd_emit_report, "convert a JSON report to CSV or JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as err:  # noqa: BLE001 - surfaced with its type, mapped to exit 3
        print(f"failed: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
