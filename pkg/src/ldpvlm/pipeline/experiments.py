"""Experiment orchestration for the three applications and the per-feature benchmarks.

Every cell (trial x local budget x hyperparameter setting) draws from a
RandomnessSource derived from the master seed and the cell's coordinates, so
a cell's result does not depend on which other cells ran before it.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from ..analysis import BoundQuery, accuracy_upper_bound
from ..classifier import (NoiseAwareClassifier, PrivatizedDataset, join_by_id, predict,
                          split_budget, train_joined, train_on_private)
from ..dp_optim import DpAdamConfig
from ..exceptions import BudgetExhaustedError, TrainingDivergedError, ValidationError
from ..mechanisms import FlipMechanismSpec, flip_labels, per_feature_privatize
from ..rng import RandomnessSource
from ..schema import continuous_schema
from ..vlm import (LaplaceVLM, privatize_to_features, privatize_to_latent,
                   required_cdp_component, train_stage_one, train_stage_two_dp)
from .config import (ExperimentConfig, dp_hyperparameters, join_hyperparameters,
                     vlm_hyperparameters)
from .data import (lending_schema, load_digit_images, load_idx_images, make_lending_rows,
                   read_rows_csv)
from .preprocess import one_hot, preprocess_images, preprocess_table
from .report import RunRecord, RunReport
from .splits import Dataset, LabelledPool, split_datasets

log = logging.getLogger(__name__)

__all__ = ["run_experiment", "run_data_collection", "run_novel_class", "run_data_join",
           "run_benchmark_suite", "load_task_data", "REFERENCE_JOIN_ANCHORS"]

REFERENCE_JOIN_ANCHORS = {"clean_subset_accuracy": 0.561, "all_clean_accuracy": 0.658}

# Failures that cost one cell rather than the whole run.
_CELL_ERRORS = (BudgetExhaustedError, TrainingDivergedError, ValidationError, FloatingPointError)

_ARCH = {
    "mnist": {"encoder_hidden": (400, 150, 50), "decoder_hidden": (50, 150, 400),
              "learning_rate": 5e-4, "batch_size": 64},
    "lending": {"encoder_hidden": (500, 500), "decoder_hidden": (500, 500),
                "learning_rate": 1e-4, "batch_size": 128},
}


# --- data -----------------------------------------------------------------

@dataclass
class TaskData:
    """Loaded records plus what the benchmarks need to noise raw features."""

    pool: LabelledPool | None
    table: object | None
    n_classes: int
    schema: object
    feature_names: list
    categorical_groups: tuple

    def encode(self, codes):
        """Model-input form of per-feature codes (one-hot for tables, identity for images)."""
        if self.table is None:
            return np.asarray(codes, dtype=float)
        return one_hot(codes, self.schema, self.feature_names)[0]


def _groups(slices, names, schema):
    out, pos = [], 0
    for n in names:
        _, width = slices[n]
        if schema.column(n).kind == "categorical":
            out.append((pos, width))
        pos += width
    return tuple(out)


def load_task_data(config: ExperimentConfig):
    """Read and preprocess the configured source."""
    master = RandomnessSource(config.seed)
    source = config["data.source"]
    if source in ("digits", "idx"):
        if source == "digits":
            im = load_digit_images(config["data.test_fraction"], config["data.augment"],
                                   master.spawn("data"))
        else:
            im = load_idx_images(config["data.train_images"], config["data.train_labels"],
                                 config["data.test_images"], config["data.test_labels"])
        pool = LabelledPool.from_arrays(preprocess_images(im.train_images), im.train_labels,
                                        preprocess_images(im.test_images), im.test_labels)
        n_classes = int(max(pool.train.y.max(), pool.test.y.max())) + 1
        width = pool.train.X.shape[1]
        schema = continuous_schema(width)
        return TaskData(pool, None, n_classes, schema, [c.name for c in schema.features], ())
    if source == "synthetic_lending":
        rows = make_lending_rows(config["data.n_rows"], RandomnessSource(config["data.seed"]))
    else:
        rows = read_rows_csv(config["data.csv"])
    table = preprocess_table(rows, lending_schema(), rng=master.spawn("preprocess"))
    names = table.feature_names
    groups = _groups(table.onehot_slices, names, table.schema)
    tr, rest = table.split == "train", table.split != "train"
    pool = LabelledPool(Dataset(table.X[tr], table.y[tr], table.ids[tr], table.codes[tr]),
                        Dataset(table.X[rest], table.y[rest], table.ids[rest], table.codes[rest]))
    return TaskData(pool, table, 2, table.schema, names, groups)


# --- shared pieces --------------------------------------------------------

def _vlm_settings(config, dataset):
    arch = dict(_ARCH[dataset])
    for key in ("encoder_hidden", "decoder_hidden", "learning_rate", "batch_size"):
        if config[f"vlm.{key}"] is not None:
            arch[key] = config[f"vlm.{key}"]
    return arch


def _override(config, lam, l, pre):
    if config["lambda"] is not None:
        lam = config["lambda"]
    if config["vlm.clip_radius"] is not None:
        l = config["vlm.clip_radius"]
    if config["vlm.epsilon_pretrain"] is not None:
        pre = None if config["vlm.epsilon_pretrain"] == "learned" else config["vlm.epsilon_pretrain"]
    return lam, l, pre


def fit_vlm(config, X, latent_dim, l, pre, groups, application, rng):
    """Stage one, then (for a finite central target) DP retraining of the required component."""
    arch = _vlm_settings(config, config.dataset)
    vlm = LaplaceVLM(latent_dim=latent_dim, clip_radius=l, epsilon_pretrain=pre,
                     n_epochs=config["vlm.n_epochs"], categorical_groups=groups,
                     random_state=rng.seed, **arch)
    train_stage_one(vlm, X, rng=rng.spawn("stage1"))
    central = config["epsilon.central"]
    if math.isinf(central):
        return vlm
    component = required_cdp_component(application, config.level)
    if component == "none":
        return vlm
    lr, bs, sigma = dp_hyperparameters(config.dataset, central)
    dp = DpAdamConfig(
        noise_multiplier=config["dp.noise_multiplier"] or sigma,
        batch_size=min(config["dp.batch_size"] or bs, len(X)),
        dataset_size=len(X),
        learning_rate=config["dp.learning_rate"] or lr,
        max_grad_norm=config["dp.max_grad_norm"],
        delta=config["epsilon.delta"],
    )
    return train_stage_two_dp(vlm, X, component, dp, central, n_steps=config["dp.max_steps"],
                              rng=rng.spawn("stage2"))


def _bound(n_classes, epsilon_x, latent_dim):
    if n_classes % 2 or latent_dim < n_classes // 2:
        return math.nan
    if math.isinf(epsilon_x):
        return 1.0
    return accuracy_upper_bound(BoundQuery(n_classes, epsilon_x, latent_dim))


def _classifier(config, n_classes, level, rng, n_epochs=None):
    return NoiseAwareClassifier(
        n_classes=n_classes, level=level, learning_rate=config["classifier.learning_rate"],
        batch_size=config["classifier.batch_size"],
        n_epochs=n_epochs or config["classifier.n_epochs"], random_state=rng.seed)


def _accuracy(pred, y):
    return float(np.mean(np.asarray(pred) == np.asarray(y)))


def _check_budget(data: PrivatizedDataset, epsilon):
    spent = data.budget_per_record()
    if not np.all(np.isclose(spent, epsilon, rtol=1e-12, atol=0.0) | (np.isinf(spent) & math.isinf(epsilon))):
        raise AssertionError(f"per-record budget {spent[:1]} differs from the configured {epsilon}")


class _Collector:
    """Accumulates per-trial values into one RunRecord per cell key."""

    def __init__(self, config, task):
        self.config = config
        self.task = task
        self.cells = {}
        self.failures = []

    def add(self, key, trial, seed, value, **info):
        cell = self.cells.setdefault(key, {"values": [], "seeds": [], "failed": 0,
                                           "wall": 0.0, "info": info})
        cell["info"].update(info)
        if value is None:
            cell["failed"] += 1
        else:
            cell["values"].append(float(value))
            cell["seeds"].append(int(seed))

    def fail(self, keys, trial, seed, err, **where):
        self.failures.append({"task": self.task, "trial": trial, "seed": int(seed),
                              "error": type(err).__name__, "message": str(err), **where})
        for key in keys:
            self.add(key, trial, seed, None)

    def report(self, metadata):
        report = RunReport(metadata=metadata, failures=self.failures)
        for key in sorted(self.cells, key=_sort_key):
            level, method, local_eps, kind = key
            cell = self.cells[key]
            info = cell["info"]
            status = "ok"
            if cell["failed"]:
                status = "failed" if not cell["values"] else f"partial ({cell['failed']} failed)"
            report.add(RunRecord(
                task=self.task, level=level, method=method,
                central_epsilon=self.config["epsilon.central"], local_epsilon=local_eps,
                accuracy_kind=kind, trial_values=cell["values"], seeds=cell["seeds"],
                epsilon_x=info.get("epsilon_x", math.nan), epsilon_y=info.get("epsilon_y", math.nan),
                epsilon_per_feature=info.get("epsilon_per_feature", math.nan),
                bound=info.get("bound", math.nan), status=status))
        return report


def _sort_key(key):
    level, method, eps, kind = key
    return (level, method, -eps if math.isfinite(eps) else -math.inf, kind)


def _trial_sources(config):
    master = RandomnessSource(config.seed)
    return [master.spawn("trial", t) for t in range(config.trials)]


def _metadata(config, **extra):
    return {"config": config.to_dict(), "delta_central": config["epsilon.delta"],
            "delta_local": 0.0, **extra}


# --- data collection and novel class ---------------------------------------

def _labelled_run(config, task, data: TaskData):
    application = task
    level = config.level
    kinds = config.accuracy_kinds
    novel = task == "novel_class"
    n_classes = 2 if novel else data.n_classes
    latent_dim = config["vlm.latent_dim"] or 8
    out = _Collector(config, task)
    for trial, trng in enumerate(_trial_sources(config)):
        splits = split_datasets(data.pool, task, trng.spawn("split"),
                                novel_class=config["data.novel_class"])
        bench_schema = data.schema.with_ranges(
            np.vstack([splits.vlm_train.feature_codes, splits.vlm_val.feature_codes]),
            data.feature_names, fit_on="vlm_train")
        vlms = {}
        for eps in config["epsilon.local"]:
            # one classifier per distinct tuned setting; clean and private may share it
            settings = {}
            for kind in kinds:
                hp = _override(config, *vlm_hyperparameters(config.dataset, kind, level, eps))
                if novel:
                    hp = (1.0,) + hp[1:]
                settings.setdefault(hp, []).append(kind)
            for (lam, l, pre), want in settings.items():
                budget = split_budget(eps, lam)
                keys = [(level, "vlm", eps, k) for k in want]
                t0 = time.perf_counter()
                try:
                    if (l, pre) not in vlms:
                        vlms[(l, pre)] = fit_vlm(config, splits.vlm_train.X, latent_dim, l, pre,
                                                 data.categorical_groups, application,
                                                 trng.spawn("vlm", l, -1.0 if pre is None else pre))
                    vlm = vlms[(l, pre)]
                    accs = _vlm_cell(config, vlm, splits, budget, n_classes, level, novel,
                                     trng.spawn("cell", eps, lam, l, -1.0 if pre is None else pre), want)
                except _CELL_ERRORS as err:
                    log.warning("cell failed: %s", err)
                    out.fail(keys, trial, trng.seed, err, local_epsilon=eps, method="vlm")
                    continue
                for kind, acc in accs.items():
                    bound = _bound(n_classes, budget.epsilon_x, latent_dim) if kind == "private" else math.nan
                    out.add((level, "vlm", eps, kind), trial, trng.seed, acc,
                            epsilon_x=budget.epsilon_x,
                            epsilon_y=0.0 if novel else budget.epsilon_y, bound=bound)
                    out.cells[(level, "vlm", eps, kind)]["wall"] += time.perf_counter() - t0
            if math.isfinite(eps):
                lam = _override(config, *vlm_hyperparameters(config.dataset, "clean", level, eps))[0]
                _benchmark_cells(config, out, data, splits, bench_schema, eps,
                                 1.0 if novel else lam, n_classes, novel, trial, trng)
    return out


def _private_labels(y, n_classes, budget, novel, rng):
    if novel:
        return np.asarray(y), "constructed"
    return flip_labels(y, FlipMechanismSpec(n_classes, budget.epsilon_y), rng), "flipped"


def _vlm_cell(config, vlm, splits, budget, n_classes, level, novel, rng, kinds):
    train, test = splits.clf_train, splits.test
    lat = privatize_to_latent(vlm, train.X, budget.epsilon_x, rng.spawn("x"), train.ids)
    feats = lat.z_tilde if level == "latent" else privatize_to_features(vlm, lat).x_tilde
    labels, source = _private_labels(train.y, n_classes, budget, novel, rng.spawn("y"))
    data = PrivatizedDataset(feats, labels, level, budget.epsilon_x,
                             0.0 if novel else budget.epsilon_y, n_classes, train.ids, source)
    _check_budget(data, budget.epsilon_total)
    clf = train_on_private(_classifier(config, n_classes, level, rng.spawn("clf")), data)
    out = {}
    if "clean" in kinds:
        out["clean"] = _accuracy(np.argmax(predict(clf, test.X, "clean", vlm), axis=1), test.y)
    if "private" in kinds:
        tl = privatize_to_latent(vlm, test.X, budget.epsilon_x, rng.spawn("test"), test.ids)
        tx = tl if level == "latent" else privatize_to_features(vlm, tl)
        out["private"] = _accuracy(np.argmax(predict(clf, tx, "private"), axis=1), test.y)
    return out


def _benchmark_cells(config, out, data, splits, schema, eps, lam, n_classes, novel, trial, trng):
    budget = split_budget(eps, lam)
    train, test = splits.clf_train, splits.test
    d = len(data.feature_names)
    for method in config.benchmarks:
        keys = [("feature", method, eps, k) for k in config.accuracy_kinds]
        rng = trng.spawn("bench", method, eps)
        t0 = time.perf_counter()
        try:
            codes = per_feature_privatize(train.feature_codes, schema, budget.epsilon_x, method,
                                          rng.spawn("x"))
            labels, source = _private_labels(train.y, n_classes, budget, novel, rng.spawn("y"))
            pdata = PrivatizedDataset(data.encode(codes), labels, "feature", budget.epsilon_x,
                                      0.0 if novel else budget.epsilon_y, n_classes, train.ids, source)
            _check_budget(pdata, eps)
            clf = train_on_private(
                _classifier(config, n_classes, "feature", rng.spawn("clf"), config["benchmark.n_epochs"]),
                pdata)
            accs = {}
            if "clean" in config.accuracy_kinds:
                accs["clean"] = _accuracy(clf.predict(test.X), test.y)
            if "private" in config.accuracy_kinds:
                tcodes = per_feature_privatize(test.feature_codes, schema, budget.epsilon_x, method,
                                               rng.spawn("test"))
                accs["private"] = _accuracy(clf.predict(data.encode(tcodes)), test.y)
        except _CELL_ERRORS as err:
            out.fail(keys, trial, trng.seed, err, local_epsilon=eps, method=method)
            continue
        for kind, acc in accs.items():
            out.add(("feature", method, eps, kind), trial, trng.seed, acc,
                    epsilon_x=budget.epsilon_x, epsilon_y=0.0 if novel else budget.epsilon_y,
                    epsilon_per_feature=budget.epsilon_x / d)
            out.cells[("feature", method, eps, kind)]["wall"] += time.perf_counter() - t0


def _require(config, task):
    if config.task not in (task, "benchmark"):
        raise ValidationError(f"config.task is {config.task!r}, expected {task!r}")


def run_data_collection(config: ExperimentConfig, data: TaskData | None = None):
    """Private data collection: VLM on D1, privatized features and flipped labels from D2."""
    _require(config, "data_collection")
    data = data or load_task_data(config)
    out = _labelled_run(config, "data_collection", data)
    return out.report(_metadata(config, n_classes=data.n_classes))


def run_novel_class(config: ExperimentConfig, data: TaskData | None = None):
    """Binary novel-class task: the VLM never sees the novel class; labels are not collected."""
    _require(config, "novel_class")
    data = data or load_task_data(config)
    out = _labelled_run(config, "novel_class", data)
    return out.report(_metadata(config, novel_class=config["data.novel_class"]))


# --- data join -------------------------------------------------------------

def _block(table, names):
    _, cols = table.columns_for(names)
    return table.X[:, cols]


def run_data_join(config: ExperimentConfig, data: TaskData | None = None):
    """Clean columns joined by record id with latents of privatized partner columns.

    Reports the clean-subset floor, the all-clean ceiling and the joined
    classifier at each local budget (semi-private accuracy: test partners are
    privatized too). Labels stay clean, so the whole budget goes to features.
    """
    _require(config, "data_join")
    data = data or load_task_data(config)
    js = split_datasets(data.table, "data_join")
    train, test = js.train, js.test
    Xc_tr, Xc_te = _block(train, js.clean_names), _block(test, js.clean_names)
    Xp_tr, Xp_te = _block(train, js.private_names), _block(test, js.private_names)
    groups = _groups(train.onehot_slices, js.private_names, train.schema)
    empty_tr = (train.ids, np.zeros((len(train.ids), 0)))
    empty_te = np.zeros((len(test.ids), 0))
    out = _Collector(config, "data_join")
    level = "joined"
    for trial, trng in enumerate(_trial_sources(config)):
        # floors and ceilings do not depend on the local budget
        for method, partner_tr, partner_te in (("clean_subset", empty_tr, empty_te),
                                               ("all_clean", (train.ids, Xp_tr), Xp_te)):
            clf = train_joined(_classifier(config, 2, "joined", trng.spawn(method)),
                               Xc_tr, train.y, train.ids, partner_tr)
            acc = _accuracy(np.argmax(predict(clf, np.hstack([Xc_te, partner_te]), "semi_private"), axis=1),
                            test.y)
            out.add((level, method, math.inf, "clean"), trial, trng.seed, acc)
        vlms = {}
        for eps in config["epsilon.local"]:
            d, l, pre = join_hyperparameters(eps)
            d = config["vlm.latent_dim"] or d
            _, l, pre = _override(config, None, l, pre)
            key = (level, "joined", eps, "semi_private")
            rng = trng.spawn("join", eps)
            try:
                if (d, l, pre) not in vlms:
                    vlms[(d, l, pre)] = fit_vlm(config, Xp_tr, d, l, pre, groups, "data_joining",
                                                trng.spawn("vlm", d, l, -1.0 if pre is None else pre))
                vlm = vlms[(d, l, pre)]
                lat_tr = privatize_to_latent(vlm, Xp_tr, eps, rng.spawn("x"), train.ids)
                clf = train_joined(_classifier(config, 2, "joined", rng.spawn("clf")),
                                   Xc_tr, train.y, train.ids, lat_tr)
                lat_te = privatize_to_latent(vlm, Xp_te, eps, rng.spawn("test"), test.ids)
                X_te = join_by_id(test.ids, Xc_te, lat_te.record_ids, lat_te.z_tilde)
                acc = _accuracy(np.argmax(predict(clf, X_te, "semi_private"), axis=1), test.y)
            except _CELL_ERRORS as err:
                out.fail([key], trial, trng.seed, err, local_epsilon=eps, method="joined")
            else:
                out.add(key, trial, trng.seed, acc, epsilon_x=eps, epsilon_y=0.0)
            if math.isfinite(eps):
                _join_benchmarks(config, out, js, Xc_tr, Xc_te, eps, trial, trng)
    return out.report(_metadata(config, reference_anchors=REFERENCE_JOIN_ANCHORS,
                                clean_columns=js.clean_names, private_columns=js.private_names))


def _join_benchmarks(config, out, js, Xc_tr, Xc_te, eps, trial, trng):
    train, test = js.train, js.test
    names = js.private_names
    cidx, _ = train.columns_for(names)
    schema = train.schema.subset(names)
    for method in config.benchmarks:
        key = ("joined", method, eps, "semi_private")
        rng = trng.spawn("bench", method, eps)
        try:
            codes = per_feature_privatize(train.codes[:, cidx], schema, eps, method, rng.spawn("x"), names)
            Xp = one_hot(codes, schema, names)[0]
            clf = train_joined(_classifier(config, 2, "joined", rng.spawn("clf")),
                               Xc_tr, train.y, train.ids, (train.ids, Xp))
            tcodes = per_feature_privatize(test.codes[:, cidx], schema, eps, method, rng.spawn("test"), names)
            X_te = np.hstack([Xc_te, one_hot(tcodes, schema, names)[0]])
            acc = _accuracy(np.argmax(predict(clf, X_te, "semi_private"), axis=1), test.y)
        except _CELL_ERRORS as err:
            out.fail([key], trial, trng.seed, err, local_epsilon=eps, method=method)
            continue
        out.add(key, trial, trng.seed, acc, epsilon_x=eps, epsilon_y=0.0,
                epsilon_per_feature=eps / len(names))


# --- benchmarks alone ------------------------------------------------------

def run_benchmark_suite(config: ExperimentConfig, data: TaskData | None = None):
    """Per-feature Laplace and piecewise comparators only, on the layout of ``benchmark.task``
    (or of ``task`` when that is not ``benchmark``)."""
    task = config["benchmark.task"] if config.task == "benchmark" else config.task
    data = data or load_task_data(config)
    if task == "data_join":
        js = split_datasets(data.table, "data_join")
        Xc_tr, Xc_te = _block(js.train, js.clean_names), _block(js.test, js.clean_names)
        out = _Collector(config, "benchmark")
        for trial, trng in enumerate(_trial_sources(config)):
            for eps in config["epsilon.local"]:
                if math.isfinite(eps):
                    _join_benchmarks(config, out, js, Xc_tr, Xc_te, eps, trial, trng)
        return out.report(_metadata(config, layout=task))
    novel = task == "novel_class"
    n_classes = 2 if novel else data.n_classes
    out = _Collector(config, "benchmark")
    for trial, trng in enumerate(_trial_sources(config)):
        splits = split_datasets(data.pool, task, trng.spawn("split"),
                                novel_class=config["data.novel_class"])
        schema = data.schema.with_ranges(
            np.vstack([splits.vlm_train.feature_codes, splits.vlm_val.feature_codes]),
            data.feature_names, fit_on="vlm_train")
        for eps in config["epsilon.local"]:
            if math.isfinite(eps):
                lam = _override(config, *vlm_hyperparameters(config.dataset, "clean", config.level, eps))[0]
                _benchmark_cells(config, out, data, splits, schema, eps, 1.0 if novel else lam,
                                 n_classes, novel, trial, trng)
    return out.report(_metadata(config, layout=task))


_RUNNERS = {
    "data_collection": run_data_collection,
    "novel_class": run_novel_class,
    "data_join": run_data_join,
    "benchmark": run_benchmark_suite,
}


def run_experiment(config: ExperimentConfig, data: TaskData | None = None):
    return _RUNNERS[config.task](config, data)
