"""Experiment configuration.

A configuration file is a JSON object whose keys are flat dotted paths such
as ``"vlm.clip_radius"``; nested objects are accepted and flattened. Every key
is validated and unknown keys are rejected. ``null`` for a hyperparameter means
"take it from the tuned tables below"; an explicit value overrides the table
for every cell of the run.

Keys
----
task                    data_collection | novel_class | data_join | benchmark
level                   latent | feature
seed, trials            master seed; number of trials per cell
accuracy_kinds          subset of [clean, private]
epsilon.local           list of local budgets (numbers or "inf")
epsilon.central         inf, or a finite target for the DP-trained VLM component
epsilon.delta           must be 1e-5
lambda                  fraction of the local budget spent on features
data.source             digits | idx | synthetic_lending | csv
data.augment            jittered copies per digit image
data.test_fraction      held-out share of the bundled digits
data.train_images ...   IDX paths (data.source = idx)
data.csv                CSV path (data.source = csv; lending schema)
data.n_rows             synthetic table size
data.seed               seed of the synthetic table
data.novel_class        class withheld from the VLM in novel_class runs
vlm.*                   latent_dim, clip_radius, epsilon_pretrain ("learned" or a
                        number), encoder_hidden, decoder_hidden, learning_rate,
                        batch_size, n_epochs
dp.*                    learning_rate, batch_size, noise_multiplier,
                        max_grad_norm, max_steps
classifier.*            n_epochs, learning_rate, batch_size
benchmarks              subset of [laplace, piecewise]
benchmark.n_epochs      epochs of the per-feature benchmark classifier
benchmark.task          split layout used when task = benchmark
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from ..exceptions import ValidationError

__all__ = ["ExperimentConfig", "load_config", "vlm_hyperparameters", "join_hyperparameters",
           "dp_hyperparameters", "DELTA", "TASKS"]

DELTA = 1e-5
TASKS = ("data_collection", "novel_class", "data_join", "benchmark")
LEVELS = ("latent", "feature")
SOURCES = ("digits", "idx", "synthetic_lending", "csv")
KINDS = ("clean", "private")
BENCHMARKS = ("laplace", "piecewise")

INF = math.inf
LEARNED = None

# (lambda, l, eps_pretrain) per (dataset, accuracy kind, level, local eps).
_VLM_TABLE = {
    ("mnist", "clean", "latent"): {
        INF: (None, 10, LEARNED), 10: (0.7, 10, 27), 8: (0.7, 5, 29), 6: (0.7, 5, 15),
        4: (0.7, 7.5, 5), 2: (0.7, 7.5, 21), 1: (0.7, 5, 15)},
    ("lending", "clean", "latent"): {
        INF: (None, 10, LEARNED), 10: (0.7, 5, 15), 8: (0.7, 5, 29), 6: (0.7, 5, 29),
        4: (0.7, 5, 15), 2: (0.95, 5, 15), 1: (0.95, 10, 21)},
    ("mnist", "private", "latent"): {
        INF: (None, 10, LEARNED), 10: (0.7, 10, 5), 8: (0.7, 7.5, 5), 6: (0.7, 7.5, 5),
        4: (0.7, 5, 5), 2: (0.7, 5, 15), 1: (0.7, 7.5, 15)},
    ("lending", "private", "latent"): {
        INF: (None, 10, LEARNED), 10: (0.95, 5, 15), 8: (0.95, 5, 15), 6: (0.7, 5, 15),
        4: (0.7, 5, 15), 2: (0.95, 5, 29), 1: (0.95, 10, 21)},
    ("mnist", "clean", "feature"): {
        INF: (None, 10, LEARNED), 10: (0.7, 5, 29), 8: (0.7, 5, 15), 6: (0.7, 7.5, 21),
        4: (0.7, 5, 5), 2: (0.7, 7.5, 5), 1: (0.7, 5, 15)},
    ("lending", "clean", "feature"): {
        INF: (None, 10, LEARNED), 10: (0.7, 5, 29), 8: (0.95, 5, 29), 6: (0.7, 5, 15),
        4: (0.7, 5, 15), 2: (0.7, 5, 15), 1: (0.7, 10, 15)},
    ("mnist", "private", "feature"): {
        INF: (None, 10, LEARNED), 10: (0.7, 10, 5), 8: (0.7, 10, 5), 6: (0.7, 10, 5),
        4: (0.7, 5, 5), 2: (0.7, 7.5, 5), 1: (0.95, 5, 15)},
    ("lending", "private", "feature"): {
        INF: (None, 10, LEARNED), 10: (0.95, 5, 15), 8: (0.95, 5, 15), 6: (0.95, 5, 15),
        4: (0.7, 5, 15), 2: (0.95, 7.5, 27), 1: (0.95, 5, 15)},
}

# (d, l, eps_pretrain) for the latent-level data join.
_JOIN_TABLE = {
    INF: (8, 5, 20), 10: (8, 5, 10), 8: (5, 5, 15), 6: (5, 5, 15),
    4: (5, 5, 10), 2: (5, 5, 15), 1: (5, 5, 10),
}

# (learning rate, batch size, noise multiplier) for the DP-trained encoder.
_DP_TABLE = {
    ("mnist", 5.0): (5e-4, 64, 0.7), ("mnist", 1.0): (5e-4, 64, 1.1),
    ("lending", 5.0): (1e-4, 128, 0.56), ("lending", 1.0): (1e-4, 128, 1.1),
}

_DEFAULT_LAMBDA = 0.7


def _nearest(table, epsilon):
    """Row for ``epsilon``, or the nearest tabulated budget (in log space) off the grid."""
    if epsilon in table:
        return table[epsilon]
    if math.isinf(epsilon):
        return table[INF]
    finite = [e for e in table if math.isfinite(e)]
    key = min(finite, key=lambda e: (abs(math.log(e) - math.log(epsilon)), e))
    return table[key]


def vlm_hyperparameters(dataset, kind, level, epsilon):
    """Tuned ``(lambda, l, eps_pretrain)``; ``eps_pretrain`` None means a learned scale."""
    lam, l, pre = _nearest(_VLM_TABLE[(dataset, kind, level)], float(epsilon))
    return (_DEFAULT_LAMBDA if lam is None else lam), float(l), (None if pre is None else float(pre))


def join_hyperparameters(epsilon):
    d, l, pre = _nearest(_JOIN_TABLE, float(epsilon))
    return int(d), float(l), float(pre)


def dp_hyperparameters(dataset, central_epsilon):
    key = (dataset, float(central_epsilon))
    if key in _DP_TABLE:
        return _DP_TABLE[key]
    # off-grid targets use the looser setting of the nearest tabulated budget
    eps = min((e for d, e in _DP_TABLE if d == dataset),
              key=lambda e: abs(math.log(e) - math.log(central_epsilon)))
    return _DP_TABLE[(dataset, eps)]


def _to_float(key, v, allow_inf=True):
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity") and allow_inf:
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"{key}: expected a number, got {v!r}")
    v = float(v)
    if math.isnan(v) or (math.isinf(v) and not allow_inf):
        raise ValidationError(f"{key}: {v} is not allowed")
    return v


def _positive(key, v, allow_inf=True):
    v = _to_float(key, v, allow_inf)
    if not v > 0:
        raise ValidationError(f"{key}: must be positive, got {v}")
    return v


def _int(key, v, minimum=0):
    if isinstance(v, bool) or not isinstance(v, int) and not (isinstance(v, float) and v.is_integer()):
        raise ValidationError(f"{key}: expected an integer, got {v!r}")
    v = int(v)
    if v < minimum:
        raise ValidationError(f"{key}: must be >= {minimum}, got {v}")
    return v


def _choice(key, v, options):
    if v not in options:
        raise ValidationError(f"{key}: expected one of {list(options)}, got {v!r}")
    return v


def _subset(key, v, options):
    if isinstance(v, str):
        v = [v]
    if not isinstance(v, (list, tuple)) or not v:
        raise ValidationError(f"{key}: expected a non-empty list")
    for item in v:
        _choice(key, item, options)
    return tuple(dict.fromkeys(v))


def _opt(check):
    return lambda key, v: None if v is None else check(key, v)


def _sizes(key, v):
    if not isinstance(v, (list, tuple)) or not v:
        raise ValidationError(f"{key}: expected a non-empty list of layer widths")
    return tuple(_int(key, s, 1) for s in v)


def _path(key, v):
    if not isinstance(v, str) or not v:
        raise ValidationError(f"{key}: expected a path string")
    return v


def _eps_pretrain(key, v):
    if v == "learned":
        return "learned"
    return _positive(key, v, allow_inf=False)


def _eps_grid(key, v):
    if not isinstance(v, (list, tuple)) or not v:
        raise ValidationError(f"{key}: expected a non-empty list of budgets")
    out = tuple(_positive(key, e) for e in v)
    if len(set(out)) != len(out):
        raise ValidationError(f"{key}: duplicate budgets")
    return out


def _central(key, v):
    return _positive(key, v)


def _delta(key, v):
    v = _to_float(key, v, allow_inf=False)
    if v != DELTA:
        raise ValidationError(f"{key}: central delta is fixed at {DELTA}, got {v}")
    return v


def _lambda(key, v):
    v = _to_float(key, v, allow_inf=False)
    if not 0 < v <= 1:
        raise ValidationError(f"{key}: must lie in (0, 1], got {v}")
    return v


_SCHEMA = {
    "task": ("data_collection", lambda k, v: _choice(k, v, TASKS)),
    "level": ("latent", lambda k, v: _choice(k, v, LEVELS)),
    "seed": (0, lambda k, v: _int(k, v, 0)),
    "trials": (3, lambda k, v: _int(k, v, 1)),
    "accuracy_kinds": (("clean", "private"), lambda k, v: _subset(k, v, KINDS)),
    "epsilon.local": ((math.inf, 10.0), _eps_grid),
    "epsilon.central": (math.inf, _central),
    "epsilon.delta": (DELTA, _delta),
    "lambda": (None, _opt(_lambda)),
    "data.source": ("digits", lambda k, v: _choice(k, v, SOURCES)),
    "data.augment": (4, lambda k, v: _int(k, v, 0)),
    "data.test_fraction": (1 / 6, lambda k, v: _lambda(k, v)),
    "data.train_images": (None, _opt(_path)),
    "data.train_labels": (None, _opt(_path)),
    "data.test_images": (None, _opt(_path)),
    "data.test_labels": (None, _opt(_path)),
    "data.csv": (None, _opt(_path)),
    "data.n_rows": (20000, lambda k, v: _int(k, v, 100)),
    "data.seed": (0, lambda k, v: _int(k, v, 0)),
    "data.novel_class": (9, lambda k, v: _int(k, v, 0)),
    "vlm.latent_dim": (None, _opt(lambda k, v: _int(k, v, 1))),
    "vlm.clip_radius": (None, _opt(lambda k, v: _positive(k, v, False))),
    "vlm.epsilon_pretrain": (None, _opt(_eps_pretrain)),
    "vlm.encoder_hidden": (None, _opt(_sizes)),
    "vlm.decoder_hidden": (None, _opt(_sizes)),
    "vlm.learning_rate": (None, _opt(lambda k, v: _positive(k, v, False))),
    "vlm.batch_size": (None, _opt(lambda k, v: _int(k, v, 1))),
    "vlm.n_epochs": (40, lambda k, v: _int(k, v, 1)),
    "dp.learning_rate": (None, _opt(lambda k, v: _positive(k, v, False))),
    "dp.batch_size": (None, _opt(lambda k, v: _int(k, v, 1))),
    "dp.noise_multiplier": (None, _opt(lambda k, v: _positive(k, v, False))),
    "dp.max_grad_norm": (1.0, lambda k, v: _positive(k, v, False)),
    "dp.max_steps": (1000, lambda k, v: _int(k, v, 1)),
    "classifier.n_epochs": (50, lambda k, v: _int(k, v, 1)),
    "classifier.learning_rate": (1e-3, lambda k, v: _positive(k, v, False)),
    "classifier.batch_size": (64, lambda k, v: _int(k, v, 1)),
    "benchmarks": (("laplace", "piecewise"), lambda k, v: _subset(k, v, BENCHMARKS)),
    "benchmark.n_epochs": (30, lambda k, v: _int(k, v, 1)),
    "benchmark.task": ("data_collection",
                       lambda k, v: _choice(k, v, ("data_collection", "novel_class", "data_join"))),
}


def _attr(key):
    return key.replace(".", "_")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings; build with :meth:`from_dict` or :func:`load_config`."""

    values: dict

    def __getattr__(self, name):
        values = object.__getattribute__(self, "values")
        for key in values:
            if _attr(key) == name:
                return values[key]
        raise AttributeError(name)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_dict(cls, raw=None, **overrides):
        flat = _flatten(raw or {})
        flat.update(overrides)
        unknown = sorted(set(flat) - set(_SCHEMA))
        if unknown:
            raise ValidationError(f"unknown configuration keys: {unknown}")
        values = {}
        for key, (default, check) in _SCHEMA.items():
            values[key] = check(key, flat[key]) if key in flat else default
        cfg = cls(values)
        cfg._check_consistency()
        return cfg

    def replace(self, **changes):
        """New config with dotted keys (or their underscore forms) changed."""
        by_attr = {_attr(k): k for k in _SCHEMA}
        flat = dict(self.values)
        for k, v in changes.items():
            flat[by_attr.get(k, k)] = v
        return ExperimentConfig.from_dict(flat)

    def _check_consistency(self):
        v = self.values
        if v["data.source"] == "idx":
            missing = [k for k in ("data.train_images", "data.train_labels",
                                   "data.test_images", "data.test_labels") if v[k] is None]
            if missing:
                raise ValidationError(f"data.source = idx needs {missing}")
        if v["data.source"] == "csv" and v["data.csv"] is None:
            raise ValidationError("data.source = csv needs data.csv")
        task = v["benchmark.task"] if v["task"] == "benchmark" else v["task"]
        tabular = v["data.source"] in ("synthetic_lending", "csv")
        if task == "data_join" and not tabular:
            raise ValidationError("data_join needs a tabular source (synthetic_lending or csv)")
        if task == "novel_class" and tabular:
            raise ValidationError("novel_class needs an image source")
        if task == "data_join" and v["level"] != "latent":
            raise ValidationError("data_join shares latents; set level = latent")

    @property
    def dataset(self):
        """Which tuned table applies: ``mnist`` for images, ``lending`` for tables."""
        return "lending" if self.values["data.source"] in ("synthetic_lending", "csv") else "mnist"

    def to_dict(self):
        out = {}
        for k, v in self.values.items():
            if isinstance(v, tuple):
                v = [("inf" if isinstance(x, float) and math.isinf(x) else x) for x in v]
            elif isinstance(v, float) and math.isinf(v):
                v = "inf"
            out[k] = v
        return out

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _flatten(raw, prefix=""):
    if not isinstance(raw, dict):
        raise ValidationError("configuration must be a JSON object")
    out = {}
    for k, v in raw.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path):
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ValidationError(f"{path}: invalid JSON ({err})") from err
    return ExperimentConfig.from_dict(raw)
