"""Dataset splits for the three applications."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ValidationError
from ..rng import as_source
from .preprocess import PreprocessedTable

__all__ = ["Dataset", "LabelledPool", "DatasetSplits", "JoinSplits", "split_datasets"]

VLM_FRACTION = 0.75
CLF_TRAIN_FRACTION = 0.9


@dataclass
class Dataset:
    """Records in model-input form ``X``; ``codes`` keeps one column per raw
    feature (categoricals as integer codes) when that differs from ``X``."""

    X: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    codes: np.ndarray | None = None

    def __len__(self):
        return len(self.y)

    @property
    def feature_codes(self):
        return self.X if self.codes is None else self.codes

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        codes = None if self.codes is None else self.codes[idx]
        return Dataset(self.X[idx], self.y[idx], self.ids[idx], codes)


@dataclass
class LabelledPool:
    """A train/test partition as delivered by the data source."""

    train: Dataset
    test: Dataset

    @classmethod
    def from_arrays(cls, X_train, y_train, X_test, y_test):
        n_tr = len(y_train)
        ids = np.arange(n_tr + len(y_test), dtype=np.uint64)
        return cls(Dataset(np.asarray(X_train, float), np.asarray(y_train, np.int64), ids[:n_tr]),
                   Dataset(np.asarray(X_test, float), np.asarray(y_test, np.int64), ids[n_tr:]))


@dataclass
class DatasetSplits:
    vlm_train: Dataset
    vlm_val: Dataset
    clf_train: Dataset
    clf_val: Dataset
    test: Dataset


@dataclass
class JoinSplits:
    """Row splits of a table whose feature columns are partitioned clean/private."""

    clean_names: list
    private_names: list
    train: PreprocessedTable
    val: PreprocessedTable
    test: PreprocessedTable


def _split_fraction(n, fraction, rng):
    order = rng.permutation(n)
    k = int(round(fraction * n))
    return order[:k], order[k:]


def _data_collection(pool, rng):
    vt, ct = _split_fraction(len(pool.train), VLM_FRACTION, rng.spawn("train"))
    vv, te = _split_fraction(len(pool.test), VLM_FRACTION, rng.spawn("test"))
    clf = pool.train.take(ct)
    tr, va = _split_fraction(len(clf), CLF_TRAIN_FRACTION, rng.spawn("clf"))
    return DatasetSplits(pool.train.take(vt), pool.test.take(vv), clf.take(tr), clf.take(va),
                         pool.test.take(te))


def _balanced_binary(ds, novel_mask, rng):
    pos = np.flatnonzero(novel_mask)
    neg = np.flatnonzero(~novel_mask)
    if pos.size == 0:
        raise ValidationError("novel class absent from the classifier data")
    if neg.size == 0:
        raise ValidationError("no held-out known-class records for the classifier data")
    k = min(pos.size, neg.size)
    pos = np.sort(pos[rng.spawn("pos").choice(pos.size, k)])
    neg = np.sort(neg[rng.spawn("neg").choice(neg.size, k)])
    idx = np.concatenate([pos, neg])
    idx = idx[rng.spawn("mix").permutation(idx.size)]
    out = ds.take(idx)
    out.y = novel_mask[idx].astype(np.int64)
    return out


def _novel_class(pool, rng, novel_class):
    parts = {}
    for name, ds in (("train", pool.train), ("test", pool.test)):
        known = np.flatnonzero(ds.y != novel_class)
        prng = rng.spawn(name)
        order = known[prng.permutation(known.size)]
        k = int(round(known.size * 8 / 9))
        parts[name] = (ds.take(np.sort(order[:k])),
                       np.sort(np.concatenate([order[k:], np.flatnonzero(ds.y == novel_class)])))
    vlm_train, held_train = parts["train"]
    vlm_val, held_test = parts["test"]
    clf_pool = _balanced_binary(pool.train.take(held_train),
                                pool.train.y[held_train] == novel_class, rng.spawn("clf"))
    test = _balanced_binary(pool.test.take(held_test),
                            pool.test.y[held_test] == novel_class, rng.spawn("clf_test"))
    tr, va = _split_fraction(len(clf_pool), CLF_TRAIN_FRACTION, rng.spawn("clf_split"))
    return DatasetSplits(vlm_train, vlm_val, clf_pool.take(tr), clf_pool.take(va), test)


def _data_join(table):
    clean = [c.name for c in table.schema.features if c.role == "feature_clean"]
    private = [c.name for c in table.schema.features if c.role == "feature_private"]
    if not clean or not private:
        raise ValidationError("data join needs both feature_clean and feature_private columns")
    return JoinSplits(clean, private, table.rows(table.split == "train"),
                      table.rows(table.split == "val"), table.rows(table.split == "test"))


def split_datasets(data, task, rng=None, novel_class=9):
    """Split ``data`` for ``task``.

    ``data_collection`` and ``novel_class`` take a :class:`LabelledPool` and
    return :class:`DatasetSplits` (VLM train/val, classifier train/val, test);
    ``data_join`` takes a :class:`PreprocessedTable` and returns
    :class:`JoinSplits`.
    """
    rng = as_source(rng)
    if task == "data_collection":
        return _data_collection(data, rng)
    if task == "novel_class":
        return _novel_class(data, rng, novel_class)
    if task == "data_join":
        return _data_join(data)
    raise ValidationError(f"unknown task {task!r}")
