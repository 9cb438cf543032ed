"""Image and table preprocessing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ValidationError
from ..rng import as_source
from ..schema import TableSchema

__all__ = [
    "LOGIT_EPS",
    "preprocess_images",
    "RowError",
    "TableParseError",
    "PreprocessedTable",
    "preprocess_table",
    "one_hot",
]

LOGIT_EPS = 1e-4
OUTLIER_SIGMAS = 10.0


def preprocess_images(images, eta=LOGIT_EPS):
    """Flatten images and map pixels to ``logit(clip(p / 255, eta, 1 - eta))``."""
    images = np.asarray(images, dtype=float)
    if images.size and (images.min() < 0 or images.max() > 255):
        raise ValidationError("pixel values must lie in [0, 255]")
    p = np.clip(images.reshape(len(images), -1) / 255.0, eta, 1.0 - eta)
    return np.log(p) - np.log1p(-p)


@dataclass
class RowError:
    row: int
    column: str
    message: str


class TableParseError(ValidationError):
    def __init__(self, errors):
        self.errors = errors
        head = "; ".join(f"row {e.row} column {e.column!r}: {e.message}" for e in errors[:10])
        more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
        super().__init__(f"{len(errors)} bad cells: {head}{more}")


@dataclass
class PreprocessedTable:
    """Preprocessed rows.

    ``codes`` holds one column per schema feature (scaled continuous values,
    integer category codes) in ``feature_names`` order; ``X`` is the same data
    with categoricals one-hot encoded, laid out by ``onehot_slices``.
    """

    codes: np.ndarray
    X: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    split: np.ndarray
    feature_names: list
    onehot_slices: dict
    schema: TableSchema
    stats: dict = field(default_factory=dict)

    def rows(self, mask):
        mask = np.asarray(mask)
        return PreprocessedTable(self.codes[mask], self.X[mask], self.y[mask], self.ids[mask],
                                 self.split[mask], self.feature_names, self.onehot_slices,
                                 self.schema, self.stats)

    def columns_for(self, names):
        """Indices into ``codes`` and ``X`` for a subset of feature names."""
        code_idx = [self.feature_names.index(n) for n in names]
        x_idx = []
        for n in names:
            start, width = self.onehot_slices[n]
            x_idx.extend(range(start, start + width))
        return code_idx, x_idx


def one_hot(codes, schema: TableSchema, names):
    """Expand categorical columns of ``codes`` into one-hot blocks.

    Returns the encoded matrix and ``{name: (start, width)}``.
    """
    codes = np.asarray(codes, dtype=float)
    blocks, slices, pos = [], {}, 0
    for j, name in enumerate(names):
        col = schema.column(name)
        if col.kind == "categorical":
            k = col.cardinality
            block = np.zeros((len(codes), k))
            block[np.arange(len(codes)), codes[:, j].astype(np.int64)] = 1.0
            blocks.append(block)
            slices[name] = (pos, k)
            pos += k
        else:
            blocks.append(codes[:, j:j + 1])
            slices[name] = (pos, 1)
            pos += 1
    X = np.hstack(blocks) if blocks else np.zeros((len(codes), 0))
    return X, slices


def _parse(rows, schema):
    errors = []
    feats = schema.features
    n = len(rows)
    codes = np.full((n, len(feats)), np.nan)
    y = np.zeros(n, dtype=np.int64)
    label = schema.label
    keys = schema.by_role("split_key")
    ids_col = schema.by_role("id")
    split_key = np.arange(n, dtype=float)
    ids = np.arange(n, dtype=np.uint64)
    if rows:
        header = set(rows[0])
        missing = [c.name for c in schema.columns if c.name not in header]
        if missing:
            raise ValidationError(f"schema columns missing from header: {missing}")
    for i, row in enumerate(rows):
        for j, col in enumerate(feats):
            cell = (row.get(col.name) or "").strip()
            if cell == "" or cell.lower() == "nan":
                continue
            try:
                v = float(cell)
            except ValueError:
                errors.append(RowError(i, col.name, f"non-numeric value {cell!r}"))
                continue
            if col.kind == "categorical" and (not v.is_integer() or not 0 <= v < col.cardinality):
                errors.append(RowError(i, col.name, f"category code {cell!r} outside 0..{col.cardinality - 1}"))
                continue
            codes[i, j] = v
        cell = (row.get(label.name) or "").strip()
        try:
            y[i] = int(float(cell))
        except ValueError:
            errors.append(RowError(i, label.name, f"missing or non-numeric label {cell!r}"))
        if keys:
            try:
                split_key[i] = float(row[keys[0].name])
            except (ValueError, TypeError):
                errors.append(RowError(i, keys[0].name, "unparseable split key"))
        if ids_col:
            try:
                ids[i] = np.uint64(int(row[ids_col[0].name]))
            except (ValueError, TypeError, OverflowError):
                errors.append(RowError(i, ids_col[0].name, "id is not a 64-bit integer"))
    if errors:
        raise TableParseError(errors)
    return codes, y, split_key, ids


def _chronological(split_key, fractions):
    order = np.argsort(split_key, kind="stable")
    n = len(order)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    split = np.empty(n, dtype=object)
    split[order[:n_train]] = "train"
    split[order[n_train:n_train + n_val]] = "val"
    split[order[n_train + n_val:]] = "test"
    return split.astype(str)


def preprocess_table(rows, schema: TableSchema, fractions=(0.85, 0.075), rng=None, balance=True):
    """Clean and encode tabular rows.

    Steps, in order: drop ``role='drop'`` columns; mean-impute; standard-scale
    continuous columns; remove rows with any scaled feature beyond 10 standard
    deviations; downsample the majority class within each split; one-hot
    encode. The chronological train/val/test split is taken on the split key
    (oldest ``fractions[0]`` trains) and all statistics are fitted on the
    training split only.
    """
    rng = as_source(rng)
    if not schema.by_role("label"):
        raise ValidationError("schema has no label column")
    codes, y, split_key, ids = _parse(rows, schema)
    names = [c.name for c in schema.features]
    split = _chronological(split_key, fractions)
    train = split == "train"

    cont = np.array([schema.column(n).kind == "continuous" for n in names], dtype=bool)
    means = np.zeros(len(names))
    scales = np.ones(len(names))
    for j, name in enumerate(names):
        col = codes[train, j]
        col = col[~np.isnan(col)]
        if cont[j]:
            means[j] = col.mean() if col.size else 0.0
        else:
            vals, counts = np.unique(col, return_counts=True)
            means[j] = vals[np.argmax(counts)] if vals.size else 0.0
    filled = np.where(np.isnan(codes), means, codes)
    for j in np.flatnonzero(cont):
        scales[j] = max(float(filled[train, j].std()), 1e-12)
    scaled = filled.copy()
    scaled[:, cont] = (filled[:, cont] - means[cont]) / scales[cont]

    keep = np.all(np.abs(scaled[:, cont]) <= OUTLIER_SIGMAS, axis=1)
    n_outliers = int((~keep).sum())

    if balance:
        for part in ("train", "val", "test"):
            idx = np.flatnonzero(keep & (split == part))
            classes, counts = np.unique(y[idx], return_counts=True)
            if len(classes) < 2:
                continue
            target = counts.min()
            for c, cnt in zip(classes, counts):
                if cnt > target:
                    members = idx[y[idx] == c]
                    drop = members[rng.spawn("balance", part, int(c)).choice(cnt, cnt - target)]
                    keep[drop] = False

    X, slices = one_hot(scaled, schema, names)
    fitted = schema.with_ranges(scaled[keep & train], names, fit_on="train")
    stats = {"means": means.tolist(), "scales": scales.tolist(), "fit_on": "train",
             "n_outliers_removed": n_outliers}
    return PreprocessedTable(scaled[keep], X[keep], y[keep], ids[keep], split[keep], names,
                             slices, fitted, stats)
