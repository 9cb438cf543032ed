"""Desk-scale data sources: 8x8 digits and a synthetic loan table."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..rng import as_source
from ..schema import ColumnSpec, TableSchema
from .io import load_idx

__all__ = [
    "ImageData",
    "load_digit_images",
    "load_idx_images",
    "augment_images",
    "lending_schema",
    "make_lending_rows",
    "write_rows_csv",
    "read_rows_csv",
]


@dataclass
class ImageData:
    """Raw pixel images in [0, 255] with a fixed train/test partition."""

    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray


def augment_images(images, labels, copies, rng):
    """Append ``copies`` jittered variants of each image.

    Each copy is shifted by up to one pixel per axis and its intensity scaled
    by a factor in [0.85, 1.15]; background stays exactly zero, which matters
    after the logit transform.
    """
    if copies <= 0:
        return images, labels
    rng = as_source(rng)
    out, lab = [images], [labels]
    h, w = images.shape[1:]
    for c in range(copies):
        crng = rng.spawn("copy", c)
        shifts = crng.integers(-1, 2, (len(images), 2))
        gain = 0.85 + 0.3 * crng.uniform((len(images), 1, 1))
        shifted = np.zeros_like(images)
        for i, (dy, dx) in enumerate(shifts):
            src = images[i, max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
            shifted[i, max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
        out.append(np.clip(shifted * gain, 0.0, 255.0))
        lab.append(labels)
    return np.concatenate(out), np.concatenate(lab)


def load_digit_images(test_fraction=1 / 6, augment=0, rng=0):
    """The 1797 bundled 8x8 digits rescaled to [0, 255], split into train/test.

    Originals are partitioned first; augmentation then acts within each part so
    no jittered copy of a test image reaches the training side.
    """
    from sklearn.datasets import load_digits

    rng = as_source(rng)
    digits = load_digits()
    images = digits.images * (255.0 / 16.0)
    labels = digits.target.astype(np.int64)
    order = rng.spawn("partition").permutation(len(images))
    n_test = int(round(test_fraction * len(images)))
    te, tr = order[:n_test], order[n_test:]
    tr_x, tr_y = augment_images(images[tr], labels[tr], augment, rng.spawn("aug", "train"))
    te_x, te_y = augment_images(images[te], labels[te], augment, rng.spawn("aug", "test"))
    return ImageData(tr_x, tr_y, te_x, te_y)


def load_idx_images(train_images, train_labels, test_images, test_labels):
    """MNIST-style IDX quadruple."""
    return ImageData(load_idx(train_images), load_idx(train_labels).astype(np.int64),
                     load_idx(test_images), load_idx(test_labels).astype(np.int64))


# --- synthetic loan table -------------------------------------------------
#
# Ground truth: three standard-normal factors u drive the twelve continuous
# private columns (fixed loadings plus noise 0.3) and, through thresholds,
# the three categorical private columns. The default indicator is
# Bernoulli(sigmoid(0.9*c0 - 0.7*c1 + 0.6*[cat0 == 2] + 1.6*u0 - 1.2*u1 + 0.8*u2 - 1.0)),
# so the eight clean columns carry some signal and the private block carries more.
# c2..c4 and the remaining clean categoricals are noise; about 3% of cells in
# c3 and p3 are missing; 0.2% of rows get a 25-sigma spike in p0.

_N_PRIVATE_CONT = 12
_CLEAN_CONT = ("c0", "c1", "c2", "c3", "c4")
_CLEAN_CAT = (("cat0", 3), ("cat1", 4), ("cat2", 5))
_PRIV_CAT = (("pcat0", 3), ("pcat1", 3), ("pcat2", 3))


def lending_schema():
    cols = [ColumnSpec("id", "continuous", "id"), ColumnSpec("issue_date", "continuous", "split_key")]
    cols += [ColumnSpec(n, "continuous", "feature_clean") for n in _CLEAN_CONT]
    cols += [ColumnSpec(n, "categorical", "feature_clean", k) for n, k in _CLEAN_CAT]
    cols += [ColumnSpec(f"p{i}", "continuous", "feature_private") for i in range(_N_PRIVATE_CONT)]
    cols += [ColumnSpec(n, "categorical", "feature_private", k) for n, k in _PRIV_CAT]
    cols += [ColumnSpec("notes_len", "continuous", "drop"),
             ColumnSpec("charged_off", "categorical", "label", 2)]
    return TableSchema(cols)


def _loadings():
    g = np.random.Generator(np.random.PCG64(20240611))
    A = g.normal(0.0, 1.0, (_N_PRIVATE_CONT, 3))
    return A / np.linalg.norm(A, axis=1, keepdims=True)


def make_lending_rows(n=20000, rng=0):
    """Rows (dicts of strings, as read from CSV) following :func:`lending_schema`."""
    rng = as_source(rng)
    u = rng.normal(1.0, (n, 3))
    clean = rng.normal(1.0, (n, len(_CLEAN_CONT)))
    cat_clean = np.stack([rng.integers(0, k, n) for _, k in _CLEAN_CAT], axis=1)
    priv = u @ _loadings().T + rng.normal(0.3, (n, _N_PRIVATE_CONT))
    pcat = np.stack([
        np.digitize(u[:, 0] + 0.5 * rng.normal(1.0, n), [-0.6, 0.6]),
        np.digitize(u[:, 1] + 0.5 * rng.normal(1.0, n), [-0.6, 0.6]),
        np.digitize(u[:, 2] - u[:, 0] + 0.5 * rng.normal(1.0, n), [-0.8, 0.8]),
    ], axis=1)
    logit = (0.9 * clean[:, 0] - 0.7 * clean[:, 1] + 0.6 * (cat_clean[:, 0] == 2)
             + 1.6 * u[:, 0] - 1.2 * u[:, 1] + 0.8 * u[:, 2] - 1.0)
    y = (rng.uniform(n) < 1.0 / (1.0 + np.exp(-logit))).astype(int)
    missing_c3 = rng.uniform(n) < 0.03
    missing_p3 = rng.uniform(n) < 0.03
    spikes = rng.uniform(n) < 0.002
    priv[spikes, 0] += 25.0 * priv[:, 0].std()
    date = np.sort(rng.integers(0, 3650, n))
    notes = rng.uniform(n)
    rows = []
    for i in range(n):
        row = {"id": str(1_000_000 + i), "issue_date": str(int(date[i]))}
        for j, name in enumerate(_CLEAN_CONT):
            row[name] = "" if (name == "c3" and missing_c3[i]) else repr(float(clean[i, j]))
        for j, (name, _) in enumerate(_CLEAN_CAT):
            row[name] = str(int(cat_clean[i, j]))
        for j in range(_N_PRIVATE_CONT):
            row[f"p{j}"] = "" if (j == 3 and missing_p3[i]) else repr(float(priv[i, j]))
        for j, (name, _) in enumerate(_PRIV_CAT):
            row[name] = str(int(pcat[i, j]))
        row["notes_len"] = "" if notes[i] < 0.9 else repr(float(notes[i]))
        row["charged_off"] = str(int(y[i]))
        rows.append(row)
    return rows


def write_rows_csv(rows, path):
    fields = list(rows[0]) if rows else []
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def read_rows_csv(path):
    with open(Path(path), newline="") as f:
        return list(csv.DictReader(f))
