"""Column layout of tabular data, shared by preprocessing and per-feature mechanisms."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ValidationError

KINDS = ("continuous", "categorical")
ROLES = ("feature_clean", "feature_private", "label", "split_key", "id", "drop")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = "continuous"
    role: str = "feature_private"
    cardinality: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise ValidationError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.kind == "categorical" and self.cardinality < 2:
            raise ValidationError(f"column {self.name!r}: categorical needs cardinality >= 2")

    @property
    def is_feature(self):
        return self.role in ("feature_clean", "feature_private")


@dataclass
class TableSchema:
    """Ordered columns plus fitted per-column ranges.

    ``ranges`` maps continuous feature names to ``(lo, hi)`` observed on the
    split named by ``ranges_fit_on``; they are recorded before any privatization.
    """

    columns: list
    ranges: dict = field(default_factory=dict)
    ranges_fit_on: str | None = None

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate column names in schema")

    def column(self, name):
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def by_role(self, *roles):
        return [c for c in self.columns if c.role in roles]

    @property
    def features(self):
        return [c for c in self.columns if c.is_feature]

    @property
    def label(self):
        labels = self.by_role("label")
        if len(labels) != 1:
            raise ValidationError(f"expected exactly one label column, found {len(labels)}")
        return labels[0]

    def subset(self, names):
        keep = [self.column(n) for n in names]
        ranges = {k: v for k, v in self.ranges.items() if k in names}
        return TableSchema(keep, ranges, self.ranges_fit_on)

    def with_ranges(self, X, names, fit_on):
        """Return a copy whose continuous ranges are the min/max of ``X`` columns."""
        X = np.asarray(X, dtype=float)
        ranges = dict(self.ranges)
        for j, name in enumerate(names):
            if self.column(name).kind == "continuous":
                ranges[name] = (float(X[:, j].min()), float(X[:, j].max()))
        return replace(self, ranges=ranges, ranges_fit_on=fit_on)


def continuous_schema(n_features, prefix="x", lo=None, hi=None, fit_on=None):
    """Schema of ``n_features`` continuous private features, optionally with shared ranges."""
    cols = [ColumnSpec(f"{prefix}{i}") for i in range(n_features)]
    ranges = {}
    if lo is not None:
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n_features,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n_features,))
        ranges = {c.name: (float(a), float(b)) for c, a, b in zip(cols, lo, hi)}
    return TableSchema(cols, ranges, fit_on)
