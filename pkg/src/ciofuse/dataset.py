"""Units, datasets and the group bookkeeping used by every estimator.

A :class:`Dataset` is column-oriented and read-only: each field lives in a
numpy array with the write flag cleared, and every transformation returns a
new object. Ground-truth potential outcomes are optional and stored as NaN
where absent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed rows or incompatible datasets."""


@dataclass(frozen=True)
class Unit:
    x: tuple[float, ...]
    t: int
    s: int
    y: float
    y0_true: float | None = None
    y1_true: float | None = None
    tau_true: float | None = None
    u: int | None = None

    @property
    def d(self) -> int:
        return pseudo_label(self.t, self.s)


def pseudo_label(t, s):
    """Dummy treatment marking OS treated units: ``t * (1 - s)``."""
    return t * (1 - s)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Dataset:
    """Immutable, ordered collection of units sharing covariate dimension ``p``."""

    __slots__ = ("X", "t", "s", "y", "y0", "y1", "tau", "u", "p")

    def __init__(self, X, t, s, y, y0=None, y1=None, tau=None, u=None, p=None):
        X = np.asarray(X, dtype=float)
        n = len(t) if X.size == 0 else X.shape[0]
        if X.size == 0:
            if p is None:
                p = X.shape[1] if X.ndim == 2 else 0
            X = np.zeros((n, p))
        if X.ndim != 2:
            raise DataError(f"covariates must be 2-D, got shape {X.shape}")
        p = X.shape[1] if p is None else int(p)
        if X.shape[1] != p:
            raise DataError(f"covariate dimension {X.shape[1]} != declared p={p}")

        def col(a, dtype, fill):
            if a is None:
                return np.full(n, fill, dtype=dtype)
            a = np.asarray(a, dtype=dtype).reshape(-1)
            if a.shape[0] != n:
                raise DataError(f"column length {a.shape[0]} != {n}")
            return a

        object.__setattr__(self, "p", p)
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "t", _frozen(col(t, np.int8, 0)))
        object.__setattr__(self, "s", _frozen(col(s, np.int8, 0)))
        object.__setattr__(self, "y", _frozen(col(y, float, np.nan)))
        object.__setattr__(self, "y0", _frozen(col(y0, float, np.nan)))
        object.__setattr__(self, "y1", _frozen(col(y1, float, np.nan)))
        if tau is None and y0 is not None and y1 is not None:
            tau = self.y1 - self.y0
        object.__setattr__(self, "tau", _frozen(col(tau, float, np.nan)))
        object.__setattr__(self, "u", _frozen(col(u, np.int8, -1)))

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    def __len__(self) -> int:
        return self.X.shape[0]

    def __repr__(self) -> str:
        c = self.counts()
        return f"Dataset(n={len(self)}, p={self.p}, counts={c})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.p == other.p and all(
            np.array_equal(getattr(self, k), getattr(other, k), equal_nan=(k not in "tsu"))
            for k in ("X", "t", "s", "y", "y0", "y1", "tau", "u")
        )

    __hash__ = None

    @property
    def has_truth(self) -> bool:
        return len(self) > 0 and not np.isnan(self.tau).any()

    @property
    def has_u(self) -> bool:
        return len(self) > 0 and bool((self.u >= 0).all())

    @property
    def d(self) -> np.ndarray:
        return pseudo_label(self.t, self.s)

    def unit(self, i: int) -> Unit:
        def opt(v):
            return None if np.isnan(v) else float(v)

        return Unit(
            x=tuple(float(v) for v in self.X[i]),
            t=int(self.t[i]),
            s=int(self.s[i]),
            y=float(self.y[i]),
            y0_true=opt(self.y0[i]),
            y1_true=opt(self.y1[i]),
            tau_true=opt(self.tau[i]),
            u=None if self.u[i] < 0 else int(self.u[i]),
        )

    @property
    def units(self) -> list[Unit]:
        return [self.unit(i) for i in range(len(self))]

    def take(self, idx) -> "Dataset":
        """Rows selected by an index array or boolean mask, order preserved."""
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(
            self.X[idx], self.t[idx], self.s[idx], self.y[idx],
            self.y0[idx], self.y1[idx], self.tau[idx], self.u[idx], p=self.p,
        )

    def replace(self, **cols) -> "Dataset":
        fields = {k: getattr(self, k) for k in ("X", "t", "s", "y", "y0", "y1", "tau", "u")}
        fields.update(cols)
        return Dataset(**fields, p=self.p)

    def counts(self) -> dict[str, int]:
        """Group sizes: m, m_t, m_c for OS (s=0) and n, n_t, n_c for RCT (s=1)."""
        os_, rct = self.s == 0, self.s == 1
        return {
            "m": int(os_.sum()),
            "m_t": int((os_ & (self.t == 1)).sum()),
            "m_c": int((os_ & (self.t == 0)).sum()),
            "n": int(rct.sum()),
            "n_t": int((rct & (self.t == 1)).sum()),
            "n_c": int((rct & (self.t == 0)).sum()),
        }

    def treated(self) -> "Dataset":
        return self.take(self.t == 1)

    def control(self) -> "Dataset":
        return self.take(self.t == 0)


def empty(p: int) -> Dataset:
    return Dataset(np.zeros((0, p)), [], [], [], p=p)


def build_dataset(rows: Iterable[Sequence], p: int | None = None) -> Dataset:
    """Build a dataset from ``(x, t, s, y[, y0_true, y1_true])`` rows.

    Rows may also be mappings with those keys plus an optional ``u``.
    """
    rows = list(rows)
    X, t, s, y, y0, y1, u = [], [], [], [], [], [], []
    for i, row in enumerate(rows):
        if isinstance(row, dict):
            rx, rt, rs, ry = row["x"], row["t"], row["s"], row["y"]
            r0, r1, ru = row.get("y0_true"), row.get("y1_true"), row.get("u")
        else:
            rx, rt, rs, ry, *rest = row
            r0 = rest[0] if len(rest) > 0 else None
            r1 = rest[1] if len(rest) > 1 else None
            ru = None
        rx = np.asarray(rx, dtype=float).reshape(-1)
        if p is None:
            p = rx.shape[0]
        if rx.shape[0] != p:
            raise DataError(f"dimension mismatch at row {i}: expected {p}, got {rx.shape[0]}")
        if rt not in (0, 1):
            raise DataError(f"non-binary treatment at row {i}")
        if rs not in (0, 1):
            raise DataError(f"non-binary source at row {i}")
        if ru is not None and ru not in (0, 1):
            raise DataError(f"non-binary u-flag at row {i}")
        if (r0 is None) != (r1 is None):
            raise DataError(f"row {i} carries only one potential outcome")
        if r0 is not None and ry != (r1 if rt == 1 else r0):
            raise DataError(f"row {i}: observed y does not match the observed-arm potential outcome")
        X.append(rx)
        t.append(rt)
        s.append(rs)
        y.append(ry)
        y0.append(np.nan if r0 is None else r0)
        y1.append(np.nan if r1 is None else r1)
        u.append(-1 if ru is None else ru)
    if p is None:
        raise DataError("cannot infer covariate dimension from zero rows; pass p")
    X = np.array(X, dtype=float).reshape(len(rows), p)
    return Dataset(X, t, s, y, y0, y1, u=u, p=p)


@dataclass(frozen=True)
class Partition:
    os_treated: Dataset
    os_control: Dataset
    rct_treated: Dataset
    rct_control: Dataset


def partition(ds: Dataset) -> Partition:
    """Split into the four (source, treatment) cells, order preserved."""
    return Partition(
        os_treated=ds.take((ds.s == 0) & (ds.t == 1)),
        os_control=ds.take((ds.s == 0) & (ds.t == 0)),
        rct_treated=ds.take((ds.s == 1) & (ds.t == 1)),
        rct_control=ds.take((ds.s == 1) & (ds.t == 0)),
    )


def invert_treatments(ds: Dataset) -> Dataset:
    """Flip every treatment flag; swap the potential outcomes to match."""
    return ds.replace(t=1 - ds.t, y0=ds.y1, y1=ds.y0, tau=-ds.tau)


def merge(*parts: Dataset) -> Dataset:
    """Concatenate datasets in argument order."""
    if not parts:
        raise DataError("merge needs at least one dataset")
    p = parts[0].p
    for d in parts[1:]:
        if d.p != p:
            raise DataError(f"cannot merge datasets with p={p} and p={d.p}")
    cat = lambda k: np.concatenate([getattr(d, k) for d in parts])  # noqa: E731
    return Dataset(
        np.concatenate([d.X for d in parts]).reshape(-1, p),
        cat("t"), cat("s"), cat("y"), cat("y0"), cat("y1"), cat("tau"), cat("u"), p=p,
    )
