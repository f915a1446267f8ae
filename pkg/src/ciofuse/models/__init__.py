"""Base regressors behind one fit/predict/warm-start contract.

``ridge``  closed-form L2 regression, unpenalized intercept.
``forest`` bagged CART regression trees.
``net``    tanh MLP trained by full-batch gradient descent; with
           ``shared_rep`` the two arms of an effect model share one trunk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any

import numpy as np

from .._rng import rng_for
from . import net as _net
from .forest import Tree, fit_forest, predict_forest
from .ridge import fit_ridge

KINDS = ("ridge", "forest", "net")

_KIND_KEYS = {
    "ridge": {"lam"},
    "forest": {"n_trees", "max_depth", "min_leaf", "mtry", "bootstrap"},
    "net": {"hidden_widths", "epochs", "step_size", "shared_rep"},
}


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    lam: float = 1.0
    n_trees: int = 100
    max_depth: int = 10
    min_leaf: int = 5
    mtry: int | None = None  # None -> ceil(p / 3)
    bootstrap: bool = True
    hidden_widths: tuple[int, ...] = (64, 64)
    epochs: int = 300
    step_size: float = 0.05
    shared_rep: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if not self.lam >= 0:
            raise ModelError("lam must be nonnegative")
        for name in ("n_trees", "max_depth", "min_leaf"):
            if int(getattr(self, name)) < 1:
                raise ModelError(f"{name} must be a positive integer")
        if self.mtry is not None and self.mtry < 1:
            raise ModelError("mtry must be a positive integer")
        if self.epochs < 0 or not self.step_size > 0:
            raise ModelError("epochs must be >= 0 and step_size > 0")
        if not self.hidden_widths or any(int(h) < 1 for h in self.hidden_widths):
            raise ModelError("hidden_widths must be a nonempty list of positive ints")
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        if kind not in KINDS:
            raise ModelError(f"kind: expected one of {KINDS}, got {kind!r}")
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - _KIND_KEYS[kind]
        if unknown:
            raise ModelError(f"unknown {kind} hyperparameter(s): {sorted(unknown)}")
        return cls(kind=kind, **d)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for k in sorted(_KIND_KEYS[self.kind]):
            v = getattr(self, k)
            out["lambda" if k == "lam" else k] = list(v) if isinstance(v, tuple) else v
        return out

    @property
    def tag(self) -> str:
        return self.kind


@dataclass(frozen=True)
class FittedModel:
    """Predict-only model. ``head`` selects an output of a shared two-head net."""

    kind: str  # ridge | forest | net | constant
    p: int
    params: Any = field(repr=False)
    head: int = 0


def _check_xy(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        i, j = bad[0]
        raise ModelError(f"non-finite covariate at row {i}, column {j}")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ModelError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        raise ModelError(f"non-finite target at row {bad[0]}")
    return X, y


def _mean_weights(w, n):
    w = np.full(n, 1.0 / n) if w is None else np.asarray(w, dtype=float)
    if w.shape[0] != n or (w < 0).any() or w.sum() <= 0:
        raise ModelError("sample_weight must be nonnegative, row-aligned and not all zero")
    return w / w.sum()


def _degenerate(X):
    return X.shape[0] == 1 or bool(np.all(X == X[0]))


def _constant(X, y, w):
    return FittedModel("constant", X.shape[1], float(w @ y))


def _check_warm(spec, warm, p):
    if warm is None:
        return
    if warm.p != p:
        raise ModelError(f"warm start has p={warm.p}, data has p={p}")
    if warm.kind not in (spec.kind, "constant"):
        raise ModelError(f"warm start kind {warm.kind!r} does not match spec kind {spec.kind!r}")


def fit(spec: ModelSpec, X, y, seed: int = 0, warm_start: FittedModel | None = None,
        sample_weight=None) -> FittedModel:
    """Fit one regressor ``x -> y``.

    ``sample_weight`` defines a weighted squared-error objective; weights are
    normalized internally, so only their ratios matter. For ridge and forest
    ``warm_start`` is validated and otherwise ignored.
    """
    X, y = _check_xy(X, y)
    n, p = X.shape
    if n == 0:
        raise ModelError("cannot fit on zero samples")
    w = _mean_weights(sample_weight, n)
    _check_warm(spec, warm_start, p)
    if _degenerate(X):
        return _constant(X, y, w)
    if spec.kind == "ridge":
        coef, b = fit_ridge(X, y, spec.lam, w)
        return FittedModel("ridge", p, (coef, b))
    rng = rng_for(seed, "fit", spec.kind)
    if spec.kind == "forest":
        mtry = min(p, spec.mtry or math.ceil(p / 3))
        trees = fit_forest(X, y, w, spec.n_trees, spec.max_depth, spec.min_leaf, mtry, rng,
                           spec.bootstrap)
        return FittedModel("forest", p, trees)
    state = _net_init(spec, warm_start, X, y, 1, rng)
    state = _net.fit_state(state, X, y, np.zeros(n, dtype=np.intp), w, spec.epochs, spec.step_size)
    return FittedModel("net", p, state)


def _net_init(spec, warm, X, y, n_heads, rng):
    if warm is not None and warm.kind == "net":
        st = warm.params
        if st.n_heads != n_heads or st.hidden_widths != spec.hidden_widths:
            raise ModelError("warm-start network architecture does not match spec")
        return st.copy()
    return _net.make_state(X, y, spec.hidden_widths, n_heads, rng)


def predict(model: FittedModel, X) -> np.ndarray:
    X = _check_xy(X) if np.size(X) else np.zeros((0, model.p))
    if X.shape[1] != model.p:
        raise ModelError(f"model expects {model.p} columns, got {X.shape[1]}")
    if X.shape[0] == 0:
        return np.zeros(0)
    if model.kind == "constant":
        return np.full(X.shape[0], model.params)
    if model.kind == "ridge":
        coef, b = model.params
        return X @ coef + b
    if model.kind == "forest":
        return predict_forest(model.params, X)
    return model.params.predict(X, model.head)


def warm_start_of(model: FittedModel) -> FittedModel:
    """Independent copy usable as ``warm_start`` for a later fit."""
    if model.kind == "net":
        return replace(model, params=model.params.copy())
    if model.kind == "ridge":
        coef, b = model.params
        return replace(model, params=(coef.copy(), b))
    return replace(model)


@dataclass(frozen=True)
class Arm:
    """Training data for one arm: covariates, targets, objective weights."""

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray | None = None


def fit_arms(spec: ModelSpec, treated: Arm, control: Arm, seed: int,
             warm: tuple[FittedModel, FittedModel] | None = None,
             pretrain_control: tuple[np.ndarray, np.ndarray] | None = None):
    """Fit the (treated, control) regressor pair of an effect model.

    For a ``shared_rep`` net both arms are heads of one network trained on
    the sum of the two arm objectives. ``pretrain_control`` is pooled
    control data the net's control arm is trained on for ``spec.epochs``
    before the main fit; other kinds ignore it.
    """
    if spec.kind == "net" and spec.shared_rep:
        return _fit_two_head(spec, treated, control, seed, warm, pretrain_control)
    w1 = w0 = None
    if warm is not None:
        w1, w0 = warm
    f1 = fit(spec, treated.X, treated.y, seed=seed * 2 + 1, warm_start=w1, sample_weight=treated.w)
    if spec.kind == "net" and pretrain_control is not None:
        Xp, yp = _check_xy(*pretrain_control)
        if not _degenerate(Xp) and not _degenerate(control.X):
            w0 = fit(spec, Xp, yp, seed=seed * 2, warm_start=None)
    f0 = fit(spec, control.X, control.y, seed=seed * 2, warm_start=w0, sample_weight=control.w)
    return f1, f0


def _fit_two_head(spec, treated, control, seed, warm, pretrain_control):
    X1, y1 = _check_xy(treated.X, treated.y)
    X0, y0 = _check_xy(control.X, control.y)
    if X1.shape[0] == 0 or X0.shape[0] == 0:
        raise ModelError("cannot fit on zero samples")
    if X1.shape[1] != X0.shape[1]:
        raise ModelError("arms have different covariate dimensions")
    X = np.vstack([X1, X0])
    y = np.concatenate([y1, y0])
    heads = np.concatenate([np.ones(len(y1), dtype=np.intp), np.zeros(len(y0), dtype=np.intp)])
    w = np.concatenate([_mean_weights(treated.w, len(y1)), _mean_weights(control.w, len(y0))])
    p = X.shape[1]
    rng = rng_for(seed, "fit", "net2")
    state = None
    if warm is not None:
        for m in warm:
            _check_warm(spec, m, p)
        m1 = warm[0]
        if m1.kind == "net" and m1.params.n_heads == 2:
            state = _net_init(spec, m1, X, y, 2, rng)
    if state is None:
        state = _net.make_state(X, y, spec.hidden_widths, 2, rng)
    if pretrain_control is not None:
        Xp, yp = _check_xy(*pretrain_control)
        state = _net.fit_state(state, Xp, yp, np.zeros(len(yp), dtype=np.intp),
                               np.full(len(yp), 1.0 / len(yp)), spec.epochs, spec.step_size)
    state = _net.fit_state(state, X, y, heads, w, spec.epochs, spec.step_size)
    return FittedModel("net", p, state, head=1), FittedModel("net", p, state, head=0)


__all__ = [
    "KINDS", "ModelSpec", "FittedModel", "ModelError", "Arm", "Tree",
    "fit", "predict", "warm_start_of", "fit_arms",
]
