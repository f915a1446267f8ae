"""Effect estimators that fuse observational (OS) and randomized (RCT) data.

CIO runs in two stages. Stage 1 fits ``p1`` on OS treated units (the
pseudo-experimental group, ``d = 1``) and ``p0`` on all RCT units (the
pseudo-controls, ``d = 0``); ``tau_c = p1 - p0`` is the estimated bias.
Stage 2 subtracts ``tau_c`` from OS treated outcomes and fits the arm
regressors ``f1``/``f0`` on the pooled data, ``f1`` warm-started from ``p1``.

Arm objectives are sums of per-group mean squared errors by default
(``weighting="group_mean"``); ``"pooled"`` uses one mean over all rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import derive_seed
from .dataset import DataError, Dataset, invert_treatments, merge, partition
from .models import Arm, FittedModel, ModelSpec, fit_arms, predict, warm_start_of
from .models.ridge import fit_ridge

WEIGHTINGS = ("group_mean", "pooled")


class FuseError(ValueError):
    """An estimator cannot run on the data it was given."""


@dataclass(frozen=True)
class EffectModel:
    f1: FittedModel
    f0: FittedModel
    sign: int = 1
    method: str = ""
    spec: ModelSpec | None = None
    offset: tuple[np.ndarray, float] | None = None  # linear term added by RHC


@dataclass(frozen=True)
class ConfoundingModel:
    p1: FittedModel
    p0: FittedModel

    def bias(self, X) -> np.ndarray:
        return predict(self.p1, X) - predict(self.p0, X)


def estimate_effects(em: EffectModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    tau = em.sign * (predict(em.f1, X) - predict(em.f0, X))
    if em.offset is not None:
        coef, b = em.offset
        tau = tau + X @ coef + b
    return tau


def group_weights(groups, weighting="group_mean"):
    """Row weights for a loss over several groups; empty groups are dropped.

    ``group_mean`` gives every row of group ``g`` weight ``1/n_g`` so the
    weighted sum equals the sum of per-group mean squared errors.
    """
    if weighting not in WEIGHTINGS:
        raise FuseError(f"weighting must be one of {WEIGHTINGS}")
    groups = [g for g in groups if len(g)]
    if not groups:
        return None, []
    total = sum(len(g) for g in groups)
    w = np.concatenate([
        np.full(len(g), 1.0 / len(g) if weighting == "group_mean" else 1.0 / total)
        for g in groups
    ])
    return w, groups


def group_loss(model: FittedModel, groups, weighting="group_mean", targets=None) -> float:
    """Objective value of ``model`` over ``groups`` under the given weighting."""
    w, kept = group_weights(groups, weighting)
    if not kept:
        return 0.0
    y = np.concatenate([g.y for g in kept]) if targets is None else np.asarray(targets)
    X = np.vstack([g.X for g in kept])
    return float(w @ (y - predict(model, X)) ** 2)


def _arm(groups, weighting) -> Arm:
    w, kept = group_weights(groups, weighting)
    return Arm(np.vstack([g.X for g in kept]), np.concatenate([g.y for g in kept]), w)


def fit_t_learner(treated: Dataset, control: Dataset, spec: ModelSpec, seed: int = 0,
                  method: str = "t_learner") -> EffectModel:
    """Separate regressors on the treated and control rows (pooled mean loss)."""
    if len(treated) == 0:
        raise FuseError("treated arm empty")
    if len(control) == 0:
        raise FuseError("control arm empty")
    f1, f0 = fit_arms(spec, Arm(treated.X, treated.y), Arm(control.X, control.y), seed)
    return EffectModel(f1, f0, 1, method, spec)


def fit_grouped_t_learner(treated_groups, control_groups, spec: ModelSpec, seed: int = 0,
                          weighting="group_mean", method="t_learner") -> EffectModel:
    """T-learner whose arm losses are summed per-group means."""
    t_arm = [g for g in treated_groups if len(g)]
    c_arm = [g for g in control_groups if len(g)]
    if not t_arm:
        raise FuseError("treated arm empty")
    if not c_arm:
        raise FuseError("control arm empty")
    f1, f0 = fit_arms(spec, _arm(t_arm, weighting), _arm(c_arm, weighting), seed)
    return EffectModel(f1, f0, 1, method, spec)


def fit_stage1(os_treated: Dataset, rct_all: Dataset, spec: ModelSpec, seed: int = 0,
               weighting="group_mean") -> ConfoundingModel:
    if len(os_treated) == 0:
        raise FuseError("pseudo-experimental group empty: CIO needs OS treated units")
    if len(rct_all) == 0:
        raise FuseError("pseudo-control group empty: no RCT units")
    if (os_treated.d != 1).any():
        raise FuseError("pseudo-experimental units must be OS treated (d = 1)")
    if (rct_all.s != 1).any() or (rct_all.d != 0).any():
        raise FuseError("pseudo-control units must be RCT units (s = 1, d = 0)")
    parts = partition(rct_all)
    p0_arm = _arm([parts.rct_treated, parts.rct_control], weighting)
    p1, p0 = fit_arms(spec, Arm(os_treated.X, os_treated.y), p0_arm, seed)
    return ConfoundingModel(p1, p0)


def correct_outcomes(os: Dataset, cm: ConfoundingModel) -> Dataset:
    """Subtract the estimated bias from OS treated outcomes; others untouched."""
    if len(os) == 0:
        return os
    if cm.p1.p != os.p:
        raise FuseError(f"confounding model has p={cm.p1.p}, data has p={os.p}")
    mask = os.d == 1
    y = os.y.copy()
    if mask.any():
        y[mask] = y[mask] - cm.bias(os.X[mask])
    return os.replace(y=y)


def fit_stage2(os_corrected: Dataset, rct: Dataset, spec: ModelSpec, seed: int = 0,
               warm: ConfoundingModel | None = None, weighting="group_mean") -> EffectModel:
    po, pr = partition(os_corrected), partition(rct)
    treated = [g for g in (po.os_treated, pr.rct_treated) if len(g)]
    control = [g for g in (po.os_control, pr.rct_control) if len(g)]
    if not treated:
        raise FuseError("no treated units in OS or RCT")
    if not control:
        raise FuseError("no control units in OS or RCT")
    warm_pair = None
    if warm is not None:
        warm_pair = (warm_start_of(warm.p1), warm_start_of(warm.p0))
    pre = None
    if spec.kind == "net":
        pooled = merge(*control)
        pre = (pooled.X, pooled.y)
    f1, f0 = fit_arms(spec, _arm(treated, weighting), _arm(control, weighting), seed,
                      warm=warm_pair, pretrain_control=pre)
    return EffectModel(f1, f0, 1, "cio", spec)


def fit_cio(os: Dataset, rct: Dataset, spec: ModelSpec, seed: int = 0,
            invert_if_treated_missing: bool = True, weighting="group_mean") -> EffectModel:
    """Full two-stage procedure.

    When the OS has controls but no treated units, both datasets are
    inverted first and the result carries ``sign = -1`` so estimates refer
    to the original treatment.
    """
    if len(os) == 0:
        raise FuseError("OS data empty; fit an RCT-only learner instead")
    if not ((rct.t == 1).any() and (rct.t == 0).any()):
        raise FuseError("RCT must contain both treated and control units")
    sign = 1
    if not (os.t == 1).any():
        if not invert_if_treated_missing:
            raise FuseError("OS has no treated units and inversion is disabled")
        os, rct, sign = invert_treatments(os), invert_treatments(rct), -1
    cm = fit_stage1(os.treated(), rct, spec, derive_seed(seed, "stage1"), weighting)
    em = fit_stage2(correct_outcomes(os, cm), rct, spec, derive_seed(seed, "stage2"), cm, weighting)
    return EffectModel(em.f1, em.f0, sign, "cio", spec)


def rhc_pseudo_effects(t, y, e):
    """Horvitz-Thompson pseudo-effects ``(t - e) / (e (1 - e)) * y``."""
    return (np.asarray(t) - e) / (e * (1.0 - e)) * np.asarray(y)


def fit_rhc(os: Dataset, rct: Dataset, spec: ModelSpec, rct_propensity: float = 0.5,
            seed: int = 0) -> EffectModel:
    """OS T-learner plus a linear correction fitted to RCT pseudo-effects."""
    if not 0.0 < rct_propensity < 1.0:
        raise FuseError("rct_propensity must lie strictly between 0 and 1")
    if len(rct) == 0:
        raise FuseError("RCT data empty")
    parts = partition(os)
    if len(parts.os_treated) == 0 or len(parts.os_control) == 0:
        raise FuseError("RHC needs both OS arms")
    base = fit_t_learner(parts.os_treated, parts.os_control, spec, derive_seed(seed, "rhc_os"))
    psi = rhc_pseudo_effects(rct.t, rct.y, rct_propensity)
    coef, b = fit_ridge(rct.X, psi - estimate_effects(base, rct.X), 0.0)
    return EffectModel(base.f1, base.f0, 1, "rhc", spec, offset=(coef, b))
