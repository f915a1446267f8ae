"""PEHE evaluation, repeated runs and parameter sweeps."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import stats

from ._rng import derive_seed, rng_for
from .dataset import Dataset, DataError, invert_treatments, merge, partition
from .fuse import (
    FuseError, estimate_effects, fit_cio, fit_rhc, fit_t_learner,
)
from .models import ModelSpec
from . import synth

log = logging.getLogger(__name__)

METHODS = ("sf_os", "sf_rct", "si", "rhc", "cio", "cio_io", "cio_io_inverse")
RECIPES = ("simulation", "star_csv", "star_surrogate", "nsw_csv", "nsw_surrogate")
AXES = ("p_r", "beta", "os_control_count")


class BenchError(RuntimeError):
    pass


def pehe(tau_true, tau_hat) -> float:
    """Root mean squared error between true and estimated individual effects."""
    a = np.asarray(tau_true, dtype=float).reshape(-1)
    b = np.asarray(tau_hat, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.size == 0:
        raise ValueError("pehe needs at least one entry")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def welch_t(a, b) -> float:
    """Two-sided p-value of Welch's unequal-variance t-test."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("welch_t needs at least two samples per group")
    diff = a.mean() - b.mean()
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if diff == 0:
        return 1.0
    if se2 == 0:
        return 0.0
    t = diff / math.sqrt(se2)
    dof = se2**2 / ((va**2 / (a.size - 1) if va else 0.0) + (vb**2 / (b.size - 1) if vb else 0.0))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), dof)))


@dataclass(frozen=True)
class Experiment:
    recipe: str = "simulation"
    recipe_params: dict = field(default_factory=dict)
    methods: tuple[str, ...] = ("sf_os", "sf_rct", "si", "rhc", "cio", "cio_io")
    base_models: tuple[ModelSpec, ...] = (ModelSpec("ridge"),)
    p_r: float = 0.2
    beta: float = 1.0
    os_control_count: int | None = None
    base_seed: int = 0
    rct_propensity: float = 0.5
    weighting: str = "group_mean"

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise BenchError(f"unknown recipe {self.recipe!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise BenchError(f"unknown method(s) {bad}")
        if not 0.0 < self.p_r <= 1.0:
            raise BenchError("p_r must lie in (0, 1]")
        if not self.beta >= 0:
            raise BenchError("beta must be >= 0")
        if self.os_control_count is not None and self.os_control_count < 0:
            raise BenchError("os_control_count must be >= 0")


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    method: str
    base_model: str
    p_r: float
    beta: float
    os_control_count: int | None
    run_index: int
    seed: int
    sqrt_pehe: float


@dataclass(frozen=True)
class Summary:
    dataset: str
    method: str
    base_model: str
    p_r: float
    beta: float
    os_control_count: int | None
    mean: float
    std: float
    n_runs: int
    values: tuple[float, ...] = field(repr=False, default=())


# --- splits ---------------------------------------------------------------

@lru_cache(maxsize=8)
def _ingest(path, schema_items):
    return synth.ingest_covariates_csv(path, dict(schema_items))


def make_split(exp: Experiment, seed: int) -> synth.FusionSplit:
    rp = dict(exp.recipe_params)
    if exp.recipe == "simulation":
        cfg = synth.SimulationConfig(beta=exp.beta, seed=seed, **rp)
        return synth.gen_simulation(cfg)
    if exp.recipe.startswith("star"):
        frac = rp.pop("trial_fraction", 0.5)
        if exp.recipe == "star_surrogate":
            X, t, u = synth.star_surrogate_covariates(seed=derive_seed(seed, "cov"), **rp)
        else:
            ing = _ingest(rp["path"], tuple(sorted(rp["schema"].items())))
            if ing.t is None or ing.u is None:
                raise DataError("star_csv schema needs treatment and u_flag columns")
            X, t, u = ing.X, ing.t, ing.u
        pool = synth.star_pool(X, t, u, derive_seed(seed, "outcomes"))
        return synth.construct_star_fusion(pool, frac, derive_seed(seed, "split"))
    n_draw = rp.pop("n_rct_draw", 100)
    if exp.recipe == "nsw_surrogate":
        X_rand, t_rand, X_psid = synth.nsw_surrogate_covariates(seed=derive_seed(seed, "cov"), **rp)
    else:
        ing = _ingest(rp["path"], tuple(sorted(rp["schema"].items())))
        if ing.t is None or ing.s is None:
            raise DataError("nsw_csv schema needs treatment and source columns")
        rand = ing.s == 1
        X_rand, t_rand, X_psid = ing.X[rand], ing.t[rand], ing.X[~rand]
        if (ing.t[~rand] != 0).any():
            raise DataError("nsw_csv: observational rows (source=0) must all be controls")
    randomized, psid = synth.nsw_pools(X_rand, t_rand, X_psid, derive_seed(seed, "outcomes"))
    return synth.construct_nsw_fusion(randomized, psid, n_draw, derive_seed(seed, "split"))


def subsample_rct(rct: Dataset, p_r: float, seed: int, max_retries: int = 100) -> Dataset:
    """Random fraction ``p_r`` of the RCT that contains both arms."""
    if p_r >= 1.0:
        return rct
    k = max(2, int(round(p_r * len(rct))))
    for attempt in range(max_retries):
        rng = rng_for(seed, "rct_subsample", attempt)
        idx = np.sort(rng.choice(len(rct), size=min(k, len(rct)), replace=False))
        arms = rct.t[idx]
        if (arms == 1).any() and (arms == 0).any():
            if attempt:
                log.info("RCT subsample needed %d retries", attempt)
            return rct.take(idx)
    raise BenchError(f"RCT subsample of size {k} had a single arm after {max_retries} retries")


def subsample_os_controls(os: Dataset, count: int, seed: int) -> Dataset:
    ctrl = np.flatnonzero(os.t == 0)
    if count >= len(ctrl):
        return os
    rng = rng_for(seed, "os_control_subsample", count)
    keep_ctrl = rng.choice(ctrl, size=count, replace=False)
    keep = np.sort(np.concatenate([np.flatnonzero(os.t == 1), keep_ctrl]))
    return os.take(keep)


def _fit_method(method, os, rct, spec, seed, exp, native_complete=True):
    """Fitted effect model, or None when the method cannot run on this split.

    ``native_complete`` tells whether the recipe's OS had both arms before any
    control subsampling; CIO proper is only reported for such recipes.
    """
    parts = partition(os)
    has_t, has_c = len(parts.os_treated) > 0, len(parts.os_control) > 0
    if method == "sf_os":
        if not (has_t and has_c):
            return None
        return fit_t_learner(parts.os_treated, parts.os_control, spec, seed, method)
    if method == "sf_rct":
        return fit_t_learner(rct.treated(), rct.control(), spec, seed, method)
    if method == "si":
        both = merge(os, rct)
        return fit_t_learner(both.treated(), both.control(), spec, seed, method)
    if method == "rhc":
        if not (has_t and has_c):
            return None
        return fit_rhc(os, rct, spec, exp.rct_propensity, seed)
    if method == "cio":
        # with all OS controls subsampled away this coincides with cio_io
        if not native_complete or not has_t:
            return None
        return fit_cio(os, rct, spec, seed, False, exp.weighting)
    if method == "cio_io":
        if not has_t:
            return None
        return fit_cio(parts.os_treated, rct, spec, seed, False, exp.weighting)
    if method == "cio_io_inverse":
        if not has_c:
            return None
        return fit_cio(parts.os_control, rct, spec, seed, True, exp.weighting)
    raise BenchError(f"unknown method {method!r}")


def run_seed(exp: Experiment, run_index: int) -> int:
    return derive_seed(exp.base_seed, "run", run_index)


def run_experiment(exp: Experiment, run_index: int) -> list[ResultRow]:
    seed = run_seed(exp, run_index)
    split = make_split(exp, derive_seed(seed, "data"))
    if not split.test.has_truth:
        raise BenchError("test split carries no ground-truth effects")
    rct = subsample_rct(split.rct, exp.p_r, seed)
    os = split.os
    native_complete = bool((os.t == 1).any() and (os.t == 0).any())
    if exp.os_control_count is not None:
        os = subsample_os_controls(os, exp.os_control_count, seed)
    rows = []
    for spec in exp.base_models:
        for method in exp.methods:
            mseed = derive_seed(seed, method, spec.tag)
            try:
                em = _fit_method(method, os, rct, spec, mseed, exp, native_complete)
            except FuseError as err:
                log.warning("run %d: %s/%s failed: %s", run_index, method, spec.tag, err)
                em = None
            if em is None:
                log.info("run %d: %s skipped for %s (method cannot run on this split)",
                         run_index, method, exp.recipe)
                continue
            tau_hat = estimate_effects(em, split.test.X)
            rows.append(ResultRow(
                exp.recipe, method, spec.tag, exp.p_r, exp.beta, exp.os_control_count,
                run_index, seed, pehe(split.test.tau, tau_hat),
            ))
    return rows


def _run_star(args):
    return run_experiment(*args)


def run_all(exp: Experiment, n_runs: int, workers: int = 1) -> list[ResultRow]:
    """Rows of ``n_runs`` independent runs in canonical order."""
    if n_runs < 1:
        raise BenchError("n_runs must be >= 1")
    jobs = [(exp, i) for i in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_run_star, jobs))
    else:
        batches = [run_experiment(*j) for j in jobs]
    return canonical([r for b in batches for r in b], exp)


def canonical(rows, exp: Experiment) -> list[ResultRow]:
    m_order = {m: i for i, m in enumerate(exp.methods)}
    b_order = {s.tag: i for i, s in enumerate(exp.base_models)}
    return sorted(rows, key=lambda r: (
        b_order.get(r.base_model, 99), m_order.get(r.method, 99),
        r.p_r, r.beta, -1 if r.os_control_count is None else r.os_control_count, r.run_index,
    ))


def summarize(rows: list[ResultRow]) -> list[Summary]:
    """Mean and population std of sqrt-PEHE per (method, model, axes), first-seen order."""
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        key = (r.dataset, r.method, r.base_model, r.p_r, r.beta, r.os_control_count)
        groups.setdefault(key, []).append(r)
    out = []
    for key, rs in groups.items():
        vals = np.array(sorted(r.sqrt_pehe for r in rs))
        out.append(Summary(*key, float(vals.mean()), float(vals.std()), len(vals), tuple(vals)))
    return out


def repeat(exp: Experiment, n_runs: int, workers: int = 1) -> list[Summary]:
    return summarize(run_all(exp, n_runs, workers))


def sweep(exp: Experiment, axis: str, values, n_runs: int, workers: int = 1):
    """Summaries at each axis value, as ``[(value, [Summary, ...]), ...]``."""
    if axis not in AXES:
        raise BenchError(f"unknown sweep axis {axis!r}")
    values = list(values)
    if not values:
        raise BenchError("sweep needs at least one axis value")
    if axis == "beta" and exp.recipe != "simulation":
        raise BenchError("beta axis requires simulation recipe")
    if axis == "os_control_count" and exp.recipe.startswith("nsw"):
        raise BenchError("os_control_count axis requires OS controls; the nsw recipes have none")
    table = []
    for v in values:
        if axis == "os_control_count":
            v = int(v)
        try:
            e = replace(exp, **{axis: v})
        except BenchError as err:
            raise BenchError(f"{axis}={v}: {err}") from None
        table.append((v, repeat(e, n_runs, workers)))
    return table
