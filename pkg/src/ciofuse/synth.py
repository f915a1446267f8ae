"""Data-generating processes and fusion-split constructors.

Three outcome recipes are provided:

* ``simulation``: fully synthetic Gaussian covariates with a latent
  confounder ``U`` that only enters OS outcomes.
* ``star``: outcomes simulated on 7 class-size-study covariates; the OS
  sample is biased by keeping only the lower half of treated outcomes.
* ``nsw``: outcomes simulated on 6 job-training covariates; the OS sample is
  the upper half of observational controls and has no treated arm.

Real STAR/NSW covariates can be read with :func:`ingest_covariates_csv`.
The ``*_surrogate_*`` generators produce stand-in covariates with the same
column layout so the pipeline runs offline. Their output is synthetic and
says nothing about the real studies.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import rng_for
from .dataset import DataError, Dataset, invert_treatments, merge

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionSplit:
    os: Dataset
    rct: Dataset
    test: Dataset


@dataclass(frozen=True)
class SimulationConfig:
    p: int = 5
    n_rct: int = 200
    n_os: int = 3000
    n_test: int = 1000
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.p < 1:
            raise DataError("p must be >= 1")
        for name in ("n_rct", "n_os", "n_test"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be positive")


# --- simulation ---------------------------------------------------------

def simulation_tau(X):
    return 1.0 + X.sum(axis=1) + (X**2).sum(axis=1)


def simulation_baseline(X):
    return 1.0 + 2.0 * (X**3).sum(axis=1) + X.sum(axis=1)


def simulation_confounding(X, beta):
    """Closed-form OS confounding function after integrating out ``U``."""
    return 10.0 * beta * X.sum(axis=1)


def simulation_mean(X, t, s, beta):
    """E[Y | X, T=t, S=s] for the simulation recipe (U marginalized)."""
    t = np.asarray(t)
    s = np.asarray(s)
    shift = 5.0 * (1 - s) * beta * X.sum(axis=1) * (2 * t - 1)
    return simulation_baseline(X) + t * simulation_tau(X) + shift


def _sim_block(n, p, s, beta, rng):
    X = rng.standard_normal((n, p))
    if s == 1:
        t = (rng.random(n) < 0.5).astype(np.int8)
    else:
        prop = 1.0 / (1.0 + np.exp(-X.sum(axis=1)))
        t = (rng.random(n) < prop).astype(np.int8)
    if s == 0:
        U = rng.normal(X.sum(axis=1) * beta * (2 * t - 1), 1.0)
    else:
        U = np.zeros(n)
    eps = rng.standard_normal((n, 2))
    mu0 = simulation_baseline(X) + 5.0 * (1 - s) * U
    y0 = mu0 + eps[:, 0]
    y1 = mu0 + simulation_tau(X) + eps[:, 1]
    y = np.where(t == 1, y1, y0)
    return Dataset(X, t, np.full(n, s), y, y0, y1)


def gen_simulation(cfg: SimulationConfig) -> FusionSplit:
    return FusionSplit(
        os=_sim_block(cfg.n_os, cfg.p, 0, cfg.beta, rng_for(cfg.seed, "simulation", "os")),
        rct=_sim_block(cfg.n_rct, cfg.p, 1, cfg.beta, rng_for(cfg.seed, "simulation", "rct")),
        test=_sim_block(cfg.n_test, cfg.p, 1, cfg.beta, rng_for(cfg.seed, "simulation", "test")),
    )


# --- semi-synthetic outcome recipes ---------------------------------------

def _finite(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if not np.isfinite(X).all():
        raise DataError("non-finite covariates")
    return X


def star_tau(X):
    sx = X.sum(axis=1)
    return sx + np.sqrt(np.abs(sx))


def star_baseline(X):
    return 2.0 * X.sum(axis=1) + (X * X).sum(axis=1)


def star_outcomes(X, rng=None):
    """Potential outcomes with N(0, 1) noise per arm; returns ``(y0, y1, tau)``."""
    X = _finite(X)
    rng = rng if rng is not None else np.random.default_rng(0)
    eps = rng.standard_normal((X.shape[0], 2))
    base, tau = star_baseline(X), star_tau(X)
    return base + eps[:, 0], base + tau + eps[:, 1], tau


def nsw_tau(X):
    return (X * X).sum(axis=1)


def nsw_baseline(X):
    return 2.0 * np.exp(X).sum(axis=1)


def nsw_outcomes(X, rng=None):
    """Potential outcomes with U(-1, 1) noise per arm; returns ``(y0, y1, tau)``."""
    X = _finite(X)
    rng = rng if rng is not None else np.random.default_rng(0)
    eps = rng.uniform(-1.0, 1.0, size=(X.shape[0], 2))
    base, tau = nsw_baseline(X), nsw_tau(X)
    return base + eps[:, 0], base + tau + eps[:, 1], tau


def standardize_z(X):
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - X.mean(axis=0)) / sd


def _with_outcomes(X, t, s, u, outcomes, rng):
    y0, y1, _ = outcomes(X, rng)
    y = np.where(np.asarray(t) == 1, y1, y0)
    return Dataset(X, t, s, y, y0, y1, u=u)


def star_pool(X_raw, t, u, seed) -> Dataset:
    """Standardize STAR covariates and attach simulated potential outcomes."""
    X = standardize(_finite(X_raw))
    return _with_outcomes(X, t, np.ones(len(t)), u, star_outcomes, rng_for(seed, "star", "outcomes"))


def nsw_pools(X_rand, t_rand, X_psid, seed) -> tuple[Dataset, Dataset]:
    """Standardize NSW covariates over both pools and simulate outcomes.

    Returns ``(randomized, psid_controls)``.
    """
    X_rand, X_psid = _finite(X_rand), _finite(X_psid)
    Z = standardize(np.vstack([X_rand, X_psid]))
    n = X_rand.shape[0]
    pool = _with_outcomes(
        Z, np.concatenate([t_rand, np.zeros(len(X_psid), dtype=np.int8)]),
        np.concatenate([np.ones(n), np.zeros(len(X_psid))]), None,
        nsw_outcomes, rng_for(seed, "nsw", "outcomes"),
    )
    return pool.take(np.arange(n)), pool.take(np.arange(n, len(pool)))


# --- fusion splits --------------------------------------------------------

def _lowest_half(idx, y):
    """Indices of the floor(k/2) smallest outcomes; ties keep original order."""
    order = np.argsort(y[idx], kind="stable")
    return np.sort(idx[order[: len(idx) // 2]])


def _highest_half(idx, y):
    order = np.argsort(-y[idx], kind="stable")
    return np.sort(idx[order[: len(idx) // 2]])


def construct_star_fusion(units: Dataset, trial_fraction: float = 0.5, seed: int = 0) -> FusionSplit:
    """RCT from a random fraction of ``u=1``; OS biased toward low treated outcomes."""
    if not units.has_u:
        raise DataError("every unit needs a u-flag (0 or 1)")
    if not 0.0 <= trial_fraction <= 1.0:
        raise DataError("trial_fraction must lie in [0, 1]")
    rng = rng_for(seed, "star", "trial")
    u1 = np.flatnonzero(units.u == 1)
    n_trial = int(math.floor(trial_fraction * len(u1)))
    trial = np.sort(rng.choice(u1, size=n_trial, replace=False)) if n_trial else np.zeros(0, np.intp)
    in_trial = np.zeros(len(units), dtype=bool)
    in_trial[trial] = True

    keep = []
    for stratum in (1, 0):
        free = (units.u == stratum) & ~in_trial
        keep.append(np.flatnonzero(free & (units.t == 0)))
        keep.append(_lowest_half(np.flatnonzero(free & (units.t == 1)), units.y))
    os_idx = np.sort(np.concatenate(keep))

    def with_s(ds, s):
        return ds.replace(s=np.full(len(ds), s))

    return FusionSplit(
        os=with_s(units.take(os_idx), 0),
        rct=with_s(units.take(trial), 1),
        test=with_s(units.take(~in_trial), 1),
    )


def construct_nsw_fusion(randomized: Dataset, psid_controls: Dataset, n_rct_draw: int = 100,
                         seed: int = 0, max_retries: int = 100) -> FusionSplit:
    """RCT drawn from the randomized pool, OS = upper half of observational controls.

    All three parts are returned with inverted treatments, so the OS holds
    only (relabelled) treated units.
    """
    if n_rct_draw > len(randomized):
        raise DataError(f"n_rct_draw={n_rct_draw} exceeds the {len(randomized)} randomized units")
    if (psid_controls.t != 0).any():
        raise DataError("observational pool must contain controls only")
    if not ((randomized.t == 1).any() and (randomized.t == 0).any()):
        raise DataError("randomized pool needs both arms")
    for attempt in range(max_retries):
        rng = rng_for(seed, "nsw", "draw", attempt)
        draw = np.sort(rng.choice(len(randomized), size=n_rct_draw, replace=False))
        arms = randomized.t[draw]
        if (arms == 1).any() and (arms == 0).any():
            break
        log.info("nsw RCT draw %d was single-armed; retrying", attempt)
    else:
        raise DataError(f"no two-armed RCT draw in {max_retries} attempts")
    in_rct = np.zeros(len(randomized), dtype=bool)
    in_rct[draw] = True
    os_idx = _highest_half(np.arange(len(psid_controls)), psid_controls.y)
    rest = np.ones(len(psid_controls), dtype=bool)
    rest[os_idx] = False

    rct = randomized.take(draw)
    os_ = psid_controls.take(os_idx)
    test = merge(randomized.take(~in_rct), psid_controls.take(rest))
    test = test.replace(s=np.ones(len(test)))
    return FusionSplit(
        os=invert_treatments(os_.replace(s=np.zeros(len(os_)))),
        rct=invert_treatments(rct.replace(s=np.ones(len(rct)))),
        test=invert_treatments(test),
    )


# --- surrogate covariates -----------------------------------------------

STAR_COLUMNS = ("gender", "race", "birth_month", "birthday", "birth_year", "free_lunch", "teacher_id")
NSW_COLUMNS = ("age", "education", "black", "hispanic", "married", "nodegree")


def star_surrogate_covariates(n: int = 4218, seed: int = 0):
    """Synthetic stand-in for the 7 STAR covariates plus ``t`` and ``u``.

    The u-flag is correlated with race and free-lunch status. Treatment is
    Bernoulli with the study's overall small-class share.
    """
    rng = rng_for(seed, "star_surrogate")
    race = (rng.random(n) < 0.33).astype(float)
    lunch = (rng.random(n) < 0.35 + 0.3 * race).astype(float)
    X = np.column_stack([
        (rng.random(n) < 0.5).astype(float),
        race,
        rng.integers(1, 13, n).astype(float),
        rng.integers(1, 32, n).astype(float),
        rng.integers(1979, 1982, n).astype(float),
        lunch,
        rng.integers(1, 340, n).astype(float),
    ])
    logit = 0.1 + 1.2 * race + 0.8 * lunch
    u = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int8)
    t = (rng.random(n) < 1774 / 4139).astype(np.int8)
    return X, t, u


def nsw_surrogate_covariates(n_treated: int = 297, n_control: int = 425, n_psid: int = 2490,
                             seed: int = 0):
    """Synthetic stand-ins for the NSW randomized pool and PSID controls.

    Returns ``(X_rand, t_rand, X_psid)``. The two pools are drawn from
    different covariate distributions, as in the real comparison groups.
    """
    rng = rng_for(seed, "nsw_surrogate")

    def draw(n, age, educ, black, hisp, married, nodeg):
        eth = rng.random(n)
        return np.column_stack([
            np.clip(rng.normal(age[0], age[1], n).round(), 17, 55),
            np.clip(rng.normal(educ[0], educ[1], n).round(), 3, 17),
            (eth < black).astype(float),
            ((eth >= black) & (eth < black + hisp)).astype(float),
            (rng.random(n) < married).astype(float),
            (rng.random(n) < nodeg).astype(float),
        ])

    n_rand = n_treated + n_control
    X_rand = draw(n_rand, (24.5, 6.6), (10.2, 1.7), 0.80, 0.11, 0.16, 0.78)
    t_rand = np.zeros(n_rand, dtype=np.int8)
    t_rand[rng.permutation(n_rand)[:n_treated]] = 1
    X_psid = draw(n_psid, (34.9, 10.4), (12.1, 3.1), 0.25, 0.03, 0.87, 0.31)
    return X_rand, t_rand, X_psid


# --- CSV ingestion ----------------------------------------------------------

ROLES = ("covariate", "treatment", "source", "u_flag", "outcome", "ignore")
_MISSING = {"", "na", "nan", "null", "none", "."}


@dataclass(frozen=True)
class IngestResult:
    X: np.ndarray
    covariate_names: tuple[str, ...]
    t: np.ndarray | None
    s: np.ndarray | None
    u: np.ndarray | None
    y: np.ndarray | None
    dropped_count: int


def ingest_covariates_csv(path, schema: dict[str, str]) -> IngestResult:
    """Read a header-led CSV, keeping rows with every declared field present."""
    bad_roles = {c: r for c, r in schema.items() if r not in ROLES}
    if bad_roles:
        raise DataError(f"unknown role(s) in schema: {bad_roles}")
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        unknown = [c for c in schema if c not in header]
        if unknown:
            raise DataError(f"schema column(s) not in file: {unknown}")
        used = [c for c, r in schema.items() if r != "ignore"]
        pos = {c: header.index(c) for c in used}
        covs = [c for c in used if schema[c] == "covariate"]
        single = {}
        for role in ("treatment", "source", "u_flag", "outcome"):
            cols = [c for c in used if schema[c] == role]
            if len(cols) > 1:
                raise DataError(f"role {role!r} assigned to several columns: {cols}")
            single[role] = cols[0] if cols else None

        rows, dropped = [], 0
        for lineno, rec in enumerate(reader, start=2):
            vals = {c: (rec[pos[c]].strip() if pos[c] < len(rec) else "") for c in used}
            if any(v.lower() in _MISSING for v in vals.values()):
                dropped += 1
                continue
            parsed = {}
            for c, v in vals.items():
                try:
                    f = float(v)
                except ValueError:
                    raise DataError(f"line {lineno}: column {c!r} is not numeric: {v!r}") from None
                if not math.isfinite(f):
                    raise DataError(f"line {lineno}: column {c!r} is not finite")
                if schema[c] in ("treatment", "source", "u_flag") and f not in (0.0, 1.0):
                    raise DataError(f"line {lineno}: column {c!r} must be 0 or 1, got {v!r}")
                parsed[c] = f
            rows.append(parsed)
    if not rows:
        raise DataError("zero surviving rows")
    if dropped:
        log.info("%s: dropped %d row(s) with missing fields", path, dropped)

    def column(role, dtype):
        c = single[role]
        return None if c is None else np.array([r[c] for r in rows], dtype=dtype)

    X = np.array([[r[c] for c in covs] for r in rows], dtype=float).reshape(len(rows), len(covs))
    return IngestResult(
        X=X, covariate_names=tuple(covs),
        t=column("treatment", np.int8), s=column("source", np.int8),
        u=column("u_flag", np.int8), y=column("outcome", float),
        dropped_count=dropped,
    )


def standardize(X):
    X = np.asarray(X, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (X - lo) / span
