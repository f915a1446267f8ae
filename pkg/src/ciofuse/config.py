"""JSON run configuration.

Top-level keys (all optional except ``dataset``)::

    {
      "dataset": {"recipe": "simulation", "p": 5, "n_rct": 200, "n_os": 3000, "n_test": 1000},
      "methods": ["sf_os", "sf_rct", "si", "rhc", "cio", "cio_io"],
      "base_models": [{"kind": "ridge", "lambda": 1.0}],
      "p_r": 0.2,
      "beta": 1.0,
      "os_control_count": null,
      "n_runs": 10,
      "base_seed": 0,
      "rct_propensity": 0.5,
      "weighting": "group_mean",
      "workers": 1
    }

Recipe parameters:

* ``simulation``: ``p``, ``n_rct``, ``n_os``, ``n_test``
* ``star_surrogate``: ``n``, ``trial_fraction``
* ``star_csv``: ``path``, ``schema``, ``trial_fraction``
* ``nsw_surrogate``: ``n_treated``, ``n_control``, ``n_psid``, ``n_rct_draw``
* ``nsw_csv``: ``path``, ``schema``, ``n_rct_draw``

Unknown keys anywhere are errors.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .bench import METHODS, RECIPES, Experiment
from .fuse import WEIGHTINGS
from .models import ModelError, ModelSpec


class ConfigError(ValueError):
    pass


RECIPE_KEYS = {
    "simulation": {"p", "n_rct", "n_os", "n_test"},
    "star_surrogate": {"n", "trial_fraction"},
    "star_csv": {"path", "schema", "trial_fraction"},
    "nsw_surrogate": {"n_treated", "n_control", "n_psid", "n_rct_draw"},
    "nsw_csv": {"path", "schema", "n_rct_draw"},
}
TOP_KEYS = {
    "dataset", "methods", "base_models", "p_r", "beta", "os_control_count", "n_runs",
    "base_seed", "rct_propensity", "weighting", "workers",
}


@dataclass(frozen=True)
class RunConfig:
    experiment: Experiment
    n_runs: int
    workers: int
    digest: str  # sha256 of the raw config bytes


def _num(d, key, kind, default, check, msg):
    v = d.get(key, default)
    if v is None and default is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and int(v) != v):
        raise ConfigError(f"{key}: expected {kind.__name__}, got {v!r}")
    v = kind(v)
    if not check(v):
        raise ConfigError(f"{key}: {msg}, got {v!r}")
    return v


def parse_config(raw: bytes, seed_override: int | None = None) -> RunConfig:
    try:
        d = json.loads(raw)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")

    ds = d.get("dataset")
    if not isinstance(ds, dict):
        raise ConfigError("dataset: required object with a 'recipe' key")
    ds = dict(ds)
    recipe = ds.pop("recipe", None)
    if recipe not in RECIPES:
        raise ConfigError(f"dataset.recipe: expected one of {list(RECIPES)}, got {recipe!r}")
    bad = set(ds) - RECIPE_KEYS[recipe]
    if bad:
        raise ConfigError(f"dataset: unknown key(s) for {recipe}: {sorted(bad)}")
    if recipe.endswith("_csv"):
        for k in ("path", "schema"):
            if k not in ds:
                raise ConfigError(f"dataset.{k}: required for {recipe}")
        if not isinstance(ds["schema"], dict):
            raise ConfigError("dataset.schema: expected an object mapping column -> role")

    methods = d.get("methods", list(Experiment.methods))
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods: expected a nonempty list")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"methods: unknown tag(s) {bad}; valid: {list(METHODS)}")

    bm = d.get("base_models", [{"kind": "ridge"}])
    if not isinstance(bm, list) or not bm:
        raise ConfigError("base_models: expected a nonempty list")
    try:
        specs = tuple(ModelSpec.from_dict(m) for m in bm)
    except (ModelError, TypeError) as err:
        raise ConfigError(f"base_models: {err}") from None
    if len({s.tag for s in specs}) != len(specs):
        raise ConfigError("base_models: each kind may appear at most once")

    p_r = _num(d, "p_r", float, 0.2, lambda v: 0 < v <= 1, "must lie in (0, 1]")
    beta = _num(d, "beta", float, 1.0, lambda v: v >= 0, "must be >= 0")
    occ = _num(d, "os_control_count", int, None, lambda v: v >= 0, "must be >= 0")
    n_runs = _num(d, "n_runs", int, 10, lambda v: v >= 1, "must be >= 1")
    seed = _num(d, "base_seed", int, 0, lambda v: v >= 0, "must be >= 0")
    e = _num(d, "rct_propensity", float, 0.5, lambda v: 0 < v < 1, "must lie in (0, 1)")
    workers = _num(d, "workers", int, 1, lambda v: v >= 1, "must be >= 1")
    weighting = d.get("weighting", "group_mean")
    if weighting not in WEIGHTINGS:
        raise ConfigError(f"weighting: expected one of {list(WEIGHTINGS)}")
    if seed_override is not None:
        seed = seed_override

    exp = Experiment(
        recipe=recipe, recipe_params=ds, methods=tuple(methods), base_models=specs,
        p_r=p_r, beta=beta, os_control_count=occ, base_seed=seed, rct_propensity=e,
        weighting=weighting,
    )
    digest = hashlib.sha256(raw).hexdigest()
    return RunConfig(exp, n_runs, workers, digest)


def load_config(path, seed_override: int | None = None) -> RunConfig:
    try:
        raw = Path(path).read_bytes()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config(raw, seed_override)
