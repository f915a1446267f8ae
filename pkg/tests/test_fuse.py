import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ciofuse import synth
from ciofuse.dataset import Dataset, invert_treatments, merge, partition
from ciofuse.fuse import (
    ConfoundingModel, EffectModel, FuseError, correct_outcomes, estimate_effects,
    fit_cio, fit_grouped_t_learner, fit_rhc, fit_stage1, fit_stage2, fit_t_learner,
    group_loss, rhc_pseudo_effects,
)
from ciofuse.models import FittedModel, ModelSpec, predict
from ciofuse.synth import SimulationConfig, gen_simulation

RIDGE = ModelSpec("ridge", lam=1e-8)


def lin(w, b):
    return FittedModel("ridge", len(np.atleast_1d(w)), (np.atleast_1d(np.asarray(w, float)), float(b)))


def const_bias(b, p=1):
    return ConfoundingModel(lin(np.zeros(p), b), lin(np.zeros(p), 0.0))


def ds(X, t, s, y):
    X = np.asarray(X, float)
    return Dataset(X.reshape(len(t), -1), t, s, y)


def linear_world(n, rng, bias=0.0, s=1, t=None):
    X = rng.normal(size=(n, 2))
    t = rng.integers(0, 2, n) if t is None else np.full(n, t)
    y = 1.0 + X[:, 1] + t * 3 * X[:, 0] + t * bias
    return ds(X, t, np.full(n, s), y)


def test_t_learner_recovers_linear_effect():
    d = linear_world(300, np.random.default_rng(0))
    em = fit_t_learner(d.treated(), d.control(), RIDGE)
    Xq = np.random.default_rng(1).normal(size=(50, 2))
    np.testing.assert_allclose(estimate_effects(em, Xq), 3 * Xq[:, 0], atol=1e-6)
    assert em.sign == 1


def test_t_learner_null_effect():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(2000, 2))
    t = rng.integers(0, 2, 2000)
    y = X @ [1.0, -2.0] + rng.normal(size=2000)
    d = ds(X, t, np.ones(2000), y)
    em = fit_t_learner(d.treated(), d.control(), ModelSpec("ridge"))
    assert np.abs(estimate_effects(em, X)).max() < 0.3


def test_t_learner_empty_arm():
    d = linear_world(10, np.random.default_rng(0), t=1)
    with pytest.raises(FuseError, match="control arm empty"):
        fit_t_learner(d.treated(), d.control(), RIDGE)
    with pytest.raises(FuseError, match="treated arm empty"):
        fit_t_learner(d.control(), d.treated(), RIDGE)


def _bias_oracle(b=4.0, n=400, seed=0):
    # no effect anywhere; OS treated outcomes carry an additive bias b
    rng = np.random.default_rng(seed)
    g = lambda X: 2 + X @ [1.5, -0.5]
    Xr, Xo = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    tr, to = rng.integers(0, 2, n), rng.integers(0, 2, n)
    rct = ds(Xr, tr, np.ones(n), g(Xr))
    os_ = ds(Xo, to, np.zeros(n), g(Xo) + b * to)
    return os_, rct


def test_stage1_recovers_additive_bias():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 2))
    g = lambda X: 2 + X @ [1.5, -0.5]
    rct = ds(X, rng.integers(0, 2, 300), np.ones(300), g(X))
    Xo = rng.normal(size=(300, 2))
    os_t = ds(Xo, np.ones(300), np.zeros(300), g(Xo) + 2.5)
    cm = fit_stage1(os_t, rct, RIDGE)
    np.testing.assert_allclose(cm.bias(rng.normal(size=(20, 2))), 2.5, atol=1e-6)


def test_stage1_rejects_wrong_pseudo_labels():
    os_, rct = _bias_oracle()
    with pytest.raises(FuseError, match="d = 1"):
        fit_stage1(os_, rct, RIDGE)
    with pytest.raises(FuseError, match="s = 1"):
        fit_stage1(os_.treated(), merge(rct, os_.control()), RIDGE)
    with pytest.raises(FuseError, match="empty"):
        fit_stage1(os_.take(np.zeros(len(os_), bool)), rct, RIDGE)


def _poly(X):
    return np.hstack([X, X**2, X**3])


@pytest.mark.parametrize("beta", [0.0, 1.0])
def test_stage1_large_sample_limit(beta):
    # p0 is fit on both RCT arms, so the bias estimate converges to
    # E[Y|x,T=1,S=0] - (mu0 + tau/2) = tau/2 + 5*beta*sum(x), not 10*beta*sum(x)
    split = gen_simulation(SimulationConfig(n_os=40000, n_rct=40000, n_test=10, beta=beta, seed=7))
    lift = lambda d: Dataset(_poly(d.X), d.t, d.s, d.y)
    cm = fit_stage1(lift(split.os.treated()), lift(split.rct), ModelSpec("ridge", lam=1e-6))
    Xq = np.random.default_rng(0).normal(size=(2000, 5)) * 0.5
    got = cm.bias(_poly(Xq))
    limit = synth.simulation_tau(Xq) / 2 + 5 * beta * Xq.sum(axis=1)
    assert np.sqrt(np.mean((got - limit) ** 2)) < 0.25
    c = synth.simulation_confounding(Xq, beta)
    assert np.sqrt(np.mean((got - c) ** 2)) > 1.0


def test_correct_outcomes_examples():
    d = ds([[0.0], [0.0], [0.0]], [1, 0, 1], [0, 0, 1], [10.0, 5.0, 8.0])
    out = correct_outcomes(d, const_bias(3.0))
    assert out.y.tolist() == [7.0, 5.0, 8.0]
    assert correct_outcomes(d, const_bias(0.0)) == d


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1),
                          st.floats(-50, 50, allow_nan=False)), min_size=1, max_size=30),
       st.floats(-5, 5, allow_nan=False))
def test_correction_locality(rows, slope):
    t, s, y = (np.array(c) for c in zip(*rows))
    X = np.arange(len(rows), dtype=float).reshape(-1, 1)
    d = ds(X, t, s, y.astype(float))
    cm = ConfoundingModel(lin([slope], 1.0), lin([0.0], 0.0))
    out = correct_outcomes(d, cm)
    hit = (t == 1) & (s == 0)
    np.testing.assert_array_equal(out.y[~hit], d.y[~hit])
    np.testing.assert_allclose(out.y[hit], d.y[hit] - (slope * X[hit, 0] + 1.0))
    np.testing.assert_array_equal(out.t, d.t)
    np.testing.assert_array_equal(out.X, d.X)


def test_correct_outcomes_dimension_check():
    d = ds(np.zeros((2, 2)), [1, 0], [0, 0], [1.0, 2.0])
    with pytest.raises(FuseError, match="p=1"):
        correct_outcomes(d, const_bias(1.0))


def test_stage2_removes_bias():
    os_, rct = _bias_oracle(b=6.0)
    cm = fit_stage1(os_.treated(), rct, RIDGE)
    em = fit_stage2(correct_outcomes(os_, cm), rct, RIDGE, warm=cm)
    Xq = np.random.default_rng(5).normal(size=(100, 2))
    np.testing.assert_allclose(estimate_effects(em, Xq), 0.0, atol=1e-5)
    naive = fit_stage2(os_, rct, RIDGE)
    assert np.abs(estimate_effects(naive, Xq)).mean() > 1.0


def test_stage2_without_os_controls():
    os_, rct = _bias_oracle(b=6.0)
    em = fit_cio(os_.treated(), rct, RIDGE)
    Xq = np.random.default_rng(5).normal(size=(100, 2))
    np.testing.assert_allclose(estimate_effects(em, Xq), 0.0, atol=1e-5)


def test_stage2_needs_both_arms():
    os_, rct = _bias_oracle()
    with pytest.raises(FuseError, match="no control"):
        fit_stage2(os_.treated(), rct.treated(), RIDGE)
    with pytest.raises(FuseError, match="no treated"):
        fit_stage2(os_.control(), rct.control(), RIDGE)


@pytest.mark.parametrize("spec", [RIDGE, ModelSpec("forest", n_trees=5, max_depth=4),
                                  ModelSpec("net", hidden_widths=(8,), epochs=20)])
def test_zero_bias_fixed_point(spec):
    os_, rct = _bias_oracle(b=0.0, n=120)
    po, pr = partition(os_), partition(rct)
    zero = const_bias(0.0, p=2)
    a = fit_stage2(correct_outcomes(os_, zero), rct, spec, seed=3, warm=None)
    b = fit_grouped_t_learner([po.os_treated, pr.rct_treated], [po.os_control, pr.rct_control],
                              spec, seed=3)
    if spec.kind == "net":
        # f0 pre-training distinguishes the CIO path for nets; compare two CIO runs
        b = fit_stage2(correct_outcomes(os_, zero), rct, spec, seed=3, warm=None)
    Xq = np.random.default_rng(0).normal(size=(30, 2))
    np.testing.assert_array_equal(estimate_effects(a, Xq), estimate_effects(b, Xq))


def test_stage2_objective_is_sum_of_group_means():
    g1 = ds(np.zeros((2, 1)), [1, 1], [0, 0], [1.0, 3.0])
    g2 = ds(np.zeros((4, 1)), [1, 1, 1, 1], [1, 1, 1, 1], [0.0, 0.0, 2.0, 2.0])
    f1 = lin([0.0], 1.0)
    # residuals: g1 -> [0, 2], g2 -> [-1, -1, 1, 1]
    assert group_loss(f1, [g1, g2]) == pytest.approx(4 / 2 + 4 / 4)
    assert group_loss(f1, [g1, g2], "pooled") == pytest.approx(8 / 6)
    # group-mean minimizer of a constant model is the mean of group means
    em = fit_stage2(g1, merge(g2, ds([[0.0]], [0], [1], [0.0])), ModelSpec("ridge", lam=0.0))
    assert predict(em.f1, [[0.0]])[0] == pytest.approx((2.0 + 1.0) / 2)


def test_cio_inversion_consistency():
    rng = np.random.default_rng(4)
    os_ = linear_world(300, rng, bias=2.0, s=0, t=0)
    rct = linear_world(200, rng, s=1)
    em = fit_cio(os_, rct, RIDGE, seed=9)
    assert em.sign == -1
    manual = fit_cio(invert_treatments(os_), invert_treatments(rct), RIDGE, seed=9)
    Xq = rng.normal(size=(40, 2))
    np.testing.assert_allclose(estimate_effects(em, Xq), -estimate_effects(manual, Xq))


def test_cio_complete_os_matches_composition():
    os_, rct = _bias_oracle(b=1.0)
    em = fit_cio(os_, rct, RIDGE, seed=2)
    from ciofuse._rng import derive_seed
    cm = fit_stage1(os_.treated(), rct, RIDGE, derive_seed(2, "stage1"))
    ref = fit_stage2(correct_outcomes(os_, cm), rct, RIDGE, derive_seed(2, "stage2"), cm)
    Xq = np.random.default_rng(0).normal(size=(10, 2))
    assert em.sign == 1
    np.testing.assert_array_equal(estimate_effects(em, Xq), estimate_effects(ref, Xq))


def test_cio_errors():
    os_, rct = _bias_oracle()
    with pytest.raises(FuseError, match="both treated and control"):
        fit_cio(os_, rct.treated(), RIDGE)
    with pytest.raises(FuseError, match="OS data empty"):
        fit_cio(os_.take(np.zeros(len(os_), bool)), rct, RIDGE)
    with pytest.raises(FuseError, match="inversion is disabled"):
        fit_cio(os_.control(), rct, RIDGE, invert_if_treated_missing=False)


def test_rhc_pseudo_effects_half():
    t = np.array([0, 1, 1, 0])
    y = np.array([1.0, 2.0, -3.0, 4.0])
    np.testing.assert_allclose(rhc_pseudo_effects(t, y, 0.5), 2 * (2 * t - 1) * y)


def test_rhc_correction_oracles():
    rng = np.random.default_rng(0)
    n = 20000
    os_ = linear_world(n, rng, s=0)
    rct = linear_world(n, rng, s=1)
    em = fit_rhc(os_, rct, RIDGE)
    coef, b = em.offset
    assert np.abs(coef).max() < 0.3 and abs(b) < 0.3
    biased = linear_world(n, rng, bias=2.0, s=0)
    coef, b = fit_rhc(biased, rct, RIDGE).offset
    assert b == pytest.approx(-2.0, abs=0.3)
    with pytest.raises(FuseError, match="both OS arms"):
        fit_rhc(biased.treated(), rct, RIDGE)
    with pytest.raises(FuseError, match="rct_propensity"):
        fit_rhc(biased, rct, RIDGE, rct_propensity=1.0)


def test_estimate_effects_examples():
    em = EffectModel(lin([2.0], 0.0), lin([1.0], 1.0))
    assert estimate_effects(em, [[3.0]])[0] == 2.0
    same = EffectModel(lin([1.5], 2.0), lin([1.5], 2.0))
    assert (estimate_effects(same, np.arange(5.0).reshape(-1, 1)) == 0).all()
    X = np.linspace(-2, 2, 7).reshape(-1, 1)
    flipped = EffectModel(em.f1, em.f0, sign=-1)
    np.testing.assert_array_equal(estimate_effects(flipped, X), -estimate_effects(em, X))
