import numpy as np
import pytest

from catalystopt.problem import CompositeObjective, OracleError, QuadraticSum, Regularizer, shift
from catalystopt.solvers import (
    Budget,
    CertificateBelow,
    GradMapBelow,
    IncompatibleStopRule,
    IndexSampler,
    TargetValue,
    fg_init,
    fg_step,
    init_state,
    miso_certificate,
    miso_delta,
    miso_init,
    miso_lower_bound,
    miso_prox_step,
    run_solver,
    sag_init,
    sag_step,
    saga_init,
    saga_step,
    solve,
)

from conftest import make_logistic, make_quadratic, scipy_minimum


@pytest.fixture(scope="module")
def logistic():
    obj = make_logistic(n=50, p=5, seed=3, mu=0.05)
    f_star, x_star = scipy_minimum(obj)
    return obj, f_star, x_star


# --- sampler --------------------------------------------------------------


def test_sampler_split_invariance():
    a, b = IndexSampler(7, 11), IndexSampler(7, 11)
    seq = a.take(1000)
    mixed = np.concatenate([[b.next() for _ in range(13)], b.take(600), [b.next() for _ in range(387)]])
    np.testing.assert_array_equal(seq, mixed)
    assert seq.min() >= 0 and seq.max() < 7


def test_sampler_roughly_uniform():
    counts = np.bincount(IndexSampler(5, 0).take(50_000), minlength=5)
    assert np.all(np.abs(counts / 50_000 - 0.2) < 0.01)


# --- full gradient --------------------------------------------------------


def test_fg_one_step_on_half_square():
    obj = CompositeObjective(QuadraticSum(np.zeros((1, 1))))
    st = fg_init(obj, np.array([5.0]))
    fg_step(st, obj)
    assert st.x[0] == 0.0


def test_fg_shifted_quadratic_limit():
    c, y, kappa = 3.0, -1.0, 0.5
    G = shift(CompositeObjective(QuadraticSum(np.array([[c]]))), np.array([y]), kappa)
    x, _ = solve("fg", G, np.zeros(1), GradMapBelow(1e-13))
    assert x[0] == pytest.approx((c + kappa * y) / (1 + kappa), abs=1e-12)


def test_fg_lasso_fixed_point():
    obj = CompositeObjective(QuadraticSum(np.array([[2.0]])), Regularizer.lasso(1.0))
    x, _ = solve("fg", obj, np.array([-4.0]), GradMapBelow(1e-12))
    assert x[0] == pytest.approx(1.0, abs=1e-12)


def test_fg_contraction_on_quadratic():
    obj = make_quadratic(n=8, p=5, seed=1)
    x_star = obj.smooth.minimizer()
    rate = 1 - obj.smooth.mu / obj.smooth.L
    st = fg_init(obj, np.full(5, 10.0))
    for _ in range(50):
        before = np.linalg.norm(st.x - x_star)
        fg_step(st, obj)
        assert np.linalg.norm(st.x - x_star) <= rate * before + 1e-15


def test_fg_gradmap_stop_gives_accurate_point():
    obj = make_quadratic(n=10, p=5, seed=2)
    x, tr = solve("fg", obj, np.zeros(5), GradMapBelow(1e-9))
    assert tr.meta["converged"]
    assert np.linalg.norm(x - obj.smooth.minimizer()) <= 1e-8


def test_fg_certificate_bounds_suboptimality(logistic):
    obj, f_star, _ = logistic
    st = fg_init(obj, np.zeros(obj.p))
    for _ in range(30):
        fg_step(st, obj)
        assert obj.value(st.x) - f_star <= st.certificate + 1e-14


# --- SAGA / SAG -----------------------------------------------------------


@pytest.mark.parametrize("init,step_fn", [(saga_init, saga_step), (sag_init, sag_step)])
def test_single_component_matches_fg(init, step_fn):
    obj = CompositeObjective(QuadraticSum(np.array([[1.0, -2.0, 0.5]]), np.array([[1.0, 3.0, 2.0]])),
                             Regularizer.lasso(0.1))
    x0 = np.array([4.0, 4.0, 4.0])
    st = init(obj, x0, IndexSampler(1, 0), step=1 / obj.smooth.L)
    ref = fg_init(obj, x0)
    for _ in range(25):
        step_fn(st, obj)
        fg_step(ref, obj)
        np.testing.assert_allclose(st.x, ref.x, rtol=0, atol=1e-15)


def test_saga_estimator_unbiased(logistic):
    obj = logistic[0]
    rng = np.random.default_rng(0)
    st = saga_init(obj, rng.normal(size=obj.p), IndexSampler(obj.n, 0))
    x = rng.normal(size=obj.p)
    # exact expectation over the uniform index
    est = np.mean([obj.smooth.component_grad(i, x) - st.grad_table[i] + st.table_mean
                   for i in range(obj.n)], axis=0)
    np.testing.assert_allclose(est, obj.smooth.grad(x), atol=1e-13)
    # Monte-Carlo over the sampler stream
    idx = IndexSampler(obj.n, 5).take(40_000)
    G = np.stack([obj.smooth.component_grad(i, x) for i in range(obj.n)]) - st.grad_table + st.table_mean
    mc = G[idx].mean(axis=0)
    se = G.std(axis=0) / np.sqrt(idx.size)
    assert np.all(np.abs(mc - obj.smooth.grad(x)) <= 5 * se + 1e-12)


def test_sag_bias_vanishes_after_full_pass_on_frozen_iterate(logistic):
    obj = logistic[0]
    st = sag_init(obj, np.zeros(obj.p), IndexSampler(obj.n, 0))
    x = np.ones(obj.p)
    for i in range(obj.n):
        st.x = x.copy()
        st.table_mean += (obj.smooth.component_grad(i, x) - st.grad_table[i]) / obj.n
        st.grad_table[i] = obj.smooth.component_grad(i, x)
    np.testing.assert_allclose(st.table_mean, obj.smooth.grad(x), atol=1e-14)


@pytest.mark.parametrize("kind", ["sag", "saga", "miso"])
def test_tenfold_decrease_in_ten_epochs(logistic, kind):
    obj, f_star, _ = logistic
    x0 = np.zeros(obj.p)
    x, tr = solve(kind, obj, x0, Budget(10 * obj.n), rng_seed=1)
    assert obj.value(x) - f_star <= 0.1 * (obj.value(x0) - f_star)


@pytest.mark.parametrize("kind", ["sag", "saga", "miso"])
def test_incremental_means_consistent(kind):
    obj = make_logistic(n=40, p=4, seed=6, mu=0.01, l1=0.001)
    st, _ = init_state(kind, obj, np.zeros(obj.p), IndexSampler(obj.n, 2))
    run_solver(kind, st, obj, Budget(10_000), record=False)
    if kind == "miso":
        np.testing.assert_allclose(st.zbar, st.z.mean(axis=0), rtol=0, atol=1e-10)
    else:
        np.testing.assert_allclose(st.table_mean, st.grad_table.mean(axis=0), rtol=0, atol=1e-10)


@pytest.mark.parametrize("kind", ["sag", "saga", "miso"])
def test_fast_path_matches_reference(kind):
    obj = make_logistic(n=30, p=4, seed=8, mu=0.02, l1=0.01)
    xa, ta = solve(kind, obj, np.zeros(obj.p), Budget(5 * obj.n), rng_seed=4, fast=True)
    xb, tb = solve(kind, obj, np.zeros(obj.p), Budget(5 * obj.n), rng_seed=4, fast=False)
    np.testing.assert_allclose(xa, xb, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ta.objectives, tb.objectives, rtol=0, atol=1e-12)


# --- MISO-Prox ------------------------------------------------------------


def test_miso_delta_formula():
    assert miso_delta(10, 1.0, 0.5) == 1.0
    assert miso_delta(10, 2.0, 0.01) == pytest.approx(0.1 / (2 * 1.99))


def test_finito_case_keeps_x_equal_to_anchor_mean():
    obj = make_logistic(n=200, p=3, seed=0, mu=0.5)
    st = miso_init(obj, "zeros", seed=0)
    assert st.delta == 1.0
    for _ in range(300):
        i = st.sampler.next()
        x = st.x.copy()
        miso_prox_step(st, obj, i)
        np.testing.assert_array_equal(st.x, st.zbar)
        np.testing.assert_allclose(st.z[i], x - obj.smooth.component_grad(i, x) / st.mu, atol=1e-15)


def test_single_component_anchor_is_exact():
    c = np.array([1.0, -2.0])
    obj = CompositeObjective(QuadraticSum(c[None, :], 3.0))
    st = miso_init(obj, "one_pass", zbar0=np.array([7.0, 7.0]))
    np.testing.assert_allclose(st.x, c, atol=1e-15)
    assert miso_lower_bound(st, obj) == pytest.approx(0.0, abs=1e-14)  # F* = 0


def test_lower_bound_below_objective(logistic):
    obj = logistic[0]
    rng = np.random.default_rng(1)
    for mode in ("zeros", "one_pass"):
        st = miso_init(obj, mode, zbar0=rng.normal(size=obj.p), seed=0)
        for checkpoint in range(4):
            for x in rng.normal(size=(100, obj.p)) * 3:
                assert miso_lower_bound(st, obj, x) <= obj.value(x) + 1e-12
            run_solver("miso", st, obj, Budget(obj.n), record=False)


def test_certificate_dominates_suboptimality(logistic):
    obj, f_star, _ = logistic
    st = miso_init(obj, "zeros", seed=3)
    first = miso_certificate(st, obj)
    for _ in range(20):
        run_solver("miso", st, obj, Budget(obj.n), record=False)
        gap = obj.value(st.x) - f_star
        assert -1e-12 <= gap <= miso_certificate(st, obj) + 1e-12
    assert miso_certificate(st, obj) < 1e-3 * first


def test_certificate_stop_rule_postcondition(logistic):
    obj = logistic[0]
    x, tr = solve("miso", obj, np.zeros(obj.p), CertificateBelow(1e-8), rng_seed=0)
    assert tr.meta["converged"]
    assert tr.rows[-1].certificate <= 1e-8


def test_miso_errors():
    with pytest.raises(OracleError):
        miso_init(make_logistic(mu=0.0))
    with pytest.raises(OracleError):
        miso_init(make_quadratic(), "zeros")
    with pytest.raises(ValueError):
        miso_init(make_quadratic(), "one_pass")


def test_init_modes_auto():
    obj = make_logistic()
    _, cost = init_state("miso", obj, np.zeros(obj.p), IndexSampler(obj.n))
    assert cost == 0
    _, cost = init_state("miso", obj, np.ones(obj.p), IndexSampler(obj.n))
    assert cost == obj.n
    _, cost = init_state("miso", make_quadratic(n=4), np.zeros(5), IndexSampler(4))
    assert cost == 4


# --- driver ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["fg", "sag", "saga", "miso"])
def test_budget_zero_returns_start(kind):
    obj = make_logistic()
    x0 = np.arange(obj.p, dtype=float)
    x, tr = solve(kind, obj, x0, Budget(0))
    np.testing.assert_array_equal(x, x0)
    assert tr.rows[-1].cost == 0


@pytest.mark.parametrize("kind", ["fg", "sag", "saga", "miso"])
def test_deterministic_traces(kind):
    obj = make_logistic(l1=0.01)
    a = solve(kind, obj, np.zeros(obj.p), Budget(7 * obj.n if kind != "fg" else 7), rng_seed=9)[1]
    b = solve(kind, obj, np.zeros(obj.p), Budget(7 * obj.n if kind != "fg" else 7), rng_seed=9)[1]
    assert a.to_csv() == b.to_csv()


def test_cost_accounting():
    obj = make_logistic(n=20)
    _, tr = solve("fg", obj, np.zeros(obj.p), Budget(3))
    assert list(tr.costs) == [0, 20, 40, 60]
    _, tr = solve("saga", obj, np.zeros(obj.p), Budget(40))
    assert list(tr.costs) == [0, 20, 40, 60]


def test_incompatible_stop_rules():
    obj = make_logistic()
    for kind in ("fg", "sag", "saga"):
        with pytest.raises(IncompatibleStopRule):
            solve(kind, obj, np.zeros(obj.p), CertificateBelow(1e-3))
    for kind in ("sag", "saga", "miso"):
        with pytest.raises(IncompatibleStopRule):
            solve(kind, obj, np.zeros(obj.p), GradMapBelow(1e-3))


def test_exhausted_budget_returns_best_iterate_with_flag(logistic):
    obj, f_star, _ = logistic
    x, tr = solve("sag", obj, np.zeros(obj.p), TargetValue(f_star, 1e-300), max_iter=3 * obj.n)
    assert tr.meta["converged"] is False
    assert obj.value(x) == pytest.approx(min(tr.objectives), abs=0)


def test_target_value_stop(logistic):
    obj, f_star, _ = logistic
    x, tr = solve("saga", obj, np.zeros(obj.p), TargetValue(f_star, 1e-6))
    assert tr.meta["converged"]
    assert obj.value(x) - f_star <= 1e-6


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_iterate_aborts():
    obj = make_logistic()
    st, _ = init_state("saga", obj, np.zeros(obj.p), IndexSampler(obj.n))
    st.step = 1e300
    with pytest.raises((FloatingPointError, OracleError)):
        run_solver("saga", st, obj, Budget(50 * obj.n), fast=False)
