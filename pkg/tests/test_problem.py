import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from catalystopt.problem import (
    CompositeObjective,
    LabeledDataset,
    LogisticSum,
    OracleError,
    QuadraticSum,
    Regularizer,
    component_gradient,
    logistic_objective,
    logistic_value,
    prox,
    shift,
)

from conftest import make_logistic


def _rand_dataset(n=10, p=3, seed=0, sparse=False):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, p))
    b = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return LabeledDataset(sp.csr_matrix(A) if sparse else A, b)


def test_logistic_value_at_zero_is_ln2():
    ds = _rand_dataset()
    assert logistic_value(ds, np.zeros(3)) == pytest.approx(math.log(2), abs=1e-15)


def test_logistic_single_sample():
    ds = LabeledDataset(np.array([[1.0, 0.0]]), np.array([1.0]))
    for t in (0.0, 1.5, -3.0):
        assert logistic_value(ds, np.array([t, 0.0])) == pytest.approx(math.log1p(math.exp(-t)), rel=1e-14)


@pytest.mark.parametrize("sparse", [False, True])
def test_logistic_value_matches_resummation(sparse):
    ds = _rand_dataset(sparse=sparse, seed=3)
    x = np.random.default_rng(1).normal(size=3)
    A = ds.features.toarray() if sparse else ds.features
    ref = sum(math.log(1 + math.exp(-ds.labels[i] * float(A[i] @ x))) for i in range(ds.n)) / ds.n
    ref += 0.5 * 0.3 * float(x @ x)
    assert logistic_value(ds, x, 0.3) == pytest.approx(ref, abs=1e-12)


def test_logistic_value_dimension_error():
    with pytest.raises(OracleError):
        logistic_value(_rand_dataset(), np.zeros(4))


def test_nan_input_rejected():
    obj = logistic_objective(_rand_dataset(), 0.1)
    with pytest.raises(OracleError):
        obj.value(np.array([np.nan, 0.0, 0.0]))
    with pytest.raises(OracleError):
        prox(Regularizer(1.0), np.array([np.inf]), 1.0)


def test_component_gradient_at_zero():
    ds = _rand_dataset()
    obj = logistic_objective(ds, 0.2)
    for i in range(ds.n):
        np.testing.assert_allclose(component_gradient(obj, i, np.zeros(3)),
                                   -ds.labels[i] * ds.features[i] / 2, atol=1e-15)


def test_component_gradient_index_error():
    obj = logistic_objective(_rand_dataset(), 0.2)
    with pytest.raises(OracleError):
        component_gradient(obj, 10, np.zeros(3))
    with pytest.raises(OracleError):
        component_gradient(obj, -1, np.zeros(3))


@pytest.mark.parametrize("sparse", [False, True])
def test_component_gradient_finite_differences(sparse):
    obj = logistic_objective(_rand_dataset(sparse=sparse, seed=5), 0.1)
    rng = np.random.default_rng(2)
    h = 1e-5
    for _ in range(5):
        x = rng.normal(size=3)
        i = int(rng.integers(obj.n))
        g = component_gradient(obj, i, x)
        fd = np.array([(obj.smooth.component_value(i, x + h * e) - obj.smooth.component_value(i, x - h * e)) / (2 * h)
                       for e in np.eye(3)])
        assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1e-8)


def test_quadratic_component_gradient_zero_at_center():
    q = QuadraticSum(np.array([[1.0, 2.0], [3.0, -1.0]]))
    np.testing.assert_array_equal(q.component_grad(1, np.array([3.0, -1.0])), 0.0)


def test_full_gradient_is_mean_of_components():
    obj = make_logistic(n=200, p=6, seed=4)
    x = np.random.default_rng(0).normal(size=6)
    mean = np.mean([obj.smooth.component_grad(i, x) for i in range(obj.n)], axis=0)
    np.testing.assert_allclose(obj.smooth.grad(x), mean, atol=1e-12)


def test_descent_lemma_with_declared_L():
    obj = make_logistic(n=40, p=4, seed=1, noise=0.0)
    rng = np.random.default_rng(7)
    L = obj.smooth.L
    for _ in range(200):
        x, d = rng.normal(size=4) * 3, rng.normal(size=4)
        lhs = obj.smooth.value(x + d)
        rhs = obj.smooth.value(x) + obj.smooth.grad(x) @ d + 0.5 * L * d @ d
        assert lhs <= rhs + 1e-12


def test_logistic_L_unnormalized():
    ds = LabeledDataset(np.array([[3.0, 4.0], [1.0, 0.0]]), np.array([1.0, -1.0]))
    assert LogisticSum(ds, 0.5).L == pytest.approx(0.25 * 25 + 0.5)


def test_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 2)), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 2)), np.array([1.0]))


# --- prox -----------------------------------------------------------------


def test_prox_zero_identity():
    np.testing.assert_array_equal(prox(Regularizer.zero(), np.array([3.0, -1.0]), 7.0), [3.0, -1.0])


def test_prox_l1_soft_threshold():
    np.testing.assert_array_equal(prox(Regularizer.lasso(1.0), np.array([2.0, -0.5]), 1.0), [1.0, 0.0])


def test_prox_squared_l2():
    np.testing.assert_allclose(prox(Regularizer.ridge(2.0), np.array([3.0]), 0.5), [1.5])


def test_prox_elastic_net_matches_grid_search():
    reg, z, step = Regularizer.elastic_net(1.0, 2.0), 4.0, 0.5
    grid = np.linspace(-1, 5, 600001)
    obj = step * (reg.l1 * np.abs(grid) + 0.5 * reg.l2 * grid**2) + 0.5 * (grid - z) ** 2
    oracle = grid[np.argmin(obj)]
    assert oracle == pytest.approx(1.75, abs=1e-5)
    assert prox(reg, np.array([z]), step)[0] == pytest.approx(1.75, abs=1e-15)


def test_prox_rejects_bad_step():
    with pytest.raises(OracleError):
        prox(Regularizer.lasso(1.0), np.zeros(2), 0.0)


def test_regularizer_kinds():
    assert Regularizer().kind == "zero"
    assert Regularizer.lasso(1).kind == "l1"
    assert Regularizer.ridge(1).kind == "squared_l2"
    assert Regularizer.elastic_net(1, 1).kind == "elastic_net"
    with pytest.raises(ValueError):
        Regularizer(l1=-1)


regs = st.builds(Regularizer, st.floats(0, 3), st.floats(0, 3))
vecs = st.lists(st.floats(-50, 50), min_size=3, max_size=3).map(np.array)


@settings(max_examples=200, deadline=None)
@given(regs, vecs, vecs, st.floats(1e-3, 10))
def test_prox_nonexpansive(reg, z1, z2, step):
    d = np.linalg.norm(prox(reg, z1, step) - prox(reg, z2, step))
    assert d <= np.linalg.norm(z1 - z2) * (1 + 1e-12) + 1e-12


@settings(max_examples=200, deadline=None)
@given(regs, vecs, st.floats(1e-3, 10))
def test_prox_optimality(reg, z, step):
    p = prox(reg, z, step)
    # 0 in step * (l1 * sign(p) + l2 * p) + (p - z), with sign(0) in [-1, 1]
    r = z - p - step * reg.l2 * p
    t = step * reg.l1
    nz = p != 0
    np.testing.assert_allclose(r[nz], t * np.sign(p[nz]), atol=1e-9)
    assert np.all(np.abs(r[~nz]) <= t + 1e-9)


# --- shift ----------------------------------------------------------------


def test_shift_value_at_center_equals_base():
    obj = make_logistic(seed=2)
    y = np.random.default_rng(0).normal(size=obj.p)
    g = shift(obj, y, 0.7)
    assert g.value(y) == obj.value(y)
    assert g.smooth.mu == pytest.approx(obj.smooth.mu + 0.7)
    assert g.smooth.L == pytest.approx(obj.smooth.L + 0.7)
    assert g.base is obj and g.kappa == 0.7


def test_shift_gradient_finite_differences():
    obj = make_logistic(seed=2)
    rng = np.random.default_rng(1)
    y, x = rng.normal(size=obj.p), rng.normal(size=obj.p)
    g = shift(obj, y, 0.7)
    h = 1e-5
    fd = np.array([(g.smooth.value(x + h * e) - g.smooth.value(x - h * e)) / (2 * h) for e in np.eye(obj.p)])
    np.testing.assert_allclose(g.smooth.grad(x), obj.smooth.grad(x) + 0.7 * (x - y), atol=1e-15)
    np.testing.assert_allclose(g.smooth.grad(x), fd, rtol=1e-6, atol=1e-9)


def test_shift_minimizer_closed_form():
    base = CompositeObjective(QuadraticSum(np.zeros((1, 1))))
    g = shift(base, np.array([2.0]), 1.0)
    xs = np.linspace(-1, 3, 4001)
    vals = [g.value(np.array([x])) for x in xs]
    assert xs[int(np.argmin(vals))] == pytest.approx(1.0, abs=1e-3)
    assert g.smooth.grad(np.array([1.0]))[0] == 0.0


def test_shift_rejects_nonpositive_kappa():
    obj = make_logistic()
    with pytest.raises(OracleError):
        shift(obj, np.zeros(obj.p), 0.0)
    with pytest.raises(OracleError):
        shift(obj, np.zeros(obj.p), -1.0)


def test_composite_constants_credit_l2():
    obj = CompositeObjective(QuadraticSum(np.zeros((2, 2)), 1.0), Regularizer.elastic_net(0.1, 0.3))
    assert obj.mu == pytest.approx(1.3)
    assert obj.L == pytest.approx(1.3)
