import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdiqkd.optimizer import (
    InfeasibleInitialError,
    OptimizerConfig,
    fd_gradient,
    is_feasible,
    neighborhood_jump,
    optimize,
    project,
    random_feasible,
    vectorize,
)
from mdiqkd.sources import ParamVector

from conftest import CONCAVE_CENTER, CONCAVE_WEIGHTS, concave_objective

X0 = np.array([0.1, 0.3, 0.4, 0.2, 0.2, 0.4, 0.1, 0.3, 0.4, 0.2, 0.2, 0.4])


def test_config_validation():
    for bad in ({"fd_step_mu": 0}, {"tol": 0}, {"backtrack": 1.0}, {"multistart": 0}, {"prescan": -1}):
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)


def test_constant_objective_has_zero_gradient():
    g = fd_gradient(X0, lambda X: np.full(len(np.atleast_2d(X)), 3.0))
    assert np.all(g == 0)


def test_quadratic_gradient_second_order():
    exact = -2 * CONCAVE_WEIGHTS * (X0 - CONCAVE_CENTER)
    errs = []
    for h in (1e-2, 5e-3):
        g = fd_gradient(X0, concave_objective, OptimizerConfig(fd_step_mu=h, fd_step_p=h))
        errs.append(np.max(np.abs(g - exact)))
    # central differences are exact on quadratics up to rounding
    assert errs[0] < 1e-9 and errs[1] < 1e-9


def test_cubic_gradient_error_shrinks_quadratically():
    c = CONCAVE_CENTER

    def cubic(X):
        X = np.atleast_2d(X)
        return -np.sum((X - c) ** 2 + (X - c) ** 3, axis=1)

    exact = -(2 * (X0 - c) + 3 * (X0 - c) ** 2)
    e1 = np.max(np.abs(fd_gradient(X0, cubic, OptimizerConfig(fd_step_mu=2e-3, fd_step_p=2e-3)) - exact))
    e2 = np.max(np.abs(fd_gradient(X0, cubic, OptimizerConfig(fd_step_mu=1e-3, fd_step_p=1e-3)) - exact))
    assert e2 / e1 == pytest.approx(0.25, rel=0.01)


def test_zeroing_rule_at_strict_maximum():
    g = fd_gradient(CONCAVE_CENTER, concave_objective)
    assert np.all(g == 0)


def test_zeroing_rule_on_a_spike():
    # both probes worse than the centre on coordinate 2 only
    def spike(X):
        X = np.atleast_2d(X)
        return -np.abs(X[:, 2] - X0[2]) + X[:, 5]

    g = fd_gradient(X0, spike)
    assert g[2] == 0 and g[5] == pytest.approx(1.0)


def test_no_jump_from_global_maximum():
    assert neighborhood_jump(CONCAVE_CENTER, concave_objective, 0.01) is None


def test_jump_escapes_a_plateau():
    # flat zero plateau with a higher terrace reachable in one diagonal step
    def terrace(X):
        X = np.atleast_2d(X)
        return np.where((X[:, 2] > X0[2] + 0.005) & (X[:, 8] > X0[8] + 0.005), 1.0, 0.0)

    assert np.all(fd_gradient(X0, terrace) == 0)
    x, v = neighborhood_jump(X0, terrace, 0.01)
    assert v == 1.0 and x[2] > X0[2] and x[8] > X0[8]
    assert is_feasible(x)


def test_jump_with_subsample_is_seeded():
    a = neighborhood_jump(X0, concave_objective, 0.01, samples=300, rng=np.random.default_rng(1))
    b = neighborhood_jump(X0, concave_objective, 0.01, samples=300, rng=np.random.default_rng(1))
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_jump_when_every_neighbour_is_worse():
    assert neighborhood_jump(X0, lambda X: -np.sum((np.atleast_2d(X) - X0) ** 2, axis=1), 0.01) is None


def test_concave_benchmark_recovered():
    res = optimize(X0, concave_objective, OptimizerConfig(multistart=1, seed=0))
    assert np.max(np.abs(res.best.to_array() - CONCAVE_CENTER)) < 1e-3


def test_trace_monotone_and_feasible():
    res = optimize(X0, concave_objective, OptimizerConfig(multistart=3, prescan=200, seed=5))
    for k in range(3):
        vals = [e.value for e in res.trace if e.start == k]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert all(is_feasible(np.array(e.params)) for e in res.trace)
    assert {e.move for e in res.trace} <= {"start", "gradient", "jump", "terminate"}
    assert res.value >= max(res.start_values)
    assert res.trace.evaluations > 0


def test_deterministic_for_a_seed():
    cfg = OptimizerConfig(multistart=3, prescan=100, seed=11)
    a, b = optimize(X0, concave_objective, cfg), optimize(X0, concave_objective, cfg)
    assert a.best == b.best and a.value == b.value
    assert [e.params for e in a.trace] == [e.params for e in b.trace]


def test_infeasible_initial_point():
    bad = X0.copy()
    bad[0] = bad[1] + 0.1
    with pytest.raises(InfeasibleInitialError):
        optimize(bad, concave_objective)
    with pytest.raises(ValueError):
        optimize(np.ones(5), concave_objective)


def test_vectorize_and_paramvector_start():
    res = optimize(ParamVector.from_array(X0), vectorize(lambda x: float(concave_objective(x)[0])),
                   OptimizerConfig(multistart=1, max_iter=5, full_neighborhood="never"))
    assert res.value >= concave_objective(X0)[0]


def test_random_feasible_points(rng):
    X = random_feasible(rng, 500)
    assert all(is_feasible(x) for x in X)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-2.0, 3.0), min_size=12, max_size=12))
def test_projection_is_feasible_and_idempotent(values):
    x = np.array(values)
    p = project(x)
    assert is_feasible(p, atol=1e-9)
    assert np.allclose(project(p), p, atol=1e-12)
