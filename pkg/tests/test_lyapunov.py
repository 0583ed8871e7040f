import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qnet.errors import DimensionMismatch, NotSingleRate
from qnet.lyapunov import (analytic_drift, brute_force_drift, drift_profile, lyapunov_value,
                           lyapunov_values, multi_step_drift, policy_invariance_gap,
                           uub_estimate)
from qnet.model import NetworkSpec, solve_traffic

from conftest import gallery, random_spec, specs


def states_up_to(A, J, total):
    for flat in itertools.product(range(total + 1), repeat=A * J):
        if sum(flat) <= total:
            yield np.array(flat).reshape(A, J)


def test_lyapunov_value_tandem(tandem):
    gamma = solve_traffic(tandem).visit_counts
    # one customer at server 0 still owes one visit to each server
    assert lyapunov_value([[1, 0]], gamma, 0) == 1.0
    assert lyapunov_value([[1, 0]], gamma, 1) == 1.0
    assert lyapunov_value([[0, 1]], gamma, 0) == 0.0
    np.testing.assert_allclose(lyapunov_values([[2, 3]], gamma), [2.0, 5.0])


def test_lyapunov_value_shape_checks():
    with pytest.raises(DimensionMismatch):
        lyapunov_value([[1, 0, 0]], np.eye(2), 0)
    with pytest.raises(ValueError):
        lyapunov_value([[-1, 0]], np.eye(2), 0)


def test_mm1_drift_values(mm1):
    sol = solve_traffic(mm1)
    assert analytic_drift(mm1, sol, [[0]], 0) == pytest.approx(1 / 3, abs=1e-15)
    assert analytic_drift(mm1, sol, [[4]], 0) == pytest.approx(-1 / 3, abs=1e-15)
    assert brute_force_drift(mm1, sol, [[4]], 0) == pytest.approx(-1 / 3, abs=1e-15)


def test_tandem_drift_zero_state(tandem):
    sol = solve_traffic(tandem)
    for j in range(2):
        assert brute_force_drift(tandem, sol, [[0, 0]], j) == pytest.approx(1 / 7, abs=1e-15)


@pytest.mark.parametrize("seed", range(8))
def test_analytic_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, int(rng.integers(1, 4)), int(rng.integers(1, 3)), single_rate=True)
    sol = solve_traffic(spec)
    for x in states_up_to(spec.num_classes, spec.num_servers, 3):
        for j in range(spec.num_servers):
            a = analytic_drift(spec, sol, x, j)
            b = brute_force_drift(spec, sol, x, j)
            assert abs(a - b) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(specs(max_servers=4, max_classes=3, single_rate=True), st.data())
def test_drift_depends_only_on_emptiness(spec, data):
    sol = solve_traffic(spec)
    j = data.draw(st.integers(0, spec.num_servers - 1))
    x = np.array(data.draw(st.lists(st.integers(0, 4), min_size=spec.num_classes * spec.num_servers,
                                    max_size=spec.num_classes * spec.num_servers)))
    x = x.reshape(spec.num_classes, spec.num_servers)
    y = x.copy()
    y[:, j] = 0
    d_empty = brute_force_drift(spec, sol, y, j)
    d = brute_force_drift(spec, sol, x, j)
    if x[:, j].sum() == 0:
        assert d == pytest.approx(d_empty, abs=1e-12)
    else:
        y[0, j] = 1
        assert d == pytest.approx(brute_force_drift(spec, sol, y, j), abs=1e-12)
        assert d < d_empty


@settings(max_examples=30, deadline=None)
@given(specs(max_servers=4, max_classes=3, single_rate=True))
def test_single_rate_drift_is_policy_free(spec):
    sol = solve_traffic(spec)
    x = np.ones((spec.num_classes, spec.num_servers), dtype=int)
    for j in range(spec.num_servers):
        assert policy_invariance_gap(spec, sol, x, j) <= 1e-12


def test_multi_rate_drift_depends_on_in_service_class():
    spec = gallery("multirate2x3")
    sol = solve_traffic(spec)
    assert policy_invariance_gap(spec, sol, np.ones((2, 3), dtype=int), 0) > 1e-3
    with pytest.raises(NotSingleRate):
        analytic_drift(spec, sol, np.zeros((2, 3)), 0)


def test_brute_force_in_service_forms():
    spec = gallery("multirate2x3")
    sol = solve_traffic(spec)
    x = np.ones((2, 3), dtype=int)
    by_map = brute_force_drift(spec, sol, x, 1, {0: 1, 1: 1, 2: 1})
    by_fn = brute_force_drift(spec, sol, x, 1, lambda x, m: 1)
    assert by_map == by_fn
    with pytest.raises(ValueError):
        brute_force_drift(spec, sol, np.array([[1, 1, 1], [0, 0, 0]]), 1, {0: 1, 1: 1, 2: 1})


def test_drift_profile(tandem):
    prof = drift_profile(tandem, solve_traffic(tandem))
    np.testing.assert_allclose(prof.eta, [1 / 7, 1 / 7])
    np.testing.assert_allclose(prof.epsilon, [2 / 7, 2 / 7])
    assert prof.negative_drift.all()
    assert prof.to_dict()["cstar"] is None


def test_multi_step_drift_matches_one_step(tandem):
    sol = solve_traffic(tandem)
    x = np.array([[2, 0]])
    est = multi_step_drift(tandem, "fifo", x, 1, 4000, seed=3)
    for j in range(2):
        exact = analytic_drift(tandem, sol, x, j)
        assert abs(est.estimate[j] - exact) <= 4 * est.stderr[j]


def test_multi_step_drift_is_deterministic(tandem):
    a = multi_step_drift(tandem, "lifo", [[1, 1]], 5, 50, seed=9)
    b = multi_step_drift(tandem, "lifo", [[1, 1]], 5, 50, seed=9)
    np.testing.assert_array_equal(a.estimate, b.estimate)


def test_uub_table(tandem):
    states = [np.array([[3, 1]]), np.zeros((1, 2), dtype=int)]
    table = uub_estimate(tandem, "fifo", states, [1, 20], 300, seed=1)
    assert (table.states[0] == 0).all()
    assert table.all_dominated
    assert table.value(0, 0, 1).analytic == pytest.approx(1 / 7)
    assert len(table.cstar()) == 2
    csv_text = table.to_csv()
    assert csv_text.splitlines()[0] == "server,state_id,k,estimate,stderr,analytic"
    with pytest.raises(ValueError):
        uub_estimate(tandem, "fifo", states[:1], [1], 10, seed=1)


@settings(max_examples=40, deadline=None)
@given(specs(max_servers=4, max_classes=3, single_rate=True))
def test_epsilon_positive_iff_load_below_one(spec):
    sol = solve_traffic(spec)
    prof = drift_profile(spec, sol)
    np.testing.assert_array_equal(prof.epsilon > 0, sol.server_load < 1)


@settings(max_examples=40, deadline=None)
@given(specs(max_servers=4, max_classes=2), st.data())
def test_lyapunov_is_additive(spec, data):
    gamma = solve_traffic(spec).visit_counts
    n = spec.num_classes * spec.num_servers
    draw = lambda: np.array(data.draw(st.lists(st.integers(0, 9), min_size=n, max_size=n))
                            ).reshape(spec.num_classes, spec.num_servers)
    x, y = draw(), draw()
    for j in range(spec.num_servers):
        assert lyapunov_value(x + y, gamma, j) == pytest.approx(
            lyapunov_value(x, gamma, j) + lyapunov_value(y, gamma, j), rel=1e-12, abs=1e-12)
    assert (lyapunov_values(x, gamma) == 0).all() == (x.sum() == 0)
