import numpy as np
import pytest

from qnet.errors import NotSingleRate, StateSpaceTooLarge
from qnet.exactkernel import (build_kernel, drift_average_table, drift_direct_table,
                              empty_prob_table, exact_k_drift, monotonicity_observation,
                              n_step_empty_prob, verify_lemma)
from qnet.lyapunov import brute_force_drift
from qnet.model import NetworkSpec, solve_traffic

from conftest import gallery

SINGLE_CLASS = ["mm1", "tandem", "feedback", "ring3"]


def test_mm1_cap2_matrix(mm1):
    chain = build_kernel(mm1, 2)
    assert chain.states == [(0,), (1,), (2,)]
    expected = [[2 / 3, 1 / 3, 0], [2 / 3, 0, 1 / 3], [0, 2 / 3, 1 / 3]]
    np.testing.assert_allclose(chain.dense(), expected, atol=1e-15)


def test_tandem_cap1(tandem):
    chain = build_kernel(tandem, 1)
    assert sorted(chain.states) == [(0, 0), (0, 1), (1, 0)]
    P = chain.dense()
    i00, i10, i01 = chain.idx([0, 0]), chain.idx([1, 0]), chain.idx([0, 1])
    assert P[i00, i10] == pytest.approx(1 / 7)      # E1
    assert P[i10, i01] == pytest.approx(3 / 7)      # E2
    assert P[i01, i00] == pytest.approx(3 / 7)      # E3
    assert P[i10, i10] == pytest.approx(4 / 7)      # blocked arrival + idle server 1


def test_zero_lambda_kernel(tandem):
    chain = build_kernel(tandem.with_lambda(0.0), 3)
    P = chain.dense()
    assert P[chain.idx([0, 0]), chain.idx([0, 0])] == 1.0
    # no transition ever increases the total
    totals = chain.counts().sum(axis=1)
    rows, cols = np.nonzero(P)
    assert (totals[cols] <= totals[rows]).all()


@pytest.mark.parametrize("name", SINGLE_CLASS)
@pytest.mark.parametrize("truncation", ["total", "box"])
def test_rows_stochastic_and_local(name, truncation):
    chain = build_kernel(gallery(name), 6, truncation=truncation)
    P = chain.dense()
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert (P >= 0).all()
    counts = chain.counts()
    rows, cols = np.nonzero(P)
    assert (np.abs(counts[rows] - counts[cols]).sum(axis=1) <= 2).all()


def test_mm1_spot_values(mm1):
    chain = build_kernel(mm1, 20)
    assert n_step_empty_prob(chain, [0], 0, 1) == pytest.approx(2 / 3, abs=1e-12)
    assert n_step_empty_prob(chain, [1], 0, 1) == pytest.approx(2 / 3, abs=1e-12)
    assert n_step_empty_prob(chain, [0], 0, 2) == pytest.approx(2 / 3, abs=1e-12)
    assert n_step_empty_prob(chain, [1], 0, 2) == pytest.approx(4 / 9, abs=1e-12)
    assert n_step_empty_prob(chain, [0], 0, 0) == 1.0
    assert n_step_empty_prob(chain, [3], 0, 0) == 0.0


def test_mm1_stationary_mean(mm1):
    chain = build_kernel(mm1, 60)
    pi = chain.distribution([0], 3000)
    assert pi @ chain.counts()[:, 0] == pytest.approx(1.0, abs=1e-6)


def test_empty_prob_table_matches_single_queries(tandem):
    chain = build_kernel(tandem, 5)
    table = empty_prob_table(chain, 1, 7)
    for x in ([0, 0], [2, 1], [0, 5]):
        assert table[7, chain.idx(x)] == pytest.approx(n_step_empty_prob(chain, x, 1, 7), abs=1e-14)


@pytest.mark.parametrize("name", SINGLE_CLASS)
def test_lemma_holds_under_box_truncation(name):
    spec = gallery(name)
    chain = build_kernel(spec, 6, truncation="box")
    for j in range(spec.num_servers):
        report = verify_lemma(chain, j, 50)
        assert report.ok, report.to_dict()


def test_total_truncation_artifact_is_at_the_cap(tandem):
    # blocked arrivals at the cap keep server 0 empty more often than from 0
    chain = build_kernel(tandem, 6, truncation="total")
    report = verify_lemma(chain, 0, 50)
    assert not report.ok
    assert sum(report.tightest_state) == 6
    assert report.to_dict()["tightest_state"] == [0, 6]


def test_lemma_report_sensitivity_fields(mm1):
    report = verify_lemma(build_kernel(mm1, 10), 0, 20)
    assert report.truncation_discrepancy >= report.interior_truncation_discrepancy >= 0
    no_sens = verify_lemma(build_kernel(mm1, 10), 0, 20, sensitivity=False)
    assert no_sens.truncation_discrepancy == 0.0


@pytest.mark.parametrize("name", SINGLE_CLASS)
def test_one_step_exact_drift_equals_brute_force(name):
    spec = gallery(name)
    sol = solve_traffic(spec)
    chain = build_kernel(spec, 8)
    for x in chain.states:
        if sum(x) > 7:
            continue
        for j in range(spec.num_servers):
            d = exact_k_drift(chain, sol.visit_counts, x, j, 1)
            assert d.direct == pytest.approx(brute_force_drift(spec, sol, np.array([x]), j), abs=1e-12)
            assert d.agrees(1e-12)


@pytest.mark.parametrize("truncation", ["total", "box"])
def test_boundary_term_accounts_for_discrepancy(truncation):
    spec = gallery("tandem")
    gamma = solve_traffic(spec).visit_counts
    chain = build_kernel(spec, 5, truncation=truncation)
    for x in ([0, 0], [2, 3], [5, 0]):
        for k in (1, 7, 30):
            d = exact_k_drift(chain, gamma, x, 1, k)
            assert d.identity - d.direct == pytest.approx(d.boundary, abs=1e-12)


def test_zero_state_one_step(tandem):
    chain = build_kernel(tandem, 4)
    sol = solve_traffic(tandem)
    d = exact_k_drift(chain, sol.visit_counts, [0, 0], 0, 1)
    assert d.direct == pytest.approx(sol.arrival_rate[:, 0].sum() / 7, abs=1e-15)


def test_mm1_long_horizon_drift(mm1):
    chain = build_kernel(mm1, 30)
    gamma = solve_traffic(mm1).visit_counts
    vals = {k: (exact_k_drift(chain, gamma, [5], 0, k).direct,
                exact_k_drift(chain, gamma, [0], 0, k).direct) for k in (10, 100)}
    for vx, v0 in vals.values():
        assert vx <= v0
    assert abs(vals[100][0]) < abs(vals[10][0])
    assert abs(vals[100][1]) < abs(vals[10][1])


def test_tables_agree_in_the_interior():
    spec = gallery("ring3")
    gamma = solve_traffic(spec).visit_counts
    chain = build_kernel(spec, 25)
    for k in (1, 10):
        inner = chain.interior(k)
        a = drift_direct_table(chain, gamma, 2, k)
        b = drift_average_table(chain, gamma, 2, k)
        assert np.abs(a - b)[inner].max() < 1e-12


def test_monotonicity_is_reported(tandem):
    chain = build_kernel(tandem, 8, truncation="box")
    obs = monotonicity_observation(chain, solve_traffic(tandem).visit_counts, 0, 5)
    assert obs["pairs"] > 0 and isinstance(obs["monotone"], bool)


def test_limits_and_errors(tandem):
    with pytest.raises(StateSpaceTooLarge):
        build_kernel(tandem, 100, limit=50)
    with pytest.raises(ValueError):
        build_kernel(gallery("multiclass2x3"), 3)
    with pytest.raises(ValueError):
        build_kernel(tandem, 0)
    with pytest.raises(ValueError):
        build_kernel(tandem, 3, truncation="sideways")
    with pytest.raises(KeyError):
        build_kernel(tandem, 3).idx([4, 0])


def test_env_bound(monkeypatch, tandem):
    monkeypatch.setenv("QNET_MAX_STATES", "10")
    with pytest.raises(StateSpaceTooLarge):
        build_kernel(tandem, 5)


def test_multi_rate_identity_refused():
    spec = NetworkSpec(2, 1, 1.0, [[1, 0]], [[2.0, 3.0]], [[0, 1], [0, 0]])
    chain = build_kernel(spec, 3)
    with pytest.raises(NotSingleRate):
        exact_k_drift(chain, solve_traffic(spec).visit_counts, [0, 0], 0, 2)
