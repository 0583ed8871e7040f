import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings

from qnet.errors import BadSlack, Infeasible
from qnet.model import NetworkSpec, solve_traffic
from qnet.reduction import (ReducedNetwork, build_reduction, reduction_json, shared_layouts,
                            verify_reduction)

from conftest import gallery, specs

FEASIBLE = ["mm1", "tandem", "feedback", "ring3", "multiclass2x3", "multirate2x3"]


def test_mm1_oracle(mm1):
    red = build_reduction(mm1, eta=0.1)
    # window (max(1, 1/0.6), 2) at s = 1
    assert red.scale == 1.0
    assert red.mu == pytest.approx((5 / 3 + 2) / 2, abs=1e-15)
    assert red.q1 == 2 * (1 + 2)
    assert red.q2 == red.q1
    rho_p = 1.0 / red.mu
    assert 0.5 < rho_p < 0.6
    assert verify_reduction(red).ok


@pytest.mark.parametrize("name", FEASIBLE)
def test_gallery_reductions_verify(name):
    red = build_reduction(gallery(name))
    report = verify_reduction(red)
    assert report.ok, report.ledger()
    assert red.reduced_spec.is_single_rate()


def test_infeasible_spec():
    spec = gallery("infeasible_reduction")
    assert solve_traffic(spec).server_load[0] == pytest.approx(0.99)
    with pytest.raises(Infeasible):
        build_reduction(spec)


def test_overloaded_spec_is_infeasible():
    with pytest.raises(Infeasible, match="traffic condition"):
        build_reduction(gallery("multiclass2x3_overload"))


def test_bad_slack(mm1):
    with pytest.raises(BadSlack):
        build_reduction(mm1, eta=0.0)
    with pytest.raises(BadSlack):
        build_reduction(mm1, eta=0.5)


def test_tampered_mu_breaks_rho_order(mm1):
    red = build_reduction(mm1, eta=0.1)
    bad = dataclasses.replace(red, mu=2.0, reduced_spec=red.reduced_spec.with_service_rate(2.0))
    assert "rho' > rho violated" in verify_reduction(bad).violations()


def test_tampered_q2_breaks_arrival_match(mm1):
    red = build_reduction(mm1, eta=0.1)
    bad = dataclasses.replace(red, q2=red.q2 * 1.01)
    assert "arrival-probability match violated" in verify_reduction(bad).violations()


def test_mu_above_every_rate_breaks_slowness(mm1):
    red = build_reduction(mm1, eta=0.1)
    bad = dataclasses.replace(red, mu=2.1, reduced_spec=red.reduced_spec.with_service_rate(2.1))
    msgs = verify_reduction(bad).violations()
    assert "per-epoch slowness violated" in msgs
    assert "rho' > rho violated" in msgs


def test_single_rate_spec_reduces_below_its_rate(tandem):
    red = build_reduction(tandem)
    assert red.mu < 3.0 * red.scale


def test_shared_layouts_match_arrival_probability():
    red = build_reduction(gallery("multirate2x3"))
    lay_s, lay_sp = shared_layouts(red)
    assert lay_s.arrival_prob == lay_sp.arrival_prob
    assert lay_s.slot_width == lay_sp.slot_width
    assert red.mu / red.q2 <= red.base.service_rate.min() / red.q1


def test_round_trip_and_determinism():
    spec = gallery("multirate2x3")
    a, b = build_reduction(spec), build_reduction(spec)
    assert (a.lambda_prime, a.mu, a.q1, a.q2) == (b.lambda_prime, b.mu, b.q1, b.q2)
    again = ReducedNetwork.from_dict(a.to_dict())
    assert again.mu == a.mu and verify_reduction(again).ok
    assert '"lambda_prime"' in reduction_json(a)


def test_unvisited_pairs_are_ignored():
    # class 1 only visits server 1; (class 1, server 0) carries no load
    spec = NetworkSpec(2, 2, 1.0, [[0.5, 0.0], [0.0, 0.5]], [[2.0, 3.0], [0.1, 4.0]],
                       [[0, 0.5], [0, 0]])
    red = build_reduction(spec)
    assert verify_reduction(red).ok
    assert red.mu < 2.0


@settings(max_examples=60, deadline=None)
@given(specs(max_servers=5, max_classes=3))
def test_random_feasible_reductions_verify(spec):
    sol = solve_traffic(spec)
    if sol.server_load.max() >= 1:
        with pytest.raises(Infeasible):
            build_reduction(spec, sol)
        return
    try:
        red = build_reduction(spec, sol)
    except Infeasible:
        # only when the sum of arrival rates reaches the smallest rate
        lam = sol.arrival_rate
        visited = lam > 0
        eta = (1 - sol.server_load) / 2
        lower = max(sol.server_arrival_rate.max(),
                    (lam[visited] / (sol.load[visited] + np.broadcast_to(eta, lam.shape)[visited])).max())
        assert lower >= spec.service_rate[visited].min()
        return
    report = verify_reduction(red)
    assert report.ok, report.ledger()
    assert red.lambda_prime / red.q2 == spec.lam / red.q1
