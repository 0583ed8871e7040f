"""Reduction of a multi-rate network S to a single-rate network S'.

S' keeps the routing and class assignment of S but has a smaller exogenous
rate lambda' = s * lambda and one common service rate mu. Stability of S'
implies stability of S through a coupling that needs:

* rho[a][j] < Lambda'[a][j] / mu < rho[a][j] + eta[a][j] < 1,
* sum_a Lambda'[a][j] / mu < 1,
* uniformization rates Q1 > lambda + J max(mu_aj), Q2 > lambda' + J mu with
  lambda / Q1 = lambda' / Q2 (same arrival probability per epoch),
* mu / Q2 <= mu_aj / Q1 (every server of S' is slower per epoch).

The last two make the coupled simulation's dominance hold epoch by epoch.
Entries with Lambda[a][j] = 0 (class a never visits j) make the sandwich
read 0 < 0 < eta; they carry no load and are excluded from the strict checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import BadSlack, Infeasible
from .model import NetworkSpec, TrafficSolution, solve_traffic
from .simulate import Layout

MAX_HALVINGS = 60


@dataclass(frozen=True)
class ReducedNetwork:
    base: NetworkSpec
    lambda_prime: float
    mu: float
    eta_slack: np.ndarray
    q1: float
    q2: float
    reduced_spec: NetworkSpec

    @property
    def scale(self) -> float:
        return self.lambda_prime / self.base.lam

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "lambda_prime": self.lambda_prime,
            "mu": self.mu,
            "scale": self.scale,
            "eta_slack": np.asarray(self.eta_slack).tolist(),
            "q1": self.q1,
            "q2": self.q2,
            "reduced_spec": self.reduced_spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReducedNetwork":
        return cls(NetworkSpec.from_dict(data["base"]), float(data["lambda_prime"]),
                   float(data["mu"]), np.asarray(data["eta_slack"], dtype=float),
                   float(data["q1"]), float(data["q2"]),
                   NetworkSpec.from_dict(data["reduced_spec"]))


def _visited(solution: TrafficSolution) -> np.ndarray:
    return solution.arrival_rate > 0


def default_eta(solution: TrafficSolution) -> np.ndarray:
    """Half the spare capacity of each server, broadcast over classes."""
    spare = 1.0 - solution.server_load
    return np.broadcast_to(spare / 2.0, solution.load.shape).copy()


def build_reduction(spec: NetworkSpec, solution: TrafficSolution | None = None,
                    eta=None) -> ReducedNetwork:
    """Pick lambda' and mu satisfying every inequality of the reduction.

    Scans s = 1, 1/2, 1/4, ... and takes mu as the midpoint of
    (s * max(max_j sum_a Lambda_aj, max Lambda_aj / (rho_aj + eta_aj)),
     s * min mu_aj) once that interval is nonempty. Q1 is twice its lower
    bound and Q2 = s * Q1. Minima and maxima run over visited (class, server)
    pairs.
    """
    if solution is None:
        solution = solve_traffic(spec)
    rho = solution.load
    if np.any(solution.server_load >= 1):
        bad = np.flatnonzero(solution.server_load >= 1).tolist()
        raise Infeasible(f"traffic condition fails at servers {bad}; no reduction exists")
    eta = default_eta(solution) if eta is None else np.broadcast_to(
        np.asarray(eta, dtype=float), rho.shape).copy()
    visited = _visited(solution)
    if np.any(eta <= 0):
        raise BadSlack("eta entries must be > 0")
    if np.any(rho + eta >= 1):
        idx = [tuple(map(int, i)) for i in np.argwhere(rho + eta >= 1)]
        raise BadSlack(f"rho + eta >= 1 at {idx}")
    if not visited.any():
        raise Infeasible("no class visits any server")

    lam_mat = solution.arrival_rate
    mu_all = spec.service_rate
    min_mu = float(mu_all[visited].min())
    lower_unit = max(float(solution.server_arrival_rate.max()),
                     float((lam_mat[visited] / (rho[visited] + eta[visited])).max()))
    s = 1.0
    for _ in range(MAX_HALVINGS):
        lo, hi = s * lower_unit, s * min_mu
        if lo < hi:
            mu = 0.5 * (lo + hi)
            break
        s *= 0.5
    else:
        raise Infeasible(
            f"empty window for mu at every scale: max_j sum_a Lambda = "
            f"{solution.server_arrival_rate.max():.6g}, max Lambda/(rho+eta) = "
            f"{(lam_mat[visited] / (rho[visited] + eta[visited])).max():.6g}, "
            f"min mu = {min_mu:.6g}")

    lam_prime = s * spec.lam
    q1 = 2.0 * (spec.lam + spec.num_servers * spec.max_rate)
    q2 = s * q1
    reduced = NetworkSpec(spec.num_servers, spec.num_classes, lam_prime, spec.assign_prob,
                          np.full_like(mu_all, mu), spec.routing)
    return ReducedNetwork(spec, lam_prime, mu, eta, q1, q2, reduced)


def shared_layouts(red: ReducedNetwork) -> tuple:
    """Epoch layouts of S and S' sharing one arrival interval and slot width."""
    base = red.base
    lay_s = Layout.for_rates(base.lam, base.max_rate, base.num_servers, q=red.q1)
    lay_sp = Layout(red.q2, red.lambda_prime / red.q2, lay_s.slot_width)
    return lay_s, lay_sp


@dataclass
class ReductionCheck:
    name: str
    ok: bool
    margin: float
    message: str = ""


@dataclass
class ReductionReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def violations(self) -> list:
        return [c.message for c in self.checks if not c.ok]

    def to_dict(self) -> dict:
        return {"ok": self.ok,
                "checks": [{"name": c.name, "ok": c.ok, "margin": c.margin,
                            "message": c.message} for c in self.checks]}

    def ledger(self) -> str:
        lines = []
        for c in self.checks:
            mark = "ok  " if c.ok else "FAIL"
            lines.append(f"[{mark}] {c.name:<44} margin {c.margin:+.6g}"
                         + (f"  ({c.message})" if c.message else ""))
        return "\n".join(lines)


def _strict(name, margin, violated_msg):
    ok = bool(margin > 0)
    return ReductionCheck(name, ok, float(margin), "" if ok else violated_msg)


def verify_reduction(red: ReducedNetwork) -> ReductionReport:
    """Re-derive Lambda' from the reduced spec and check every inequality."""
    base, mu = red.base, red.mu
    sol = solve_traffic(base)
    sol_p = solve_traffic(red.reduced_spec)
    visited = _visited(sol)
    rho = sol.load[visited]
    eta = np.broadcast_to(np.asarray(red.eta_slack, dtype=float), sol.load.shape)[visited]
    rho_p = sol_p.arrival_rate[visited] / mu
    J = base.num_servers
    checks = []

    rates_p = red.reduced_spec.service_rate
    ok = bool(np.all(rates_p == mu))
    checks.append(ReductionCheck("reduced spec uses the single rate mu", ok, 0.0,
                                 "" if ok else "reduced spec service rates differ from mu"))
    same = (np.array_equal(base.assign_prob, red.reduced_spec.assign_prob)
            and np.array_equal(base.routing, red.reduced_spec.routing)
            and red.reduced_spec.lam == red.lambda_prime)
    checks.append(ReductionCheck("reduced spec keeps q, R and uses lambda'", same, 0.0,
                                 "" if same else "reduced spec differs from base beyond rates"))

    checks.append(_strict("rho < rho' (every visited class/server)",
                          (rho_p - rho).min(), "rho' > rho violated"))
    checks.append(_strict("rho' < rho + eta", (rho + eta - rho_p).min(),
                          "rho' < rho + eta violated"))
    checks.append(_strict("rho + eta < 1", (1 - rho - eta).min(), "rho + eta < 1 violated"))
    checks.append(_strict("sum_a rho'_aj < 1", (1 - sol_p.arrival_rate.sum(axis=0) / mu).min(),
                          "server load of S' reaches 1"))
    checks.append(_strict("Q1 > lambda + J max mu",
                          red.q1 - (base.lam + J * base.max_rate), "Q1 too small"))
    checks.append(_strict("Q2 > lambda' + J mu",
                          red.q2 - (red.lambda_prime + J * mu), "Q2 too small"))

    p1, p2 = base.lam / red.q1, red.lambda_prime / red.q2
    ok = p1 == p2
    checks.append(ReductionCheck("lambda/Q1 == lambda'/Q2", ok, p2 - p1,
                                 "" if ok else "arrival-probability match violated"))

    per_epoch = (base.service_rate[visited] / red.q1).min() - mu / red.q2
    ok = bool(per_epoch >= 0)
    checks.append(ReductionCheck("mu/Q2 <= mu_aj/Q1 (S' slower per epoch)", ok,
                                 float(per_epoch), "" if ok else "per-epoch slowness violated"))

    expected = red.scale * sol.arrival_rate
    denom = np.maximum(np.abs(expected), np.finfo(float).tiny)
    rel = float((np.abs(sol_p.arrival_rate - expected) / denom).max())
    ok = rel <= 1e-12
    checks.append(ReductionCheck("Lambda' == (lambda'/lambda) Lambda", ok, 1e-12 - rel,
                                 "" if ok else f"traffic linearity off by {rel:.3e}"))
    return ReductionReport(checks)


def reduction_json(red: ReducedNetwork) -> str:
    return json.dumps(red.to_dict(), indent=2)
