"""Open multiclass Markovian networks with class-independent routing.

Holds the network parameterization, its validation, and the two linear
systems attached to it: per-class traffic equations and the visit-count
matrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from .errors import InvalidNetwork, SingularSystem

PROB_TOL = 1e-12


@dataclass(frozen=True)
class NetworkSpec:
    """Parameters of an open multiclass network.

    ``assign_prob[a][j]`` is the probability that an exogenous arrival joins
    server ``j`` as class ``a``; ``service_rate[a][j]`` is the exponential
    service rate of class ``a`` at ``j``; ``routing[j][k]`` is shared by all
    classes and its row deficit is the exit probability.
    """

    num_servers: int
    num_classes: int
    lam: float
    assign_prob: np.ndarray
    service_rate: np.ndarray
    routing: np.ndarray

    def __post_init__(self):
        for name in ("assign_prob", "service_rate", "routing"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "num_servers", int(self.num_servers))
        object.__setattr__(self, "num_classes", int(self.num_classes))

    @property
    def exogenous_rate(self) -> np.ndarray:
        """lambda_{a,j} = lambda * q_{a,j}."""
        return self.lam * self.assign_prob

    @property
    def max_rate(self) -> float:
        return float(self.service_rate.max())

    def is_single_rate(self) -> bool:
        mu = self.service_rate
        return bool(np.all(mu == mu.flat[0]))

    @property
    def single_rate(self) -> float:
        return float(self.service_rate.flat[0])

    def uniformization_rate(self) -> float:
        """Q = lambda + J * max mu, the default Poisson clock rate."""
        return self.lam + self.num_servers * self.max_rate

    def with_lambda(self, lam: float) -> "NetworkSpec":
        return NetworkSpec(self.num_servers, self.num_classes, lam,
                           self.assign_prob, self.service_rate, self.routing)

    def with_service_rate(self, mu) -> "NetworkSpec":
        rates = np.broadcast_to(np.asarray(mu, dtype=float),
                                (self.num_classes, self.num_servers))
        return NetworkSpec(self.num_servers, self.num_classes, self.lam,
                           self.assign_prob, rates, self.routing)

    def to_dict(self) -> dict:
        return {
            "num_servers": self.num_servers,
            "num_classes": self.num_classes,
            "lambda": self.lam,
            "assign_prob": self.assign_prob.tolist(),
            "service_rate": self.service_rate.tolist(),
            "routing": self.routing.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        try:
            return cls(
                num_servers=data["num_servers"],
                num_classes=data["num_classes"],
                lam=data["lambda"],
                assign_prob=data["assign_prob"],
                service_rate=data["service_rate"],
                routing=data["routing"],
            )
        except KeyError as exc:
            raise ValueError(f"network spec is missing key {exc.args[0]!r}") from None


def load_spec(path) -> NetworkSpec:
    with open(path) as fh:
        return NetworkSpec.from_dict(json.load(fh))


def dump_spec(spec: NetworkSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


@dataclass
class Check:
    name: str
    ok: bool
    message: str = ""
    indices: list = field(default_factory=list)


@dataclass
class ValidationReport:
    checks: list
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.ok]

    def messages(self) -> list:
        return [c.message for c in self.failures()]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "ok": c.ok, "message": c.message,
                 "indices": [list(map(int, i)) if isinstance(i, tuple) else int(i)
                             for i in c.indices]}
                for c in self.checks
            ],
            "warnings": list(self.warnings),
        }


def _shape_checks(spec: NetworkSpec) -> list:
    J, A = spec.num_servers, spec.num_classes
    checks = [Check("positive dimensions", J >= 1 and A >= 1,
                    "" if J >= 1 and A >= 1 else "num_servers and num_classes must be >= 1")]
    expected = {"assign_prob": (A, J), "service_rate": (A, J), "routing": (J, J)}
    for name, shape in expected.items():
        got = getattr(spec, name).shape
        ok = got == shape
        checks.append(Check(f"{name} shape", ok,
                            "" if ok else f"{name} has shape {got}, expected {shape}"))
    return checks


def validate_network(spec: NetworkSpec) -> ValidationReport:
    """Check every structural invariant of ``spec`` and report offending indices."""
    checks = _shape_checks(spec)
    if not all(c.ok for c in checks):
        return ValidationReport(checks)

    q, mu, r = spec.assign_prob, spec.service_rate, spec.routing

    ok = math.isfinite(spec.lam) and spec.lam >= 0
    checks.append(Check("arrival rate", ok, "" if ok else "lambda must be finite and >= 0"))

    bad = [tuple(i) for i in np.argwhere((q < 0) | (q > 1) | ~np.isfinite(q))]
    checks.append(Check("assign_prob range", not bad,
                        "" if not bad else "assign_prob entries outside [0, 1]", bad))
    total = float(q.sum())
    ok = abs(total - 1.0) <= PROB_TOL
    checks.append(Check("assign_prob sum", ok,
                        "" if ok else f"assign_prob sums to {total!r}, not 1"))

    bad = [tuple(i) for i in np.argwhere(~(mu > 0) | ~np.isfinite(mu))]
    checks.append(Check("service_rate positive", not bad,
                        "" if not bad else "service rates must be finite and > 0", bad))

    bad = [tuple(i) for i in np.argwhere((r < 0) | (r > 1) | ~np.isfinite(r))]
    checks.append(Check("routing range", not bad,
                        "" if not bad else "routing entries outside [0, 1]", bad))
    rows = r.sum(axis=1)
    bad = [int(j) for j in np.flatnonzero(rows > 1 + PROB_TOL)]
    checks.append(Check("routing row sums", not bad,
                        "" if not bad else "routing row sum exceeds 1", bad))

    if all(c.ok for c in checks):
        try:
            lam_mat = _traffic(spec)
        except SingularSystem:
            checks.append(Check("openness", False, "network not open: (I-R^T) singular"))
        else:
            bad = [tuple(i) for i in np.argwhere(~np.isfinite(lam_mat) | (lam_mat < -PROB_TOL))]
            checks.append(Check("openness", not bad,
                                "" if not bad else "network not open: traffic solution "
                                "is not finite and nonnegative", bad))

    warnings = [f"class {a} never enters the network (assign_prob row is zero)"
                for a in range(spec.num_classes) if not q[a].any()]
    return ValidationReport(checks, warnings)


@dataclass(frozen=True)
class TrafficSolution:
    """Equilibrium rates, loads and visit counts of a valid network."""

    arrival_rate: np.ndarray          # Lambda[a][j]
    load: np.ndarray                  # rho[a][j]
    visit_counts: np.ndarray          # Gamma[j][k]
    conservation_residual: np.ndarray
    literal_conservation_residual: np.ndarray

    @property
    def server_load(self) -> np.ndarray:
        return self.load.sum(axis=0)

    @property
    def server_arrival_rate(self) -> np.ndarray:
        return self.arrival_rate.sum(axis=0)

    def stable_servers(self) -> np.ndarray:
        return self.server_load < 1

    def to_dict(self) -> dict:
        return {
            "arrival_rate": self.arrival_rate.tolist(),
            "load": self.load.tolist(),
            "server_load": self.server_load.tolist(),
            "visit_counts": self.visit_counts.tolist(),
            "conservation_residual": self.conservation_residual.tolist(),
            "literal_conservation_residual": self.literal_conservation_residual.tolist(),
        }


def _traffic(spec: NetworkSpec) -> np.ndarray:
    J = spec.num_servers
    lhs = np.eye(J) - spec.routing.T
    # one right-hand side column per class
    return linalg.solve(lhs, spec.exogenous_rate.T).T


def compute_visit_counts(routing) -> np.ndarray:
    """Gamma = (I - R)^-1, i.e. Gamma[j][k] = delta_jk + sum_l r[j][l] Gamma[l][k]."""
    r = np.asarray(routing, dtype=float)
    return linalg.inverse(np.eye(r.shape[0]) - r)


def _conservation_lhs(spec: NetworkSpec, gamma: np.ndarray) -> np.ndarray:
    # sum_a sum_k lambda q[a][k] Gamma[k][j]
    return spec.exogenous_rate.sum(axis=0) @ gamma


def solve_traffic(spec: NetworkSpec) -> TrafficSolution:
    """Solve the traffic equations and visit counts for a valid network.

    Raises InvalidNetwork for malformed parameters and SingularSystem when
    the network is not open.
    """
    report = validate_network(spec)
    structural = [c for c in report.failures() if c.name != "openness"]
    if structural:
        raise InvalidNetwork(ValidationReport(structural))
    lam_mat = _traffic(spec)
    gamma = compute_visit_counts(spec.routing)
    lhs = _conservation_lhs(spec, gamma)
    return TrafficSolution(
        arrival_rate=lam_mat,
        load=lam_mat / spec.service_rate,
        visit_counts=gamma,
        conservation_residual=np.abs(lhs - lam_mat.sum(axis=0)),
        literal_conservation_residual=np.abs(lhs - spec.exogenous_rate.sum(axis=0)),
    )


def check_conservation(spec: NetworkSpec, solution: TrafficSolution) -> np.ndarray:
    """Per-server |sum_a sum_k lambda q[a][k] Gamma[k][j] - sum_a Lambda[a][j]|."""
    lhs = _conservation_lhs(spec, solution.visit_counts)
    return np.abs(lhs - solution.arrival_rate.sum(axis=0))


def traffic_residual(spec: NetworkSpec, solution: TrafficSolution) -> float:
    """Max-norm of (I - R^T) Lambda_a - lambda q_a over all classes."""
    J = spec.num_servers
    res = (np.eye(J) - spec.routing.T) @ solution.arrival_rate.T - spec.exogenous_rate.T
    return float(np.abs(res).max())
