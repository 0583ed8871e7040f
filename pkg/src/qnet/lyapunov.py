"""Virtual-workload Lyapunov functions and their drifts.

V_j(x) = sum_a sum_k x[a][k] Gamma[k][j] counts the visits to server j that
the customers currently in the network still owe. For a single-rate network
its one-step drift depends on x only through whether server j is busy.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NotSingleRate
from .model import NetworkSpec, TrafficSolution
from .policies import PolicyKind
from .streams import RandomStreams
from .simulate import Chain, Dynamics, state_from_counts


def _counts(x, spec: NetworkSpec | None = None, num_servers: int | None = None) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, :]
    if spec is not None and x.shape != (spec.num_classes, spec.num_servers):
        raise DimensionMismatch(f"state shape {x.shape}, expected "
                                f"{(spec.num_classes, spec.num_servers)}")
    if num_servers is not None and x.shape[1] != num_servers:
        raise DimensionMismatch(f"state has {x.shape[1]} servers, Gamma has {num_servers}")
    if (x < 0).any():
        raise ValueError("counts must be nonnegative")
    return x


def lyapunov_value(x, gamma, j: int) -> float:
    """V_j(x) = sum_a sum_k x[a][k] * Gamma[k][j]."""
    gamma = np.asarray(gamma, dtype=float)
    x = _counts(x, num_servers=gamma.shape[0])
    return float(x.sum(axis=0) @ gamma[:, j])


def lyapunov_values(x, gamma) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    x = _counts(x, num_servers=gamma.shape[0])
    return x.sum(axis=0) @ gamma


def analytic_drift(spec: NetworkSpec, solution: TrafficSolution, x, j: int) -> float:
    """(sum_a Lambda[a][j] - mu * [x_j > 0]) / (lambda + J mu); single-rate only."""
    if not spec.is_single_rate():
        raise NotSingleRate("analytic drift needs one common service rate")
    x = _counts(x, spec)
    mu = spec.single_rate
    q = spec.lam + spec.num_servers * mu
    busy = x[:, j].sum() > 0
    return float((solution.arrival_rate[:, j].sum() - (mu if busy else 0.0)) / q)


def _default_in_service(x: np.ndarray, m: int) -> int:
    return int(np.flatnonzero(x[:, m])[0])


def brute_force_drift(spec: NetworkSpec, solution: TrafficSolution, x, j: int,
                      in_service=None) -> float:
    """Expected one-step change of V_j by enumerating every event from x.

    The clock rate is Q = lambda + J * max(mu). ``in_service`` names the class
    being served at each busy server, either as a mapping server -> class or a
    callable ``(x, server) -> class``; by default the lowest busy class index.
    """
    x = _counts(x, spec)
    gamma = solution.visit_counts
    g = gamma[:, j]
    q = spec.uniformization_rate()
    r = spec.routing
    drift = 0.0
    mass = 0.0

    # E1: exogenous class-a arrival at server k
    for a in range(spec.num_classes):
        for k in range(spec.num_servers):
            p = spec.lam * spec.assign_prob[a, k] / q
            drift += p * g[k]
            mass += p
    for m in range(spec.num_servers):
        if x[:, m].sum() == 0:
            continue
        if in_service is None:
            a = _default_in_service(x, m)
        elif callable(in_service):
            a = int(in_service(x, m))
        else:
            a = int(in_service[m])
        if x[a, m] <= 0:
            raise ValueError(f"class {a} is not present at server {m}")
        rate = spec.service_rate[a, m] / q
        # E2: move m -> n
        for n in range(spec.num_servers):
            p = rate * r[m, n]
            drift += p * (g[n] - g[m])
            mass += p
        # E3: exit from m
        p = rate * (1.0 - r[m].sum())
        drift += p * (-g[m])
        mass += p
    # E4 carries the remaining 1 - mass with no change
    if mass > 1 + 1e-12:
        raise AssertionError(f"event probabilities exceed one ({mass})")
    return float(drift)


def policy_invariance_gap(spec: NetworkSpec, solution: TrafficSolution, x, j: int) -> float:
    """Largest change of brute_force_drift over alternative in-service classes.

    Each busy server's choice is varied on its own; drift is additive over
    servers so this covers every joint choice. Zero for single-rate specs.
    """
    x = _counts(x, spec)
    base = brute_force_drift(spec, solution, x, j)
    gap = 0.0
    for m in range(spec.num_servers):
        present = np.flatnonzero(x[:, m])
        for a in present[1:]:
            choice = {mm: _default_in_service(x, mm) for mm in range(spec.num_servers)
                      if x[:, mm].sum() > 0}
            choice[m] = int(a)
            gap = max(gap, abs(brute_force_drift(spec, solution, x, j, choice) - base))
    return gap


@dataclass
class DriftProfile:
    """Per-server drift constants of the virtual workloads.

    ``eta[j]`` bounds the drift of V_j everywhere, ``epsilon[j]`` is the
    decrease whenever server j is busy, ``cstar[j]`` an estimate of the
    long-run drift per step (None until estimated).
    """

    eta: np.ndarray
    epsilon: np.ndarray
    cstar: np.ndarray | None = None

    @property
    def negative_drift(self) -> np.ndarray:
        return self.epsilon > 0

    def to_dict(self) -> dict:
        return {"eta": self.eta.tolist(), "epsilon": self.epsilon.tolist(),
                "cstar": None if self.cstar is None else self.cstar.tolist()}


def drift_profile(spec: NetworkSpec, solution: TrafficSolution, cstar=None) -> DriftProfile:
    if not spec.is_single_rate():
        raise NotSingleRate("closed-form drift constants need one common service rate")
    mu = spec.single_rate
    q = spec.lam + spec.num_servers * mu
    lam_j = solution.arrival_rate.sum(axis=0)
    return DriftProfile(lam_j / q, (mu - lam_j) / q,
                        None if cstar is None else np.asarray(cstar, dtype=float))


# ---------------------------------------------------------------------------
# Monte-Carlo k-step drifts


@dataclass
class DriftEstimate:
    """Mean and standard error of V_j(X^k) - V_j(x) for every server j."""

    estimate: np.ndarray
    stderr: np.ndarray
    k: int
    replications: int


def multi_step_drift(spec: NetworkSpec, policy, x, k: int, replications: int, seed: int,
                     gamma=None) -> DriftEstimate:
    """Estimate E[V_j(X^k) | X^0 = x] - V_j(x) by simulation.

    Replication r reads streams keyed by (seed, r), so the estimate does not
    depend on how replications are scheduled.
    """
    if k < 1 or replications < 1:
        raise ValueError("k and replications must be >= 1")
    policy = PolicyKind.parse(policy)
    if gamma is None:
        from .model import solve_traffic
        gamma = solve_traffic(spec).visit_counts
    x = _counts(x, spec)
    dyn = Dynamics.from_spec(spec)
    layout = dyn.default_layout()
    v0 = x.sum(axis=0) @ gamma
    per_server = np.empty((replications, spec.num_servers), dtype=np.int64)
    for rep in range(replications):
        streams = RandomStreams(seed, key=(rep,))
        chain = Chain(dyn, policy, streams, layout, state_from_counts(dyn, x, policy, streams))
        for _ in range(k):
            chain.epoch()
        per_server[rep] = chain.state.server_counts()
    diffs = per_server @ gamma - v0
    mean = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / np.sqrt(replications) if replications > 1 else np.full(
        spec.num_servers, np.inf)
    return DriftEstimate(mean, se, k, replications)


@dataclass
class UUBRow:
    server: int
    state_id: int
    k: int
    estimate: float
    stderr: float
    analytic: float | None = None


@dataclass
class UUBTable:
    """Estimates of Delta^k V_j(x) / k for a grid of states and horizons.

    ``states[0]`` is the zero state. ``dominated`` records, per (server, k,
    state), whether estimate(x) <= estimate(0) + 3 * pooled stderr.
    """

    states: list
    ks: list
    rows: list
    dominated: dict = field(default_factory=dict)

    def value(self, server, state_id, k) -> UUBRow:
        for row in self.rows:
            if (row.server, row.state_id, row.k) == (server, state_id, k):
                return row
        raise KeyError((server, state_id, k))

    @property
    def all_dominated(self) -> bool:
        return all(self.dominated.values())

    def cstar(self, state_id: int = 0) -> np.ndarray:
        """Slope of Delta^k V_j over the two largest k (an estimate of c*)."""
        if len(self.ks) < 2:
            raise ValueError("need at least two horizons to estimate c*")
        k1, k2 = sorted(self.ks)[-2:]
        servers = sorted({r.server for r in self.rows})
        out = []
        for j in servers:
            d1 = self.value(j, state_id, k1).estimate * k1
            d2 = self.value(j, state_id, k2).estimate * k2
            out.append((d2 - d1) / (k2 - k1))
        return np.array(out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["server", "state_id", "k", "estimate", "stderr", "analytic"])
        for r in self.rows:
            w.writerow([r.server, r.state_id, r.k, repr(r.estimate), repr(r.stderr),
                        "" if r.analytic is None else repr(r.analytic)])
        return buf.getvalue()


def uub_estimate(spec: NetworkSpec, policy, states, ks, replications: int, seed: int,
                 exact=None) -> UUBTable:
    """Tabulate Delta^k V_j(x) / k and compare every state against the zero state.

    All states share the seed, so differences between rows are taken on common
    random numbers. ``exact``, if given, is a callable ``(x, j, k) -> value``
    whose result fills the ``analytic`` column.
    """
    states = [_counts(s, spec) for s in states]
    if not any((s == 0).all() for s in states):
        raise ValueError("states must include the zero state")
    # zero state first
    states.sort(key=lambda s: (s != 0).any())
    from .model import solve_traffic
    sol = solve_traffic(spec)
    rows = []
    est = {}
    for sid, x in enumerate(states):
        for k in ks:
            d = multi_step_drift(spec, policy, x, k, replications, seed, sol.visit_counts)
            for j in range(spec.num_servers):
                analytic = None
                if exact is not None:
                    analytic = float(exact(x, j, k))
                elif k == 1 and spec.is_single_rate():
                    analytic = analytic_drift(spec, sol, x, j)
                row = UUBRow(j, sid, k, float(d.estimate[j] / k), float(d.stderr[j] / k), analytic)
                rows.append(row)
                est[(j, sid, k)] = row
    dominated = {}
    for sid in range(1, len(states)):
        for k in ks:
            for j in range(spec.num_servers):
                rx, r0 = est[(j, sid, k)], est[(j, 0, k)]
                pooled = np.hypot(rx.stderr, r0.stderr)
                dominated[(j, k, sid)] = bool(rx.estimate <= r0.estimate + 3 * pooled)
    return UUBTable(states, list(ks), rows, dominated)
