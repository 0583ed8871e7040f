"""Uniformized discrete-time simulation of multiclass networks.

Every epoch realizes at most one event. A single uniform from the
``arrival`` stream is laid out as

    [0, a)                    arrival                    (E1)
    [a + j*w, a + (j+1)*w)    departure slot of server j
    [a + J*w, 1)              self-loop                  (E4)

Within slot j a second uniform from ``service[j]`` decides whether the
customer in service departs: it does when the uniform is below
``rate / (Q * w)``. A departing customer moves (E2) or exits (E3) according to
``route[j]``. If the server is idle, or the threshold is missed, the epoch is
a self-loop.

Two chains built from the same seed and the same layout therefore select the
same slots at the same epochs, and nested thresholds give the "slower chain
departs => faster chain departs" property needed for coupling.
"""

from __future__ import annotations

import csv
import io
import json
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate

import numpy as np

from .errors import CouplingBroken, DimensionMismatch, InvalidNetwork, NotSingleRate
from .model import NetworkSpec, validate_network
from .policies import Customer, PolicyKind
from .streams import RandomStreams

E1, E2, E3, E4 = 1, 2, 3, 4
EVENT_NAMES = {E1: "E1", E2: "E2", E3: "E3", E4: "E4"}

ROUTE_BY_DEPARTURE = "departure"
ROUTE_BY_OPPORTUNITY = "opportunity"


@dataclass(frozen=True)
class Layout:
    """How an epoch's uniform is partitioned: clock rate, arrival interval, slot width."""

    q: float
    arrival_prob: float
    slot_width: float

    @classmethod
    def for_rates(cls, lam: float, max_rate: float, num_servers: int, q: float | None = None):
        if q is None:
            q = lam + num_servers * max_rate
        if q <= 0:
            raise ValueError("uniformization rate must be positive")
        layout = cls(q, lam / q, max_rate / q)
        if layout.arrival_prob + num_servers * layout.slot_width > 1 + 1e-12:
            raise ValueError(f"uniformization rate {q} is below lambda + J*max(mu)")
        return layout


# ---------------------------------------------------------------------------
# network dynamics (what can happen), independent of the current state


class Dynamics:
    """Arrival targets, service rates per (buffer, server), and routing rule."""

    def __init__(self, num_servers, num_classes, num_buffers, arrival_targets,
                 arrival_weights, rates, route_rows=None, next_hop=None,
                 lam=None, labels=None):
        self.num_servers = num_servers
        self.num_classes = num_classes
        self.num_buffers = num_buffers
        self.arrival_targets = list(arrival_targets)      # (cls, buffer, server, route)
        total = float(sum(arrival_weights))
        self.lam = total if lam is None else lam
        cum = list(accumulate(w / total for w in arrival_weights)) if total > 0 else []
        self.arrival_cum = cum
        self.rates = [list(map(float, row)) for row in rates]   # rates[buffer][server]
        self.route_rows = route_rows      # class-independent cumulative rows, or None
        self.next_hop = next_hop          # class-dependent: buffer -> (buffer', server') | None
        self.labels = labels

    @property
    def class_independent(self) -> bool:
        return self.route_rows is not None

    @property
    def max_rate(self) -> float:
        return max(max(row) for row in self.rates)

    def default_layout(self) -> Layout:
        return Layout.for_rates(self.lam, self.max_rate, self.num_servers)

    @classmethod
    def from_spec(cls, spec: NetworkSpec) -> "Dynamics":
        report = validate_network(spec)
        if not report.ok:
            raise InvalidNetwork(report)
        targets, weights = [], []
        for a in range(spec.num_classes):
            for j in range(spec.num_servers):
                p = float(spec.assign_prob[a, j])
                if p > 0:
                    targets.append((a, a, j, None))
                    weights.append(p)
        rows = [list(accumulate(float(x) for x in spec.routing[j]))
                for j in range(spec.num_servers)]
        return cls(spec.num_servers, spec.num_classes, spec.num_classes, targets,
                   [spec.lam * w for w in weights], spec.service_rate.tolist(),
                   route_rows=rows, lam=spec.lam)


# ---------------------------------------------------------------------------
# state


class NetworkState:
    """Per-server customer sequences plus derived class counts.

    ``counts[a][j]`` tallies class-a customers at server j; ``total`` is the
    network population; ``epoch`` counts transitions taken.
    """

    def __init__(self, queues, num_classes):
        self.queues = queues
        J = len(queues)
        self.counts = [[0] * J for _ in range(num_classes)]
        self.total = 0
        self.epoch = 0
        self.next_id = 0

    def add(self, c: Customer, j: int):
        self.queues[j].add(c)
        self.counts[c.cls][j] += 1
        self.total += 1

    def count_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    def server_counts(self) -> list:
        return [len(q) for q in self.queues]

    def customers(self, j: int) -> list:
        return self.queues[j].customers()

    def check(self):
        """Assert work conservation and count consistency."""
        for j, q in enumerate(self.queues):
            seq = q.customers()
            if len(seq) != len(q):
                raise AssertionError(f"server {j}: sequence length disagrees with size")
            if seq and q.serving() is None:
                raise AssertionError(f"server {j} idles with {len(seq)} customers")
            for a in range(len(self.counts)):
                n = sum(1 for c in seq if c.cls == a)
                if n != self.counts[a][j]:
                    raise AssertionError(f"count x[{a}][{j}]={self.counts[a][j]} but tally is {n}")
            epochs = [c.server_epoch for c in seq]
            if epochs != sorted(epochs):
                raise AssertionError(f"server {j}: sequence out of arrival order")
        if self.total != sum(map(sum, self.counts)):
            raise AssertionError("total disagrees with counts")


def _new_state(dyn: Dynamics, policy: PolicyKind, streams: RandomStreams) -> NetworkState:
    queues = [policy.make_queue(dyn.num_buffers, streams.policy, j) for j in range(dyn.num_servers)]
    return NetworkState(queues, dyn.num_classes)


def state_from_counts(dyn: Dynamics, counts, policy: PolicyKind, streams: RandomStreams) -> NetworkState:
    """Build a state holding ``counts[a][j]`` class-a customers at server j.

    Within a server, customers are placed in class order. For class-dependent
    routes ``counts`` is indexed by buffer: ``counts[b]`` customers are put at
    the station buffer b is served at.
    """
    state = _new_state(dyn, policy, streams)
    counts = np.asarray(counts, dtype=np.int64)
    if dyn.class_independent:
        if counts.shape != (dyn.num_classes, dyn.num_servers):
            raise DimensionMismatch(f"counts shape {counts.shape}, expected "
                                    f"{(dyn.num_classes, dyn.num_servers)}")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        for a in range(dyn.num_classes):
            for j in range(dyn.num_servers):
                for _ in range(int(counts[a, j])):
                    state.add(Customer(state.next_id, a, a, 0), j)
                    state.next_id += 1
    else:
        if counts.shape != (dyn.num_buffers,):
            raise DimensionMismatch(f"counts shape {counts.shape}, expected ({dyn.num_buffers},)")
        for b, n in enumerate(counts):
            cls, server, route = dyn.labels[b]
            for _ in range(int(n)):
                state.add(Customer(state.next_id, cls, b, 0, route), server)
                state.next_id += 1
    return state


# ---------------------------------------------------------------------------
# one chain


class Chain:
    """A network state bound to its dynamics, streams and epoch layout."""

    def __init__(self, dyn: Dynamics, policy: PolicyKind, streams: RandomStreams,
                 layout: Layout | None = None, state: NetworkState | None = None,
                 route_index: str = ROUTE_BY_DEPARTURE):
        if route_index not in (ROUTE_BY_DEPARTURE, ROUTE_BY_OPPORTUNITY):
            raise ValueError(f"unknown route_index {route_index!r}")
        self.dyn = dyn
        self.policy = PolicyKind.parse(policy)
        self.streams = streams
        self.layout = layout or dyn.default_layout()
        self.state = state if state is not None else _new_state(dyn, self.policy, streams)
        self.route_by_opportunity = route_index == ROUTE_BY_OPPORTUNITY
        J = dyn.num_servers
        qw = self.layout.q * self.layout.slot_width
        self._thr = [[r / qw for r in row] for row in dyn.rates]
        self._a = self.layout.arrival_prob
        self._w = self.layout.slot_width
        self._J = J
        self._service = [streams.service(j) for j in range(J)]
        self._route = [streams.route(j) for j in range(J)]
        self.departures = [0] * J

    def advance(self, u: float) -> int:
        """Apply one epoch driven by the slot uniform ``u``; return the event code."""
        st = self.state
        st.epoch += 1
        dyn = self.dyn
        if u < self._a:
            v = self.streams.assign.next()
            cum = dyn.arrival_cum
            i = bisect_right(cum, v)
            if i >= len(cum):
                i = len(cum) - 1
            cls, buf, srv, route = dyn.arrival_targets[i]
            st.queues[srv].add(Customer(st.next_id, cls, buf, st.epoch, route))
            st.next_id += 1
            st.counts[cls][srv] += 1
            st.total += 1
            return E1
        s = int((u - self._a) / self._w)
        if s >= self._J:
            return E4
        v = self._service[s].next()
        rv = self._route[s].next() if self.route_by_opportunity else None
        q = st.queues[s]
        c = q.serving()
        if c is None or v >= self._thr[c.buffer][s]:
            return E4
        q.pop_serving()
        self.departures[s] += 1
        st.counts[c.cls][s] -= 1
        if dyn.route_rows is not None:
            if rv is None:
                rv = self._route[s].next()
            k = bisect_right(dyn.route_rows[s], rv)
            if k >= self._J:
                st.total -= 1
                return E3
        else:
            hop = dyn.next_hop[c.buffer]
            if hop is None:
                st.total -= 1
                return E3
            c.buffer, k = hop
            c.remaining_route = c.remaining_route[1:] if c.remaining_route else c.remaining_route
        c.server_epoch = st.epoch
        st.queues[k].add(c)
        st.counts[c.cls][k] += 1
        return E2

    def epoch(self) -> int:
        return self.advance(self.streams.arrival.next())


def step(state: NetworkState, spec: NetworkSpec, policy, streams: RandomStreams):
    """Advance ``state`` by one uniformized transition, in place.

    Returns ``(state, event)``. The state must have been built with the same
    policy and streams (see ``state_from_counts``).
    """
    chain = Chain(Dynamics.from_spec(spec), policy, streams, state=state)
    ev = chain.epoch()
    return chain.state, EVENT_NAMES[ev]


# ---------------------------------------------------------------------------
# traces


@dataclass
class Trace:
    """Strided per-epoch records of one run."""

    epochs: np.ndarray
    events: np.ndarray
    totals: np.ndarray
    counts: np.ndarray          # (records, classes, servers)
    stride: int
    horizon: int
    seed: int
    lyapunov: np.ndarray | None = None
    event_totals: dict = field(default_factory=dict)

    @property
    def server_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_csv(self) -> str:
        A, J = self.counts.shape[1:]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "event", "total"] + [f"x_{a}_{j}" for a in range(A) for j in range(J)])
        flat = self.counts.reshape(len(self.epochs), A * J)
        for n, ev, tot, row in zip(self.epochs.tolist(), self.events.tolist(),
                                   self.totals.tolist(), flat.tolist()):
            w.writerow([n, EVENT_NAMES[ev], tot] + row)
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


class _Recorder:
    def __init__(self, horizon, stride, num_classes, num_servers, gamma=None):
        self.stride = max(1, int(stride))
        n = horizon // self.stride
        self.epochs = np.zeros(n, dtype=np.int64)
        self.events = np.zeros(n, dtype=np.int8)
        self.totals = np.zeros(n, dtype=np.int64)
        self.counts = np.zeros((n, num_classes, num_servers), dtype=np.int64)
        self.gamma = gamma
        self.lyap = np.zeros((n, num_servers)) if gamma is not None else None
        self.i = 0

    def record(self, state, ev):
        i = self.i
        self.epochs[i] = state.epoch
        self.events[i] = ev
        self.totals[i] = state.total
        self.counts[i] = state.counts
        if self.gamma is not None:
            self.lyap[i] = self.counts[i].sum(axis=0) @ self.gamma
        self.i += 1

    def trace(self, horizon, seed, event_totals):
        return Trace(self.epochs, self.events, self.totals, self.counts, self.stride,
                     horizon, seed, self.lyap, event_totals)


def _as_dynamics(net) -> Dynamics:
    if isinstance(net, Dynamics):
        return net
    if isinstance(net, NetworkSpec):
        return Dynamics.from_spec(net)
    return net.dynamics()


def run(spec, policy, horizon: int, seed: int, record_stride: int = 1, x0=None,
        check: bool = False, gamma=None, layout: Layout | None = None) -> Trace:
    """Simulate ``horizon`` epochs and return a strided trace.

    ``spec`` may be a NetworkSpec or a RoutedScenario. With ``check`` the
    state invariants are asserted after every epoch (slow). With ``gamma`` the
    Lyapunov values sum_k x_k Gamma[k][j] are recorded too.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    dyn = _as_dynamics(spec)
    policy = PolicyKind.parse(policy)
    streams = RandomStreams(seed)
    state = None if x0 is None else state_from_counts(dyn, x0, policy, streams)
    chain = Chain(dyn, policy, streams, layout, state)
    rec = _Recorder(horizon, record_stride, dyn.num_classes, dyn.num_servers, gamma)
    stride = rec.stride
    tally = [0, 0, 0, 0, 0]
    arrival = streams.arrival.next
    advance = chain.advance
    st = chain.state
    prev = st.total
    for n in range(1, horizon + 1):
        ev = advance(arrival())
        tally[ev] += 1
        if check:
            st.check()
            if abs(st.total - prev) > 1:
                raise AssertionError("total count jumped by more than one")
            prev = st.total
        if n % stride == 0:
            rec.record(st, ev)
    return rec.trace(horizon, seed, {EVENT_NAMES[e]: tally[e] for e in (E1, E2, E3, E4)})


# ---------------------------------------------------------------------------
# couplings


@dataclass
class DominanceReport:
    """Outcome of a pathwise dominance check between two coupled chains."""

    kind: str
    seed: int
    epochs: int
    dominance_ok: bool
    violations: int = 0
    first_violation_epoch: int | None = None
    min_margin: int = 0
    identical: bool = True

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "epochs": self.epochs,
            "dominance_ok": self.dominance_ok,
            "violations": self.violations,
            "first_violation_epoch": self.first_violation_epoch,
            "min_margin": self.min_margin,
            "identical": self.identical,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class CoupledResult:
    trace_s: Trace
    trace_s_prime: Trace
    report: DominanceReport


def coupled_run(red, policy, horizon: int, seed: int, record_stride: int = 100,
                strict: bool = True, route_index: str = ROUTE_BY_DEPARTURE,
                x0=None) -> CoupledResult:
    """Run S and its single-rate reduction S' on shared streams.

    Both chains share the epoch layout of S (arrival interval lambda/Q1 =
    lambda'/Q2 and S's slot width), read identical seeded streams, and consume
    ``route[j]`` by departure count, so the k-th departure from server j takes
    the same turn in both networks. Asserts total(S') >= total(S) at every
    epoch; raises CouplingBroken on a violation when ``strict``.
    """
    from .reduction import shared_layouts

    lay_s, lay_sp = shared_layouts(red)
    policy = PolicyKind.parse(policy)
    dyn_s = Dynamics.from_spec(red.base)
    dyn_sp = Dynamics.from_spec(red.reduced_spec)
    st_s, st_sp = RandomStreams(seed), RandomStreams(seed)
    init_s = None if x0 is None else state_from_counts(dyn_s, x0, policy, st_s)
    init_sp = None if x0 is None else state_from_counts(dyn_sp, x0, policy, st_sp)
    ch_s = Chain(dyn_s, policy, st_s, lay_s, init_s, route_index)
    ch_sp = Chain(dyn_sp, policy, st_sp, lay_sp, init_sp, route_index)

    rec_s = _Recorder(horizon, record_stride, dyn_s.num_classes, dyn_s.num_servers)
    rec_sp = _Recorder(horizon, record_stride, dyn_s.num_classes, dyn_s.num_servers)
    stride = rec_s.stride
    arr_s, arr_sp = st_s.arrival.next, st_sp.arrival.next
    adv_s, adv_sp = ch_s.advance, ch_sp.advance
    s_state, sp_state = ch_s.state, ch_sp.state
    report = DominanceReport("total", seed, horizon, True, min_margin=sp_state.total - s_state.total)
    min_margin = report.min_margin
    identical = True
    for n in range(1, horizon + 1):
        u = arr_s()
        if arr_sp() != u:
            raise CouplingBroken("arrival streams diverged")
        ev_s = adv_s(u)
        ev_sp = adv_sp(u)
        margin = sp_state.total - s_state.total
        if margin < min_margin:
            min_margin = margin
        if identical and (ev_s != ev_sp or margin):
            identical = False
        if margin < 0:
            report.violations += 1
            if report.first_violation_epoch is None:
                report.first_violation_epoch = n
                report.dominance_ok = False
                if strict:
                    report.min_margin = min_margin
                    raise CouplingBroken(f"total(S') < total(S) at epoch {n}", report)
        if n % stride == 0:
            rec_s.record(s_state, ev_s)
            rec_sp.record(sp_state, ev_sp)
    report.min_margin = min_margin
    report.identical = identical
    return CoupledResult(rec_s.trace(horizon, seed, {}), rec_sp.trace(horizon, seed, {}), report)


def monotone_coupled_run(spec, policy, x0, horizon: int, seed: int, strict: bool = True,
                         route_index: str = ROUTE_BY_OPPORTUNITY, record_stride: int = 0):
    """Run one network from ``x0`` and from the empty state on shared streams.

    Checks y_j(x0) >= y_j(0) for every server j at every epoch. Routing
    uniforms are drawn once per selected departure slot, so whenever both
    chains serve at server j in the same epoch the departing customers take
    the same turn; this keeps per-queue order pathwise. (Indexing routes by
    departure count only preserves total-count order.)

    ``spec`` is a single-rate NetworkSpec, or a RoutedScenario (class-dependent
    routes, outside the hypotheses) in which case ``x0`` is per-buffer counts
    and violations are merely recorded unless ``strict``.

    Returns the DominanceReport, or ``(report, trace_x, trace_0)`` when
    ``record_stride`` is positive.
    """
    policy = PolicyKind.parse(policy)
    if isinstance(spec, NetworkSpec):
        if not spec.is_single_rate():
            raise NotSingleRate("monotone coupling compares chains of a single-rate network")
    dyn = _as_dynamics(spec)
    layout = dyn.default_layout()
    sx, s0 = RandomStreams(seed), RandomStreams(seed)
    cx = Chain(dyn, policy, sx, layout, state_from_counts(dyn, x0, policy, sx), route_index)
    c0 = Chain(dyn, policy, s0, layout, None, route_index)
    qx, q0 = cx.state.queues, c0.state.queues
    J = dyn.num_servers
    servers = range(J)
    arr_x, arr_0 = sx.arrival.next, s0.arrival.next
    adv_x, adv_0 = cx.advance, c0.advance
    report = DominanceReport("per-queue", seed, horizon, True)
    min_margin = min(len(qx[j]) - len(q0[j]) for j in servers)
    identical = min_margin == 0 and all(len(q) == 0 for q in qx)
    recs = None
    if record_stride:
        recs = (_Recorder(horizon, record_stride, dyn.num_classes, J),
                _Recorder(horizon, record_stride, dyn.num_classes, J))
    for n in range(1, horizon + 1):
        u = arr_x()
        arr_0()
        ev_x = adv_x(u)
        ev_0 = adv_0(u)
        m = min(len(qx[j]) - len(q0[j]) for j in servers) if J > 1 else len(qx[0]) - len(q0[0])
        if m < min_margin:
            min_margin = m
        if identical and (ev_x != ev_0 or m):
            identical = False
        if m < 0:
            report.violations += 1
            if report.first_violation_epoch is None:
                report.first_violation_epoch = n
                report.dominance_ok = False
                if strict:
                    report.min_margin = min_margin
                    raise CouplingBroken(f"y_j(x0) < y_j(0) at epoch {n}", report)
        if recs and n % recs[0].stride == 0:
            recs[0].record(cx.state, ev_x)
            recs[1].record(c0.state, ev_0)
    report.min_margin = min_margin
    report.identical = identical
    if recs:
        return report, recs[0].trace(horizon, seed, {}), recs[1].trace(horizon, seed, {})
    return report
