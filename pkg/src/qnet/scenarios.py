"""Networks with class-dependent deterministic routes.

These sit outside the class-independent-routing hypothesis and exist to
show that the hypothesis matters: a two-station network where each customer
type follows a fixed route can be unstable under a priority policy even
though every station's nominal load is below one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import NetworkSpec
from .policies import PolicyKind
from .simulate import Dynamics, Trace, run


@dataclass(frozen=True)
class RoutedScenario:
    """Customer types with fixed routes.

    ``routes[t]`` lists the stations type t visits in order and
    ``mean_service[t][l]`` is the mean service time of its l-th leg. Each
    (type, leg) pair is a buffer; ``priority`` ranks buffers, given as
    ``(type, leg)`` pairs from highest to lowest.
    """

    num_servers: int
    arrival_rate: tuple
    routes: tuple
    mean_service: tuple
    policy: str = "fifo"
    priority: tuple = ()
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "arrival_rate", tuple(float(x) for x in self.arrival_rate))
        object.__setattr__(self, "routes", tuple(tuple(int(s) for s in r) for r in self.routes))
        object.__setattr__(self, "mean_service",
                           tuple(tuple(float(m) for m in ms) for ms in self.mean_service))
        object.__setattr__(self, "priority", tuple(tuple(int(v) for v in p) for p in self.priority))
        if not (len(self.arrival_rate) == len(self.routes) == len(self.mean_service)):
            raise ValueError("arrival_rate, routes and mean_service must have one entry per type")
        for t, (route, ms) in enumerate(zip(self.routes, self.mean_service)):
            if len(route) != len(ms) or not route:
                raise ValueError(f"type {t}: route and mean_service lengths differ or are empty")
            if any(not 0 <= s < self.num_servers for s in route):
                raise ValueError(f"type {t}: route visits an unknown station")
            if any(m <= 0 for m in ms):
                raise ValueError(f"type {t}: mean service times must be positive")

    @property
    def num_types(self) -> int:
        return len(self.routes)

    def buffers(self) -> list:
        """(type, leg, station) for every buffer, in buffer-index order."""
        return [(t, l, s) for t, route in enumerate(self.routes) for l, s in enumerate(route)]

    def buffer_index(self, t: int, leg: int) -> int:
        return sum(len(r) for r in self.routes[:t]) + leg

    def policy_kind(self) -> PolicyKind:
        if self.policy == "priority":
            order = tuple(self.buffer_index(t, l) for t, l in self.priority)
            return PolicyKind("priority", order)
        return PolicyKind.parse(self.policy)

    def with_policy(self, policy: str) -> "RoutedScenario":
        return RoutedScenario(self.num_servers, self.arrival_rate, self.routes,
                              self.mean_service, policy, self.priority, self.name)

    def station_loads(self) -> np.ndarray:
        loads = np.zeros(self.num_servers)
        for lam, route, ms in zip(self.arrival_rate, self.routes, self.mean_service):
            for s, m in zip(route, ms):
                loads[s] += lam * m
        return loads

    def dynamics(self) -> Dynamics:
        bufs = self.buffers()
        rates = np.zeros((len(bufs), self.num_servers))
        next_hop, labels = [], []
        for b, (t, l, s) in enumerate(bufs):
            rates[b, s] = 1.0 / self.mean_service[t][l]
            route = self.routes[t]
            labels.append((t, s, route[l + 1:]))
            next_hop.append((b + 1, route[l + 1]) if l + 1 < len(route) else None)
        targets = [(t, self.buffer_index(t, 0), self.routes[t][0], self.routes[t][1:])
                   for t in range(self.num_types)]
        return Dynamics(self.num_servers, self.num_types, len(bufs), targets,
                        list(self.arrival_rate), rates, next_hop=next_hop, labels=labels)

    def class_independent_analogue(self) -> tuple:
        """A class-independent network carrying the same mean flows.

        Classes are the customer types. Routing probabilities are the
        empirical station-to-station flow fractions; each type keeps its own
        per-station service rate. The priority policy is translated per
        station. Returns ``(NetworkSpec, PolicyKind)``.
        """
        J, T = self.num_servers, self.num_types
        flow = np.zeros((J, J + 1))
        mu = np.zeros((T, J))
        for t, (lam, route, ms) in enumerate(zip(self.arrival_rate, self.routes, self.mean_service)):
            for l, s in enumerate(route):
                nxt = route[l + 1] if l + 1 < len(route) else J
                flow[s, nxt] += lam
                if mu[t, s] == 0:
                    mu[t, s] = 1.0 / ms[l]
        mu[mu == 0] = mu.max()
        through = flow.sum(axis=1, keepdims=True)
        routing = np.divide(flow[:, :J], through, out=np.zeros((J, J)), where=through > 0)
        lam = sum(self.arrival_rate)
        q = np.zeros((T, J))
        for t, route in enumerate(self.routes):
            q[t, route[0]] = self.arrival_rate[t] / lam
        spec = NetworkSpec(J, T, lam, q, mu, routing)

        if self.policy != "priority":
            return spec, self.policy_kind()
        orders = []
        for s in range(J):
            ranked = []
            for t, l in self.priority:
                if self.routes[t][l] == s and t not in ranked:
                    ranked.append(t)
            ranked += [t for t in range(T) if t not in ranked]
            orders.append(tuple(ranked))
        return spec, PolicyKind("priority", (), tuple(orders))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_servers": self.num_servers,
            "arrival_rate": list(self.arrival_rate),
            "routes": [list(r) for r in self.routes],
            "mean_service": [list(m) for m in self.mean_service],
            "policy": self.policy,
            "priority": [list(p) for p in self.priority],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RoutedScenario":
        try:
            return cls(
                num_servers=data["num_servers"],
                arrival_rate=data["arrival_rate"],
                routes=data["routes"],
                mean_service=data["mean_service"],
                policy=data.get("policy", "fifo"),
                priority=data.get("priority", ()),
                name=data.get("name", "scenario"),
            )
        except KeyError as exc:
            raise ValueError(f"scenario is missing key {exc.args[0]!r}") from None


def load_scenario(path) -> RoutedScenario:
    with open(path) as fh:
        return RoutedScenario.from_dict(json.load(fh))


def is_scenario_dict(data: dict) -> bool:
    return "routes" in data


def demo_route_run(scenario: RoutedScenario, horizon: int, seed: int,
                   record_stride: int = 100) -> Trace:
    """Simulate a class-dependent-route network under its own policy."""
    return run(scenario, scenario.policy_kind(), horizon, seed, record_stride)
