"""Exact uniformized kernels of small single-class networks.

With one class the per-server counts are a Markov chain under every
work-conserving policy, so the count-vector kernel can be enumerated. The
state space is truncated in one of two ways, both reflecting (blocked
transitions fold into the self-loop, so rows stay stochastic):

* ``"total"``: count vectors with total population <= cap; arrivals that
  would exceed it are blocked.
* ``"box"``: every server holds at most ``cap``; arrivals to a full server
  are blocked, and a departure routed to a full server stays put.

Box truncation preserves the componentwise order of coupled paths, so the
empty-server comparison between any state and the empty state survives
truncation exactly. Total truncation does not: from a state at the cap,
blocked arrivals make an empty server more likely to stay empty.
"""

from __future__ import annotations

import os
from math import comb
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import sparse

from .errors import NotSingleRate, StateSpaceTooLarge
from .model import NetworkSpec, solve_traffic

DEFAULT_MAX_STATES = 200_000


def max_states() -> int:
    return int(os.environ.get("QNET_MAX_STATES", DEFAULT_MAX_STATES))


TRUNCATIONS = ("total", "box")


def _enumerate(num_servers: int, cap: int, truncation: str = "total") -> list:
    states = [s for s in product(range(cap + 1), repeat=num_servers)
              if truncation == "box" or sum(s) <= cap]
    states.sort(key=lambda s: (sum(s), tuple(-v for v in s)))
    return states


@dataclass
class TruncatedChain:
    spec: NetworkSpec
    cap: int
    states: list
    index: dict
    P: sparse.csr_matrix
    q: float
    truncation: str = "total"

    def __len__(self):
        return len(self.states)

    def dense(self) -> np.ndarray:
        return self.P.toarray()

    def idx(self, x) -> int:
        key = tuple(int(v) for v in np.asarray(x).reshape(-1))
        try:
            return self.index[key]
        except KeyError:
            raise KeyError(f"state {key} is not in the chain (cap {self.cap})") from None

    def counts(self) -> np.ndarray:
        return np.array(self.states, dtype=np.int64).reshape(len(self.states), -1)

    def empty_indicator(self, j: int) -> np.ndarray:
        return (self.counts()[:, j] == 0).astype(float)

    def interior(self, margin: int = 5) -> np.ndarray:
        """States at least ``margin`` steps away from any blocked transition.

        Each epoch changes a count by at most one, so from these states the
        first ``margin`` steps coincide with the untruncated chain.
        """
        c = self.counts()
        if self.truncation == "box":
            return c.max(axis=1) <= self.cap - margin
        return c.sum(axis=1) <= self.cap - margin

    def at_boundary(self) -> np.ndarray:
        """States where some arrival is blocked."""
        c = self.counts()
        if self.truncation == "box":
            return c.max(axis=1) == self.cap
        return c.sum(axis=1) == self.cap

    def distribution(self, x, n: int) -> np.ndarray:
        """Row vector p^n_{x, .}."""
        pi = np.zeros(len(self))
        pi[self.idx(x)] = 1.0
        pt = self.P.T.tocsr()
        for _ in range(n):
            pi = pt @ pi
        return pi


def build_kernel(spec: NetworkSpec, cap: int, limit: int | None = None,
                 truncation: str = "total") -> TruncatedChain:
    """Enumerate truncated count vectors and their one-step kernel.

    Events and probabilities are those of the simulator: arrival at k with
    lambda q_k / Q, departure from busy m with mu_m / Q routed by row m of R,
    and the self-loop holding the rest, Q = lambda + J max(mu).
    """
    if spec.num_classes != 1:
        raise ValueError("exact kernels are limited to single-class networks")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if truncation not in TRUNCATIONS:
        raise ValueError(f"truncation must be one of {TRUNCATIONS}")
    solve_traffic(spec)  # validates and certifies openness
    J = spec.num_servers
    limit = max_states() if limit is None else limit
    n_states = (cap + 1) ** J if truncation == "box" else comb(cap + J, J)
    if n_states > limit:
        raise StateSpaceTooLarge(f"{n_states} states exceed the bound {limit}")
    box = truncation == "box"
    states = _enumerate(J, cap, truncation)
    index = {s: i for i, s in enumerate(states)}
    q = spec.uniformization_rate()
    arr = spec.lam * spec.assign_prob[0] / q
    mu = spec.service_rate[0] / q
    r = spec.routing
    exit_p = 1.0 - r.sum(axis=1)

    rows, cols, vals = [], [], []
    for i, s in enumerate(states):
        out = 0.0
        for k in range(J):
            if box and s[k] == cap or not box and sum(s) == cap:
                continue
            if arr[k] > 0:
                t = list(s)
                t[k] += 1
                rows.append(i); cols.append(index[tuple(t)]); vals.append(arr[k])
                out += arr[k]
        for m in range(J):
            if s[m] == 0:
                continue
            for n in range(J):
                p = mu[m] * r[m, n]
                if p > 0 and n != m and not (box and s[n] == cap):
                    t = list(s)
                    t[m] -= 1
                    t[n] += 1
                    rows.append(i); cols.append(index[tuple(t)]); vals.append(p)
                    out += p
            p = mu[m] * exit_p[m]
            if p > 0:
                t = list(s)
                t[m] -= 1
                rows.append(i); cols.append(index[tuple(t)]); vals.append(p)
                out += p
        rows.append(i); cols.append(i); vals.append(1.0 - out)
    P = sparse.csr_matrix((vals, (rows, cols)), shape=(len(states), len(states)))
    P.sum_duplicates()
    return TruncatedChain(spec, cap, states, index, P, q, truncation)


def n_step_empty_prob(chain: TruncatedChain, x, j: int, n: int) -> float:
    """p^n_{x, X_j}: probability that server j is empty n steps after x."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return float(chain.distribution(x, n) @ chain.empty_indicator(j))


def empty_prob_table(chain: TruncatedChain, j: int, n_max: int) -> np.ndarray:
    """Array f[n, x] = p^n_{x, X_j} for 0 <= n <= n_max and every state x."""
    f = chain.empty_indicator(j)
    out = np.empty((n_max + 1, len(chain)))
    out[0] = f
    for n in range(1, n_max + 1):
        f = chain.P @ f
        out[n] = f
    return out


@dataclass
class LemmaReport:
    server: int
    cap: int
    n_max: int
    min_slack: float
    tightest_state: tuple
    tightest_n: int
    truncation_discrepancy: float
    interior_truncation_discrepancy: float
    tol: float = 1e-12

    @property
    def ok(self) -> bool:
        return bool(self.min_slack >= -self.tol)

    def to_dict(self) -> dict:
        return {
            "server": self.server, "cap": self.cap, "n_max": self.n_max,
            "ok": bool(self.ok), "min_slack": self.min_slack,
            "tightest_state": list(self.tightest_state), "tightest_n": self.tightest_n,
            "truncation_discrepancy": self.truncation_discrepancy,
            "interior_truncation_discrepancy": self.interior_truncation_discrepancy,
        }


def verify_lemma(chain: TruncatedChain, j: int, n_max: int, sensitivity: bool = True,
                 tol: float = 1e-12) -> LemmaReport:
    """Check p^n_{x,X_j} <= p^n_{0,X_j} for every state x and 1 <= n <= n_max.

    The truncation check rebuilds the chain at cap + 5 and reports the largest
    change of the tested probabilities (over all states, and over states at
    least five below the cap).
    """
    table = empty_prob_table(chain, j, n_max)
    zero = chain.idx([0] * chain.spec.num_servers)
    slack = table[1:, zero][:, None] - table[1:]
    n_i, x_i = np.unravel_index(int(np.argmin(slack)), slack.shape)
    disc = interior_disc = 0.0
    if sensitivity:
        bigger = build_kernel(chain.spec, chain.cap + 5, truncation=chain.truncation)
        big = empty_prob_table(bigger, j, n_max)
        mapped = np.array([bigger.index[s] for s in chain.states])
        diff = np.abs(big[:, mapped] - table)
        disc = float(diff.max())
        inner = chain.interior()
        interior_disc = float(diff[:, inner].max()) if inner.any() else 0.0
    return LemmaReport(j, chain.cap, n_max, float(slack.min()), chain.states[x_i],
                       int(n_i) + 1, disc, interior_disc, tol)


@dataclass
class ExactDrift:
    """Delta^k V_j(x) / k computed two ways.

    ``direct`` propagates the distribution and averages V_j; ``identity`` uses
    the busy-probability formula. On a truncated chain ``identity - direct``
    equals ``boundary``, the drift lost to transitions blocked by the cap.
    """

    direct: float
    identity: float
    boundary: float
    k: int

    @property
    def discrepancy(self) -> float:
        return abs(self.direct - self.identity)

    def agrees(self, tol: float = 1e-10) -> bool:
        return self.discrepancy <= tol


def _blocked_drift(chain: TruncatedChain, gamma, j: int) -> np.ndarray:
    """Per-state one-step drift of V_j that the truncation suppresses."""
    spec = chain.spec
    g = np.asarray(gamma, dtype=float)[:, j]
    counts = chain.counts()
    arr = spec.lam * spec.assign_prob[0] / chain.q
    if chain.truncation == "total":
        return (counts.sum(axis=1) == chain.cap) * float(arr @ g)
    full = counts == chain.cap
    lost = full @ (arr * g)
    mu = spec.service_rate[0] / chain.q
    r = spec.routing
    for m in range(spec.num_servers):
        busy = counts[:, m] > 0
        for n in range(spec.num_servers):
            if n != m and r[m, n] > 0:
                lost += (busy & full[:, n]) * mu[m] * r[m, n] * (g[n] - g[m])
    return lost


def exact_k_drift(chain: TruncatedChain, gamma, x, j: int, k: int) -> ExactDrift:
    spec = chain.spec
    if not spec.is_single_rate():
        raise NotSingleRate("the busy-probability identity needs one common service rate")
    if k < 1:
        raise ValueError("k must be >= 1")
    gamma = np.asarray(gamma, dtype=float)
    counts = chain.counts()
    v = counts @ gamma[:, j]
    busy = (counts[:, j] > 0).astype(float)
    blocked = _blocked_drift(chain, gamma, j)
    pt = chain.P.T.tocsr()
    pi = np.zeros(len(chain))
    pi[chain.idx(x)] = 1.0
    v0 = float(pi @ v)
    busy_sum = blocked_sum = 0.0
    for _ in range(k):
        busy_sum += float(pi @ busy)
        blocked_sum += float(pi @ blocked)
        pi = pt @ pi
    direct = (float(pi @ v) - v0) / k
    mu = spec.single_rate
    lam_j = float(solve_traffic(spec).arrival_rate[:, j].sum())
    identity = lam_j / chain.q - (mu / chain.q) * busy_sum / k
    return ExactDrift(direct, identity, blocked_sum / k, k)


def drift_direct_table(chain: TruncatedChain, gamma, j: int, k: int) -> np.ndarray:
    """(E_x[V_j(X^k)] - V_j(x)) / k for every state x, by k backward matvecs."""
    v = chain.counts() @ np.asarray(gamma, dtype=float)[:, j]
    f = v.copy()
    for _ in range(k):
        f = chain.P @ f
    return (f - v) / k


def drift_average_table(chain: TruncatedChain, gamma, j: int, k: int) -> np.ndarray:
    """Identity-form Delta^k V_j(x)/k for every state x at once."""
    spec = chain.spec
    if not spec.is_single_rate():
        raise NotSingleRate("the busy-probability identity needs one common service rate")
    busy = (chain.counts()[:, j] > 0).astype(float)
    acc = np.zeros(len(chain))
    f = busy
    for _ in range(k):
        acc += f
        f = chain.P @ f
    mu = spec.single_rate
    lam_j = float(solve_traffic(spec).arrival_rate[:, j].sum())
    return lam_j / chain.q - (mu / chain.q) * acc / k


def monotonicity_observation(chain: TruncatedChain, gamma, j: int, k: int) -> dict:
    """Report (never assert) whether x <= y componentwise gives avg(y) <= avg(x).

    Only pairs differing by one customer are compared; that suffices for the
    partial order's cover relation.
    """
    avg = drift_average_table(chain, gamma, j, k)
    worst = 0.0
    pairs = 0
    J = chain.spec.num_servers
    for i, s in enumerate(chain.states):
        for m in range(J):
            t = list(s)
            t[m] += 1
            t = tuple(t)
            if t in chain.index:
                pairs += 1
                worst = max(worst, avg[chain.index[t]] - avg[i])
    return {"server": j, "k": k, "pairs": pairs, "max_increase": worst,
            "monotone": bool(worst <= 1e-12)}


# the name used for the empty-probability comparison elsewhere
verify_lemma_monotonicity = verify_lemma
