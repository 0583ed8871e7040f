"""Work-conserving scheduling disciplines for a single server.

Each queue class keeps the customers at one server and names the one in
service. A nonempty queue always has a customer in service.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass


class Customer:
    __slots__ = ("id", "cls", "buffer", "arrival_epoch", "server_epoch", "remaining_route")

    def __init__(self, id, cls, buffer, arrival_epoch, remaining_route=None):
        self.id = id
        self.cls = cls
        # service-rate/priority index; equals cls unless routes are class dependent
        self.buffer = buffer
        self.arrival_epoch = arrival_epoch
        self.server_epoch = arrival_epoch
        self.remaining_route = remaining_route

    def __repr__(self):
        return f"Customer(id={self.id}, cls={self.cls}, buffer={self.buffer})"


def _arrival_order(customers):
    return sorted(customers, key=lambda c: (c.server_epoch, c.id))


class FifoQueue:
    __slots__ = ("_q",)

    def __init__(self):
        self._q = deque()

    def __len__(self):
        return len(self._q)

    def add(self, c):
        self._q.append(c)

    def serving(self):
        return self._q[0] if self._q else None

    def pop_serving(self):
        return self._q.popleft()

    def customers(self):
        return list(self._q)


class LifoQueue:
    """Preemptive LIFO: the most recent arrival is always in service."""

    __slots__ = ("_q",)

    def __init__(self):
        self._q = []

    def __len__(self):
        return len(self._q)

    def add(self, c):
        self._q.append(c)

    def serving(self):
        return self._q[-1] if self._q else None

    def pop_serving(self):
        return self._q.pop()

    def customers(self):
        return list(self._q)


class PriorityQueue:
    """Preemptive static priority over buffers, FIFO within a buffer."""

    __slots__ = ("_order", "_qs", "_n")

    def __init__(self, order):
        self._order = tuple(order)
        self._qs = {b: deque() for b in self._order}
        self._n = 0

    def __len__(self):
        return self._n

    def add(self, c):
        q = self._qs.get(c.buffer)
        if q is None:
            raise ValueError(f"buffer {c.buffer} missing from priority order {self._order}")
        q.append(c)
        self._n += 1

    def serving(self):
        if not self._n:
            return None
        for b in self._order:
            q = self._qs[b]
            if q:
                return q[0]
        return None

    def pop_serving(self):
        for b in self._order:
            q = self._qs[b]
            if q:
                self._n -= 1
                return q.popleft()
        raise IndexError("pop from empty queue")

    def customers(self):
        return _arrival_order(c for q in self._qs.values() for c in q)


class RandomOrderQueue:
    """Service in random order, non-preemptive.

    When a service completes, the next customer is drawn uniformly from those
    waiting using the policy stream.
    """

    __slots__ = ("_q", "_current", "_stream")

    def __init__(self, stream):
        self._q = []          # waiting customers, arrival order
        self._current = None
        self._stream = stream

    def __len__(self):
        return len(self._q) + (self._current is not None)

    def add(self, c):
        if self._current is None:
            self._current = c
        else:
            self._q.append(c)

    def serving(self):
        return self._current

    def pop_serving(self):
        c = self._current
        if c is None:
            raise IndexError("pop from empty queue")
        if self._q:
            i = int(self._stream.next() * len(self._q))
            self._current = self._q.pop(min(i, len(self._q) - 1))
        else:
            self._current = None
        return c

    def customers(self):
        out = list(self._q)
        if self._current is not None:
            out.append(self._current)
        return _arrival_order(out)


@dataclass(frozen=True)
class PolicyKind:
    """A stationary work-conserving discipline applied at every server.

    ``order`` lists buffers from highest to lowest priority; only used by
    ``priority``. When omitted, buffers are ranked by index. ``server_orders``
    gives a separate ranking per server and overrides ``order``.
    """

    name: str
    order: tuple = ()
    server_orders: tuple = ()

    NAMES = ("fifo", "lifo", "priority", "random")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise ValueError(f"unknown policy {self.name!r}; choose from {', '.join(self.NAMES)}")
        object.__setattr__(self, "order", tuple(int(b) for b in self.order))
        object.__setattr__(self, "server_orders",
                           tuple(tuple(int(b) for b in o) for o in self.server_orders))

    @classmethod
    def parse(cls, text) -> "PolicyKind":
        """Parse ``fifo``, ``lifo``, ``random``, ``priority``, ``priority:2,0,1``
        or per-server ``priority:1,0/0,1``."""
        if isinstance(text, PolicyKind):
            return text
        name, _, rest = str(text).strip().lower().partition(":")
        if "/" in rest:
            orders = tuple(tuple(int(t) for t in part.split(",") if t.strip())
                           for part in rest.split("/"))
            return cls(name, (), orders)
        order = tuple(int(t) for t in rest.split(",") if t.strip()) if rest else ()
        return cls(name, order)

    def __str__(self):
        if self.name == "priority" and self.server_orders:
            return "priority:" + "/".join(",".join(map(str, o)) for o in self.server_orders)
        if self.name == "priority" and self.order:
            return "priority:" + ",".join(map(str, self.order))
        return self.name

    def make_queue(self, num_buffers: int, stream, server: int = 0):
        if self.name == "fifo":
            return FifoQueue()
        if self.name == "lifo":
            return LifoQueue()
        if self.name == "random":
            return RandomOrderQueue(stream)
        base = self.server_orders[server] if self.server_orders else self.order
        order = list(base) or list(range(num_buffers))
        order += [b for b in range(num_buffers) if b not in order]
        return PriorityQueue(order)


FIFO = PolicyKind("fifo")
LIFO = PolicyKind("lifo")
PRIORITY = PolicyKind("priority")
RANDOM = PolicyKind("random")
ALL_POLICIES = (FIFO, LIFO, PRIORITY, RANDOM)
