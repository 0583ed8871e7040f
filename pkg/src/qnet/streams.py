"""Named, seed-addressed uniform substreams.

A draw is a function of (seed, key, stream name, draw index) only, so two
simulations built from the same seed see the same streams no matter what
their network parameters are. That property is what the coupled runs rely
on.
"""

from __future__ import annotations

import zlib

import numpy as np

_FIRST_BLOCK = 64
_MAX_BLOCK = 1 << 16


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class Stream:
    """Buffered iid U[0,1) stream; the generator is created on first draw."""

    __slots__ = ("seed", "key", "name", "_rng", "_buf", "_pos", "_block", "drawn")

    def __init__(self, seed: int, name: str, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self.name = name
        self._rng = None
        self._buf = []
        self._pos = 0
        self._block = _FIRST_BLOCK
        self.drawn = 0

    def _refill(self):
        if self._rng is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=(*self.key, _name_key(self.name)))
            self._rng = np.random.Generator(np.random.PCG64(ss))
        self._buf = self._rng.random(self._block).tolist()
        self._pos = 0
        self._block = min(self._block * 4, _MAX_BLOCK)

    def next(self) -> float:
        if self._pos >= len(self._buf):
            self._refill()
        u = self._buf[self._pos]
        self._pos += 1
        self.drawn += 1
        return u


class RandomStreams:
    """The substreams one simulated chain consumes.

    ``arrival``: one uniform per epoch (event selection; an arrival happens
    when it falls in the arrival interval). ``assign``: class/server of each
    arrival. ``service[j]``: one uniform each time server j's departure slot is
    selected. ``route[j]``: routing decisions of server j. ``policy``:
    scheduling tie-breaks.
    """

    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(key)
        self.arrival = Stream(seed, "arrival", self.key)
        self.assign = Stream(seed, "assign", self.key)
        self.policy = Stream(seed, "policy", self.key)
        self._service = {}
        self._route = {}

    def service(self, j: int) -> Stream:
        s = self._service.get(j)
        if s is None:
            s = self._service[j] = Stream(self.seed, f"service[{j}]", self.key)
        return s

    def route(self, j: int) -> Stream:
        s = self._route.get(j)
        if s is None:
            s = self._route[j] = Stream(self.seed, f"route[{j}]", self.key)
        return s
