"""Routing policies.

Two views of each policy are provided: a pure decision function over an
explicit set of available servers (``p1_choose`` and friends), and an
incremental pool the engine keeps up to date as servers become idle and
get routed. The pools reproduce the pure functions on every reachable state.
"""
from __future__ import annotations

import heapq
from collections import deque
from typing import NamedTuple

import numpy as np


class Available(NamedTuple):
    server: int
    idle_since: float
    rate: float = 0.0


def p1_choose(avail) -> int:
    """Longest-idle-server-first: minimal ``idle_since``, ties to the minimal id."""
    if not avail:
        raise ValueError("p1_choose called with no available server")
    return min(avail, key=lambda a: (a[1], a[0]))[0]


def p2_choose(avail) -> int:
    """Fastest-server-first on rate-ascending labels: the maximal id."""
    if not avail:
        raise ValueError("p2_choose called with no available server")
    return max(a[0] if isinstance(a, tuple) else a for a in avail)


class P1Pool:
    """FIFO of idle servers ordered by the time they became idle.

    Pushes happen in nondecreasing time order (initial idlers at t=0 in
    index order), so a deque is enough to realize the min-time/min-index rule.
    """

    name = "p1"

    def __init__(self):
        self._fifo = deque()
        self._last = -np.inf

    def push(self, server: int, t: float) -> None:
        if t < self._last:
            raise ValueError("P1 pool pushes must be time ordered")
        self._last = t
        self._fifo.append(server)

    def pop(self) -> int:
        if not self._fifo:
            raise IndexError("pop from an empty P1 pool")
        return self._fifo.popleft()

    def head(self):
        return self._fifo[0] if self._fifo else None

    def __len__(self):
        return len(self._fifo)

    def __iter__(self):
        return iter(self._fifo)


class P2Pool:
    """Ordered set of idle servers; pop returns the largest label."""

    name = "p2"

    def __init__(self):
        self._heap = []

    def push(self, server: int, t: float) -> None:
        heapq.heappush(self._heap, -server)

    def pop(self) -> int:
        if not self._heap:
            raise IndexError("pop from an empty P2 pool")
        return -heapq.heappop(self._heap)

    def __len__(self):
        return len(self._heap)

    def __iter__(self):
        return (-s for s in self._heap)


class RandomPool:
    """Uniformly random available server (comparison baseline)."""

    name = "random"

    def __init__(self, rng: np.random.Generator):
        self._items = []
        self._rng = rng

    def push(self, server: int, t: float) -> None:
        self._items.append(server)

    def pop(self) -> int:
        if not self._items:
            raise IndexError("pop from an empty random pool")
        i = int(self._rng.integers(len(self._items)))
        items = self._items
        items[i], items[-1] = items[-1], items[i]
        return items.pop()

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


POLICIES = ("p1", "p2", "random")


def make_pool(policy: str, rng: np.random.Generator | None = None):
    if policy == "p1":
        return P1Pool()
    if policy == "p2":
        return P2Pool()
    if policy == "random":
        if rng is None:
            raise ValueError("random policy needs a generator")
        return RandomPool(rng)
    raise ValueError(f"unknown policy {policy!r}; choose p1, p2 or random")
