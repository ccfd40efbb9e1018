"""Event-exact simulation of the many-server queue under a routing policy.

Service is exponential. Two interchangeable service mechanisms exist:

* ``per_server``: each busy server carries its own exponential clock.
* ``pooled``: servers are partitioned into classes, each class runs one
  clock at the total busy rate of its members and a firing is attributed to
  a uniformly chosen busy member. With equal-rate classes this has the same
  law as ``per_server``.

Ties between an arrival and a departure at the same instant are resolved
departure first; departures of equal time are ordered by server index.
"""
from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvariantViolation
from .observables import PathRecord

PER_SERVER = "per_server"
POOLED = "pooled"
MECHANISMS = (PER_SERVER, POOLED)

ARRIVAL = "arrival"
DEPARTURE = "departure"


def _draws(fn, block=1024):
    while True:
        yield from fn(block).tolist()


@dataclass(frozen=True)
class ServiceMechanism:
    mode: str = PER_SERVER
    classes: np.ndarray | None = None

    @classmethod
    def per_server(cls):
        return cls(PER_SERVER)

    @classmethod
    def pooled(cls, rates, classes=None):
        """Pooled clocks; by default one class per distinct rate value."""
        rates = np.asarray(rates, dtype=float)
        if classes is None:
            _, classes = np.unique(rates, return_inverse=True)
        classes = np.asarray(classes, dtype=np.int64).reshape(-1)
        if len(classes) != len(rates):
            raise ConfigError("partition must assign a class to every server")
        for c in np.unique(classes):
            r = rates[classes == c]
            if np.ptp(r) > 0:
                warnings.warn(f"class {c} mixes rates; uniform attribution is not law preserving",
                              RuntimeWarning, stacklevel=2)
        return cls(POOLED, classes)

    def __post_init__(self):
        if self.mode not in MECHANISMS:
            raise ConfigError(f"unknown service mechanism {self.mode!r}")
        if self.mode == POOLED and self.classes is None:
            raise ConfigError("pooled mechanism needs a partition of the servers")


def per_server_next_departure(rate: float, clock: float, rng: np.random.Generator) -> float:
    """Completion epoch of a job started at ``clock`` on a server of rate ``rate``."""
    if rate <= 0:
        return math.inf
    return clock + rng.standard_exponential() / rate


def pooled_next_event(class_busy, rates, clock: float, rng: np.random.Generator):
    """Next pooled firing among classes with busy members.

    ``class_busy[i]`` lists the busy servers of class i. Each class fires after
    an exponential time at rate ``sum(rates[k] for k in class_busy[i])``; the
    departing server is uniform over that busy list. Returns
    ``(class index, time, server)`` or ``None`` if no class can fire.
    """
    best = None
    for i, members in enumerate(class_busy):
        total = sum(rates[k] for k in members)
        if not members or total <= 0:
            continue
        t = clock + rng.standard_exponential() / total
        if best is None or t < best[1]:
            best = (i, t)
    if best is None:
        return None
    members = class_busy[best[0]]
    return best[0], best[1], members[int(rng.integers(len(members)))]


@dataclass
class SystemState:
    """Snapshot of the system used for invariant reports."""

    clock: float
    x: int
    x0: int
    N: int
    queue_len: int
    q0: int
    arrivals_seen: int
    busy: list
    busy0: list
    routings: list
    completions: list
    idle_count: int | None = None
    departures_total: int | None = None
    routings_total: int | None = None
    event_index: int = 0
    event_kind: str = ""
    server: int | None = None

    @classmethod
    def fresh(cls, init):
        busy = [int(b) for b in init.busy0]
        n_srv = len(busy)
        return cls(0.0, init.x0, init.x0, n_srv, init.q0, init.q0, 0, busy, list(busy),
                   [0] * n_srv, [0] * n_srv, n_srv - sum(busy), 0, 0)


@dataclass
class InvariantReport:
    ok: bool
    tag: str = ""
    message: str = ""
    context: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "pass"
        ctx = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"FAIL [{self.tag}] {self.message} ({ctx})"


def verify_event_invariants(state: SystemState) -> InvariantReport:
    """Check flow balance, work conservation and the per-server busy identity.

    All checks are exact integer comparisons; the first violation is returned.
    """
    ctx = {"event": state.event_index, "kind": state.event_kind or "-",
           "t": state.clock, "server": state.server}
    d_sum = sum(state.completions)
    r_sum = sum(state.routings)
    for k, (b, b0, r, d) in enumerate(zip(state.busy, state.busy0, state.routings, state.completions)):
        if b != b0 + r - d or b not in (0, 1):
            return InvariantReport(False, "server identity",
                                   f"B_{k}={b} but B0+R-D={b0 + r - d}", ctx)
    if state.x != state.x0 + state.arrivals_seen - d_sum:
        return InvariantReport(False, "flow balance",
                               f"X={state.x} but X0+A-D={state.x0 + state.arrivals_seen - d_sum}", ctx)
    if state.departures_total is not None and state.departures_total != d_sum:
        return InvariantReport(False, "flow balance", "departure counter disagrees with sum of D_k", ctx)
    if state.queue_len != state.q0 + state.arrivals_seen - r_sum:
        return InvariantReport(False, "queue balance",
                               f"Q={state.queue_len} but Q0+A-R={state.q0 + state.arrivals_seen - r_sum}", ctx)
    idle = state.N - sum(state.busy)
    if state.idle_count is not None and state.idle_count != idle:
        return InvariantReport(False, "idle count", f"pool holds {state.idle_count} but {idle} idle", ctx)
    excess = state.x - state.N
    if state.queue_len != max(excess, 0) or idle != max(-excess, 0):
        return InvariantReport(False, "work conservation",
                               f"Q={state.queue_len}, I={idle} but X-N={excess}", ctx)
    return InvariantReport(True)


@dataclass
class Recorder:
    """What a replication records besides the final counters.

    ``grid`` holds sample times (state after all events at or before each
    time). ``track`` is an optional boolean mask of servers whose idle count
    is sampled alongside X. ``observers`` are called as
    ``obs(kind, t, server, X, Q, I)`` after every event.
    """

    grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    record_events: bool = False
    record_intervals: bool = False
    track: np.ndarray | None = None
    track_h: bool = False
    observers: tuple = ()

    @classmethod
    def uniform(cls, horizon, step=0.01, **kw):
        m = int(math.floor(horizon / step + 1e-9))
        return cls(grid=np.round(np.arange(m + 1) * step, 12), **kw)


def _rescheduler(members, cls_rate, rates, version, heap, exp_draw):
    """Restart the clock of class c at the current total busy rate."""
    def reschedule(c, now):
        version[c] += 1
        rc = cls_rate[c]
        total = len(members[c]) * rc if rc is not None else math.fsum(rates[j] for j in members[c])
        if total > 0:
            heapq.heappush(heap, (now + exp_draw() / total, c, version[c]))
    return reschedule


def _fail(state: SystemState):
    report = verify_event_invariants(state)
    if report.ok:
        report = InvariantReport(False, "counter mismatch", "fast check disagreed with full check",
                                 {"event": state.event_index, "kind": state.event_kind, "t": state.clock,
                                  "server": state.server})
    raise InvariantViolation(report)


def run_replication(env, init, pool, arrivals, horizon: float, *,
                    service_rng: np.random.Generator,
                    mechanism: ServiceMechanism | None = None,
                    attribution_rng: np.random.Generator | None = None,
                    recorder: Recorder | None = None,
                    check_invariants: bool = True,
                    inject_fault_at: int | None = None) -> PathRecord:
    """Simulate one replication on ``[0, horizon]``.

    ``pool`` is an idle-server pool from :mod:`manyserver.policies`; under P2
    the environment must be sorted by rate. With ``check_invariants`` every
    event checks flow balance, queue balance and work conservation, and the
    end of the run checks the busy identity of every server. Raises
    :class:`InvariantViolation` on the first failure (including a policy that
    hands out a busy or unknown server). ``inject_fault_at`` is a test hook: at the first
    event with index at least this value where Q or I is positive, the state
    is corrupted so that both are (balanced counters, broken work
    conservation). Only meaningful with ``check_invariants``.
    """
    mechanism = mechanism or ServiceMechanism.per_server()
    rec = recorder or Recorder()
    N = env.N
    if init.N != N:
        raise ConfigError("initial state and environment disagree on N")
    rates = [float(r) for r in env.rates]
    busy = [int(b) for b in init.busy0]
    b0 = list(busy)
    R = [0] * N
    D = [0] * N
    idle_since = [0.0 if not b else math.nan for b in busy]
    fresh_idle = [not b for b in busy]
    x0 = x = int(init.x0)
    q0 = q = int(init.q0)
    idle = N - sum(busy)
    A = Dtot = Rtot = 0
    for k in range(N):
        if not busy[k]:
            pool.push(k, 0.0)

    if rec.track is not None:
        trk = [int(v) for v in np.asarray(rec.track, dtype=bool)]
        tracked = int(np.sum(np.asarray(trk, dtype=bool) & ~np.asarray(busy, dtype=bool)))
    else:
        trk = [0] * N
        tracked = 0
    intervals = [] if rec.record_intervals else None
    events = [] if rec.record_events else None
    observers = tuple(rec.observers)
    track_h = rec.track_h and hasattr(pool, "head")
    max_h = 0.0

    grid = np.asarray(rec.grid, dtype=float)
    grid = grid[grid <= horizon].tolist()
    n_grid = len(grid)
    gX, gQ, gI, gT, gTr = [], [], [], [], []
    gi = 0

    exp_draw = _draws(service_rng.standard_exponential).__next__
    pooled = mechanism.mode == POOLED
    heap = []
    if pooled:
        if attribution_rng is None:
            raise ConfigError("pooled mechanism needs an attribution generator")
        cls_of = [int(c) for c in mechanism.classes]
        n_cls = max(cls_of) + 1 if cls_of else 0
        members = [[] for _ in range(n_cls)]
        pos = [-1] * N
        version = [0] * n_cls
        uni_draw = _draws(attribution_rng.random).__next__
        for k in range(N):
            if busy[k]:
                pos[k] = len(members[cls_of[k]])
                members[cls_of[k]].append(k)

        cls_rate = [None] * n_cls
        arr_rates, arr_cls = np.asarray(rates), np.asarray(cls_of)
        for c in range(n_cls):
            r = np.unique(arr_rates[arr_cls == c])
            cls_rate[c] = float(r[0]) if len(r) == 1 else None
        reschedule = _rescheduler(members, cls_rate, rates, version, heap, exp_draw)
        for c in range(n_cls):
            reschedule(c, 0.0)
    else:
        for k in range(N):
            if busy[k] and rates[k] > 0:
                heap.append((exp_draw() / rates[k], k))
        heapq.heapify(heap)

    next_arrival = arrivals.next_arrival
    heappop, heappush = heapq.heappop, heapq.heappush
    t_arr = next_arrival()
    n_events = 0
    while True:
        if heap and heap[0][0] <= t_arr:
            t = heap[0][0]
            if t > horizon:
                break
            kind = DEPARTURE
        else:
            t = t_arr
            if t > horizon:
                break
            kind = ARRIVAL
        while gi < n_grid and grid[gi] < t:
            gT.append(grid[gi]); gX.append(x); gQ.append(q); gI.append(idle); gTr.append(tracked)
            gi += 1
        if track_h and idle:
            h = t - idle_since[pool.head()]
            if h > max_h:
                max_h = h
        n_events += 1

        if kind is DEPARTURE:
            if pooled:
                _, c, ver = heappop(heap)
                if ver != version[c]:
                    n_events -= 1
                    continue
                mem = members[c]
                k = mem[int(uni_draw() * len(mem))]
            else:
                _, k = heappop(heap)
            D[k] += 1
            Dtot += 1
            x -= 1
            if q > 0:
                q -= 1
                R[k] += 1
                Rtot += 1
                if intervals is not None:
                    intervals.append((k, t, t, False))
                if pooled:
                    reschedule(c, t)
                elif rates[k] > 0:
                    heappush(heap, (t + exp_draw() / rates[k], k))
            else:
                busy[k] = 0
                idle += 1
                tracked += trk[k]
                idle_since[k] = t
                fresh_idle[k] = False
                pool.push(k, t)
                if pooled:
                    last = mem.pop()
                    if last != k:
                        p = pos[k]
                        mem[p] = last
                        pos[last] = p
                    pos[k] = -1
                    reschedule(c, t)
        else:
            A += 1
            x += 1
            if idle:
                k = pool.pop()
                if not (0 <= k < N) or busy[k]:
                    raise InvariantViolation(InvariantReport(
                        False, "policy", f"policy returned unavailable server {k}",
                        {"event": n_events, "kind": kind, "t": t, "server": k}))
                busy[k] = 1
                idle -= 1
                tracked -= trk[k]
                R[k] += 1
                Rtot += 1
                if intervals is not None:
                    intervals.append((k, idle_since[k], t, fresh_idle[k]))
                fresh_idle[k] = False
                if pooled:
                    c = cls_of[k]
                    pos[k] = len(members[c])
                    members[c].append(k)
                    reschedule(c, t)
                elif rates[k] > 0:
                    heappush(heap, (t + exp_draw() / rates[k], k))
            else:
                k = -1
                q += 1
            t_arr = next_arrival()

        if inject_fault_at is not None and n_events >= inject_fault_at and (idle or q):
            # counter-consistent faults that break only work conservation
            if idle:  # an arrival queued while a server is idle
                A += 1
                x += 1
                q += 1
            else:  # a server frees up but leaves the queue waiting
                k = busy.index(1)
                busy[k] = 0
                D[k] += 1
                Dtot += 1
                x -= 1
                idle += 1
            inject_fault_at = None
        if check_invariants:
            # Q = (X-N)+ and I = Q - (X-N) is exactly Q = (X-N)+, I = (X-N)-; the
            # per-server identity is checked for every server at the end of the run
            if (x + Dtot - A != x0 or q + Rtot - A != q0
                    or q != (x - N if x > N else 0) or idle != q - x + N):
                _fail(SystemState(t, x, x0, N, q, q0, A, busy, b0, R, D, idle, Dtot, Rtot, n_events, kind, k))
        if events is not None:
            events.append((t, x, q, idle))
        for obs in observers:
            obs(kind, t, k, x, q, idle)

    while gi < n_grid:
        gT.append(grid[gi]); gX.append(x); gQ.append(q); gI.append(idle); gTr.append(tracked)
        gi += 1
    if check_invariants:
        st = SystemState(min(t, horizon), x, x0, N, q, q0, A, busy, b0, R, D, len(pool), Dtot, Rtot,
                         n_events, "end", None)
        report = verify_event_invariants(st)
        if not report:
            raise InvariantViolation(report)

    open_idle = []
    for k in range(N):
        if not busy[k]:
            open_idle.append((k, idle_since[k], fresh_idle[k]))
    return PathRecord(
        n=env.n, N=N, x0=x0,
        times=np.asarray(gT, dtype=float), X=np.asarray(gX, dtype=np.int64),
        Q=np.asarray(gQ, dtype=np.int64), I=np.asarray(gI, dtype=np.int64),
        arrivals=A, departures=Dtot, routings=Rtot, event_count=n_events, horizon=horizon,
        idle_intervals=intervals, open_idle=open_idle,
        events=None if events is None else np.asarray(events, dtype=float).reshape(-1, 4),
        max_h=max_h if track_h else None,
        tracked_idle=np.asarray(gTr, dtype=np.int64) if rec.track is not None else None,
        completions=np.asarray(D, dtype=np.int64), busy_final=np.asarray(busy, dtype=np.int8),
    )
