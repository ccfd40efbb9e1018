"""Recorded trajectories, diffusion scaling and idle-period statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

PATH_HEADER = ("rep", "t", "X", "Q", "I", "xhat")
IDLE_HEADER = ("rep", "n", "s", "t_n", "sup_scaled", "inf_scaled", "count")


@dataclass
class PathRecord:
    """One replication: grid samples of (X, Q, I) plus counters.

    ``idle_intervals`` holds ``(server, start, end, initial)`` for every
    completed idle period, ``initial`` marking servers idle since time 0 that
    never served. Zero-length periods (start == end) come from departures
    that found a nonempty queue. ``open_idle`` lists ``(server, start,
    initial)`` for servers still idle at the horizon.
    """

    n: int
    N: int
    x0: int
    times: np.ndarray
    X: np.ndarray
    Q: np.ndarray
    I: np.ndarray
    arrivals: int
    departures: int
    routings: int
    event_count: int
    horizon: float
    idle_intervals: list | None = None
    open_idle: list | None = None
    events: np.ndarray | None = None
    max_h: float | None = None
    completions: np.ndarray | None = None
    busy_final: np.ndarray | None = None
    tracked_idle: np.ndarray | None = None

    def value_at(self, t: float, field: str = "X") -> int:
        """Grid sample of ``field`` at time ``t`` (must be a grid point)."""
        i = int(np.searchsorted(self.times, t - 1e-12))
        if i >= len(self.times) or abs(self.times[i] - t) > 1e-9:
            raise ValueError(f"t={t} is not on the recorded grid")
        return int(getattr(self, field)[i])


class ScaledSeries(NamedTuple):
    t: np.ndarray
    xhat: np.ndarray
    qhat: np.ndarray
    ihat: np.ndarray


def scale_path(path: PathRecord) -> ScaledSeries:
    """``xhat = (X - N)/sqrt(n)``, ``qhat = Q/sqrt(n)``, ``ihat = I/sqrt(n)``."""
    root = math.sqrt(path.n)
    return ScaledSeries(path.times.copy(), (path.X - path.N) / root, path.Q / root, path.I / root)


def scaled_value(path: PathRecord, t: float) -> float:
    return (path.value_at(t) - path.N) / math.sqrt(path.n)


class IdleWindow(NamedTuple):
    sup: float | None
    inf: float | None
    count: int

    @property
    def has_finishers(self) -> bool:
        return self.count > 0


NO_FINISHERS = IdleWindow(None, None, 0)


def idle_window_stats(path: PathRecord, s: float, t: float) -> IdleWindow:
    """Sup/inf of the last idle-period length over servers finishing one in ``[s, t]``.

    Only idle periods that start with a service completion count, so servers
    idle since time 0 are ignored until after their first job. Returns
    :data:`NO_FINISHERS` when no server qualifies.
    """
    if path.idle_intervals is None:
        raise ValueError("path was recorded without idle intervals")
    if not 0 < s < t:
        raise ValueError("idle window needs 0 < s < t")
    if t > path.horizon + 1e-12:
        raise ValueError("idle window extends past the recorded horizon")
    last = {}
    for k, start, end, initial in path.idle_intervals:
        if initial or end > t:
            continue
        prev = last.get(k)
        if prev is None or end >= prev[1]:
            last[k] = (start, end)
    lengths = [end - start for start, end in last.values() if end >= s]
    if not lengths:
        return NO_FINISHERS
    return IdleWindow(max(lengths), min(lengths), len(lengths))


@dataclass
class FairnessSamples:
    n: int
    s: float
    t_n: float
    reps: np.ndarray
    sup_scaled: np.ndarray
    inf_scaled: np.ndarray
    counts: np.ndarray
    skipped: int

    @property
    def gap(self) -> np.ndarray:
        return self.sup_scaled - self.inf_scaled

    def rows(self):
        for r, a, b, c in zip(self.reps, self.sup_scaled, self.inf_scaled, self.counts):
            yield int(r), self.n, self.s, self.t_n, float(a), float(b), int(c)


def fairness_window_end(s: float, c: float, n: int) -> float:
    return s + c * n ** -0.25


def fairness_experiment(paths, s: float, c: float, n: int, reps=None) -> FairnessSamples:
    """Scaled idle-period extremes ``sqrt(n) * (sup, inf)`` on ``[s, s + c n^(-1/4)]``.

    Replications without finishers in the window are skipped and counted.
    """
    t_n = fairness_window_end(s, c, n)
    root = math.sqrt(n)
    keep, sup, inf, cnt = [], [], [], []
    skipped = 0
    paths = list(paths)
    reps = range(len(paths)) if reps is None else reps
    for r, path in zip(reps, paths):
        w = idle_window_stats(path, s, t_n)
        if not w.has_finishers:
            skipped += 1
            continue
        keep.append(r)
        sup.append(root * w.sup)
        inf.append(root * w.inf)
        cnt.append(w.count)
    return FairnessSamples(n, s, t_n, np.asarray(keep, dtype=np.int64), np.asarray(sup, dtype=float),
                           np.asarray(inf, dtype=float), np.asarray(cnt, dtype=np.int64), skipped)


def path_rows(rep: int, path: PathRecord):
    root = math.sqrt(path.n)
    for t, x, q, i in zip(path.times.tolist(), path.X.tolist(), path.Q.tolist(), path.I.tolist()):
        yield rep, t, x, q, i, (x - path.N) / root


def write_rows(fh, header, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def write_path_csv(fh, paths) -> None:
    """``paths`` is an iterable of ``(rep, PathRecord)``; rows ordered by rep then t."""
    write_rows(fh, PATH_HEADER, (row for rep, p in sorted(paths, key=lambda rp: rp[0])
                                 for row in path_rows(rep, p)))


def write_idle_csv(fh, samples) -> None:
    write_rows(fh, IDLE_HEADER, (row for fs in samples for row in fs.rows()))
