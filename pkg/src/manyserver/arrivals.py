"""Renewal arrival streams built from unit-mean interarrival variables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

FAMILIES = ("deterministic", "exponential", "erlang", "hyperexponential2", "uniform", "lognormal")
SOLVE_TOL = 1e-12


@dataclass(frozen=True)
class InterarrivalLaw:
    """A positive interarrival law with mean exactly 1 and squared CV ``c_u_sq``.

    ``params`` holds the solved family parameters:
    erlang ``shape``; hyperexponential2 ``p, r1, r2`` (branch probability and
    rates); uniform ``a, b``; lognormal ``mu_log, sigma_log``.
    """

    family: str
    c_u_sq: float
    params: dict = field(default_factory=dict)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        f, p = self.family, self.params
        if f == "deterministic":
            return np.ones(size)
        if f == "exponential":
            return rng.standard_exponential(size)
        if f == "erlang":
            k = p["shape"]
            return rng.standard_gamma(k, size) / k
        if f == "hyperexponential2":
            branch = rng.random(size) < p["p"]
            rate = np.where(branch, p["r1"], p["r2"])
            return rng.standard_exponential(size) / rate
        if f == "uniform":
            return rng.uniform(p["a"], p["b"], size)
        if f == "lognormal":
            return rng.lognormal(p["mu_log"], p["sigma_log"], size)
        raise ConfigError(f"unknown interarrival family {f!r}")

    @property
    def mean(self) -> float:
        return 1.0

    @property
    def variance(self) -> float:
        return self.c_u_sq


def make_interarrival_law(family: str, c_u_sq: float, shape: int | None = None) -> InterarrivalLaw:
    """Solve family parameters for mean 1 and the requested SCV.

    Raises :class:`ConfigError` naming the feasible SCV range when the pair
    cannot be met.
    """
    c = float(c_u_sq)
    if c < 0 or not math.isfinite(c):
        raise ConfigError(f"SCV must be a finite nonnegative number, got {c_u_sq!r}")
    if family == "deterministic":
        _require(c == 0.0, family, c, "SCV = 0")
        return InterarrivalLaw(family, 0.0)
    if family == "exponential":
        _require(c == 1.0, family, c, "SCV = 1")
        return InterarrivalLaw(family, 1.0)
    if family == "erlang":
        if shape is None:
            _require(c > 0, family, c, "SCV = 1/k for integer k >= 1")
            shape = round(1.0 / c)
        _require(shape >= 1 and abs(c - 1.0 / shape) <= SOLVE_TOL, family, c,
                 f"SCV = 1/shape = {1.0 / max(shape, 1)!r} for shape {shape}")
        return InterarrivalLaw(family, c, {"shape": int(shape)})
    if family == "hyperexponential2":
        _require(c >= 1.0, family, c, "SCV >= 1")
        # balanced means: p/r1 = (1-p)/r2 = 1/2
        s = math.sqrt((c - 1.0) / (c + 1.0))
        p = 0.5 * (1.0 + s)
        return InterarrivalLaw(family, c, {"p": p, "r1": 2.0 * p, "r2": 2.0 * (1.0 - p)})
    if family == "uniform":
        _require(c <= 1.0 / 3.0, family, c, "0 <= SCV <= 1/3")
        w = math.sqrt(3.0 * c)
        return InterarrivalLaw(family, c, {"a": 1.0 - w, "b": 1.0 + w})
    if family == "lognormal":
        _require(c > 0, family, c, "SCV > 0")
        sigma_sq = math.log1p(c)
        return InterarrivalLaw(family, c, {"mu_log": -0.5 * sigma_sq, "sigma_log": math.sqrt(sigma_sq)})
    raise ConfigError(f"unknown interarrival family {family!r}; choose one of {', '.join(FAMILIES)}")


def _require(ok, family, c, feasible):
    if not ok:
        raise ConfigError(f"SCV {c!r} infeasible for {family} interarrivals (feasible: {feasible})")


class ArrivalStream:
    """Arrival epochs ``sum_{i<=l} U(i) / lambda_n`` of a renewal process.

    The first epoch is one full gap after time 0.
    """

    BLOCK = 1024

    def __init__(self, lambda_n: float, law: InterarrivalLaw, rng: np.random.Generator):
        if not lambda_n > 0:
            raise ConfigError(f"arrival rate must be positive, got {lambda_n!r}")
        self.lambda_n = float(lambda_n)
        self.law = law
        self.rng = rng
        self.epoch = 0.0
        self.count = 0
        self._gaps = self._gap_iter()

    def _gap_iter(self):
        while True:
            yield from (self.law.sample(self.rng, self.BLOCK) / self.lambda_n).tolist()

    def next_arrival(self) -> float:
        self.epoch += next(self._gaps)
        self.count += 1
        return self.epoch

    def count_until(self, t: float) -> int:
        """Advance the stream and return ``A(t)``; the stream is consumed."""
        while self.next_arrival() <= t:
            pass
        return self.count - 1
