"""Scalar probability laws used for service rates and initial conditions.

Every law exposes closed-form first and second moments and its essential
infimum/supremum, so that limit constants can be derived without sampling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError

PROB_TOL = 1e-12


class Law:
    """Base class: a real-valued law with analytic moments."""

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def second_moment(self) -> float:
        raise NotImplementedError

    @property
    def variance(self) -> float:
        return max(self.second_moment - self.mean**2, 0.0)

    @property
    def ess_inf(self) -> float:
        raise NotImplementedError

    @property
    def ess_sup(self) -> float:
        raise NotImplementedError

    def quantile(self, u):
        raise ConfigError(f"{type(self).__name__} has no quantile function")

    @property
    def is_degenerate(self) -> bool:
        return self.ess_inf == self.ess_sup


@dataclass(frozen=True)
class Discrete(Law):
    values: tuple
    probs: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        if not values or len(values) != len(probs):
            raise ConfigError("discrete law needs matching, nonempty values and probs")
        if any(p < 0 for p in probs):
            raise ConfigError("discrete law has a negative probability")
        if abs(sum(probs) - 1.0) > PROB_TOL:
            raise ConfigError(f"probabilities sum to {sum(probs)!r}, not 1")
        if not all(math.isfinite(v) for v in values):
            raise ConfigError("discrete law has a non-finite atom")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    def sample(self, rng, size):
        if len(self.values) == 1:
            return np.full(size, self.values[0])
        idx = rng.choice(len(self.values), size=size, p=np.asarray(self.probs))
        return np.asarray(self.values)[idx]

    @property
    def mean(self):
        return math.fsum(p * v for v, p in zip(self.values, self.probs))

    @property
    def second_moment(self):
        return math.fsum(p * v * v for v, p in zip(self.values, self.probs))

    @property
    def variance(self):
        m = self.mean
        return math.fsum(p * (v - m) ** 2 for v, p in zip(self.values, self.probs))

    def _support(self):
        return [v for v, p in zip(self.values, self.probs) if p > 0]

    @property
    def ess_inf(self):
        return min(self._support())

    @property
    def ess_sup(self):
        return max(self._support())

    def quantile(self, u):
        order = np.argsort(self.values, kind="stable")
        vals = np.asarray(self.values)[order]
        cdf = np.cumsum(np.asarray(self.probs)[order])
        idx = np.searchsorted(cdf, np.asarray(u), side="right")
        return vals[np.minimum(idx, len(vals) - 1)]


def constant(value: float) -> Discrete:
    return Discrete((value,), (1.0,))


@dataclass(frozen=True)
class Uniform(Law):
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ConfigError("uniform law needs low < high")

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def second_moment(self):
        a, b = self.low, self.high
        return (a * a + a * b + b * b) / 3.0

    @property
    def ess_inf(self):
        return self.low

    @property
    def ess_sup(self):
        return self.high

    def quantile(self, u):
        return self.low + (self.high - self.low) * np.asarray(u)


@dataclass(frozen=True)
class Normal(Law):
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.scale < 0:
            raise ConfigError("normal law needs scale >= 0")

    def sample(self, rng, size):
        return self.loc + self.scale * rng.standard_normal(size)

    @property
    def mean(self):
        return self.loc

    @property
    def second_moment(self):
        return self.loc**2 + self.scale**2

    @property
    def ess_inf(self):
        return -math.inf if self.scale > 0 else self.loc

    @property
    def ess_sup(self):
        return math.inf if self.scale > 0 else self.loc

    def quantile(self, u):
        return self.loc + self.scale * stats.norm.ppf(u)


@dataclass(frozen=True)
class TruncatedNormal(Law):
    """Normal(loc, scale) conditioned on [low, high]."""

    loc: float
    scale: float
    low: float = 0.0
    high: float = math.inf
    _dist: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.scale <= 0 or not self.low < self.high:
            raise ConfigError("truncated normal needs scale > 0 and low < high")
        a = (self.low - self.loc) / self.scale
        b = (self.high - self.loc) / self.scale
        object.__setattr__(self, "_dist", stats.truncnorm(a, b, loc=self.loc, scale=self.scale))

    def sample(self, rng, size):
        return self._dist.rvs(size=size, random_state=rng)

    @property
    def mean(self):
        return float(self._dist.mean())

    @property
    def second_moment(self):
        return float(self._dist.var() + self._dist.mean() ** 2)

    @property
    def variance(self):
        return float(self._dist.var())

    @property
    def ess_inf(self):
        return self.low

    @property
    def ess_sup(self):
        return self.high

    def quantile(self, u):
        return self._dist.ppf(u)


@dataclass(frozen=True)
class Mixture(Law):
    components: tuple
    weights: tuple

    def __post_init__(self):
        if not self.components or len(self.components) != len(self.weights):
            raise ConfigError("mixture needs matching, nonempty components and weights")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > PROB_TOL:
            raise ConfigError("mixture weights must be nonnegative and sum to 1")
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def sample(self, rng, size):
        which = rng.choice(len(self.components), size=size, p=np.asarray(self.weights))
        out = np.empty(size)
        for i, comp in enumerate(self.components):
            mask = which == i
            out[mask] = comp.sample(rng, int(mask.sum()))
        return out

    @property
    def mean(self):
        return math.fsum(w * c.mean for c, w in zip(self.components, self.weights))

    @property
    def second_moment(self):
        return math.fsum(w * c.second_moment for c, w in zip(self.components, self.weights))

    @property
    def ess_inf(self):
        return min(c.ess_inf for c, w in zip(self.components, self.weights) if w > 0)

    @property
    def ess_sup(self):
        return max(c.ess_sup for c, w in zip(self.components, self.weights) if w > 0)
