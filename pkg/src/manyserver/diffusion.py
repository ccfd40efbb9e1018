"""Random-drift limit diffusions and their Euler discretization.

The limit process solves

    xi(t) = xi0 + sigma w(t) + beta t + g * int_0^t xi(s)^- ds

with ``g = gamma`` under longest-idle-first routing and ``g = mu_min`` under
fastest-server-first. The drift ``beta = lambda_hat - mu_hat - zeta - mu nu``
is random through the environment term ``zeta ~ N(0, Var mu_tilde)`` and the
server-count fluctuation ``nu``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .environment import InitialStateSpec, LimitParams, sample_xi0_nu
from .errors import ConfigError

GAMMA_MODE = "gamma"
MU_MIN_MODE = "mu_min"
MODES = (GAMMA_MODE, MU_MIN_MODE)


@dataclass(frozen=True)
class DriftSample:
    """Per-path initial values and drift components (arrays of equal length)."""

    xi0: np.ndarray
    zeta: np.ndarray
    nu: np.ndarray
    beta: np.ndarray

    def __len__(self):
        return len(self.beta)

    @classmethod
    def fixed(cls, xi0: float, beta: float, size: int = 1):
        z = np.zeros(size)
        return cls(np.full(size, float(xi0)), z, z.copy(), np.full(size, float(beta)))


def sample_drift(params: LimitParams, init: InitialStateSpec, rng: np.random.Generator,
                 size: int = 1, zeta_rng: np.random.Generator | None = None) -> DriftSample:
    """Draw ``size`` independent ``(xi0, nu, zeta)`` triples and compose ``beta``.

    ``(xi0, nu)`` come from ``rng``; ``zeta`` from ``zeta_rng`` when given.
    Deterministic environments have ``zeta = 0``.
    """
    xi0, nu = sample_xi0_nu(init, rng, size)
    zr = rng if zeta_rng is None else zeta_rng
    sd = math.sqrt(params.zeta_var)
    zeta = sd * zr.standard_normal(size) if sd > 0 else np.zeros(size)
    beta = params.lambda_hat - params.mu_hat_mean - zeta - params.mu * nu
    return DriftSample(xi0, zeta, nu, beta)


@dataclass(frozen=True)
class DiffusionSpec:
    """Integration setup.

    ``noise_refinement`` r builds each Brownian increment from r standard
    normals, so a run at step h with r=2 shares its noise with a run at step
    h/2 and r=1.
    """

    sigma: float
    drift_coeff: float
    step: float = 1e-3
    horizon: float = 2.0
    paths: int = 4000
    store_every: int = 1
    noise_refinement: int = 1
    mode: str = ""

    def __post_init__(self):
        if self.sigma < 0 or self.step <= 0 or self.horizon < 0:
            raise ConfigError("diffusion needs sigma >= 0, step > 0, horizon >= 0")
        if self.drift_coeff < 0:
            raise ConfigError("drift coefficient of the idleness term must be >= 0")
        if self.store_every < 1 or self.noise_refinement < 1:
            raise ConfigError("store_every and noise_refinement must be >= 1")
        m = self.horizon / self.step
        if abs(m - round(m)) > 1e-6 * max(1.0, m):
            raise ConfigError(f"horizon {self.horizon} is not a multiple of step {self.step}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    @classmethod
    def from_params(cls, params: LimitParams, mode: str = GAMMA_MODE, sigma: float | None = None,
                    drift_coeff: float | None = None, **kw):
        """Coefficients from ``params``; ``sigma``/``drift_coeff`` override them when given."""
        if mode == GAMMA_MODE:
            g = params.gamma
        elif mode == MU_MIN_MODE:
            g = params.mu_min
        else:
            raise ConfigError(f"unknown drift mode {mode!r}; choose gamma or mu_min")
        return cls(sigma=params.sigma if sigma is None else float(sigma),
                   drift_coeff=g if drift_coeff is None else float(drift_coeff), mode=mode, **kw)


@dataclass
class DiffusionPaths:
    """Euler trajectories stored on ``times`` (every ``store_every`` steps)."""

    times: np.ndarray
    values: np.ndarray  # shape (len(times), n_paths)
    drift: DriftSample
    spec: DiffusionSpec

    def path(self, i: int) -> np.ndarray:
        return self.values[:, i]


def euler_paths(drift: DriftSample, spec: DiffusionSpec, rng: np.random.Generator) -> DiffusionPaths:
    """Integrate all paths in lockstep.

    ``xi[j+1] = xi[j] + (beta + g * max(-xi[j], 0)) h + sigma sqrt(h) Z[j]``.
    """
    h, g, r = spec.step, spec.drift_coeff, spec.noise_refinement
    n_paths = len(drift)
    beta = np.asarray(drift.beta, dtype=float)
    xi = np.array(drift.xi0, dtype=float)
    scale = spec.sigma * math.sqrt(h)
    m = spec.n_steps
    stored = [xi.copy()]
    times = [0.0]
    for j in range(1, m + 1):
        if r == 1:
            z = rng.standard_normal(n_paths)
        else:
            z = rng.standard_normal((r, n_paths)).sum(axis=0) / math.sqrt(r)
        xi = xi + (beta + g * np.maximum(-xi, 0.0)) * h + scale * z
        if j % spec.store_every == 0 or j == m:
            stored.append(xi.copy())
            times.append(j * h)
    return DiffusionPaths(np.asarray(times), np.vstack(stored), drift, spec)


def euler_path(drift: DriftSample, spec: DiffusionSpec, rng: np.random.Generator) -> np.ndarray:
    """Single trajectory on the full step grid (``drift`` of length 1)."""
    if len(drift) != 1:
        raise ValueError("euler_path integrates exactly one path")
    full = DiffusionSpec(spec.sigma, spec.drift_coeff, spec.step, spec.horizon, 1, 1,
                         spec.noise_refinement, spec.mode)
    return euler_paths(drift, full, rng).values[:, 0]


def marginal_at(paths: DiffusionPaths, t: float) -> np.ndarray:
    """Values of all paths at time ``t``, in path order.

    Off-grid times snap to the nearest stored time with a warning.
    """
    if t > paths.times[-1] + 1e-12 or t < 0:
        raise ValueError(f"t={t} outside [0, {paths.times[-1]}]")
    i = int(np.argmin(np.abs(paths.times - t)))
    if abs(paths.times[i] - t) > 1e-9:
        warnings.warn(f"t={t} snapped to stored time {paths.times[i]}", RuntimeWarning, stacklevel=2)
    return paths.values[i].copy()


def simulate_limit(params: LimitParams, init: InitialStateSpec, spec: DiffusionSpec,
                   streams: dict) -> DiffusionPaths:
    """Sample drifts and integrate; ``streams`` maps ``initial``/``zeta``/``noise`` to generators."""
    drift = sample_drift(params, init, streams["initial"], spec.paths, zeta_rng=streams["zeta"])
    return euler_paths(drift, spec, streams["noise"])
