"""Service-rate environments, initial configurations and limit constants.

A server k in the n-th system works at rate ``max(0, mu_tilde_k + mu_hat_k / sqrt(n))``.
The pairs ``(mu_tilde_k, mu_hat_k)`` are either i.i.d. draws from a rate law
(random environment) or a deterministic table whose atom counts track ``n * p_l``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .laws import PROB_TOL, Discrete, Law, constant

IID = "iid"
TABLE = "table"

P1_RANDOM_UNIFORM = "p1_random_uniform"
P2_FASTEST_BUSY = "p2_fastest_busy"
PLACEMENTS = (P1_RANDOM_UNIFORM, P2_FASTEST_BUSY)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class RateLawSpec:
    """Law of the rate pairs ``(mu_tilde, mu_hat)``.

    Use the constructors :meth:`iid`, :meth:`iid_joint` and :meth:`table`
    rather than filling the fields directly.
    """

    kind: str
    tilde: Law | None = None
    hat: Discrete = field(default_factory=lambda: constant(0.0))
    atoms: tuple | None = None
    probs: tuple | None = None
    mu_bar: float | None = None
    rounding: int | None = None

    @classmethod
    def iid(cls, tilde: Law, hat: Discrete | float = 0.0, mu_bar: float | None = None):
        """Independent marginals: ``mu_tilde ~ tilde`` and ``mu_hat ~ hat``."""
        if not isinstance(hat, Law):
            hat = constant(float(hat))
        return cls(IID, tilde=tilde, hat=hat, mu_bar=mu_bar)

    @classmethod
    def iid_joint(cls, atoms, probs, mu_bar: float | None = None):
        """I.i.d. pairs drawn from a finite joint table of ``(mu_tilde, mu_hat)`` atoms."""
        return cls(IID, atoms=_as_atoms(atoms), probs=tuple(map(float, probs)), mu_bar=mu_bar)

    @classmethod
    def table(cls, atoms, probs, rounding: int | None = None, mu_bar: float | None = None):
        """Deterministic environment: exactly ``floor(n p_l)`` (+ remainder) servers per atom."""
        return cls(TABLE, atoms=_as_atoms(atoms), probs=tuple(map(float, probs)),
                   rounding=rounding, mu_bar=mu_bar)

    def __post_init__(self):
        if self.kind not in (IID, TABLE):
            raise ConfigError(f"unknown rate law kind {self.kind!r}")
        if self.atoms is not None:
            if len(self.atoms) != len(self.probs) or not self.atoms:
                raise ConfigError("rate table needs one probability per atom")
            if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > PROB_TOL:
                raise ConfigError(f"rate table probabilities sum to {sum(self.probs)!r}, not 1")
        elif self.kind == TABLE or self.tilde is None:
            raise ConfigError("rate law needs either atoms or a mu_tilde law")
        elif not isinstance(self.hat, Discrete):
            raise ConfigError("mu_hat must have finite support (bounded)")
        tilde = self.tilde_law
        if tilde.ess_inf < 0:
            raise ConfigError("mu_tilde support must lie in [0, inf)")
        mu = tilde.mean
        if not (0 < mu < math.inf):
            raise ConfigError(f"mean service rate must lie in (0, inf), got {mu!r}")
        bound = max(abs(v) for v in self.hat_law.values)
        if self.mu_bar is not None and bound > self.mu_bar + 1e-15:
            raise ConfigError(f"|mu_hat| reaches {bound}, above declared bound {self.mu_bar}")
        if self.rounding is not None and self.rounding < len(self.atoms):
            raise ConfigError("table rounding constant must be at least the number of atoms")

    @property
    def tilde_law(self) -> Law:
        """Marginal law of ``mu_tilde``."""
        if self.atoms is not None:
            return _merge_atoms([a[0] for a in self.atoms], self.probs)
        return self.tilde

    @property
    def hat_law(self) -> Discrete:
        if self.atoms is not None:
            return _merge_atoms([a[1] for a in self.atoms], self.probs)
        return self.hat

    @property
    def rounding_constant(self) -> int:
        if self.kind != TABLE:
            raise AttributeError("rounding constant only applies to table environments")
        return self.rounding if self.rounding is not None else len(self.atoms)


def _as_atoms(atoms):
    out = tuple((float(a), float(b)) for a, b in atoms)
    return out


def _merge_atoms(values, probs) -> Discrete:
    acc = {}
    for v, p in zip(values, probs):
        acc[v] = acc.get(v, 0.0) + p
    keys = sorted(acc)
    total = sum(acc.values())
    return Discrete(tuple(keys), tuple(acc[k] / total for k in keys))


@dataclass(frozen=True)
class EnvironmentRealization:
    n: int
    N: int
    rates: np.ndarray
    tilde_rates: np.ndarray
    hat_rates: np.ndarray
    clamp_count: int
    atom_index: np.ndarray | None = None

    def sorted_by_rate(self) -> EnvironmentRealization:
        """Relabel servers so rates are ascending; ties keep original index order."""
        order = np.argsort(self.rates, kind="stable")
        return EnvironmentRealization(
            self.n, self.N, self.rates[order], self.tilde_rates[order], self.hat_rates[order],
            self.clamp_count, None if self.atom_index is None else self.atom_index[order])

    def atom_counts(self, n_atoms: int) -> np.ndarray:
        return np.bincount(self.atom_index, minlength=n_atoms)


def table_counts(probs, n: int) -> np.ndarray:
    """``floor(n p_l)`` per atom, remainder handed out one each in index order."""
    counts = np.array([math.floor(n * p + 1e-9) for p in probs], dtype=np.int64)
    remainder = n - int(counts.sum())
    counts[:remainder] += 1
    return counts


def realize_environment(spec: RateLawSpec, n: int, rng: np.random.Generator,
                        nu: float = 0.0) -> EnvironmentRealization:
    """Sample one environment of the n-th system.

    For i.i.d. laws the server count is ``clip(n + round(sqrt(n) nu), 1, 2n)``;
    table environments always have ``N = n``.
    """
    if n < 1:
        raise ConfigError("scale parameter n must be >= 1")
    atom_index = None
    if spec.kind == TABLE:
        N = n
        counts = table_counts(spec.probs, n)
        atom_index = np.repeat(np.arange(len(spec.atoms)), counts)
        atoms = np.asarray(spec.atoms)
        tilde, hat = atoms[atom_index, 0], atoms[atom_index, 1]
    else:
        N = min(max(n + round_half_up(math.sqrt(n) * nu), 1), 2 * n)
        if spec.atoms is not None:
            atom_index = rng.choice(len(spec.atoms), size=N, p=np.asarray(spec.probs))
            atoms = np.asarray(spec.atoms)
            tilde, hat = atoms[atom_index, 0], atoms[atom_index, 1]
        else:
            tilde = np.asarray(spec.tilde.sample(rng, N), dtype=float)
            hat = np.asarray(spec.hat.sample(rng, N), dtype=float)
    raw = tilde + hat / math.sqrt(n)
    clamp_count = int(np.count_nonzero(raw < 0))
    rates = np.maximum(raw, 0.0)
    return EnvironmentRealization(n, N, rates, tilde, hat, clamp_count, atom_index)


@dataclass(frozen=True)
class LimitParams:
    mu: float
    mu_hat_mean: float
    var_tilde: float
    gamma: float
    mu_min: float
    mu_max: float
    sigma_sq: float
    lambda_hat: float
    c_u_sq: float
    random_environment: bool = True

    @property
    def lam(self) -> float:
        """First-order arrival rate per unit of n; equals ``mu`` by construction."""
        return self.mu

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma_sq)

    @property
    def zeta_var(self) -> float:
        # deterministic tables carry no environment CLT term
        return self.var_tilde if self.random_environment else 0.0

    def arrival_rate(self, n: int) -> float:
        return n * self.mu + math.sqrt(n) * self.lambda_hat


def derive_limit_params(spec: RateLawSpec, lambda_hat: float, c_u_sq: float) -> LimitParams:
    tilde = spec.tilde_law
    mu = tilde.mean
    if not (0 < mu < math.inf):
        raise ConfigError(f"mean service rate must lie in (0, inf), got {mu!r}")
    if c_u_sq < 0:
        raise ConfigError("interarrival SCV must be >= 0")
    second = tilde.second_moment
    if tilde.is_degenerate:
        gamma, var = mu, 0.0
    else:
        gamma, var = second / mu, tilde.variance
    lam = mu
    return LimitParams(
        mu=mu,
        mu_hat_mean=spec.hat_law.mean,
        var_tilde=var,
        gamma=gamma,
        mu_min=tilde.ess_inf,
        mu_max=tilde.ess_sup,
        sigma_sq=lam * c_u_sq + mu,
        lambda_hat=float(lambda_hat),
        c_u_sq=float(c_u_sq),
        random_environment=spec.kind == IID,
    )


@dataclass(frozen=True)
class InitialStateSpec:
    xi0_law: Law = field(default_factory=lambda: constant(0.0))
    nu_law: Law = field(default_factory=lambda: constant(0.0))
    idle_placement: str = P1_RANDOM_UNIFORM
    coupling: str = "independent"

    def __post_init__(self):
        if self.idle_placement not in PLACEMENTS:
            raise ConfigError(f"unknown idle placement {self.idle_placement!r}")
        if self.coupling not in ("independent", "comonotone"):
            raise ConfigError(f"unknown (xi0, nu) coupling {self.coupling!r}")


def sample_xi0_nu(spec: InitialStateSpec, rng: np.random.Generator, size: int = 1):
    """Draw ``size`` pairs ``(xi0, nu)`` under the configured coupling."""
    if spec.coupling == "comonotone":
        u = rng.random(size)
        return (np.asarray(spec.xi0_law.quantile(u), dtype=float),
                np.asarray(spec.nu_law.quantile(u), dtype=float))
    return (np.asarray(spec.xi0_law.sample(rng, size), dtype=float),
            np.asarray(spec.nu_law.sample(rng, size), dtype=float))


@dataclass
class InitialState:
    x0: int
    busy0: np.ndarray
    xi0: float
    warnings: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.busy0)

    @property
    def q0(self) -> int:
        return max(self.x0 - self.N, 0)

    @property
    def idle0(self) -> int:
        return max(self.N - self.x0, 0)


def sample_initial_state(spec: InitialStateSpec, env: EnvironmentRealization,
                         rng: np.random.Generator, xi0: float | None = None) -> InitialState:
    """Place ``X0 = N + round(sqrt(n) xi0)`` customers.

    If ``X0 < N`` exactly ``N - X0`` servers are left idle: a uniform random
    subset (``p1_random_uniform``) or the slowest ones, i.e. ``busy0[k] = 1``
    iff ``k >= I0`` in 0-based labels (``p2_fastest_busy``; ``env`` must
    already be sorted by rate).
    """
    if xi0 is None:
        xi0 = float(spec.xi0_law.sample(rng, 1)[0])
    N = env.N
    notes = []
    x0 = N + round_half_up(math.sqrt(env.n) * xi0)
    if x0 < 0:
        notes.append(f"X0={x0} clamped to 0")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
        x0 = 0
    busy0 = np.ones(N, dtype=np.int8)
    idle = max(N - x0, 0)
    if idle:
        if spec.idle_placement == P2_FASTEST_BUSY:
            if np.any(np.diff(env.rates) < 0):
                raise ConfigError("p2_fastest_busy placement requires rate-sorted servers")
            busy0[:idle] = 0
        else:
            busy0[rng.choice(N, size=idle, replace=False)] = 0
    return InitialState(x0, busy0, float(xi0), notes)
