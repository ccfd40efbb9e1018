"""Replication harness: seeded streams, model assembly and worker fan-out.

Every replication draws from its own streams, derived from
``(seed, n, replication, role)``, so results do not depend on how
replications are spread over workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .arrivals import ArrivalStream, InterarrivalLaw, make_interarrival_law
from .diffusion import GAMMA_MODE, MU_MIN_MODE, DiffusionSpec, simulate_limit
from .engine import PER_SERVER, POOLED, Recorder, ServiceMechanism, run_replication
from .environment import (P1_RANDOM_UNIFORM, P2_FASTEST_BUSY, InitialStateSpec, RateLawSpec,
                          derive_limit_params, realize_environment, sample_initial_state,
                          sample_xi0_nu)
from .errors import ConfigError
from .observables import fairness_window_end, idle_window_stats
from .policies import make_pool

ROLES = {"environment": 0, "initial": 1, "arrivals": 2, "service": 3, "attribution": 4, "policy": 5,
         "placement": 6}
DIFFUSION_ROLES = {"initial": 0, "zeta": 1, "noise": 2}
# spawn-key prefix separating limit-process streams from replication streams
DIFFUSION_DOMAIN = 2**32 - 1


def rep_stream(seed: int, n: int, rep: int, role: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n, rep, ROLES[role])))


def diffusion_streams(seed: int) -> dict:
    return {role: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(DIFFUSION_DOMAIN, i)))
            for role, i in DIFFUSION_ROLES.items()}


@dataclass(frozen=True)
class Model:
    """Everything that defines the n-indexed family of systems."""

    rates: RateLawSpec
    interarrival: InterarrivalLaw
    lambda_hat: float = 0.0
    initial: InitialStateSpec = field(default_factory=InitialStateSpec)
    policy: str = "p1"
    mechanism: str = PER_SERVER

    @classmethod
    def build(cls, rates, family="exponential", c_u_sq=1.0, lambda_hat=0.0, initial=None,
              policy="p1", mechanism=PER_SERVER, shape=None):
        if initial is None:
            placement = P2_FASTEST_BUSY if policy == "p2" else P1_RANDOM_UNIFORM
            initial = InitialStateSpec(idle_placement=placement)
        return cls(rates, make_interarrival_law(family, c_u_sq, shape), float(lambda_hat),
                   initial, policy, mechanism)

    def __post_init__(self):
        if self.policy not in ("p1", "p2", "random"):
            raise ConfigError(f"unknown policy {self.policy!r}; choose p1, p2 or random")
        if self.mechanism not in (PER_SERVER, POOLED):
            raise ConfigError(f"unknown mechanism {self.mechanism!r}")

    @property
    def params(self):
        return derive_limit_params(self.rates, self.lambda_hat, self.interarrival.c_u_sq)

    @property
    def default_drift_mode(self) -> str:
        return MU_MIN_MODE if self.policy == "p2" else GAMMA_MODE

    def with_(self, **changes) -> Model:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return Model(**d)


def build_system(model: Model, n: int, rep: int, seed: int):
    """Realize environment, initial state and arrival stream of one replication."""
    xi0, nu = sample_xi0_nu(model.initial, rep_stream(seed, n, rep, "initial"), 1)
    env = realize_environment(model.rates, n, rep_stream(seed, n, rep, "environment"), nu=float(nu[0]))
    if model.policy == "p2" or model.initial.idle_placement == P2_FASTEST_BUSY:
        env = env.sorted_by_rate()
    init = sample_initial_state(model.initial, env, rep_stream(seed, n, rep, "placement"),
                                xi0=float(xi0[0]))
    params = model.params
    arrivals = ArrivalStream(params.arrival_rate(n), model.interarrival, rep_stream(seed, n, rep, "arrivals"))
    return env, init, arrivals


def simulate_replication(model: Model, n: int, rep: int, seed: int, horizon: float,
                         recorder: Recorder | None = None, mechanism: str | None = None,
                         check_invariants: bool = True, inject_fault_at: int | None = None,
                         track_fast: bool = False):
    env, init, arrivals = build_system(model, n, rep, seed)
    if track_fast:
        recorder.track = env.tilde_rates > model.params.mu_min
    mech_name = mechanism or model.mechanism
    mech = ServiceMechanism.pooled(env.rates) if mech_name == POOLED else ServiceMechanism.per_server()
    pool = make_pool(model.policy, rep_stream(seed, n, rep, "policy"))
    path = run_replication(env, init, pool, arrivals, horizon,
                           service_rng=rep_stream(seed, n, rep, "service"),
                           attribution_rng=rep_stream(seed, n, rep, "attribution"),
                           mechanism=mech, recorder=recorder, check_invariants=check_invariants,
                           inject_fault_at=inject_fault_at)
    return env, path


@dataclass(frozen=True)
class Extract:
    """What to keep from each replication.

    ``times``: report times for the scaled marginal. ``grid_step``: sample
    grid (also the grid for the fast-idle proxy). ``keep_grid``: return the
    full (t, X, Q, I) grid. ``fairness``: ``(s, c)`` window parameters.
    ``track_fast``: record the idle count of servers faster than the slowest
    rate class.
    """

    times: tuple = ()
    grid_step: float = 0.01
    keep_grid: bool = False
    fairness: tuple | None = None
    track_fast: bool = False


@dataclass
class ReplicationSummary:
    rep: int
    n: int
    N: int
    xhat: np.ndarray
    event_count: int
    clamp_count: int
    grid: tuple | None = None
    idle_window: tuple | None = None
    fast_idle_sup: float | None = None
    max_h: float | None = None


def _horizon(extract: Extract, horizon: float, n: int) -> float:
    h = max([horizon, *extract.times])
    if extract.fairness is not None:
        s, c = extract.fairness
        h = max(h, fairness_window_end(s, c, n))
    return h


def run_one(model: Model, n: int, seed: int, horizon: float, extract: Extract, rep: int,
            mechanism: str | None = None, check_invariants: bool = True) -> ReplicationSummary:
    h = _horizon(extract, horizon, n)
    rec = Recorder.uniform(h, extract.grid_step, record_intervals=extract.fairness is not None,
                           track_h=model.policy == "p1")
    grid = np.union1d(rec.grid, np.asarray(extract.times, dtype=float))
    rec.grid = grid[grid <= h + 1e-12]
    env, path = simulate_replication(model, n, rep, seed, h, recorder=rec, mechanism=mechanism,
                                     check_invariants=check_invariants, track_fast=extract.track_fast)
    root = math.sqrt(n)
    xhat = np.array([(path.value_at(t) - path.N) / root for t in extract.times])
    out = ReplicationSummary(rep, n, path.N, xhat, path.event_count, env.clamp_count, max_h=path.max_h)
    if extract.keep_grid:
        out.grid = (path.times, path.X, path.Q, path.I)
    if extract.fairness is not None:
        s, c = extract.fairness
        w = idle_window_stats(path, s, fairness_window_end(s, c, n))
        out.idle_window = (None, None, 0) if not w.has_finishers else (root * w.sup, root * w.inf, w.count)
    if extract.track_fast:
        mask = path.times <= horizon + 1e-12
        out.fast_idle_sup = float(path.tracked_idle[mask].max()) / root
    return out


def _run_chunk(args):
    model, n, seed, horizon, extract, reps, mechanism, check = args
    return [run_one(model, n, seed, horizon, extract, r, mechanism, check) for r in reps]


def run_replications(model: Model, n: int, replications: int, seed: int, horizon: float,
                     extract: Extract, workers: int = 1, mechanism: str | None = None,
                     first_rep: int = 0, check_invariants: bool = True) -> list:
    """Run replications ``first_rep .. first_rep + replications - 1`` and return summaries in rep order."""
    reps = list(range(first_rep, first_rep + replications))
    if workers <= 1 or replications < 2:
        return _run_chunk((model, n, seed, horizon, extract, reps, mechanism, check_invariants))
    size = max(1, math.ceil(len(reps) / (4 * workers)))
    chunks = [reps[i:i + size] for i in range(0, len(reps), size)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = ex.map(_run_chunk, [(model, n, seed, horizon, extract, c, mechanism, check_invariants)
                                    for c in chunks])
        out = [s for part in parts for s in part]
    out.sort(key=lambda s: s.rep)
    return out


def xhat_matrix(summaries) -> np.ndarray:
    """Scaled marginals, one row per replication, one column per report time."""
    return np.vstack([s.xhat for s in summaries])


def limit_marginals(model: Model, seed: int, times, mode: str | None = None, **spec_kw):
    """Euler samples of the limit process at ``times`` (one column per time)."""
    params = model.params
    spec = DiffusionSpec.from_params(params, mode or model.default_drift_mode, **spec_kw)
    paths = simulate_limit(params, model.initial, spec, diffusion_streams(seed))
    idx = [int(np.argmin(np.abs(paths.times - t))) for t in times]
    return paths, paths.values[idx].T
