"""Many-server queues with random service rates in the Halfin-Whitt regime.

Event-exact simulation of the n-server system under longest-idle-first and
fastest-server-first routing, Euler integration of the random-drift limit
diffusions, and two-sample statistics for comparing the two.
"""
from .arrivals import ArrivalStream, InterarrivalLaw, make_interarrival_law
from .config import ExperimentConfig, load_config, parse_config, parse_law
from .diffusion import (DiffusionPaths, DiffusionSpec, DriftSample, euler_path, euler_paths, marginal_at,
                        sample_drift, simulate_limit)
from .engine import (InvariantReport, Recorder, ServiceMechanism, SystemState, run_replication,
                     verify_event_invariants)
from .environment import (EnvironmentRealization, InitialState, InitialStateSpec, LimitParams, RateLawSpec,
                          derive_limit_params, realize_environment, sample_initial_state, table_counts)
from .errors import ConfigError, InvariantViolation
from .experiment import (Extract, Model, build_system, limit_marginals, run_replications,
                         simulate_replication, xhat_matrix)
from .laws import Discrete, Mixture, Normal, TruncatedNormal, Uniform, constant
from .observables import (FairnessSamples, PathRecord, ScaledSeries, fairness_experiment, idle_window_stats,
                          scale_path)
from .policies import P1Pool, P2Pool, RandomPool, make_pool, p1_choose, p2_choose
from .stats import ConvergenceTable, convergence_table, ks_two_sample, summarize, wasserstein1

__version__ = "0.1.0"
