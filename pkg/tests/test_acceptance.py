"""Acceptance criteria at their stated scales and tolerances.

Each test prints one ``criterion k: PASS|FAIL`` line (also repeated in the
pytest terminal summary). Runs go through the command line front end where
the criterion is about CSV artifacts, and through the library otherwise.
"""
import csv
import math
import time
from pathlib import Path

import numpy as np
import pytest

from manyserver.cli import main
from manyserver.config import load_config
from manyserver.diffusion import DiffusionSpec, DriftSample, euler_path, euler_paths, marginal_at
from manyserver.engine import MECHANISMS
from manyserver.errors import InvariantViolation
from manyserver.experiment import (Extract, build_system, limit_marginals, run_replications,
                                   simulate_replication, xhat_matrix)
from manyserver.observables import write_rows
from manyserver.stats import convergence_table, ks_two_sample

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
CFG = {2: "criterion2_engines.ini", 3: "criterion3_degenerate.ini", 4: "criterion4_random_p1.ini",
       5: "criterion5_random_p2.ini", 6: "criterion6_fairness.ini", 7: "criterion7_table.ini"}
COMMAND = {2: ["validate"], 3: ["compare", "--inline"], 4: ["compare", "--inline"], 6: ["fairness"],
           7: ["compare", "--inline"]}
RUNTIME = {2: 120, 3: 300, 4: 900, 5: 900, 6: 600, 7: 600, 8: 60}

pytestmark = pytest.mark.acceptance


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def config(k):
    return load_config(CONFIGS / CFG[k])


class Runs:
    """First CLI run of each criterion, shared with the determinism check."""

    def __init__(self, root):
        self.root = root
        self.done = {}

    def cli(self, k, tag="first", workers=1):
        out = self.root / f"c{k}_{tag}"
        start = time.perf_counter()
        code = main([*COMMAND[k], "--config", str(CONFIGS / CFG[k]), "--out", str(out),
                     "--workers", str(workers)])
        return out, code, time.perf_counter() - start

    def get(self, k):
        if k not in self.done:
            self.done[k] = self.cli(k)
        return self.done[k]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


def compare_rows(out):
    return read_rows(out / "compare_table.csv")


def c5_artifacts(out, workers=1):
    """Library run of the P2 criterion; writes its own CSV artifacts."""
    cfg = config(5)
    t = cfg.report_times[0]
    ext = Extract(times=(t,), grid_step=cfg.grid_step, track_fast=True)
    out.mkdir(parents=True, exist_ok=True)
    per_n = {}
    for n in cfg.ladder:
        sums = run_replications(cfg.model, n, cfg.replications, cfg.seed, cfg.horizon, ext, workers)
        per_n[n] = sums
        with open(out / f"p2_n{n}.csv", "w", newline="") as fh:
            write_rows(fh, ("rep", "n", "t", "xhat", "fast_idle_sup"),
                       ((s.rep, n, t, float(s.xhat[0]), s.fast_idle_sup) for s in sums))
    _, sde = limit_marginals(cfg.model, cfg.seed, [t], mode=cfg.drift_mode, **cfg.diffusion_kw())
    with open(out / "p2_diffusion.csv", "w", newline="") as fh:
        write_rows(fh, ("path", "t", "xi"), ((p, t, float(v)) for p, v in enumerate(sde[:, 0])))
    return cfg, per_n, sde[:, 0]


# --- 1 ---------------------------------------------------------------------------

def test_criterion_1_invariants(verdict):
    cfg = config(4)
    ext = Extract(times=(1.0,), grid_step=cfg.grid_step)
    reps = 200
    violations, events, runs_done = 0, 0, 0
    for policy in ("p1", "p2"):
        model = cfg.model.with_(policy=policy, initial=config(5 if policy == "p2" else 4).model.initial)
        for mech in MECHANISMS:
            for n in cfg.ladder:
                for rep in range(reps):
                    try:
                        _, path = simulate_replication(model, n, rep, cfg.seed, cfg.horizon, mechanism=mech)
                        events += path.event_count
                    except InvariantViolation:
                        violations += 1
                    runs_done += 1
    # the checks are live: a corrupted state is caught
    with pytest.raises(InvariantViolation) as fault:
        simulate_replication(cfg.model, 100, 0, cfg.seed, cfg.horizon, inject_fault_at=50)
    detected = fault.value.report.tag == "work conservation"

    # overhead of the checks on the criterion-4 workload at n = 400
    best = {True: math.inf, False: math.inf}
    for _ in range(5):
        for check in (True, False):
            start = time.perf_counter()
            run_replications(cfg.model, 400, 100, cfg.seed, cfg.horizon, ext, check_invariants=check)
            best[check] = min(best[check], time.perf_counter() - start)
    overhead = best[True] / best[False] - 1.0
    ok = violations == 0 and detected and overhead <= 0.10
    verdict(1, ok, f"{runs_done} runs (2 policies x 2 mechanisms x n in {cfg.ladder}), {events} events, "
                   f"{violations} violations; injected fault detected={detected}; "
                   f"check overhead {100 * overhead:.1f}% (budget 10%)")
    assert violations == 0 and detected
    assert overhead <= 0.10


# --- 2 ---------------------------------------------------------------------------

def test_criterion_2_engine_equivalence(runs, verdict):
    out, code, secs = runs.get(2)
    row = read_rows(out / "validate_engines.csv")[0]
    p = float(row["ks_pvalue"])
    ok = code == 0 and p > 0.01 and secs <= RUNTIME[2]
    verdict(2, ok, f"n={row['n']}, {row['replications']} reps per engine, KS={float(row['ks_distance']):.4f}, "
                   f"p={p:.3g} (need > 0.01), {secs:.0f}s")
    assert ok


# --- 3 ---------------------------------------------------------------------------

def test_criterion_3_degenerate_environment(runs, verdict):
    out, code, secs = runs.get(3)
    row = compare_rows(out)[0]
    ks = float(row["ks_distance"])
    ok = code == 0 and ks <= 0.05 and secs <= RUNTIME[3]
    verdict(3, ok, f"n={row['n']}, t={row['t']}, KS={ks:.4f} (need <= 0.05), {secs:.0f}s")
    assert ok


# --- 4 ---------------------------------------------------------------------------

def test_criterion_4_random_environment_p1(runs, verdict):
    out, code, secs = runs.get(4)
    rows = compare_rows(out)
    ks = [float(r["ks_distance"]) for r in rows]
    trend = all(b <= a + 0.01 for a, b in zip(ks, ks[1:]))
    ok = code == 0 and trend and ks[-1] <= 0.06 and secs <= RUNTIME[4]
    ladder = ", ".join(f"n={r['n']}: {float(r['ks_distance']):.4f}" for r in rows)
    verdict(4, ok, f"KS {ladder}; nonincreasing within 0.01: {trend}; need <= 0.06 at n=400; {secs:.0f}s")
    assert ok


# --- 5 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def c5(runs):
    start = time.perf_counter()
    res = c5_artifacts(runs.root / "c5_first")
    return (*res, time.perf_counter() - start)


def test_criterion_5_random_environment_p2(c5, verdict):
    cfg, per_n, sde, secs = c5
    top, low = cfg.ladder[-1], cfg.ladder[0]
    ks = ks_two_sample(xhat_matrix(per_n[top])[:, 0], sde).statistic
    proxy = {n: float(np.mean([s.fast_idle_sup for s in per_n[n]])) for n in cfg.ladder}
    ratio = proxy[top] / proxy[low]
    ok = ks <= 0.07 and ratio < 0.5 and secs <= RUNTIME[5]
    means = ", ".join(f"n={n}: {v:.3f}" for n, v in proxy.items())
    verdict(5, ok, f"KS at n={top} = {ks:.4f} (need <= 0.07); fast-idle proxy means {means}; "
                   f"ratio {ratio:.3f} (need < 0.5); {secs:.0f}s")
    assert ks <= 0.07
    assert ratio < 0.5


# --- 6 ---------------------------------------------------------------------------

def test_criterion_6_fairness(runs, verdict):
    out, code, secs = runs.get(6)
    rows = {int(r["n"]): r for r in read_rows(out / "fairness_summary.csv")}
    ladder = sorted(rows)
    gap = {n: float(rows[n]["gap_mean"]) for n in ladder}
    ks = float(rows[ladder[-1]]["ks_sup_ref"])
    ratio = gap[ladder[-1]] / gap[ladder[0]]
    ok = code == 0 and ratio < 0.5 and ks <= 0.10 and secs <= RUNTIME[6]
    gaps = ", ".join(f"n={n}: {v:.3f}" for n, v in gap.items())
    skipped = ", ".join(f"n={n}: {rows[n]['skipped']}" for n in ladder)
    verdict(6, ok, f"gap means {gaps}; ratio {ratio:.3f} (need < 0.5); KS(sup, ref) at n={ladder[-1]} = "
                   f"{ks:.4f} (need <= 0.10); skipped {skipped}; {secs:.0f}s")
    assert ratio < 0.5
    assert ks <= 0.10


# --- 7 ---------------------------------------------------------------------------

def test_criterion_7_table_environment(runs, verdict):
    out, code, secs = runs.get(7)
    rows = compare_rows(out)
    ks = float(rows[-1]["ks_distance"])
    cfg = config(7)
    probs = np.asarray(cfg.model.rates.probs)
    c = cfg.model.rates.rounding_constant
    worst, checked = 0.0, 0
    for n in cfg.ladder:
        for rep in range(cfg.replications):
            env, _, _ = build_system(cfg.model, n, rep, cfg.seed)
            assert env.N == n
            worst = max(worst, float(np.max(np.abs(env.atom_counts(len(probs)) - n * probs))))
            checked += 1
    paths, _ = limit_marginals(cfg.model, cfg.seed, [1.0], paths=50, step=cfg.diffusion_step, horizon=1.0)
    beta = paths.drift.beta
    beta_ok = bool(np.all(beta == beta[0])) and abs(beta[0] - (cfg.model.lambda_hat - 0.1)) < 1e-12
    ok = code == 0 and ks <= 0.06 and worst <= c and beta_ok and secs <= RUNTIME[7]
    verdict(7, ok, f"KS at n={rows[-1]['n']} = {ks:.4f} (need <= 0.06); count bound max|n_l - n p_l| = "
                   f"{worst:g} <= c={c} over {checked} environments; drift {beta[0]:.4f} deterministic: "
                   f"{beta_ok}; {secs:.0f}s")
    assert ok


# --- 8 ---------------------------------------------------------------------------

def test_criterion_8_sde_oracles(runs, verdict):
    des_out, _, _ = runs.get(3)
    start = time.perf_counter()
    # (a) reflection ODE with closed form -exp(-1)
    xi = euler_path(DriftSample.fixed(-1.0, 0.0), DiffusionSpec(0.0, 1.0, step=1e-3, horizon=1.0, paths=1),
                    np.random.default_rng(0))
    err_a = abs(xi[-1] + math.exp(-1.0))
    # (b) g = 0: Brownian motion with drift, criterion-3 coefficients
    cfg = config(3)
    params = cfg.model.params
    beta = params.lambda_hat - params.mu_hat_mean
    P = cfg.diffusion_paths
    paths = euler_paths(DriftSample.fixed(0.0, beta, P),
                        DiffusionSpec(params.sigma, 0.0, step=1e-3, horizon=1.0, paths=P),
                        np.random.default_rng(cfg.seed))
    x = marginal_at(paths, 1.0)
    s2 = params.sigma ** 2
    se_mean, se_var = math.sqrt(s2 / P), s2 * math.sqrt(2.0 / (P - 1))
    z_mean = abs(x.mean() - beta) / se_mean
    z_var = abs(x.var(ddof=1) - s2) / se_var
    # (c) halve the step on the criterion-3 comparison; both runs share the Brownian path
    t = cfg.report_times[0]
    des = np.array([float(r["xhat"]) for r in read_rows(des_out / f"simulate_marginal_n400_t{t:g}.csv")])
    kw = cfg.diffusion_kw()
    _, coarse = limit_marginals(cfg.model, cfg.seed, [t], mode=cfg.drift_mode, **kw)
    fine_kw = dict(kw, step=kw["step"] / 2, noise_refinement=kw["noise_refinement"] // 2)
    _, fine = limit_marginals(cfg.model, cfg.seed, [t], mode=cfg.drift_mode, **fine_kw)
    ks_h, ks_h2 = ks_two_sample(des, coarse[:, 0]).statistic, ks_two_sample(des, fine[:, 0]).statistic
    reported = float(compare_rows(des_out)[0]["ks_distance"])
    secs = time.perf_counter() - start
    ok_a, ok_b = err_a <= 1e-3, z_mean <= 3 and z_var <= 3
    ok_c = abs(ks_h - ks_h2) <= 0.01 and abs(ks_h - reported) < 1e-12
    ok = ok_a and ok_b and ok_c and secs <= RUNTIME[8]
    verdict(8, ok, f"(a) |xi(1) + e^-1| = {err_a:.2e}; (b) mean {z_mean:.2f} SE, variance {z_var:.2f} SE; "
                   f"(c) KS h={kw['step']:g}: {ks_h:.4f}, h={fine_kw['step']:g}: {ks_h2:.4f}, "
                   f"change {abs(ks_h - ks_h2):.4f} (need <= 0.01); {secs:.0f}s")
    assert ok


# --- 9 ---------------------------------------------------------------------------

def csv_bytes(out):
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_criterion_9_determinism(runs, c5, verdict):
    report, ok = [], True
    for k in (2, 3, 4, 6, 7):
        first, _, _ = runs.get(k)
        again, code, _ = runs.cli(k, tag="workers2", workers=2)
        a, b = csv_bytes(first), csv_bytes(again)
        same = code == 0 and bool(a) and a == b
        ok &= same
        report.append(f"c{k} {len(a)} files {'identical' if same else 'DIFFER'}")
    again = runs.root / "c5_workers2"
    c5_artifacts(again, workers=2)
    a, b = csv_bytes(runs.root / "c5_first"), csv_bytes(again)
    same = bool(a) and a == b
    ok &= same
    report.append(f"c5 {len(a)} files {'identical' if same else 'DIFFER'}")
    verdict(9, ok, "rerun with --workers 2 against the first run with 1 worker: " + "; ".join(report))
    assert ok
