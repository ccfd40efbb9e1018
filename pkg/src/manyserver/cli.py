"""Command line front end: ``manyserver {simulate,diffusion,compare,fairness,validate}``.

Exit codes: 0 ok, 1 invariant or acceptance failure, 2 configuration error,
3 missing inputs.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .engine import PER_SERVER, POOLED
from .errors import ConfigError, InvariantViolation
from .experiment import Extract, limit_marginals, run_replications, simulate_replication, xhat_matrix
from .observables import IDLE_HEADER, fairness_window_end, write_rows
from .stats import TABLE_HEADER, convergence_table, ks_two_sample, summarize
from .svg import write_chart

OK, FAILED, BAD_CONFIG, MISSING = 0, 1, 2, 3
OUT_ENV = "MANYSERVER_OUT"


class MissingInputs(Exception):
    pass


def _tag(t: float) -> str:
    return f"{t:g}"


def marginal_name(n: int, t: float) -> str:
    return f"simulate_marginal_n{n}_t{_tag(t)}.csv"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        write_rows(fh, header, rows)


def _say(msg: str) -> None:
    print(msg, flush=True)


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    ext = Extract(times=tuple(cfg.report_times), grid_step=cfg.grid_step, keep_grid=cfg.write_paths)
    for n in cfg.ladder:
        summaries = run_replications(cfg.model, n, cfg.replications, cfg.seed, cfg.horizon, ext, cfg.workers)
        if cfg.write_paths:
            root = math.sqrt(n)

            def rows():
                for s in summaries:
                    t, x, q, i = s.grid
                    for row in zip(t.tolist(), x.tolist(), q.tolist(), i.tolist()):
                        yield (s.rep, *row, (row[1] - s.N) / root)

            _write_csv(out / f"simulate_paths_n{n}.csv", ("rep", "t", "X", "Q", "I", "xhat"), rows())
        mat = xhat_matrix(summaries)
        for j, t in enumerate(cfg.report_times):
            _write_csv(out / marginal_name(n, t), ("rep", "n", "t", "xhat"),
                       ((s.rep, n, t, float(v)) for s, v in zip(summaries, mat[:, j])))
        clamps = sum(s.clamp_count for s in summaries)
        _say(f"simulate n={n}: {len(summaries)} replications, "
             f"{sum(s.event_count for s in summaries)} events, {clamps} clamped rates")
    return OK


def cmd_diffusion(cfg: ExperimentConfig, out: Path) -> int:
    paths, mat = limit_marginals(cfg.model, cfg.seed, cfg.report_times, mode=cfg.drift_mode,
                                 **cfg.diffusion_kw())
    stamps = [float(paths.times[int(np.argmin(np.abs(paths.times - t)))]) for t in cfg.report_times]
    for t, held in zip(cfg.report_times, stamps):
        if abs(held - t) > 1e-9:
            _say(f"warning: t={t} snapped to {held}")
    _write_csv(out / "diffusion_marginals.csv", ("path", "t", "xi"),
               ((p, t, float(mat[p, j])) for j, t in enumerate(cfg.report_times) for p in range(mat.shape[0])))
    _say(f"diffusion: {mat.shape[0]} paths, mode {cfg.drift_mode}, step {cfg.diffusion_step}")
    return OK


def _read_column(path: Path, column: str, where=None) -> dict:
    if not path.exists():
        raise MissingInputs(f"missing input {path}")
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = float(row["t"]) if where is None else where
            out.setdefault(key, []).append(float(row[column]))
    return out


def cmd_compare(cfg: ExperimentConfig, out: Path, inline: bool = False) -> int:
    if inline:
        cmd_simulate(cfg, out)
        cmd_diffusion(cfg, out)
    ref = _read_column(out / "diffusion_marginals.csv", "xi")
    rows, series = [], {}
    for t in cfg.report_times:
        key = min(ref, key=lambda s: abs(s - t)) if ref else None
        if key is None or abs(key - t) > 1e-9:
            raise MissingInputs(f"diffusion output has no marginal at t={t}")
        marg = {n: _read_column(out / marginal_name(n, t), "xhat", where=t)[t] for n in cfg.ladder}
        table = convergence_table(marg, ref[key], t)
        rows.extend(table.rows)
        series[f"t={_tag(t)}"] = ([r.n for r in table.rows], table.ks_distances().tolist())
        for r in table.rows:
            _say(f"compare t={_tag(t)} n={r.n}: KS={r.ks_distance:.4f} p={r.ks_pvalue:.3g} W1={r.w1:.4f}")
    _write_csv(out / "compare_table.csv", TABLE_HEADER, (tuple(r) for r in rows))
    write_chart(out / "compare_ks.svg", series, title="KS distance to the limit marginal",
                xlabel="n", ylabel="KS distance", logx=True)
    return OK


def cmd_fairness(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.model.policy != "p1":
        raise ConfigError(f"fairness runs need policy p1 (configured: {cfg.model.policy}); the limit "
                          "law of the idle-period lengths is a longest-idle-first statement")
    s, c = cfg.fairness_s, cfg.fairness_c
    ext = Extract(times=(), grid_step=cfg.grid_step, fairness=(s, c))
    params = cfg.model.params
    _, mat = limit_marginals(cfg.model, cfg.seed, [s], mode=cfg.drift_mode,
                             **cfg.diffusion_kw(horizon=max(s, cfg.diffusion_horizon)))
    ref = np.maximum(-mat[:, 0], 0.0) / params.mu
    _write_csv(out / "fairness_reference.csv", ("path", "s", "value"),
               ((p, s, float(v)) for p, v in enumerate(ref)))
    idle_rows, summary_rows = [], []
    ns, gaps = [], []
    for n in cfg.ladder:
        t_n = fairness_window_end(s, c, n)
        sums = run_replications(cfg.model, n, cfg.replications, cfg.seed, s, ext, cfg.workers)
        kept = [x for x in sums if x.idle_window[2] > 0]
        skipped = len(sums) - len(kept)
        idle_rows.extend((x.rep, n, s, t_n, x.idle_window[0], x.idle_window[1], x.idle_window[2]) for x in kept)
        if not kept:
            _say(f"fairness n={n}: no replication had finishers in the window ({skipped} skipped)")
            summary_rows.append((n, len(sums), skipped, t_n, math.nan, math.nan, math.nan, math.nan))
            continue
        sup = np.array([x.idle_window[0] for x in kept])
        gap = summarize(sup - np.array([x.idle_window[1] for x in kept]))
        ks = ks_two_sample(sup, ref)
        summary_rows.append((n, len(sums), skipped, t_n, gap.mean, gap.ci_half_width, ks.statistic, ks.pvalue))
        ns.append(n)
        gaps.append(gap.mean)
        _say(f"fairness n={n}: window [{s:g}, {t_n:.4f}], gap mean {gap.mean:.4f} +- {gap.ci_half_width:.4f}, "
             f"KS(sup, ref)={ks.statistic:.4f}, skipped {skipped}")
    _write_csv(out / "fairness_idle.csv", IDLE_HEADER, idle_rows)
    _write_csv(out / "fairness_summary.csv",
               ("n", "replications", "skipped", "t_n", "gap_mean", "gap_ci", "ks_sup_ref", "ks_pvalue"),
               summary_rows)
    write_chart(out / "fairness_gap.svg", {"gap mean": (ns, gaps)}, title="scaled idle-length gap",
                xlabel="n", ylabel="mean sqrt(n)(sup - inf)", logx=True)
    return OK


def cmd_validate(cfg: ExperimentConfig, out: Path) -> int:
    lines = []

    def report(msg):
        lines.append(msg)
        _say(msg)

    status = OK
    engine_rows, ks_rows = [], []
    t_cmp = cfg.report_times[-1]
    ext = Extract(times=(t_cmp,), grid_step=cfg.grid_step)
    try:
        if cfg.inject_fault_at is not None:
            n = cfg.ladder[0]
            simulate_replication(cfg.model, n, 0, cfg.seed, cfg.horizon, inject_fault_at=cfg.inject_fault_at)
            report(f"fault injection at event {cfg.inject_fault_at}: not detected")
            status = FAILED
        reps = cfg.validate_replications
        for n in cfg.ladder:
            got = {}
            # disjoint replication indices keep the two samples independent
            for first, mech in ((0, PER_SERVER), (reps, POOLED)):
                sums = run_replications(cfg.model, n, reps, cfg.seed, cfg.horizon, ext, cfg.workers,
                                        mechanism=mech, first_rep=first)
                got[mech] = xhat_matrix(sums)[:, 0]
                for s in sums:
                    engine_rows.append((mech, s.rep, n, t_cmp, float(s.xhat[0])))
                report(f"n={n} {mech}: {len(sums)} replications, "
                       f"{sum(s.event_count for s in sums)} events, 0 invariant violations")
            ks = ks_two_sample(got[PER_SERVER], got[POOLED])
            ks_rows.append((n, t_cmp, reps, ks.statistic, ks.pvalue))
            report(f"n={n} per_server vs pooled at t={_tag(t_cmp)}: KS={ks.statistic:.4f} p={ks.pvalue:.4g}")
            if ks.pvalue <= 0.01:
                report(f"n={n}: engines disagree in law (p <= 0.01)")
                status = FAILED
    except InvariantViolation as exc:
        r = exc.report
        report(f"invariant violation [{r.tag}]: {r.message}")
        report("context: " + ", ".join(f"{k}={v}" for k, v in r.context.items()))
        status = FAILED
    if ks_rows:
        _write_csv(out / "validate_marginals.csv", ("mechanism", "rep", "n", "t", "xhat"), engine_rows)
        _write_csv(out / "validate_engines.csv", ("n", "t", "replications", "ks_distance", "ks_pvalue"), ks_rows)
    report("validate: " + ("ok" if status == OK else "FAILED"))
    (out / "validate_report.txt").write_text("\n".join(lines) + "\n")
    return status


COMMANDS = {"simulate": cmd_simulate, "diffusion": cmd_diffusion, "compare": cmd_compare,
            "fairness": cmd_fairness, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="manyserver", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", type=Path, help=f"output directory (else ${OUT_ENV} or the config)")
        sp.add_argument("--workers", type=int)
        if name == "compare":
            sp.add_argument("--inline", action="store_true", help="run simulate and diffusion first")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if not args.config.exists():
            raise MissingInputs(f"config file {args.config} not found")
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg.workers = args.workers
        out = Path(args.out or os.environ.get(OUT_ENV) or cfg.output)
        try:
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write-probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError(f"output directory {out} is not writable ({exc.strerror})") from None
        if args.command == "compare":
            return cmd_compare(cfg, out, inline=args.inline)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return BAD_CONFIG
    except MissingInputs as exc:
        print(f"missing inputs: {exc}", file=sys.stderr)
        return MISSING
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
