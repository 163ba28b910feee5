"""Command-line harness: sweeps, allocation, simulation and figure reproduction."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import allocation as alloc
from .config import Config, RunManifest, load_config
from .errors import InfeasibleError
from .sim import (RngStreams, Scenario, Scheme, average_echo_snr_db, build_problem, loop_spectral_radius,
                  monte_carlo, run_closed_loop, summarize_trajectory, sweep_fixed_fractions)
from .stability import critical_alpha_ctrl
from .channel import ctrl_drop_probability
from .trajectory import random_trajectory

EXIT_OK, EXIT_INTERNAL, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2, 64
SUBCOMMANDS = ("crlb-sweep", "stability-sweep", "allocate", "trajectory", "simulate", "compare", "reproduce")
FIGURES = ("3", "4", "5", "6", "7", "8", "table2")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class Context:
    def __init__(self, args):
        self.args = args
        self.cfg: Config = load_config(args.config) if args.config else Config()
        self.out = Path(args.out)
        self.seed = int(args.seed)
        self.outputs: list[Path] = []

    def csv(self, name, header, rows):
        self.outputs.append(write_csv(self.out / name, header, rows))

    def json(self, name, obj):
        self.outputs.append(write_json(self.out / name, obj))

    def manifest(self, subcommand):
        path = self.out / f"manifest_{subcommand.replace(' ', '_')}.json"
        RunManifest.create(self.cfg, self.seed, subcommand, [p.name for p in self.outputs]).write(path)

    def trajectory(self, run: int = 0):
        cfg = self.cfg
        return random_trajectory(RngStreams(self.seed, run).trajectory, cfg.coverage(), cfg.spline_mean_waypoints,
                                 cfg.mission_duration_s, cfg.slot_s)


def _alpha_grid(lo, hi, step):
    n = int(round((hi - lo) / step))
    return [round(lo + i * step, 10) for i in range(n + 1)]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_crlb_sweep(ctx: Context, offsets=None):
    a = ctx.args
    offsets = offsets if offsets is not None else [float(x) for x in a.snr_offsets_db.split(",")]
    traj = ctx.trajectory()
    rows = []
    for off in offsets:
        scn = Scenario.from_config(ctx.cfg.replace(sensing_snr_offset_db=ctx.cfg.sensing_snr_offset_db + off))
        summ = summarize_trajectory(scn, traj)
        snr_db = average_echo_snr_db(scn, traj)
        for alpha in _alpha_grid(a.alpha_min, a.alpha_max, a.alpha_step):
            n = alpha * scn.waveform.num_subcarriers
            if n < 2:
                continue
            rows.append((alpha, snr_db, summ.profile.mean_peb(n), summ.profile.mean_veb(n)))
    ctx.csv("crlb_sweep.csv", ("alpha_sen", "snr_db", "peb_m", "veb_ms"), rows)


def cmd_stability_sweep(ctx: Context):
    scn = Scenario.from_config(ctx.cfg)
    eps_rows = [(e, loop_spectral_radius(scn, e)) for e in np.linspace(0.0, 1.0, 201)]
    ctx.csv("stability_eps_rho.csv", ("eps_ctrl", "rho_M"), eps_rows)
    summ = summarize_trajectory(scn, ctx.trajectory())
    fbl, bw = ctx.cfg.ctrl_fbl(), scn.waveform.total_bandwidth_hz
    alpha_star = critical_alpha_ctrl(scn.eps_star, summ.avg_gamma, bw, fbl)
    rows = []
    for alpha in np.geomspace(max(alpha_star / 4, 1e-7), 1.0, 161):
        eps = float(ctrl_drop_probability(alpha, summ.avg_gamma, bw, fbl))
        rows.append((alpha, eps, loop_spectral_radius(scn, min(max(eps, 0.0), 1.0))))
    ctx.csv("stability_alpha_eps_rho.csv", ("alpha_ctrl", "eps_ctrl", "rho_M"), rows)
    ctx.json("stability_summary.json", {"eps_star": scn.eps_star, "alpha_ctrl_star": alpha_star,
                                        "avg_snr_db": 10 * np.log10(summ.avg_gamma)})


def _solve(method: str, problem, cfg: Config, seed: int, grid_step: float):
    if method == "sca":
        return alloc.sca_solve(problem)
    if method == "grid":
        return alloc.grid_search(problem, grid_step)
    if method == "ga":
        return alloc.ga_search(problem, RngStreams(seed).ga, cfg.ga_population, cfg.ga_generations,
                               cfg.ga_tournament, cfg.ga_mutation_sigma)
    raise UsageError(f"unknown method {method}")


def cmd_allocate(ctx: Context):
    a = ctx.args
    scn = Scenario.from_config(ctx.cfg)
    summ = summarize_trajectory(scn, ctx.trajectory())
    res = _solve(a.method, build_problem(scn, summ), ctx.cfg, ctx.seed, a.grid_step)
    ctx.json(f"allocation_{a.method}.json", res.to_dict())
    if a.method == "sca":
        ctx.csv("allocation_sca_trace.csv", ("iteration", "alpha_sen", "alpha_ctrl", "objective"), res.trace)
    elif a.method == "ga":
        ctx.csv("allocation_ga_trace.csv", ("generation", "best_objective"), enumerate(res.trace))


def cmd_trajectory(ctx: Context):
    traj = ctx.trajectory()
    ctx.csv("trajectory.csv", ("t", "px", "py", "pz", "vx", "vy", "vz"),
            (np.concatenate([[t], s]) for t, s in zip(traj.times_s, traj.states)))


def _schemes(name: str):
    return [s.value for s in Scheme] if name == "all" else [Scheme(name).value]


def _aggregate_rows(rows):
    return [(r.scheme, r.mean_err_m, r.std_err_m, r.lqg_cost, r.diverged_frac) for r in rows]


AGG_HEADER = ("scheme", "mean_err_m", "std_err_m", "lqg_cost", "diverged_frac")


def cmd_simulate(ctx: Context):
    a = ctx.args
    schemes = _schemes(a.scheme)
    rows = monte_carlo(ctx.cfg, schemes, a.runs, ctx.seed, a.jobs)
    ctx.csv("simulate_aggregate.csv", AGG_HEADER, _aggregate_rows(rows))
    if a.per_run:
        scn = Scenario.from_config(ctx.cfg)
        for run in range(a.runs):
            traj = ctx.trajectory(run)
            summ = summarize_trajectory(scn, traj)
            for name in schemes:
                scheme = Scheme(name)
                fr = None
                if scheme in (Scheme.ISCC_CLOSED_LOOP, Scheme.ISCC_IGNORE_LOSS):
                    fr = alloc.sca_solve(build_problem(scn, summ, scheme is Scheme.ISCC_IGNORE_LOSS)).fractions
                res = run_closed_loop(scn, fr, traj, RngStreams(ctx.seed, run), scheme)
                ctx.csv(f"run_{run:03d}_{name}.csv", ("n", "t", "err_m", "dropped", "eps_ctrl_n", "snr_db"),
                        ((n, n * ctx.cfg.slot_s, res.error_m[n], int(res.dropped[n]), res.eps_ctrl[n],
                          res.snr_db[n]) for n in range(len(res.error_m))))


def cmd_compare(ctx: Context):
    """Allocation methods side by side on shared trajectories."""
    a = ctx.args
    scn = Scenario.from_config(ctx.cfg)
    rows = []
    for method in ("sca", "grid", "ga"):
        per = []
        for run in range(a.runs):
            traj = ctx.trajectory(run)
            summ = summarize_trajectory(scn, traj)
            res = _solve(method, build_problem(scn, summ), ctx.cfg, ctx.seed + run, a.grid_step)
            sim = run_closed_loop(scn, res.fractions, traj, RngStreams(ctx.seed, run))
            per.append((*res.fractions.as_tuple(), res.objective_value, res.avg_peb_m, sim.mean_error_m,
                        sim.lqg_cost, res.wall_time_s, sim.diverged))
        m = np.mean(np.array(per, dtype=float), axis=0)
        rows.append((method, *m))
    ctx.csv("compare.csv", ("method", "alpha_sen", "alpha_ctrl", "alpha_comm", "objective", "avg_peb_m",
                            "mean_err_m", "lqg_cost", "wall_time_s", "diverged_frac"), rows)


def _fig_sweep(ctx: Context, name, pairs):
    rows = sweep_fixed_fractions(ctx.cfg, pairs, ctx.args.runs, ctx.seed, ctx.args.jobs)
    keys = ("alpha_sen", "alpha_ctrl", "peb_m", "mean_err_m", "lqg_cost", "diverged_frac")
    ctx.csv(name, keys, ([r[k] for k in keys] for r in rows))
    return rows


def cmd_reproduce(ctx: Context):
    fig = ctx.args.figure
    if fig == "3":
        cmd_stability_sweep(ctx)
    elif fig == "4":
        ctx.args.alpha_min, ctx.args.alpha_max, ctx.args.alpha_step = 0.02, 0.5, 0.01
        cmd_crlb_sweep(ctx, offsets=[-10.0, 0.0, 10.0])
    elif fig == "5":
        sens = [0.01, 0.03, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3]
        ctrl = [0.01, 0.03, 0.05, 0.07, 0.09, 0.15, 0.2]
        _fig_sweep(ctx, "fig5_lqg_cost.csv", [(s, c) for s in sens for c in ctrl])
    elif fig == "6":
        rows = _fig_sweep(ctx, "fig6_error_vs_peb.csv",
                          [(s, c) for c in (0.07, 0.09) for s in (0.02, 0.04, 0.06, 0.1, 0.15, 0.2, 0.3)])
        fits = []
        for c in (0.07, 0.09):
            sub = [r for r in rows if r["alpha_ctrl"] == c and not r["diverged_frac"]]
            if len(sub) >= 2:
                x = np.array([r["peb_m"] for r in sub])
                y = np.array([r["mean_err_m"] for r in sub])
                k, b0 = np.polyfit(x, y, 1)
                r2 = 1 - np.sum((y - (k * x + b0)) ** 2) / max(np.sum((y - y.mean()) ** 2), 1e-300)
                fits.append((c, k, b0, r2))
        ctx.csv("fig6_fit.csv", ("alpha_ctrl", "slope", "intercept", "r2"), fits)
    elif fig == "7":
        _fig_sweep(ctx, "fig7_error_vs_alpha_ctrl.csv",
                   [(s, c) for s in (0.05, 0.15, 0.3) for c in (0.01, 0.02, 0.03, 0.05, 0.07, 0.1, 0.2)])
    elif fig == "8":
        rows = monte_carlo(ctx.cfg, [s.value for s in Scheme], ctx.args.runs, ctx.seed, ctx.args.jobs)
        ctx.csv("fig8_schemes.csv", AGG_HEADER, _aggregate_rows(rows))
    elif fig == "table2":
        cmd_compare(ctx)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat YAML key/value file; unset keys keep their defaults")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="worker processes for Monte-Carlo runs")

    p = _Parser(prog="isccsim", description=__doc__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    s = sub.add_parser("crlb-sweep", parents=[common])
    s.add_argument("--alpha-min", type=float, default=0.02)
    s.add_argument("--alpha-max", type=float, default=0.5)
    s.add_argument("--alpha-step", type=float, default=0.01)
    s.add_argument("--snr-offsets-db", default="0")
    sub.add_parser("stability-sweep", parents=[common])
    s = sub.add_parser("allocate", parents=[common])
    s.add_argument("--method", choices=("sca", "grid", "ga"), default="sca")
    s.add_argument("--grid-step", type=float, default=0.01)
    sub.add_parser("trajectory", parents=[common])
    s = sub.add_parser("simulate", parents=[common])
    s.add_argument("--scheme", choices=("all",) + tuple(x.value for x in Scheme), default="iscc")
    s.add_argument("--runs", type=int, default=1)
    s.add_argument("--per-run", action="store_true", help="also write one CSV per run and scheme")
    s = sub.add_parser("compare", parents=[common])
    s.add_argument("--runs", type=int, default=5)
    s.add_argument("--grid-step", type=float, default=0.01)
    s = sub.add_parser("reproduce", parents=[common])
    s.add_argument("--figure", choices=FIGURES, required=True)
    s.add_argument("--runs", type=int, default=2)
    s.add_argument("--grid-step", type=float, default=0.01)
    return p


HANDLERS = {
    "crlb-sweep": cmd_crlb_sweep, "stability-sweep": cmd_stability_sweep, "allocate": cmd_allocate,
    "trajectory": cmd_trajectory, "simulate": cmd_simulate, "compare": cmd_compare, "reproduce": cmd_reproduce,
}


def dispatch(argv) -> int:
    parser = build_parser()
    argv = list(argv)
    if not argv or argv[0] not in SUBCOMMANDS:
        if argv and argv[0] in ("-h", "--help"):
            parser.print_help()
            return EXIT_OK
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"unknown subcommand {argv[0]!r}\n" if argv else "missing subcommand\n")
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help inside a subcommand
        return int(exc.code or 0)
    try:
        ctx = Context(args)
        start = time.perf_counter()
        HANDLERS[args.command](ctx)
        label = args.command + (f" --figure {args.figure}" if args.command == "reproduce" else "")
        ctx.manifest(label)
        sys.stderr.write(f"{label}: wrote {len(ctx.outputs)} file(s) to {ctx.out} "
                         f"in {time.perf_counter() - start:.1f} s\n")
        return EXIT_OK
    except InfeasibleError as exc:
        sys.stderr.write(f"infeasible: {exc}\n")
        return EXIT_INFEASIBLE
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to exit 1
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


def main(argv=None) -> None:
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))
