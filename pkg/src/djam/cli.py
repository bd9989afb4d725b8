"""Command-line front end.

    djam gen       write the instance bundle (edges.txt, edges.csv, agents.csv)
    djam solve     write the reference solution (solution.csv)
    djam run-djam  Monte Carlo run of the gossip engine
    djam run-admm  Monte Carlo run of ADMM for one --rho
    djam compare   gossip engine plus the ADMM rho sweep in one CSV

All subcommands accept --config, --seed, --out and repeated --set key=value.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from djam.errors import DjamError
from djam.experiment import (
    CONFIG_KEYS,
    AggregateTrace,
    ExperimentConfig,
    format_config,
    load_config,
    monte_carlo,
    parse_config,
    solve_instance,
)
from djam.network import write_edge_list
from djam.oracle import write_solution_csv
from djam.traces import aggregate_rows, fmt, per_trial_rows, write_blocks

log = logging.getLogger("djam")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.set:
        cfg = parse_config("\n".join(args.set), cfg)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _blocks(agg: AggregateTrace, extra):
    yield aggregate_rows(agg.rounds, agg.mean_rel_error), extra
    if agg.per_trial is not None:
        yield per_trial_rows(agg.rounds, agg.per_trial, agg.edges, agg.epochs), extra


def _summary(agg: AggregateTrace) -> str:
    name = agg.algorithm if agg.rho is None else f"{agg.algorithm}(rho={agg.rho:g})"
    hit = agg.rounds_to(1e-6)
    return f"{name}: terminal mean relative error {agg.terminal:.3e}, rounds to 1e-6: {hit if hit is not None else 'not reached'}"


def cmd_gen(args) -> int:
    cfg = _config(args)
    out = _out(args)
    inst, _ = solve_instance(cfg)
    write_edge_list(inst.net, out / "edges.txt")
    with open(out / "edges.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "W"])
        for (i, j), wt in zip(inst.net.edges, inst.net.weights):
            w.writerow([i + 1, j + 1, fmt(wt)])
    with open(out / "agents.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "sigma_diag", "theta_true", "y"])
        for k in range(inst.net.n):
            w.writerow([k + 1, fmt(inst.sigma_diag[k]), fmt(inst.theta_true[k]), fmt(inst.y[k])])
    (out / "config.txt").write_text(format_config(cfg))
    print(f"instance: n={inst.net.n}, |E|={inst.net.num_edges}, attempt {inst.attempt} -> {out}")
    return 0


def cmd_solve(args) -> int:
    cfg = _config(args)
    out = _out(args)
    _, sol = solve_instance(cfg)
    write_solution_csv(sol, out / "solution.csv")
    print(f"solution: residual {sol.residual:.3e} after {sol.sweeps} sweeps -> {out / 'solution.csv'}")
    return 0


def cmd_run_djam(args) -> int:
    cfg = _config(args)
    out = _out(args)
    agg = monte_carlo(cfg, "djam")
    write_blocks(out / "djam_trace.csv", _blocks(agg, ()))
    print(_summary(agg))
    return 0


def cmd_run_admm(args) -> int:
    cfg = _config(args)
    out = _out(args)
    agg = monte_carlo(cfg, "admm", args.rho)
    write_blocks(out / f"admm_rho{args.rho:g}_trace.csv", _blocks(agg, (args.rho,)), ("rho",))
    print(_summary(agg))
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    out = _out(args)
    instance = solve_instance(cfg)
    runs = [monte_carlo(cfg, "djam", instance=instance)]
    runs += [monte_carlo(cfg, "admm", rho, instance=instance) for rho in cfg.rhos]
    blocks = []
    for agg in runs:
        blocks += list(_blocks(agg, (agg.algorithm, agg.rho)))
    write_blocks(out / "compare_trace.csv", blocks, ("algorithm", "rho"))
    for agg in runs:
        print(_summary(agg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="djam", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen": cmd_gen,
        "solve": cmd_solve,
        "run-djam": cmd_run_djam,
        "run-admm": cmd_run_admm,
        "compare": cmd_compare,
    }
    for name, func in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help=f"override a config key ({', '.join(CONFIG_KEYS)})")
        if name == "run-admm":
            p.add_argument("--rho", type=float, required=True)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DjamError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
