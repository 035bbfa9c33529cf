"""Command-line entry point: ``optit <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import tomli

from .config import config_from_dict, load_config, preset, serialize_config
from .envs import make_env


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(cfg_dict: dict, overrides) -> dict:
    """``section.key=value`` pairs (values in TOML syntax) onto a config dict."""
    for item in overrides or []:
        key, _, value = item.partition("=")
        if not _:
            raise SystemExit(f"override {item!r} is not key=value")
        parts = key.strip().split(".")
        node = cfg_dict
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(value.strip())
    return cfg_dict


def _load(args):
    if args.config:
        base = load_config(args.config).to_dict()
    else:
        base = preset(args.preset).to_dict()
    cfg = config_from_dict(apply_overrides(base, args.set))
    if getattr(args, "out", None):
        cfg.output_dir = str(args.out)
    return cfg


def _progress(row):
    print(f"step {row['total_env_steps']:>8d}  return {row['windowed_return_mean']:8.3f} "
          f"± {row['windowed_return_ci95']:.3f}  policy {row['loss_policy']:.4f}  "
          f"value {row['loss_value']:.4f}  sigma {row['sigma_bar']:.3f}", flush=True)


def cmd_run(args) -> int:
    from .experiment import run_experiment

    cfg = _load(args)
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    manifests = run_experiment(cfg, seeds, cfg.output_dir, args.threads, args.synchronous,
                               None if args.quiet else _progress)
    for m in manifests:
        print(f"seed {m.seed}: {m.status} final return {m.final_return:.4f} ({m.wall_clock_s:.1f}s)")
    return 0 if all(m.status == "ok" for m in manifests) else 1


def cmd_sweep(args) -> int:
    from .experiment import run_sweep

    cfg = _load(args)
    if cfg.sweep is None:
        cfg = config_from_dict({**cfg.to_dict(), "sweep": {}})
    if args.seed is not None:
        cfg.seeds = [args.seed]
    result = run_sweep(cfg, cfg.output_dir, args.jobs, args.threads)
    print(json.dumps(result["best"], indent=2))
    return 0


def cmd_plot(args) -> int:
    from .experiment import plot_curves

    groups = defaultdict(list)
    for f in args.metrics:
        p = Path(f)
        label = p.parent.parent.name if p.parent.name.startswith("seed_") else p.parent.name
        groups[label].append(p)
    out = plot_curves(dict(groups), args.out, args.y_floor, args.title or "")
    print(out)
    return 0


def _write(obj, out):
    text = json.dumps(obj, indent=2, default=float)
    if out:
        Path(out).write_text(text)
    print(text)


def cmd_analyze(args) -> int:
    from . import analysis
    from .envs import generate_maze
    from .neural import load_checkpoint

    rng = np.random.default_rng(args.seed)
    if args.what == "bellman":
        maze = generate_maze(args.width, rng)
        rand = analysis.solve_random_policy_q(maze, args.penalty)
        opt = analysis.value_iteration(maze, args.penalty)
        _write(dict(width=args.width, seed=args.seed, walls=maze.walls.astype(int).tolist(), goal=list(maze.goal),
                    random_residual=rand.bellman_residual(analysis.uniform_policy(rand)),
                    optimal_residual=opt.optimality_residual(),
                    greedy_of_random_enters_wall=analysis.greedy_visits_wall(rand, maze),
                    optimal_enters_wall=analysis.greedy_visits_wall(opt, maze),
                    random_q={f"{r},{c}": q.tolist() for (r, c), q in zip(rand.cells.tolist(), rand.q)}), args.out)
        return 0
    if args.what == "ce":
        rep = analysis.posterior_ce_demo(args.K, args.grid_width)
        _write({**rep.as_dict(), "direct_path": analysis.direct_path_ratio(args.distance)}, args.out)
        return 0
    net, meta = load_checkpoint(args.checkpoint)
    env = make_env(meta.get("env") or preset(args.preset).env)
    if args.what == "grids":
        rep = analysis.render_option_grids(net, env, rng=rng)
        out = Path(args.out or "grids.svg")
        out.write_text(rep.svg)
        print(json.dumps({"svg": str(out), "labels": rep.labels,
                          "purity": [dict(action=a, share=s) for a, s in rep.purity()]}, indent=2))
        return 0
    if args.what == "diversity":
        rep = analysis.option_diversity(net, env, args.states, args.rollouts, args.horizon, rng, args.boot)
        _write(rep.as_dict(), args.out)
        return 0
    raise SystemExit(f"unknown analysis {args.what!r}")


def cmd_checkpoint_dump(args) -> int:
    from .neural import load_checkpoint

    net, meta = load_checkpoint(args.checkpoint)
    print(json.dumps({"architecture": net.architecture(), "config": meta}, indent=2))
    for k, v in net.params.items():
        print(f"{k:<16s} {str(v.shape):<14s} norm {float(np.linalg.norm(v)):.6g}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(args.seed or 0) else 1


def cmd_show_config(args) -> int:
    sys.stdout.write(serialize_config(_load(args)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optit", description="Option learning from search: experiments and tools")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--preset", default="electric_procmaze7", help="defaults when --config is absent")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one field")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="rollout threads")

    sp = sub.add_parser("run", help="train every configured seed")
    config_args(sp)
    sp.add_argument("--synchronous", action=argparse.BooleanOptionalAction, default=True,
                    help="lock-step workers (deterministic)")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("sweep", help="step-size x beta grid")
    config_args(sp)
    sp.add_argument("--jobs", type=int, default=1, help="cells run in parallel processes")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("show-config", help="print the resolved config")
    config_args(sp)
    sp.set_defaults(fn=cmd_show_config)

    sp = sub.add_parser("plot", help="windowed-return curves with 95%% CI across seeds")
    sp.add_argument("metrics", nargs="+", help="metrics.csv files; grouped by run directory")
    sp.add_argument("--out", default="returns.svg")
    sp.add_argument("--y-floor", type=float, default=None)
    sp.add_argument("--title")
    sp.set_defaults(fn=cmd_plot)

    sp = sub.add_parser("analyze", help="Bellman, cross-entropy, grid and diversity reports")
    sp.add_argument("what", choices=("bellman", "ce", "grids", "diversity"))
    sp.add_argument("--checkpoint")
    sp.add_argument("--preset", default="electric_procmaze7")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.add_argument("--width", type=int, default=3)
    sp.add_argument("--penalty", type=float, default=None)
    sp.add_argument("--K", type=int, default=None)
    sp.add_argument("--grid-width", type=int, default=15)
    sp.add_argument("--distance", type=int, default=7)
    sp.add_argument("--states", type=int, default=100)
    sp.add_argument("--rollouts", type=int, default=100)
    sp.add_argument("--horizon", type=int, default=20)
    sp.add_argument("--boot", type=int, default=200)
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("checkpoint-dump", help="print a checkpoint's header and tensor norms")
    sp.add_argument("checkpoint")
    sp.set_defaults(fn=cmd_checkpoint_dump)

    sp = sub.add_parser("selftest", help="run the built-in oracle checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "analyze" and args.what in ("grids", "diversity") and not args.checkpoint:
        raise SystemExit("--checkpoint is required for grids and diversity")
    try:
        return args.fn(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
