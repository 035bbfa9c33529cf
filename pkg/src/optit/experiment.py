"""Running seeds and sweeps, manifests, and across-seed summaries."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import platform
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_from_dict, serialize_config
from .envs import make_env
from .learn.training import training_loop

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    config: dict
    build: str
    seed: int
    started: float
    wall_clock_s: float = 0.0
    total_env_steps: int = 0
    updates: int = 0
    final_return: float = float("nan")
    status: str = "running"
    error: str = ""
    files: tuple = ("metrics.csv", "checkpoint.bin", "config.toml")

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=float))
        return path


def build_id() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"{__version__} ({platform.python_implementation()} {platform.python_version()})"


def seed_dir(root, seed: int) -> Path:
    return Path(root) / f"seed_{seed}"


def run_seed(cfg: ExperimentConfig, seed: int, out_dir=None, threads: int = 1, synchronous: bool = True,
             progress=None) -> RunManifest:
    """Train one seed into ``out_dir`` (default ``<output_dir>/seed_<seed>``)."""
    out = Path(out_dir) if out_dir is not None else seed_dir(cfg.output_dir, seed)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = cfg.to_dict()
    manifest = RunManifest(config=snapshot, build=build_id(), seed=seed, started=time.time())
    (out / "config.toml").write_text(serialize_config(cfg))
    manifest.write(out)
    t0 = time.perf_counter()
    try:
        result = training_loop(make_env(cfg.env), cfg.search, cfg.train, seed=seed, out_dir=out, threads=threads,
                               synchronous=synchronous, config_snapshot={**snapshot, "manifest": MANIFEST_NAME,
                                                                         "seed": seed},
                               progress=progress)
    except Exception as exc:  # one failing seed must not take down the others
        log.exception("seed %d failed", seed)
        manifest.status, manifest.error = "failed", f"{type(exc).__name__}: {exc}"
    else:
        manifest.status = "ok"
        manifest.total_env_steps = result.total_env_steps
        manifest.updates = result.updates
        manifest.final_return = result.final_return
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out)
    return manifest


def run_experiment(cfg: ExperimentConfig, seeds=None, out_dir=None, threads: int = 1, synchronous: bool = True,
                   progress=None) -> list[RunManifest]:
    root = Path(out_dir or cfg.output_dir)
    return [run_seed(cfg, s, seed_dir(root, s), threads, synchronous, progress)
            for s in (seeds if seeds is not None else cfg.seeds)]


# -- sweeps ----------------------------------------------------------------------


def read_metrics(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{path} has no metric rows")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def final_window_return(metrics: dict, fraction: float) -> float:
    """Mean windowed return over rows in the last ``fraction`` of training."""
    steps = metrics["total_env_steps"]
    keep = steps > steps[-1] * (1.0 - fraction)
    vals = metrics["windowed_return_mean"][keep]
    vals = vals[~np.isnan(vals)]
    return float(vals.mean()) if len(vals) else float("nan")


def sweep_cells(cfg: ExperimentConfig):
    sweep = cfg.sweep
    if sweep is None:
        raise ValueError("config has no [sweep] table")
    for alpha, beta in itertools.product(sweep.alphas, sweep.betas):
        cell = replace(cfg, train=replace(cfg.train, step_size=float(alpha)),
                       search=replace(cfg.search, beta=float(beta)))
        yield f"alpha_{alpha:g}_beta_{beta:g}", cell


def _sweep_task(args):
    cfg_dict, seed, out, threads = args
    return asdict(run_seed(config_from_dict(cfg_dict), seed, out, threads, True))


def run_sweep(cfg: ExperimentConfig, out_dir=None, jobs: int = 1, threads: int = 1) -> dict:
    """Every (alpha, beta) cell over every seed; picks the best final-window mean."""
    root = Path(out_dir or cfg.output_dir)
    cells = list(sweep_cells(cfg))
    tasks = []
    for name, cell in cells:
        d = cell.to_dict()
        d.pop("sweep", None)
        for s in cell.seeds:
            tasks.append((d, s, str(seed_dir(root / name, s)), threads))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            list(pool.map(_sweep_task, tasks))
    else:
        for t in tasks:
            _sweep_task(t)
    rows = []
    for name, cell in cells:
        scores = []
        for s in cell.seeds:
            path = seed_dir(root / name, s) / "metrics.csv"
            if path.exists():
                scores.append(final_window_return(read_metrics(path), cfg.sweep.final_fraction))
        scores = np.array(scores)
        rows.append(dict(cell=name, alpha=cell.train.step_size, beta=cell.search.beta,
                         seeds=int(len(scores)), score=float(np.nanmean(scores)) if len(scores) else float("nan")))
    with open(root / "sweep.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    scored = [r for r in rows if not np.isnan(r["score"])]
    best = max(scored, key=lambda r: r["score"]) if scored else None
    (root / "best.json").write_text(json.dumps(best, indent=2))
    return {"cells": rows, "best": best}


# -- across-seed summaries -------------------------------------------------------------


def aggregate_curves(metric_files) -> dict[str, np.ndarray]:
    """Mean and 95% CI (1.96 sd / sqrt(n), ddof=1) of the windowed return across seeds."""
    runs = [read_metrics(p) for p in metric_files]
    if not runs:
        raise ValueError("need at least one metrics file")
    steps = runs[0]["total_env_steps"]
    for r in runs[1:]:
        if len(r["total_env_steps"]) != len(steps) or np.any(r["total_env_steps"] != steps):
            raise ValueError("metrics files have different step grids")
    y = np.stack([r["windowed_return_mean"] for r in runs])
    n = len(runs)
    mean = y.mean(axis=0)
    ci = 1.96 * y.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return {"steps": steps, "mean": mean, "ci": ci, "n": n}


def plot_curves(groups: dict, out_path, y_floor: float | None = None, title: str = "") -> Path:
    """One line per group with CI error bars; ``groups`` maps label -> metric files."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, files in groups.items():
        agg = aggregate_curves(files)
        mean = agg["mean"] if y_floor is None else np.maximum(agg["mean"], y_floor)
        if agg["n"] > 1:
            ax.errorbar(agg["steps"], mean, yerr=agg["ci"], label=f"{label} (n={agg['n']})", capsize=2)
        else:
            ax.plot(agg["steps"], mean, label=label)
    if y_floor is not None:
        ax.set_ylim(bottom=y_floor)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("windowed return")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    sources = ";".join(str(Path(f).parent / MANIFEST_NAME) for fs in groups.values() for f in fs)
    fig.savefig(out_path, format="svg", metadata={"Description": f"manifests: {sources}"})
    plt.close(fig)
    return out_path
