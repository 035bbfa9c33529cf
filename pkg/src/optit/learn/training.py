"""Actor/learner loop: search in every visited state, store the results,
distill them into the option network.

Synchronous mode advances all workers in lock step and runs their
searches as one batch; it is bit-for-bit reproducible for a fixed seed.
The threaded mode runs one thread per worker plus the learner and is not
reproducible.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import queue
import threading
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import Environment, StateBatch
from ..neural import AdamW, OptionNet, save_checkpoint
from ..search import RunningVariance, SearchConfig, search_batch
from .buffer import NONE, TERMINAL_NEXT, TIMEOUT_NEXT, ReplayBuffer
from .losses import POLICY_LOSSES, policy_loss, value_loss

log = logging.getLogger(__name__)

METRIC_FIELDS = ("total_env_steps", "windowed_return_mean", "windowed_return_ci95",
                 "loss_policy", "loss_value", "sigma_bar")


@dataclass
class TrainConfig:
    K: int = 5
    N: int = 5
    batch_size: int = 250
    buffer_capacity: int = 100_000
    grad_updates_per_env_step: float = 16
    workers: int = 16
    training_start: int = 100
    loss_variant: str = "optit"
    step_size: float = 1.25e-4
    hidden_layers: int = 3
    hidden_units: int = 400
    total_env_steps: int = 500_000
    log_interval: int = 1000
    window: int = 100
    checkpoint_interval: int = 0
    option_init_scale: float = 0.1

    def validate(self, search: SearchConfig | None = None, num_actions: int | None = None):
        for name in ("K", "N", "batch_size", "buffer_capacity", "workers", "hidden_layers",
                     "hidden_units", "total_env_steps", "log_interval", "window"):
            if getattr(self, name) < 1:
                raise ValueError(f"train.{name} must be positive")
        if self.grad_updates_per_env_step <= 0 or self.step_size <= 0:
            raise ValueError("train.grad_updates_per_env_step and train.step_size must be positive")
        if self.option_init_scale < 0:
            raise ValueError("train.option_init_scale must be non-negative")
        if self.training_start < 0:
            raise ValueError("train.training_start must be non-negative")
        if self.loss_variant not in POLICY_LOSSES:
            raise ValueError(f"train.loss_variant must be one of {POLICY_LOSSES}")
        if self.loss_variant.startswith("exit") and self.N != 1:
            raise ValueError("ExIt loss variants require N = 1")
        if self.buffer_capacity <= self.workers:
            raise ValueError("buffer must hold more entries than there are workers")
        if search is not None:
            if search.rollout_length != self.K:
                raise ValueError("search.rollout_length must equal train.K")
            if num_actions is not None:
                search.sims_per_pair(num_actions, self.N)

    @property
    def independent_states(self) -> bool:
        return self.loss_variant in ("exit_sampled_indep", "exit_exact_indep")


@dataclass
class TrainResult:
    net: OptionNet
    metrics: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)
    total_env_steps: int = 0
    updates: int = 0

    @property
    def final_return(self) -> float:
        return self.metrics[-1]["windowed_return_mean"] if self.metrics else math.nan


def make_net(env: Environment, cfg: TrainConfig, rng) -> OptionNet:
    return OptionNet(env.spec.observation_dim, env.spec.num_actions, cfg.N,
                     cfg.hidden_layers, cfg.hidden_units, rng=rng,
                     option_init_scale=cfg.option_init_scale)


def make_optimizer(net: OptionNet, cfg: TrainConfig) -> AdamW:
    # value network learns at twice the policy step size
    return AdamW(net.params, lambda k: 2 * cfg.step_size if net.is_value_param(k) else cfg.step_size)


class Learner:
    """Owns the master parameters, the optimizer and the replay buffer."""

    def __init__(self, net: OptionNet, cfg: TrainConfig, obs_dim: int, num_actions: int, rng):
        self.net = net
        self.cfg = cfg
        self.opt = make_optimizer(net, cfg)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, obs_dim, num_actions)
        self.rng = rng
        self.updates = 0
        self._owed = 0.0
        self._losses = []

    def update(self):
        cfg = self.cfg
        K = 1 if cfg.independent_states else cfg.K
        batch = self.buffer.sample_segments(cfg.batch_size, K, self.rng)
        lp, gp = policy_loss(self.net, batch, cfg.loss_variant, self.rng)
        lv, gv = value_loss(self.net, batch)
        gp.update(gv)
        self.opt.step(self.net.params, gp)
        self.updates += 1
        self._losses.append((lp, lv))

    def on_env_steps(self, n_steps: int, total_steps: int):
        """Run the updates owed for ``n_steps`` new environment steps."""
        if total_steps < self.cfg.training_start:
            return
        self._owed += self.cfg.grad_updates_per_env_step * n_steps
        while self._owed >= 1.0:
            self._owed -= 1.0
            self.update()

    def drain_losses(self):
        if not self._losses:
            return math.nan, math.nan
        lp, lv = np.mean(self._losses, axis=0)
        self._losses.clear()
        return float(lp), float(lv)


class Metrics:
    """Trailing window of episode returns per worker, pooled for reporting."""

    def __init__(self, workers: int, window: int):
        self.windows = [deque(maxlen=window) for _ in range(workers)]
        self.rows = []
        self.all_returns = []

    def episode(self, worker: int, ret: float, total_steps: int):
        self.windows[worker].append(ret)
        self.all_returns.append((total_steps, worker, ret))

    def row(self, total_steps, losses, sigma_bar):
        pooled = np.array([r for w in self.windows for r in w])
        mean = float(pooled.mean()) if len(pooled) else math.nan
        ci = float(1.96 * pooled.std(ddof=1) / np.sqrt(len(pooled))) if len(pooled) > 1 else math.nan
        r = dict(total_env_steps=int(total_steps), windowed_return_mean=mean, windowed_return_ci95=ci,
                 loss_policy=losses[0], loss_value=losses[1], sigma_bar=float(sigma_bar))
        self.rows.append(r)
        return r


def format_metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in rows:
        w.writerow([r["total_env_steps"]] + [f"{r[k]:.10g}" for k in METRIC_FIELDS[1:]])
    return buf.getvalue()


def training_loop(env: Environment, search_cfg: SearchConfig, cfg: TrainConfig, seed: int = 0,
                  out_dir=None, threads: int = 1, synchronous: bool = True, config_snapshot=None,
                  progress=None) -> TrainResult:
    """Train for ``cfg.total_env_steps`` aggregate environment steps.

    Writes ``metrics.csv`` and ``checkpoint.bin`` into ``out_dir`` when
    given.  ``progress`` is called with each metrics row.
    """
    cfg.validate(search_cfg, env.spec.num_actions)
    ss = np.random.SeedSequence(seed)
    s_net, s_learn, s_search, s_workers = ss.spawn(4)
    net = make_net(env, cfg, np.random.default_rng(s_net))
    learner = Learner(net, cfg, env.spec.observation_dim, env.spec.num_actions, np.random.default_rng(s_learn))
    worker_rngs = [np.random.default_rng(s) for s in s_workers.spawn(cfg.workers)]
    run = _run_synchronous if synchronous else _run_threaded
    metrics = run(env, search_cfg, cfg, learner, worker_rngs, np.random.default_rng(s_search), threads,
                  out_dir, config_snapshot, progress)
    result = TrainResult(net, metrics.rows, metrics.all_returns, metrics.total_steps, learner.updates)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(format_metrics_csv(metrics.rows))
        save_checkpoint(out / "checkpoint.bin", net, config_snapshot)
    return result


def _maybe_checkpoint(cfg, out_dir, net, config_snapshot, before, after):
    if out_dir is None or cfg.checkpoint_interval <= 0:
        return
    if after // cfg.checkpoint_interval > before // cfg.checkpoint_interval:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        save_checkpoint(Path(out_dir) / f"checkpoint_{after}.bin", net, config_snapshot)


def _run_synchronous(env, search_cfg, cfg, learner, worker_rngs, search_rng, threads, out_dir,
                     config_snapshot, progress):
    W = cfg.workers
    net = learner.net
    metrics = Metrics(W, cfg.window)
    rv = RunningVariance(W, search_cfg.variance_decay)
    states = StateBatch.concat([env.reset_batch(1, r) for r in worker_rngs])
    ep_return = np.zeros(W)
    ep_len = np.zeros(W, dtype=np.int64)
    ep_id = np.arange(W, dtype=np.int64)
    next_id = W
    total = 0
    while total < cfg.total_env_steps:
        obs = env.encode(states)
        res = search_batch(env, net, states, rv.sigma_bar, search_cfg, search_rng, threads)
        rv.update(res.returns)
        nxt, reward, terminal = env.step_batch(states, res.a_tilde)
        ep_return += reward
        ep_len += 1
        timeout = (ep_len >= env.timeout) & ~terminal
        boundary = np.where(terminal, TERMINAL_NEXT, np.where(timeout, TIMEOUT_NEXT, NONE))
        learner.buffer.add(np.arange(W), obs, res.pi_tilde, res.v_tilde, ep_id, ep_len - 1, boundary)
        before = total
        total += W
        for w in np.flatnonzero(terminal | timeout):
            metrics.episode(int(w), float(ep_return[w]), total)
            nxt.put([w], env.reset_batch(1, worker_rngs[w]))
            ep_return[w], ep_len[w] = 0.0, 0
            ep_id[w], next_id = next_id, next_id + 1
        states = nxt
        learner.on_env_steps(W, total)
        if total // cfg.log_interval > before // cfg.log_interval or total >= cfg.total_env_steps:
            row = metrics.row(total, learner.drain_losses(), rv.sigma_bar.mean())
            if progress:
                progress(row)
        _maybe_checkpoint(cfg, out_dir, net, config_snapshot, before, total)
    metrics.total_steps = total
    return metrics


def _run_threaded(env, search_cfg, cfg, learner, worker_rngs, search_rng, threads, out_dir,
                  config_snapshot, progress):
    """Workers search with read-only parameter snapshots, refreshed at
    episode boundaries; the learner ingests their entries through a queue."""
    W = cfg.workers
    metrics = Metrics(W, cfg.window)
    ingest: queue.Queue = queue.Queue(maxsize=4 * W)
    stop = threading.Event()
    snapshot_lock = threading.Lock()
    snapshot = [learner.net.copy()]
    search_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(
        int(search_rng.integers(2**63))).spawn(W)]

    def worker(w):
        rng, srng = worker_rngs[w], search_rngs[w]
        rv = RunningVariance(1, search_cfg.variance_decay)
        with snapshot_lock:
            params = snapshot[0]
        state = env.reset_batch(1, rng)
        ep_id, t, ret = w, 0, 0.0
        while not stop.is_set():
            obs = env.encode(state)
            res = search_batch(env, params, state, rv.sigma_bar, search_cfg, srng)
            rv.update(res.returns)
            nxt, r, term = env.step_batch(state, res.a_tilde)
            t += 1
            ret += float(r[0])
            timeout = t >= env.timeout and not term[0]
            boundary = TERMINAL_NEXT if term[0] else TIMEOUT_NEXT if timeout else NONE
            done = bool(term[0]) or timeout
            item = (w, obs[0], res.pi_tilde[0], res.v_tilde[0], ep_id, t - 1, boundary,
                    ret if done else None, float(rv.sigma_bar[0]))
            while not stop.is_set():
                try:
                    ingest.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if done:
                state = env.reset_batch(1, rng)
                ep_id += W
                t, ret = 0, 0.0
                with snapshot_lock:
                    params = snapshot[0]
            else:
                state = nxt

    pool = [threading.Thread(target=worker, args=(w,), daemon=True) for w in range(W)]
    for th in pool:
        th.start()
    total, sigma = 0, np.ones(W)
    try:
        while total < cfg.total_env_steps:
            w, obs, pi, v, ep, t, boundary, ret, sb = ingest.get()
            learner.buffer.add([w], obs[None], pi[None], [v], [ep], [t], [boundary])
            before = total
            total += 1
            sigma[w] = sb
            if ret is not None:
                metrics.episode(w, ret, total)
            learner.on_env_steps(1, total)
            if learner.updates and total % W == 0:
                with snapshot_lock:
                    snapshot[0] = learner.net.copy()
            if total // cfg.log_interval > before // cfg.log_interval or total >= cfg.total_env_steps:
                row = metrics.row(total, learner.drain_losses(), sigma.mean())
                if progress:
                    progress(row)
            _maybe_checkpoint(cfg, out_dir, learner.net, config_snapshot, before, total)
    finally:
        stop.set()
        for th in pool:
            th.join(timeout=5)
    metrics.total_steps = total
    return metrics


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
