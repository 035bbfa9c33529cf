"""Fast oracle checks runnable from the command line."""
from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np

from .analysis import (greedy_visits_wall, mutual_information, posterior_ce_demo, solve_random_policy_q,
                       uniform_policy, value_iteration)
from .envs import Compass, generate_maze
from .learn.buffer import SegmentBatch
from .learn.losses import optit_loss
from .neural import OptionNet, finite_difference_gradients, load_checkpoint, max_relative_error, save_checkpoint
from .search import RunningVariance, SearchConfig, search_batch
from .termination import brute_force_from_tables, log_likelihood_from_tables, termination_loss


def check_recursion(rng):
    worst = 0.0
    for _ in range(50):
        K, N = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        rho = rng.dirichlet(np.ones(N), size=K + 1)
        pa = rng.random((K, N))
        psi = rng.uniform(0.01, 0.99, (K + 1, N))
        ll = log_likelihood_from_tables(np.log(rho)[None], np.log(pa)[None], np.log(psi)[None],
                                        np.log1p(-psi)[None])[0]
        worst = max(worst, abs(ll - brute_force_from_tables(rho, pa, psi)))
    return worst < 1e-9, f"max |recursion - enumeration| = {worst:.2e}"


def _small_net(rng, termination=False, N=3):
    return OptionNet(6, 4, N, 2, 8, termination=termination, dtype=np.float64,
                     rng=int(rng.integers(1 << 31)), zero_heads=False)


def check_termination_gradients(rng):
    net = _small_net(rng, termination=True)
    obs = rng.integers(0, 2, (3, 5, 6)).astype(np.uint8)
    acts = rng.integers(0, 4, (3, 4))
    _, g = termination_loss(net, obs, acts)
    names = [k for k in net.params if not net.is_value_param(k)]
    num = finite_difference_gradients(lambda: termination_loss(net, obs, acts)[0], net.params, names=names)
    err = max_relative_error(g, num, floor=1e-6)
    return err < 1e-4, f"max relative error {err:.2e}"


def check_optit_gradients(rng):
    net = _small_net(rng)
    B, K = 4, 3
    obs = rng.integers(0, 2, (B, K, 6)).astype(np.uint8)
    pi = rng.dirichlet(np.ones(4), size=(B, K))
    mask = np.arange(K)[None] < rng.integers(1, K + 1, size=B)[:, None]
    batch = SegmentBatch(obs, pi, np.zeros((B, K)), mask)
    acts = rng.integers(0, 4, (B, K))
    _, g = optit_loss(net, batch, actions=acts)
    names = [k for k in net.params if not net.is_value_param(k)]
    num = finite_difference_gradients(lambda: optit_loss(net, batch, actions=acts)[0], net.params, names=names)
    err = max_relative_error(g, num, floor=1e-6)
    return err < 1e-4, f"max relative error {err:.2e}"


def check_bellman(rng):
    maze = generate_maze(5, rng)
    rand = solve_random_policy_q(maze)
    opt = value_iteration(maze)
    r1, r2 = rand.bellman_residual(uniform_policy(rand)), opt.optimality_residual()
    never = not greedy_visits_wall(opt, maze)
    return r1 < 1e-8 and r2 < 1e-8 and never, f"residuals {r1:.1e} / {r2:.1e}; optimal avoids walls: {never}"


def check_ce_demo(rng):
    K = int(rng.integers(2, 30))
    rep = posterior_ce_demo(K)
    ok = abs(rep.single_ce - K * math.log(4)) < 1e-12 and abs(rep.mixture_ce - math.log(4)) < 1e-12
    return ok, f"K={K}: single {rep.single_ce:.6f}, mixture {rep.mixture_ce:.6f}"


def check_search(rng):
    env = Compass(15, 20)
    net = OptionNet(env.spec.observation_dim, 4, 2, 1, 8, rng=0)
    cfg = SearchConfig(simulation_budget=40, rollout_length=5, beta=0.1)
    states = env.reset_batch(3, rng)
    rv = RunningVariance(3)
    res = search_batch(env, net, states, rv.sigma_bar, cfg, rng)
    ok = np.allclose(res.p_tilde.sum(axis=(1, 2)), 1) and np.allclose(res.pi_tilde, res.p_tilde.sum(axis=1))
    ok &= res.returns.shape == (3, 40) and np.allclose(res.v_tilde, res.q_hat.max(axis=(1, 2)))
    return bool(ok), "joint and marginal search distributions normalised"


def check_checkpoint(rng):
    net = _small_net(rng, termination=True).copy(np.float32)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "c.bin"
        save_checkpoint(path, net, {"seed": 1})
        back, cfg = load_checkpoint(path)
    ok = all(np.array_equal(net.params[k], back.params[k]) for k in net.params) and cfg == {"seed": 1}
    return ok, "float32 round trip is exact"


def check_diversity(rng):
    perfect = np.eye(4)[None].repeat(5, axis=0) * 100
    same = np.full((5, 4, 4), 25)
    _, _, mi_p, _ = mutual_information(perfect.sum(axis=0))
    _, _, mi_s, _ = mutual_information(same.sum(axis=0))
    ok = abs(mi_p - math.log(4)) < 1e-12 and abs(mi_s) < 1e-12
    return ok, f"specialised MI {mi_p:.4f}, identical MI {mi_s:.4f}"


CHECKS = {
    "termination recursion vs enumeration": check_recursion,
    "termination gradients": check_termination_gradients,
    "option loss gradients": check_optit_gradients,
    "Bellman solvers": check_bellman,
    "cross-entropy demo": check_ce_demo,
    "search distributions": check_search,
    "checkpoint round trip": check_checkpoint,
    "diversity estimator": check_diversity,
}


def run_selftest(seed: int = 0, out=print) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn(rng)
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
