"""Monte-Carlo search over (first action, option) pairs.

Each pair receives the same number of bootstrapped rollouts.  The mean
returns are turned into a soft joint distribution over pairs whose action
marginal is the search policy, while the executed action and the value
target read the raw means greedily.

All rollouts of a search (and, during synchronous training, of every
worker's search) are advanced together as one state batch.  Rollout ``j``
draws its action noise from row ``j`` of a table sampled up front, so
splitting the batch across threads cannot change the result.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Environment, StateBatch

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class SearchConfig:
    simulation_budget: int = 1000
    rollout_length: int = 5
    beta: float = 0.1
    variance_decay: float = 0.99
    discount: float = 0.99

    def __post_init__(self):
        if self.simulation_budget < 1 or self.rollout_length < 1:
            raise ValueError("simulation_budget and rollout_length must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.variance_decay < 1.0:
            raise ValueError("variance_decay must lie in [0, 1)")

    def sims_per_pair(self, num_actions: int, num_options: int) -> int:
        m = self.simulation_budget // (num_actions * num_options)
        if m < 1:
            raise ValueError(
                f"simulation budget {self.simulation_budget} cannot cover "
                f"{num_actions} actions x {num_options} options"
            )
        return m


class RunningVariance:
    """Exponentially weighted rollout-return variance, one slot per worker."""

    def __init__(self, n: int = 1, decay: float = 0.99, initial: float = 1.0):
        self.decay = decay
        self.sigma_bar_sq = np.full(n, float(initial))

    @property
    def sigma_bar(self) -> np.ndarray:
        return np.maximum(np.sqrt(self.sigma_bar_sq), SIGMA_FLOOR)

    def update(self, returns, which=None) -> None:
        """Fold in one batch of returns per slot.  ``returns`` is ``(S, R)``."""
        returns = np.atleast_2d(np.asarray(returns, dtype=np.float64))
        if returns.shape[1] < 2:
            raise ValueError("need at least two returns to estimate a variance")
        var = returns.var(axis=1, ddof=1)
        idx = slice(None) if which is None else which
        self.sigma_bar_sq[idx] = self.decay * self.sigma_bar_sq[idx] + (1.0 - self.decay) * var

    def copy(self) -> RunningVariance:
        rv = RunningVariance(len(self.sigma_bar_sq), self.decay)
        rv.sigma_bar_sq = self.sigma_bar_sq.copy()
        return rv


def update_sigma_bar(rv: RunningVariance, returns) -> RunningVariance:
    out = rv.copy()
    out.update(returns)
    return out


@dataclass
class SearchResult:
    q_hat: np.ndarray    # (N, A)
    pi_tilde: np.ndarray  # (A,)
    a_tilde: int
    v_tilde: float
    p_tilde: np.ndarray  # (N, A)


@dataclass
class BatchSearchResult:
    q_hat: np.ndarray     # (S, N, A)
    p_tilde: np.ndarray   # (S, N, A)
    pi_tilde: np.ndarray  # (S, A)
    a_tilde: np.ndarray   # (S,)
    v_tilde: np.ndarray   # (S,)
    returns: np.ndarray   # (S, A*N*M) raw rollout returns, ordered (a, n, j)

    def __getitem__(self, i) -> SearchResult:
        return SearchResult(self.q_hat[i], self.pi_tilde[i], int(self.a_tilde[i]), float(self.v_tilde[i]),
                            self.p_tilde[i])


def sample_from_log_probs(logp: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling of one action per row with given uniforms."""
    cdf = np.cumsum(np.exp(logp.astype(np.float64)), axis=-1)
    a = (u[:, None] * cdf[:, -1:] >= cdf).sum(axis=-1)
    return np.minimum(a, logp.shape[-1] - 1)


def _rollout_chunk(env, policy, roots, first_actions, options, K, gamma, uniforms):
    states, rewards, terminal = env.step_batch(roots, first_actions)
    G = rewards.copy()
    discount = np.ones(len(roots))
    alive = np.flatnonzero(~terminal)
    states = states.take(alive) if len(alive) < len(roots) else states
    for k in range(1, K):
        if len(alive) == 0:
            break
        discount[alive] *= gamma
        logp = policy.option_log_probs(env.encode(states))
        logp = logp[np.arange(len(alive)), options[alive]]
        actions = sample_from_log_probs(logp, uniforms[alive, k - 1])
        states, rewards, terminal = env.step_batch(states, actions)
        G[alive] += discount[alive] * rewards
        if terminal.any():
            keep = np.flatnonzero(~terminal)
            alive = alive[keep]
            states = states.take(keep)
    if len(alive):
        discount[alive] *= gamma
        G[alive] += discount[alive] * np.asarray(policy.forward_value(env.encode(states)), dtype=np.float64)
    return G


def rollout_returns(env: Environment, policy, roots: StateBatch, first_actions, options, K: int,
                    gamma: float, uniforms: np.ndarray, threads: int = 1) -> np.ndarray:
    """Bootstrapped K-step returns, one per row of ``roots``.

    Row ``j`` takes ``first_actions[j]`` then follows option ``options[j]``
    for up to ``K - 1`` further steps, using ``uniforms[j]`` as its action
    noise.  Terminal states bootstrap with 0; no timeout applies.
    """
    first_actions = np.asarray(first_actions)
    options = np.asarray(options)
    if np.any(roots.terminal):
        raise ValueError("rollouts must start from non-terminal states")
    n = len(roots)
    if threads <= 1 or n < 2 * threads:
        return _rollout_chunk(env, policy, roots, first_actions, options, K, gamma, uniforms)
    bounds = np.linspace(0, n, threads + 1).astype(int)
    chunks = [np.arange(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(threads) as pool:
        parts = pool.map(
            lambda c: _rollout_chunk(env, policy, roots.take(c), first_actions[c], options[c], K, gamma, uniforms[c]),
            chunks,
        )
        return np.concatenate(list(parts))


def rollout(env: Environment, policy, start_state: StateBatch, first_action: int, option: int, K: int,
            rng: np.random.Generator, gamma: float | None = None) -> float:
    """One sampled bootstrapped return from a single state."""
    gamma = env.spec.discount if gamma is None else gamma
    u = rng.random((1, max(K - 1, 1)))
    return float(rollout_returns(env, policy, start_state, [first_action], [option], K, gamma, u)[0])


def joint_search_distribution(q_hat: np.ndarray, sigma_bar, beta: float) -> np.ndarray:
    """Softmax of ``q_hat / (sigma_bar * beta)`` over every (option, action) pair."""
    q = np.asarray(q_hat, dtype=np.float64)
    scale = np.asarray(sigma_bar, dtype=np.float64) * beta
    if q.ndim == 3:
        scale = scale.reshape(-1, 1, 1)
    z = q / scale
    z = z - z.max(axis=(-2, -1), keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=(-2, -1), keepdims=True)


def greedy_action(q_hat: np.ndarray) -> np.ndarray:
    """argmax over actions of the best option value; ties go to the lowest index."""
    return np.argmax(q_hat.max(axis=-2), axis=-1)


def search_batch(env: Environment, policy, states: StateBatch, sigma_bar, cfg: SearchConfig,
                 rng: np.random.Generator, threads: int = 1) -> BatchSearchResult:
    """Run one search per row of ``states``.

    ``sigma_bar`` holds the running return scale for each row; updating it
    is the caller's job (see :func:`mcs_with_options`).
    """
    S = len(states)
    A, N = env.spec.num_actions, policy.num_options
    M = cfg.sims_per_pair(A, N)
    per_root = A * N * M
    # rollout layout per root: (a, n, j) row-major
    first = np.tile(np.repeat(np.arange(A), N * M), S)
    opts = np.tile(np.repeat(np.tile(np.arange(N), A), M), S)
    K = cfg.rollout_length
    uniforms = rng.random((S * per_root, max(K - 1, 1)))
    G = rollout_returns(env, policy, states.repeat(per_root), first, opts, K, cfg.discount, uniforms, threads)
    returns = G.reshape(S, per_root)
    q_hat = returns.reshape(S, A, N, M).mean(axis=-1).transpose(0, 2, 1)
    p_tilde = joint_search_distribution(q_hat, np.broadcast_to(sigma_bar, (S,)), cfg.beta)
    pi_tilde = p_tilde.sum(axis=1)
    a_tilde = greedy_action(q_hat)
    v_tilde = q_hat.max(axis=(1, 2))
    return BatchSearchResult(q_hat, p_tilde, pi_tilde, a_tilde, v_tilde, returns)


def mcs_with_options(env: Environment, policy, rv: RunningVariance, state: StateBatch, cfg: SearchConfig,
                     rng: np.random.Generator, threads: int = 1) -> SearchResult:
    """Search from a single state, then fold its returns into ``rv``.

    The current search uses the scale from before this update.
    """
    res = search_batch(env, policy, state, rv.sigma_bar[:1], cfg, rng, threads)
    rv.update(res.returns[:1], which=slice(0, 1))
    return res[0]
