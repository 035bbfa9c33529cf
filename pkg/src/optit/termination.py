"""Likelihood of trajectories under options with learned termination.

A trajectory ``s_0, a_0, ..., s_K`` is modelled as: pick an option from
``rho(.|s_0)``, act with it, and after each transition into ``s_{k+1}``
terminate the running option ``n'`` with probability ``psi_n'(s_{k+1})``,
re-drawing from ``rho(.|s_{k+1})`` when it does.  Transition
probabilities factor out, leaving the forward recursion

    phi_0(n)     = rho(n|s_0)
    phi_{k+1}(n) = [sum_n' phi_k(n') pi_n'(a_k|s_k) psi_n'(s_{k+1})] rho(n|s_{k+1})
                   + phi_k(n) pi_n(a_k|s_k) (1 - psi_n(s_{k+1}))

evaluated in log space; the log-likelihood is ``log sum_n phi_K(n)``.
The reverse pass below differentiates the recursion by hand.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .neural import OptionNet, log_softmax, log_softmax_backward

PSI_CLAMP = 1e-6
BRUTE_FORCE_MAX_K = 8
BRUTE_FORCE_MAX_N = 4


@dataclass
class RecursionStats:
    """Work counters: head evaluations and mixing terms touched."""

    head_evals: int = 0
    mix_terms: int = 0


def _lse(x, axis=-1, keepdims=False):
    m = x.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def forward_tables(log_rho, log_pi_a, log_psi, log_1mpsi, stats: RecursionStats | None = None):
    """Run the recursion for a batch.

    Shapes: ``log_rho``, ``log_psi``, ``log_1mpsi`` are ``(B, K+1, N)``
    (indexed by state), ``log_pi_a`` is ``(B, K, N)`` (log-prob of the taken
    action).  Returns ``log_phi`` of shape ``(B, K+1, N)``.
    """
    B, K, N = log_pi_a.shape
    log_phi = np.empty((B, K + 1, N))
    log_phi[:, 0] = log_rho[:, 0]
    for k in range(K):
        x = log_phi[:, k]
        switch = _lse(x + log_pi_a[:, k] + log_psi[:, k + 1], keepdims=True) + log_rho[:, k + 1]
        stay = x + log_pi_a[:, k] + log_1mpsi[:, k + 1]
        log_phi[:, k + 1] = np.logaddexp(switch, stay)
        if stats is not None:
            stats.mix_terms += B * 3 * N
    return log_phi


def backward_tables(log_rho, log_pi_a, log_psi, log_1mpsi, log_phi, g_final):
    """Reverse pass of :func:`forward_tables`.

    ``g_final`` is the gradient wrt ``log_phi[:, K]``.  Returns gradients
    wrt ``(log_rho, log_pi_a, log_psi, log_1mpsi)``.
    """
    B, K, N = log_pi_a.shape
    d_rho = np.zeros_like(log_rho)
    d_pi = np.zeros_like(log_pi_a)
    d_psi = np.zeros_like(log_psi)
    d_1m = np.zeros_like(log_1mpsi)
    g = g_final
    for k in range(K - 1, -1, -1):
        x = log_phi[:, k]
        c = x + log_pi_a[:, k] + log_psi[:, k + 1]
        T = _lse(c, keepdims=True)
        u = T + log_rho[:, k + 1]
        w = x + log_pi_a[:, k] + log_1mpsi[:, k + 1]
        nxt = log_phi[:, k + 1]
        gu = g * np.exp(u - nxt)
        gw = g * np.exp(w - nxt)
        d_rho[:, k + 1] += gu
        dc = gu.sum(axis=1, keepdims=True) * np.exp(c - T)
        d_pi[:, k] += dc + gw
        d_psi[:, k + 1] += dc
        d_1m[:, k + 1] += gw
        g = dc + gw
    d_rho[:, 0] += g
    return d_rho, d_pi, d_psi, d_1m


def log_likelihood_from_tables(log_rho, log_pi_a, log_psi, log_1mpsi, stats=None) -> np.ndarray:
    log_phi = forward_tables(log_rho, log_pi_a, log_psi, log_1mpsi, stats)
    return _lse(log_phi[:, -1])


def _clamped_log_psi(z):
    psi = 1.0 / (1.0 + np.exp(-z))
    inside = (psi > PSI_CLAMP) & (psi < 1.0 - PSI_CLAMP)
    psi = np.clip(psi, PSI_CLAMP, 1.0 - PSI_CLAMP)
    return np.log(psi), np.log1p(-psi), psi, inside


def _net_tables(net: OptionNet, obs, actions):
    """Head outputs for ``obs`` ``(B, K+1, D)`` and ``actions`` ``(B, K)``."""
    if not net.termination:
        raise ValueError("network has no termination head")
    B, K1, D = obs.shape
    K = K1 - 1
    logits, cache = net.policy_forward(obs.reshape(B * K1, D), heads=("option", "rho", "term"))
    logp = log_softmax(logits["option"].astype(np.float64)).reshape(B, K1, net.num_options, net.num_actions)
    log_rho = log_softmax(logits["rho"].astype(np.float64)).reshape(B, K1, -1)
    lpsi, l1m, psi, inside = _clamped_log_psi(logits["term"].astype(np.float64).reshape(B, K1, -1))
    bi, ki = np.meshgrid(np.arange(B), np.arange(K), indexing="ij")
    log_pi_a = logp[bi, ki, :, actions]                                   # (B, K, N)
    return log_rho, log_pi_a, lpsi, l1m, (cache, logp, psi, inside, bi, ki)


def _check_trajectories(obs, actions):
    obs = np.asarray(obs)
    actions = np.asarray(actions)
    if obs.ndim == 2:
        obs, actions = obs[None], actions[None]
    if actions.shape[1] < 1:
        raise ValueError("trajectory needs at least one action")
    if obs.shape[1] != actions.shape[1] + 1:
        raise ValueError("trajectory needs K+1 observations for K actions")
    return obs, actions.astype(np.int64)


def trajectory_log_likelihood(net: OptionNet, obs, actions, stats: RecursionStats | None = None):
    """theta-dependent log-probability of one trajectory (or a batch).

    ``obs`` is ``(K+1, D)`` and ``actions`` ``(K,)``; a leading batch axis
    returns one value per trajectory.
    """
    single = np.asarray(obs).ndim == 2
    obs, actions = _check_trajectories(obs, actions)
    log_rho, log_pi_a, lpsi, l1m, _ = _net_tables(net, obs, actions)
    if stats is not None:
        stats.head_evals += obs.shape[0] * obs.shape[1] * 3
    ll = log_likelihood_from_tables(log_rho, log_pi_a, lpsi, l1m, stats)
    return float(ll[0]) if single else ll


def termination_loss(net: OptionNet, obs, actions):
    """Mean negative log-likelihood of a batch of equal-length trajectories,
    with gradients for the trunk and every head."""
    obs, actions = _check_trajectories(obs, actions)
    B = obs.shape[0]
    log_rho, log_pi_a, lpsi, l1m, (cache, logp, psi, inside, bi, ki) = _net_tables(net, obs, actions)
    log_phi = forward_tables(log_rho, log_pi_a, lpsi, l1m)
    final = log_phi[:, -1]
    ll = _lse(final)
    loss = float(-ll.mean())
    g_final = -np.exp(final - ll[:, None]) / B
    d_rho, d_pi, d_psi, d_1m = backward_tables(log_rho, log_pi_a, lpsi, l1m, log_phi, g_final)
    d_logp = np.zeros_like(logp)
    d_logp[bi, ki, :, actions] = d_pi
    K1 = obs.shape[1]
    dlogits = {
        "option": log_softmax_backward(logp, d_logp).reshape(B * K1, net.num_options, net.num_actions),
        "rho": log_softmax_backward(log_rho, d_rho).reshape(B * K1, -1),
        "term": (np.where(inside, d_psi * (1.0 - psi) - d_1m * psi, 0.0)).reshape(B * K1, -1),
    }
    grads = net.policy_backward(cache, dlogits)
    return loss, {k: v.astype(net.dtype, copy=False) for k, v in grads.items()}


def termination_probabilities(net: OptionNet, obs) -> np.ndarray:
    """Clamped ``psi_n(s)`` for a batch of observations, shape ``(B, N)``."""
    logits, _ = net.policy_forward(np.atleast_2d(obs), heads=("term",))
    return _clamped_log_psi(logits["term"].astype(np.float64))[2]


# -- enumeration oracle ------------------------------------------------------


def brute_force_from_tables(rho, pi_a, psi) -> float:
    """Sum the probability of every segmentation explicitly.

    ``rho``/``psi`` are ``(K+1, N)`` probabilities per state and ``pi_a`` is
    ``(K, N)``.  Every termination pattern over steps ``1..K-1`` is paired
    with every option assignment to the resulting segments.  Termination
    after the last action does not affect the result and is left out.
    """
    K, N = pi_a.shape
    if K > BRUTE_FORCE_MAX_K or N > BRUTE_FORCE_MAX_N:
        raise ValueError(f"enumeration limited to K <= {BRUTE_FORCE_MAX_K}, N <= {BRUTE_FORCE_MAX_N}")
    total = 0.0
    for pattern in itertools.product((0, 1), repeat=K - 1):
        starts = [0] + [k for k, b in zip(range(1, K), pattern) if b]
        bounds = list(zip(starts, starts[1:] + [K]))
        for assign in itertools.product(range(N), repeat=len(bounds)):
            p = 1.0
            for (lo, hi), n in zip(bounds, assign):
                p *= rho[lo, n]
                for k in range(lo, hi):
                    p *= pi_a[k, n]
                    if k + 1 < K:  # continuing at k+1 unless a segment starts there
                        p *= psi[k + 1, n] if k + 1 == hi else 1.0 - psi[k + 1, n]
            total += p
    return float(np.log(total))


def brute_force_log_likelihood(net: OptionNet, obs, actions) -> float:
    obs, actions = _check_trajectories(obs, actions)
    if obs.shape[0] != 1:
        raise ValueError("brute force takes a single trajectory")
    log_rho, log_pi_a, lpsi, _, _ = _net_tables(net, obs, actions)
    return brute_force_from_tables(np.exp(log_rho[0]), np.exp(log_pi_a[0]), np.exp(lpsi[0]))


# -- synthetic data ------------------------------------------------------------


def simulate_switching_trajectories(num_states: int, switch_states, K: int, count: int,
                                    rng: np.random.Generator, num_options: int = 2, num_actions: int = 4,
                                    psi_switch: float = 0.9, psi_stay: float = 0.05, purity: float = 0.95):
    """Trajectories over i.i.d. random states from a known option model.

    Option ``n`` plays action ``n`` with probability ``purity``.  The running
    option terminates with ``psi_switch`` on ``switch_states`` and
    ``psi_stay`` elsewhere; rho is uniform.  Returns one-hot observations
    ``(count, K+1, num_states)``, actions ``(count, K)`` and state ids.
    """
    switch = np.zeros(num_states, dtype=bool)
    switch[list(switch_states)] = True
    states = rng.integers(num_states, size=(count, K + 1))
    actions = np.zeros((count, K), dtype=np.int64)
    opt = rng.integers(num_options, size=count)
    for k in range(K):
        if k > 0:
            p_term = np.where(switch[states[:, k]], psi_switch, psi_stay)
            redraw = rng.random(count) < p_term
            opt = np.where(redraw, rng.integers(num_options, size=count), opt)
        greedy = rng.random(count) < purity
        actions[:, k] = np.where(greedy, opt, rng.integers(num_actions, size=count))
    obs = np.eye(num_states, dtype=np.uint8)[states]
    return obs, actions, states


# -- trajectory dump format ------------------------------------------------------

TRAJ_MAGIC = b"OPTTRAJ1"


def write_trajectories(path, trajectories) -> None:
    """Little-endian records: ``u32 steps, u32 obs_dim`` then per step the
    observation bytes and an ``i32`` action (-1 on the final state)."""
    with open(path, "wb") as f:
        f.write(TRAJ_MAGIC)
        f.write(struct.pack("<I", len(trajectories)))
        for obs, actions in trajectories:
            obs = np.asarray(obs, dtype=np.uint8)
            f.write(struct.pack("<II", obs.shape[0], obs.shape[1]))
            acts = list(actions) + [-1]
            for o, a in zip(obs, acts):
                f.write(o.tobytes())
                f.write(struct.pack("<i", int(a)))


def read_trajectories(path) -> list[tuple[np.ndarray, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != TRAJ_MAGIC:
        raise ValueError(f"{path} is not a trajectory dump")
    (count,), off = struct.unpack_from("<I", data, 8), 12
    out = []
    for _ in range(count):
        steps, dim = struct.unpack_from("<II", data, off)
        off += 8
        obs = np.empty((steps, dim), dtype=np.uint8)
        acts = np.empty(steps, dtype=np.int64)
        for i in range(steps):
            obs[i] = np.frombuffer(data, dtype=np.uint8, count=dim, offset=off)
            acts[i] = struct.unpack_from("<i", data, off + dim)[0]
            off += dim + 4
        out.append((obs, acts[:-1]))
    if off != len(data):
        raise ValueError("trailing bytes in trajectory dump")
    return out
