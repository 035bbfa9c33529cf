"""Distillation losses with analytic gradients.

Every loss takes an :class:`OptionNet` and a :class:`SegmentBatch` and
returns ``(loss, grads)`` with ``grads`` keyed like ``net.params``.
Sampled losses draw one action per step from the stored search policy,
fresh on every call, unless ``actions`` is given explicitly (gradient
checks pass fixed actions).
"""
from __future__ import annotations

import numpy as np

from ..neural import OptionNet, log_softmax, log_softmax_backward
from .buffer import SegmentBatch

POLICY_LOSSES = ("optit", "exit_sampled_seq", "exit_sampled_indep", "exit_exact_indep", "mean_ce")


def sample_search_actions(pi_tilde: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One action per (segment, step) drawn from ``pi_tilde`` ``(B, K, A)``."""
    cdf = np.cumsum(pi_tilde, axis=-1)
    u = rng.random(pi_tilde.shape[:-1])[..., None] * cdf[..., -1:]
    return np.minimum((u >= cdf).sum(axis=-1), pi_tilde.shape[-1] - 1)


def _forward_valid(net: OptionNet, batch: SegmentBatch, heads):
    rows = np.flatnonzero(batch.mask.reshape(-1))
    obs = batch.obs.reshape(-1, batch.obs.shape[-1])[rows]
    logits, cache = net.policy_forward(obs, heads=heads)
    return rows, logits, cache


def _sequence_option_loglik(net, batch, actions, with_rho=True):
    """Per-segment, per-option summed log-likelihood of the sampled actions.

    Returns the pieces needed for backprop: ``(S, ctx)`` where ``S`` is
    ``(B, N)`` (including ``log rho(n|s_0)`` when ``with_rho``).
    """
    B, K = batch.mask.shape
    heads = ("option", "rho") if with_rho else ("option",)
    rows, logits, cache = _forward_valid(net, batch, heads)
    logp = log_softmax(logits["option"].astype(np.float64))            # (n, N, A)
    a = actions.reshape(-1)[rows]
    lp = logp[np.arange(len(rows)), :, a]                                # (n, N)
    seg = rows // K
    N = net.num_options
    S = np.zeros((B, N))
    np.add.at(S, seg, lp)
    first = np.flatnonzero(rows % K == 0)                                # row of s_0 for each segment
    log_rho = None
    if with_rho:
        log_rho = log_softmax(logits["rho"][first].astype(np.float64))   # (B, N), segments in order
        S = S + log_rho
    return S, (rows, logp, a, seg, first, log_rho, cache)


def _backprop_sequence(net, ctx, dS, with_rho=True):
    rows, logp, a, seg, first, log_rho, cache = ctx
    d_logp = np.zeros_like(logp)
    d_logp[np.arange(len(rows)), :, a] = dS[seg]
    dlogits = {"option": log_softmax_backward(logp, d_logp)}
    if with_rho:
        d_rho = np.zeros((len(rows), net.num_options))
        d_rho[first] = log_softmax_backward(log_rho, dS)
        dlogits["rho"] = d_rho
    return net.policy_backward(cache, dlogits)


def _cast(grads, dtype):
    return {k: v.astype(dtype, copy=False) for k, v in grads.items()}


def optit_loss(net: OptionNet, batch: SegmentBatch, rng=None, actions=None):
    """Negative log of the rho-weighted mixture of option sequence likelihoods.

    Each segment's loss is divided by its realised length, then the batch
    is averaged.
    """
    if actions is None:
        actions = sample_search_actions(batch.pi_tilde, rng)
    S, ctx = _sequence_option_loglik(net, batch, actions)
    m = S.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(S - m).sum(axis=1))
    L = batch.lengths.astype(np.float64)
    B = len(L)
    loss = float(np.mean(-lse / L))
    resp = np.exp(S - lse[:, None])                                      # posterior over options
    dS = -resp / (L[:, None] * B)
    return loss, _cast(_backprop_sequence(net, ctx, dS), net.dtype)


def mean_ce_loss(net: OptionNet, batch: SegmentBatch, rng=None, actions=None):
    """Average over options of each option's sequence cross-entropy.

    rho does not enter this loss and gets no gradient.
    """
    if actions is None:
        actions = sample_search_actions(batch.pi_tilde, rng)
    S, ctx = _sequence_option_loglik(net, batch, actions, with_rho=False)
    L = batch.lengths.astype(np.float64)
    B, N = S.shape
    loss = float(np.mean(-S.mean(axis=1) / L))
    dS = np.broadcast_to(-1.0 / (N * L[:, None] * B), S.shape)
    return loss, _cast(_backprop_sequence(net, ctx, dS, with_rho=False), net.dtype)


def exit_exact_loss(net: OptionNet, batch: SegmentBatch):
    """Full cross-entropy ``-sum_a pi_tilde(a|s) log pi(a|s)``, mean over states."""
    if net.num_options != 1:
        raise ValueError("ExIt losses need a single-option network")
    rows, logits, cache = _forward_valid(net, batch, ("option",))
    logp = log_softmax(logits["option"].astype(np.float64))[:, 0]       # (n, A)
    target = batch.pi_tilde.reshape(-1, batch.pi_tilde.shape[-1])[rows]
    n = len(rows)
    loss = float(-(target * logp).sum() / n)
    d = log_softmax_backward(logp, -target / n)[:, None, :]
    return loss, _cast(net.policy_backward(cache, {"option": d}), net.dtype)


def exit_loss_variants(net: OptionNet, batch: SegmentBatch, variant: str, rng=None, actions=None):
    """Single-policy distillation losses.

    ``exit_sampled_seq`` is the mixture loss with one option on segments;
    ``exit_sampled_indep`` and ``exit_exact_indep`` treat every step of the
    batch as an independent state (callers pass length-1 segments).
    """
    if net.num_options != 1:
        raise ValueError("ExIt losses need a single-option network")
    if variant == "exit_sampled_seq":
        return optit_loss(net, batch, rng, actions)
    if variant == "exit_sampled_indep":
        return optit_loss(net, _as_independent(batch), rng,
                          None if actions is None else actions.reshape(-1, 1)[batch.mask.reshape(-1)])
    if variant == "exit_exact_indep":
        return exit_exact_loss(net, batch)
    raise ValueError(f"unknown ExIt variant {variant!r}")


def _as_independent(batch: SegmentBatch) -> SegmentBatch:
    m = batch.mask.reshape(-1)
    return SegmentBatch(
        batch.obs.reshape(-1, 1, batch.obs.shape[-1])[m],
        batch.pi_tilde.reshape(-1, 1, batch.pi_tilde.shape[-1])[m],
        batch.v_tilde.reshape(-1, 1)[m],
        np.ones((int(m.sum()), 1), dtype=bool),
    )


def value_loss(net: OptionNet, batch: SegmentBatch):
    """Mean squared error between v(s) and the stored search value."""
    rows = np.flatnonzero(batch.mask.reshape(-1))
    obs = batch.obs.reshape(-1, batch.obs.shape[-1])[rows]
    target = batch.v_tilde.reshape(-1)[rows]
    v, cache = net.value_forward(obs)
    err = v.astype(np.float64) - target
    loss = float(np.mean(err ** 2))
    grads = net.value_backward(cache, 2.0 * err / len(rows))
    return loss, _cast(grads, net.dtype)


def policy_loss(net: OptionNet, batch: SegmentBatch, variant: str, rng=None, actions=None):
    """Dispatch on the configured loss variant."""
    if variant == "optit":
        return optit_loss(net, batch, rng, actions)
    if variant == "mean_ce":
        return mean_ce_loss(net, batch, rng, actions)
    return exit_loss_variants(net, batch, variant, rng, actions)
