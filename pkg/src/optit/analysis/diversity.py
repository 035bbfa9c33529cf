"""How strongly the chosen option predicts the first controller button reached.

From each sampled state every option is rolled out repeatedly; rollouts
that reach no button within the horizon are discarded.  Entropies use
natural logs.  The button distribution ``f_i`` is the equal-weight average
of the per-option distributions ``f_{i|n}``, which keeps the mutual
information between 0 and ``min(H(i), log N)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..envs import HierarchicalMaze
from ..search import sample_from_log_probs

NUM_BUTTONS = 4


@dataclass
class DiversityReport:
    counts: np.ndarray          # (S, N, I) first-button counts
    f_i_given_n: np.ndarray     # (N, I), pooled over states
    f_i: np.ndarray             # (I,)
    entropy: float
    cond_entropy: np.ndarray    # (N,)
    mi: float
    state_entropy: float        # mean over states of the per-state H(i)
    state_mi: float             # mean over states of the per-state MI
    coverage: float             # share of (state, option) cells with >= 1 button hit
    ci: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(
            entropy=self.entropy, mi=self.mi, state_entropy=self.state_entropy, state_mi=self.state_mi,
            coverage=self.coverage, f_i=self.f_i.tolist(), f_i_given_n=self.f_i_given_n.tolist(),
            cond_entropy=self.cond_entropy.tolist(), ci={k: list(v) for k, v in self.ci.items()},
        )


def _entropy(f: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(f > 0, f * np.log(f), 0.0).sum(axis=-1)


def mutual_information(counts: np.ndarray):
    """Plug-in ``H(i) - mean_n H(i|n)`` from an ``(N, I)`` count table.

    Options with no hits are left out.  Returns ``(H, H_cond, MI, covered)``
    or NaNs when nothing was hit.
    """
    counts = np.asarray(counts, dtype=np.float64)
    covered = counts.sum(axis=1) > 0
    if not covered.any():
        return np.nan, np.full(len(counts), np.nan), np.nan, covered
    cond = counts[covered] / counts[covered].sum(axis=1, keepdims=True)
    f = cond.mean(axis=0)
    h = float(_entropy(f))
    hc = np.full(len(counts), np.nan)
    hc[covered] = _entropy(cond)
    mi = h - float(np.nanmean(hc))
    return h, hc, max(mi, 0.0), covered


def first_buttons(policy, env: HierarchicalMaze, states, n_rollouts: int, horizon: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Counts ``(S, N, I)`` of the first button each option reaches."""
    S, N = len(states), policy.num_options
    rows = states.repeat(N * n_rollouts)
    opts = np.tile(np.repeat(np.arange(N), n_rollouts), S)
    owner = np.repeat(np.arange(S), N * n_rollouts)
    hit = np.full(len(rows), -1, dtype=np.int64)
    alive = np.arange(len(rows))
    cur = rows
    for _ in range(horizon):
        if len(alive) == 0:
            break
        logp = policy.option_log_probs(env.encode(cur))[np.arange(len(alive)), opts[alive]]
        actions = sample_from_log_probs(logp, rng.random(len(alive)))
        cur, _, terminal = env.step_batch(cur, actions)
        pressed = env.button_map[cur.ctrl[:, 0], cur.ctrl[:, 1]]
        hit[alive] = np.where(pressed >= 0, pressed, -1)
        keep = (pressed < 0) & ~terminal
        alive, cur = alive[keep], cur.take(np.flatnonzero(keep))
    counts = np.zeros((S, N, NUM_BUTTONS), dtype=np.int64)
    ok = hit >= 0
    np.add.at(counts, (owner[ok], opts[ok], hit[ok]), 1)
    return counts


def _percentile_ci(v: np.ndarray) -> tuple[float, float]:
    v = v[~np.isnan(v)]
    if len(v) == 0:
        return float("nan"), float("nan")
    return float(np.percentile(v, 2.5)), float(np.percentile(v, 97.5))


def report_from_counts(counts: np.ndarray, n_boot: int = 200, rng=None) -> DiversityReport:
    rng = np.random.default_rng(0) if rng is None else rng
    S = counts.shape[0]
    h, hc, mi, _ = mutual_information(counts.sum(axis=0))
    per_state = [mutual_information(c) for c in counts]
    state_h = np.array([p[0] for p in per_state])
    state_mi = np.array([p[2] for p in per_state])
    valid = ~np.isnan(state_h)
    pooled = counts.sum(axis=0).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        f_cond = pooled / pooled.sum(axis=1, keepdims=True)
    covered = f_cond[~np.isnan(f_cond).any(axis=1)]
    f = covered.mean(axis=0) if len(covered) else np.full(counts.shape[2], np.nan)
    ci = {}
    if n_boot > 0 and S > 1:
        boot = {"mi": [], "entropy": [], "state_mi": [], "state_entropy": []}
        for _ in range(n_boot):
            idx = rng.integers(S, size=S)
            bh, _, bmi, _ = mutual_information(counts[idx].sum(axis=0))
            boot["mi"].append(bmi)
            boot["entropy"].append(bh)
            v = valid[idx]
            boot["state_mi"].append(state_mi[idx][v].mean() if v.any() else np.nan)
            boot["state_entropy"].append(state_h[idx][v].mean() if v.any() else np.nan)
        ci = {k: _percentile_ci(np.asarray(v, dtype=np.float64)) for k, v in boot.items()}
    return DiversityReport(
        counts=counts, f_i_given_n=f_cond, f_i=f, entropy=h, cond_entropy=hc, mi=mi,
        state_entropy=float(state_h[valid].mean()) if valid.any() else np.nan,
        state_mi=float(state_mi[valid].mean()) if valid.any() else np.nan,
        coverage=float((counts.sum(axis=2) > 0).mean()), ci=ci,
    )


def option_diversity(policy, env: HierarchicalMaze, n_states: int = 100, n_rollouts: int = 100,
                     horizon: int = 20, rng=None, n_boot: int = 200, chunk: int = 16) -> DiversityReport:
    """Sample ``n_states`` fresh states (controller centred) and measure MI."""
    if not isinstance(env, HierarchicalMaze):
        raise TypeError("option diversity needs a hierarchical environment")
    rng = np.random.default_rng(0) if rng is None else rng
    states = env.reset_batch(n_states, rng)
    counts = np.concatenate([
        first_buttons(policy, env, states.take(np.arange(lo, min(lo + chunk, n_states))), n_rollouts, horizon, rng)
        for lo in range(0, n_states, chunk)
    ])
    return report_from_counts(counts, n_boot, rng)
