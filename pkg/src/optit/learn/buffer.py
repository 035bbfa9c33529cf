"""FIFO replay of search-annotated states, sampled as episode segments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NONE, TERMINAL_NEXT, TIMEOUT_NEXT = 0, 1, 2
BOUNDARY_NAMES = ("none", "terminal_next", "timeout_next")


@dataclass
class SegmentBatch:
    """``B`` segments padded to length ``K``; ``mask`` marks real steps."""

    obs: np.ndarray       # (B, K, D) uint8
    pi_tilde: np.ndarray  # (B, K, A)
    v_tilde: np.ndarray   # (B, K)
    mask: np.ndarray      # (B, K) bool, a prefix of each row

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @classmethod
    def from_lists(cls, obs_seqs, pi_seqs, v_seqs=None) -> SegmentBatch:
        """Build a padded batch from ragged per-segment sequences."""
        B = len(obs_seqs)
        K = max(len(o) for o in obs_seqs)
        D = len(obs_seqs[0][0])
        A = len(pi_seqs[0][0])
        obs = np.zeros((B, K, D), dtype=np.uint8)
        pi = np.full((B, K, A), 1.0 / A)
        v = np.zeros((B, K))
        mask = np.zeros((B, K), dtype=bool)
        for b in range(B):
            n = len(obs_seqs[b])
            obs[b, :n] = obs_seqs[b]
            pi[b, :n] = pi_seqs[b]
            if v_seqs is not None:
                v[b, :n] = v_seqs[b]
            mask[b, :n] = True
        return cls(obs, pi, v, mask)


class ReplayBuffer:
    """Ring buffer shared by all workers.

    Entries from different workers interleave, so each slot stores a link to
    the next step of the same episode (-1 at an episode's last step).  A link
    always points to a newer slot, and FIFO eviction removes older slots
    first, so live links never dangle.
    """

    def __init__(self, capacity: int, obs_dim: int, num_actions: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.uint8)
        self.pi_tilde = np.zeros((capacity, num_actions), dtype=np.float32)
        self.v_tilde = np.zeros(capacity)
        self.episode = np.full(capacity, -1, dtype=np.int64)
        self.step = np.zeros(capacity, dtype=np.int64)
        self.boundary = np.zeros(capacity, dtype=np.int8)
        self.next = np.full(capacity, -1, dtype=np.int64)
        self.size = 0
        self.head = 0
        self._last = {}  # worker -> slot of its latest entry

    def __len__(self):
        return self.size

    def add(self, worker, obs, pi_tilde, v_tilde, episode, step, boundary) -> None:
        """Append one entry per worker (all arguments row-aligned)."""
        for i, w in enumerate(np.atleast_1d(worker)):
            slot = self.head
            self.obs[slot] = obs[i]
            self.pi_tilde[slot] = pi_tilde[i]
            self.v_tilde[slot] = v_tilde[i]
            self.episode[slot] = episode[i]
            self.step[slot] = step[i]
            self.boundary[slot] = boundary[i]
            self.next[slot] = -1
            prev = self._last.get(int(w))
            if prev is not None and self.episode[prev] == episode[i] and self.step[prev] == step[i] - 1 \
                    and self.boundary[prev] == NONE:
                self.next[prev] = slot
            self._last[int(w)] = slot
            self.head = (self.head + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def segment_indices(self, starts: np.ndarray, K: int) -> np.ndarray:
        """Follow episode links from ``starts``; -1 pads past an episode end."""
        idx = np.full((len(starts), K), -1, dtype=np.int64)
        idx[:, 0] = starts
        for k in range(1, K):
            prev = idx[:, k - 1]
            idx[:, k] = np.where(prev >= 0, self.next[np.maximum(prev, 0)], -1)
        return idx

    def gather(self, idx: np.ndarray) -> SegmentBatch:
        mask = idx >= 0
        safe = np.maximum(idx, 0)
        return SegmentBatch(self.obs[safe], self.pi_tilde[safe].astype(np.float64), self.v_tilde[safe], mask)

    def sample_segments(self, batch_size: int, K: int, rng: np.random.Generator) -> SegmentBatch:
        """Segments of up to ``K`` steps starting at uniformly random slots."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        starts = rng.integers(0, self.size, size=batch_size)
        return self.gather(self.segment_indices(starts, K))
