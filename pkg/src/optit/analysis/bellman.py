"""Exact action values on a single maze layout.

States are agent cells (walls included when they can be entered); the goal
cell is absorbing with value 0.  Transitions are deterministic, so the
uniform-random policy's values come from one linear solve.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..envs import Maze, _maze_move, wall_penalty

MAX_WIDTH = 9
NUM_MOVES = 4


@dataclass
class TabularQ:
    q: np.ndarray          # (S, A); rows follow ``cells``
    cells: np.ndarray      # (S, 2) agent positions
    next_state: np.ndarray  # (S, A) index into ``cells``, -1 for the goal
    reward: np.ndarray     # (S, A)
    gamma: float

    def index(self, cell) -> int:
        hit = np.flatnonzero(np.all(self.cells == np.asarray(cell), axis=1))
        if len(hit) == 0:
            raise KeyError(f"cell {tuple(cell)} is not a state")
        return int(hit[0])

    def greedy(self) -> np.ndarray:
        return np.argmax(self.q, axis=1)

    def bellman_residual(self, policy: np.ndarray) -> float:
        """Max |q - (r + gamma * E_policy q(s', .))| for a ``(S, A)`` policy."""
        v = (policy * self.q).sum(axis=1)
        v_next = np.where(self.next_state >= 0, v[np.maximum(self.next_state, 0)], 0.0)
        return float(np.abs(self.q - (self.reward + self.gamma * v_next)).max())

    def optimality_residual(self) -> float:
        v = self.q.max(axis=1)
        v_next = np.where(self.next_state >= 0, v[np.maximum(self.next_state, 0)], 0.0)
        return float(np.abs(self.q - (self.reward + self.gamma * v_next)).max())


def _tabulate(maze: Maze, penalty: float, electric: bool):
    w = maze.width
    cells = np.array([(r, c) for r in range(w) for c in range(w)
                      if (r, c) != tuple(maze.goal) and (electric or not maze.walls[r, c])], dtype=np.int64)
    lookup = {tuple(c): i for i, c in enumerate(cells)}
    A = NUM_MOVES
    S = len(cells)
    nxt = np.full((S, A), -1, dtype=np.int64)
    rew = np.zeros((S, A))
    walls = np.broadcast_to(maze.walls, (S, w, w))
    goal = np.tile(np.asarray(maze.goal, dtype=np.int64), (S, 1))
    for a in range(A):
        new, r, term = _maze_move(walls, cells, goal, np.full(S, a), electric, penalty)
        rew[:, a] = r
        nxt[:, a] = [-1 if t else lookup[tuple(p)] for p, t in zip(new, term)]
    return cells, nxt, rew


def _check(maze: Maze):
    if maze.width > MAX_WIDTH:
        raise ValueError(f"maze width {maze.width} exceeds the enumeration limit {MAX_WIDTH}")


def solve_random_policy_q(maze: Maze, penalty: float | None = None, gamma: float = 1.0,
                          electric: bool = True) -> TabularQ:
    """Action values of the uniform-random policy, by direct linear solve."""
    _check(maze)
    penalty = wall_penalty(maze.width) if penalty is None else penalty
    cells, nxt, rew = _tabulate(maze, penalty, electric)
    S, A = rew.shape
    P = np.zeros((S, S))
    for a in range(A):
        ok = nxt[:, a] >= 0
        np.add.at(P, (np.flatnonzero(ok), nxt[ok, a]), 1.0 / A)
    v = np.linalg.solve(np.eye(S) - gamma * P, rew.mean(axis=1))
    if not np.all(np.isfinite(v)):
        raise RuntimeError("random-policy evaluation did not converge")
    q = rew + gamma * np.where(nxt >= 0, v[np.maximum(nxt, 0)], 0.0)
    return TabularQ(q, cells, nxt, rew, gamma)


def value_iteration(maze: Maze, penalty: float | None = None, gamma: float = 1.0, electric: bool = True,
                    tol: float = 1e-10, max_iter: int = 100_000) -> TabularQ:
    """Optimal action values by synchronous value iteration."""
    _check(maze)
    penalty = wall_penalty(maze.width) if penalty is None else penalty
    cells, nxt, rew = _tabulate(maze, penalty, electric)
    q = np.zeros_like(rew)
    for _ in range(max_iter):
        v = q.max(axis=1)
        new = rew + gamma * np.where(nxt >= 0, v[np.maximum(nxt, 0)], 0.0)
        delta = np.abs(new - q).max()
        q = new
        if delta < tol:
            return TabularQ(q, cells, nxt, rew, gamma)
    raise RuntimeError(f"value iteration did not reach tolerance {tol} in {max_iter} sweeps")


def uniform_policy(tq: TabularQ) -> np.ndarray:
    return np.full(tq.q.shape, 1.0 / tq.q.shape[1])


def greedy_visits_wall(tq: TabularQ, maze: Maze, starts=None) -> bool:
    """Whether following ``argmax q`` from any open start cell steps on a wall."""
    greedy = tq.greedy()
    if starts is None:
        starts = [tuple(c) for c in tq.cells if not maze.walls[tuple(c)]]
    for start in starts:
        s, seen = tq.index(start), set()
        while s >= 0 and s not in seen:
            seen.add(s)
            if maze.walls[tuple(tq.cells[s])]:
                return True
            s = int(tq.next_state[s, greedy[s]])
    return False
