"""Gridworld simulators: Compass, ProcMaze, ElectricProcMaze and the
hierarchical controller variant.

Coordinates are ``(row, col)``.  Actions are ``0=up, 1=down, 2=left,
3=right`` everywhere; the hierarchical environment uses ``4`` internally
for its no-op base action.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import Environment, MdpSpec, StateBatch

UP, DOWN, LEFT, RIGHT, NOOP = range(5)
ACTION_NAMES = ("up", "down", "left", "right", "noop")
# row/col displacement per action, noop last
DIRS = np.array([[-1, 0], [1, 0], [0, -1], [0, 1], [0, 0]], dtype=np.int64)


def _one_hot_cells(pos: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(pos), width * width), dtype=np.uint8)
    out[np.arange(len(pos)), pos[:, 0] * width + pos[:, 1]] = 1
    return out


# --------------------------------------------------------------------------
# Compass


class Compass(Environment):
    """Square grid whose four edges are terminal.

    One edge, drawn uniformly per episode and hidden from the observation,
    pays +1; the other three pay -1.  Starts are uniform over interior cells.
    Edge ids coincide with the action that walks straight into them.
    """

    name = "compass"

    def __init__(self, width: int = 15, timeout: int = 20, discount: float = 0.99):
        if width < 3:
            raise ValueError("compass width must be >= 3")
        self.width = width
        self.timeout = timeout
        self.spec = MdpSpec(num_actions=4, observation_dim=2 * width, discount=discount)

    def reset_batch(self, n, rng):
        pos = rng.integers(1, self.width - 1, size=(n, 2))
        edge = rng.integers(0, 4, size=n)
        return StateBatch(pos=pos.astype(np.int64), edge=edge.astype(np.int64), terminal=np.zeros(n, bool))

    def edge_of(self, pos: np.ndarray) -> np.ndarray:
        """Edge id entered at ``pos`` or -1 for interior cells."""
        w = self.width
        out = np.full(len(pos), -1, dtype=np.int64)
        out[pos[:, 0] == 0] = UP
        out[pos[:, 0] == w - 1] = DOWN
        out[pos[:, 1] == 0] = LEFT
        out[pos[:, 1] == w - 1] = RIGHT
        return out

    def _step_batch(self, states, actions):
        pos = states.pos + DIRS[actions]
        hit = self.edge_of(pos)
        terminal = hit >= 0
        reward = np.where(terminal, np.where(hit == states.edge, 1.0, -1.0), 0.0)
        return states.replace(pos=pos, terminal=terminal), reward, terminal

    def encode(self, states):
        w = self.width
        out = np.zeros((len(states), 2 * w), dtype=np.uint8)
        rows = np.arange(len(states))
        out[rows, states.pos[:, 0]] = 1
        out[rows, w + states.pos[:, 1]] = 1
        return out

    def distance_to_edge(self, pos, edge) -> int:
        r, c = pos
        return {UP: r, DOWN: self.width - 1 - r, LEFT: c, RIGHT: self.width - 1 - c}[int(edge)]


# --------------------------------------------------------------------------
# maze generation


@dataclass
class Maze:
    walls: np.ndarray  # (W, W) bool
    agent: tuple[int, int]
    goal: tuple[int, int]

    @property
    def width(self) -> int:
        return self.walls.shape[0]


def carve_maze(width: int, rng: np.random.Generator) -> np.ndarray:
    """Randomized depth-first search over rooms at even (row, col).

    Rooms sit on the even-index sub-lattice and every remaining cell starts
    as wall; the DFS opens the cell between two rooms when it walks between
    them.  The open cells therefore form a spanning tree.
    """
    if width < 3 or width % 2 == 0:
        raise ValueError(f"maze width must be odd and >= 3, got {width}")
    rooms = (width + 1) // 2
    walls = np.ones((width, width), dtype=bool)
    visited = np.zeros((rooms, rooms), dtype=bool)
    start = (int(rng.integers(rooms)), int(rng.integers(rooms)))
    visited[start] = True
    walls[2 * start[0], 2 * start[1]] = False
    stack = [start]
    while stack:
        r, c = stack[-1]
        nbrs = [
            (r + dr, c + dc)
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
            if 0 <= r + dr < rooms and 0 <= c + dc < rooms and not visited[r + dr, c + dc]
        ]
        if not nbrs:
            stack.pop()
            continue
        nr, nc = nbrs[int(rng.integers(len(nbrs)))]
        visited[nr, nc] = True
        walls[2 * nr, 2 * nc] = False
        walls[r + nr, c + nc] = False  # connector cell between the two rooms
        stack.append((nr, nc))
    return walls


def generate_maze(width: int, rng: np.random.Generator) -> Maze:
    walls = carve_maze(width, rng)
    open_cells = np.argwhere(~walls)
    i = int(rng.integers(len(open_cells)))
    j = i
    while j == i:
        j = int(rng.integers(len(open_cells)))
    return Maze(walls, tuple(map(int, open_cells[i])), tuple(map(int, open_cells[j])))


def bfs_distances(walls: np.ndarray, source) -> np.ndarray:
    """Shortest open-cell path lengths from ``source``; -1 where unreachable."""
    w = walls.shape[0]
    dist = np.full(walls.shape, -1, dtype=np.int64)
    dist[source] = 0
    q = deque([tuple(source)])
    while q:
        r, c = q.popleft()
        for dr, dc in DIRS[:4]:
            nr, nc = r + dr, c + dc
            if 0 <= nr < w and 0 <= nc < w and not walls[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                q.append((nr, nc))
    return dist


def maze_diameter(walls: np.ndarray) -> int:
    """Largest shortest-path distance between two open cells."""
    # the open graph is a tree, so a double BFS sweep finds the diameter
    first = tuple(np.argwhere(~walls)[0])
    d = bfs_distances(walls, first)
    far = np.unravel_index(np.argmax(d), d.shape)
    return int(bfs_distances(walls, far).max())


def estimate_wall_penalty(width: int, samples: int = 10_000, seed: int = 0) -> int:
    """One more than the worst goal distance seen over sampled mazes."""
    rng = np.random.default_rng(seed)
    return 1 + max(maze_diameter(carve_maze(width, rng)) for _ in range(samples))


# Frozen output of estimate_wall_penalty(width, 10_000, seed=0); see tests.
WALL_PENALTY = {3: 7, 5: 17, 7: 31, 9: 49}


def wall_penalty(width: int) -> float:
    try:
        return float(WALL_PENALTY[width])
    except KeyError:
        raise ValueError(f"no frozen wall penalty for width {width}; run estimate_wall_penalty") from None


# --------------------------------------------------------------------------
# ProcMaze / ElectricProcMaze


def _maze_move(walls, agent, goal, actions, electric: bool, penalty: float):
    """Shared movement rule.  ``actions`` may include NOOP."""
    n, w = len(agent), walls.shape[-1]
    tgt = agent + DIRS[actions]
    inside = np.all((tgt >= 0) & (tgt < w), axis=1)
    tgt = np.where(inside[:, None], tgt, agent)
    is_wall = walls[np.arange(n), tgt[:, 0], tgt[:, 1]] & inside & (actions != NOOP)
    if electric:
        new = tgt
        reward = np.where(is_wall, -penalty, -1.0)
    else:
        new = np.where(is_wall[:, None], agent, tgt)
        reward = np.full(n, -1.0)
    terminal = np.all(new == goal, axis=1)
    return new, reward, terminal


class ProcMaze(Environment):
    """Procedurally generated maze; a new layout, start and goal per episode.

    Every step costs -1 until the goal is reached.  Moves off the outer
    boundary leave the agent in place.  With ``electric=True`` the agent may
    step into wall cells at a cost of ``-penalty``; otherwise wall moves are
    blocked.
    """

    def __init__(self, width: int = 7, timeout: int = 120, electric: bool = True,
                 penalty: float | None = None, discount: float = 0.99):
        self.width = width
        self.timeout = timeout
        self.electric = electric
        self.penalty = float(penalty) if penalty is not None else wall_penalty(width)
        self.name = "electric_procmaze" if electric else "procmaze"
        self.spec = MdpSpec(num_actions=4, observation_dim=3 * width * width, discount=discount)

    @staticmethod
    def state_from_mazes(mazes) -> StateBatch:
        return StateBatch(
            walls=np.stack([m.walls for m in mazes]),
            agent=np.array([m.agent for m in mazes], dtype=np.int64),
            goal=np.array([m.goal for m in mazes], dtype=np.int64),
            terminal=np.zeros(len(mazes), bool),
        )

    def reset_batch(self, n, rng):
        return self.state_from_mazes([generate_maze(self.width, rng) for _ in range(n)])

    def _step_batch(self, states, actions):
        new, reward, terminal = _maze_move(states.walls, states.agent, states.goal, actions,
                                           self.electric, self.penalty)
        return states.replace(agent=new, terminal=terminal), reward, terminal

    def encode(self, states):
        w = self.width
        return np.concatenate(
            [
                _one_hot_cells(states.agent, w),
                _one_hot_cells(states.goal, w),
                states.walls.reshape(len(states), -1).astype(np.uint8),
            ],
            axis=1,
        )


def ElectricProcMaze(width: int = 7, timeout: int = 120, **kw) -> ProcMaze:
    return ProcMaze(width, timeout, electric=True, **kw)


# --------------------------------------------------------------------------
# hierarchical controller over an ElectricProcMaze


class HierarchicalMaze(Environment):
    """Base maze driven indirectly through a ``C x C`` controller grid.

    Buttons sit mid-edge (index ``C // 2``) and set the pending base action.
    Every ``C``-th controller step executes the pending action in the base
    maze (no-op leaves the base agent in place but still costs the base step
    reward) and resets it to no-op.  All other steps pay zero.
    """

    name = "hier_electric_procmaze"

    def __init__(self, width: int = 5, controller_width: int = 8, timeout: int = 960,
                 penalty: float | None = None, discount: float = 0.99):
        self.base = ProcMaze(width, timeout, electric=True, penalty=penalty, discount=discount)
        self.width = width
        self.cw = controller_width
        self.timeout = timeout
        c, m = controller_width, controller_width // 2
        self.buttons = {UP: (0, m), DOWN: (c - 1, m), LEFT: (m, 0), RIGHT: (m, c - 1)}
        self.button_map = np.full((c, c), -1, dtype=np.int64)
        for action, (r, col) in self.buttons.items():
            self.button_map[r, col] = action
        self.center = (m, m)
        obs_dim = self.base.spec.observation_dim + c * c + 5 + c
        self.spec = MdpSpec(num_actions=4, observation_dim=obs_dim, discount=discount)

    def wrap(self, base: StateBatch, ctrl=None) -> StateBatch:
        n = len(base)
        if ctrl is None:
            ctrl = np.tile(np.array(self.center, dtype=np.int64), (n, 1))
        return StateBatch(
            walls=base.walls, agent=base.agent, goal=base.goal,
            ctrl=np.asarray(ctrl, dtype=np.int64).reshape(n, 2),
            selected=np.full(n, NOOP, dtype=np.int64),
            countdown=np.full(n, self.cw, dtype=np.int64),
            terminal=base.terminal.copy(),
        )

    def reset_batch(self, n, rng):
        return self.wrap(self.base.reset_batch(n, rng))

    def _step_batch(self, states, actions):
        c = self.cw
        ctrl = np.clip(states.ctrl + DIRS[actions], 0, c - 1)
        pressed = self.button_map[ctrl[:, 0], ctrl[:, 1]]
        selected = np.where(pressed >= 0, pressed, states.selected)
        countdown = states.countdown - 1
        fire = countdown == 0
        agent = states.agent.copy()
        reward = np.zeros(len(states))
        terminal = np.zeros(len(states), bool)
        if fire.any():
            idx = np.flatnonzero(fire)
            new, r, t = _maze_move(states.walls[idx], agent[idx], states.goal[idx], selected[idx],
                                   True, self.base.penalty)
            agent[idx], reward[idx], terminal[idx] = new, r, t
            selected[idx] = NOOP
            countdown[idx] = c
        nxt = states.replace(agent=agent, ctrl=ctrl, selected=selected, countdown=countdown, terminal=terminal)
        return nxt, reward, terminal

    def encode(self, states):
        c, n = self.cw, len(states)
        sel = np.zeros((n, 5), dtype=np.uint8)
        sel[np.arange(n), states.selected] = 1
        cd = np.zeros((n, c), dtype=np.uint8)
        cd[np.arange(n), states.countdown - 1] = 1
        return np.concatenate([self.base.encode(states), _one_hot_cells(states.ctrl, c), sel, cd], axis=1)


def make_env(cfg) -> Environment:
    """Build an environment from an ``EnvConfig``-like object or dict."""
    get = cfg.get if isinstance(cfg, dict) else lambda k, d=None: getattr(cfg, k, d)
    kind = get("env")
    width, timeout = get("width"), get("timeout")
    discount = get("discount", 0.99)
    if kind == "compass":
        return Compass(width, timeout, discount=discount)
    if kind == "procmaze":
        return ProcMaze(width, timeout, electric=False, discount=discount)
    if kind == "electric_procmaze":
        return ProcMaze(width, timeout, electric=True, discount=discount)
    if kind == "hier_electric_procmaze":
        return HierarchicalMaze(width, get("controller_width", 8), timeout, discount=discount)
    raise ValueError(f"unknown environment {kind!r}")
