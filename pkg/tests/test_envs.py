import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from optit.analysis import greedy_visits_wall, value_iteration
from optit.core import StateBatch
from optit.envs import (DOWN, LEFT, NOOP, RIGHT, UP, WALL_PENALTY, Compass, ElectricProcMaze, HierarchicalMaze,
                        ProcMaze, bfs_distances, carve_maze, estimate_wall_penalty, generate_maze, make_env,
                        wall_penalty)


def open_graph(walls):
    w = walls.shape[0]
    idx = -np.ones(walls.shape, int)
    cells = np.argwhere(~walls)
    idx[tuple(cells.T)] = np.arange(len(cells))
    rows, cols = [], []
    for r, c in cells:
        for dr, dc in ((1, 0), (0, 1)):
            rr, cc = r + dr, c + dc
            if rr < w and cc < w and not walls[rr, cc]:
                rows.append(idx[r, c])
                cols.append(idx[rr, cc])
    n = len(cells)
    g = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return g, len(rows), n


def test_width3_mazes_are_perfect():
    for seed in range(10_000):
        walls = carve_maze(3, np.random.default_rng(seed))
        g, edges, n = open_graph(walls)
        assert edges == n - 1
        assert connected_components(g, directed=False)[0] == 1


@given(st.sampled_from([5, 7, 9]), st.integers(0, 2**32 - 1))
def test_larger_mazes_are_perfect(width, seed):
    walls = carve_maze(width, np.random.default_rng(seed))
    g, edges, n = open_graph(walls)
    assert edges == n - 1
    assert connected_components(g, directed=False)[0] == 1


@given(st.integers(0, 2**32 - 1))
def test_goal_reachable_and_distinct(seed):
    m = generate_maze(7, np.random.default_rng(seed))
    assert m.agent != m.goal
    assert not m.walls[m.agent] and not m.walls[m.goal]
    assert bfs_distances(m.walls, m.agent)[m.goal] >= 1


def test_even_width_rejected():
    with pytest.raises(ValueError):
        carve_maze(6, np.random.default_rng(0))


def _max_distance_oracle(width, samples, seed):
    rng = np.random.default_rng(seed)
    best = 0
    for _ in range(samples):
        g, _, _ = open_graph(carve_maze(width, rng))
        d = shortest_path(g, unweighted=True, directed=False)
        best = max(best, int(d.max()))
    return best


def test_frozen_wall_penalties_match_oracle():
    # all-pairs shortest paths over sampled mazes, independent of the double-BFS diameter
    assert _max_distance_oracle(3, 200, 0) + 1 == WALL_PENALTY[3] == 7
    assert _max_distance_oracle(5, 2000, 1) + 1 == WALL_PENALTY[5]
    for width in (3, 5, 7, 9):
        rooms = (width + 1) // 2
        assert WALL_PENALTY[width] == 2 * (rooms * rooms - 1) + 1  # longest possible corridor plus one


def test_shipped_size7_penalty_estimate():
    assert estimate_wall_penalty(7, samples=10_000, seed=0) == WALL_PENALTY[7] == wall_penalty(7)


def test_compass_observation_hides_reward_edge():
    env = Compass(15)
    pos = np.array([[3, 4]] * 4)
    s = StateBatch(pos=pos, edge=np.arange(4), terminal=np.zeros(4, bool))
    obs = env.encode(s)
    assert all(np.array_equal(obs[0], o) for o in obs)
    assert obs.shape == (4, 30)


def test_compass_optimal_return_everywhere():
    env = Compass(15, 20)
    interior = [(r, c) for r in range(1, 14) for c in range(1, 14)]
    for edge in range(4):
        s = StateBatch(pos=np.array(interior), edge=np.full(len(interior), edge), terminal=np.zeros(len(interior), bool))
        total = np.zeros(len(interior))
        for t in range(env.timeout):
            alive = np.flatnonzero(~s.terminal)
            if len(alive) == 0:
                break
            nxt, r, term = env.step_batch(s.take(alive), np.full(len(alive), edge))
            total[alive] += r
            s.put(alive, nxt)
        assert np.all(s.terminal) and np.all(total == 1.0)


def test_compass_always_left_from_center():
    env = Compass(15)
    s = StateBatch(pos=np.array([[7, 7]]), edge=np.array([LEFT]), terminal=np.array([False]))
    ret = 0.0
    while not s.terminal[0]:
        s, r, _ = env.step_batch(s, np.array([LEFT]))
        ret += r[0]
    assert ret == 1.0


def test_maze_boundary_move_costs_one():
    env = ElectricProcMaze(5)
    s = env.reset_batch(1, np.random.default_rng(3))
    s = s.replace(agent=np.array([[0, 0]]), goal=np.array([[4, 4]]), walls=np.zeros((1, 5, 5), bool))
    nxt, r, term = env.step_batch(s, np.array([UP]))
    assert r[0] == -1 and np.array_equal(nxt.agent, s.agent) and not term[0]


def test_plain_procmaze_blocks_walls():
    env = ProcMaze(5, electric=False)
    walls = np.zeros((1, 5, 5), bool)
    walls[0, 1, 0] = True
    s = StateBatch(walls=walls, agent=np.array([[0, 0]]), goal=np.array([[4, 4]]), terminal=np.array([False]))
    nxt, r, _ = env.step_batch(s, np.array([DOWN]))
    assert r[0] == -1 and tuple(nxt.agent[0]) == (0, 0)


def test_goal_adjacent_move_terminates():
    env = ElectricProcMaze(5)
    s = StateBatch(walls=np.zeros((1, 5, 5), bool), agent=np.array([[2, 2]]), goal=np.array([[2, 3]]),
                   terminal=np.array([False]))
    _, r, term = env.step_batch(s, np.array([RIGHT]))
    assert r[0] == -1 and term[0]


def _hier_state(env, rng):
    s = env.reset_batch(1, rng)
    # make sure the base agent sits in the open away from the goal
    return s


def test_hier_noop_round_charges_base_step(rng):
    env = HierarchicalMaze(5, 8)
    s = _hier_state(env, rng)
    agent0 = s.agent.copy()
    rewards = []
    for t in range(8):
        s, r, term = env.step_batch(s, np.array([UP if t % 2 == 0 else DOWN]))
        rewards.append(r[0])
    assert rewards[:7] == [0.0] * 7 and rewards[7] == -1.0
    assert np.array_equal(s.agent, agent0)
    assert s.selected[0] == NOOP and s.countdown[0] == 8


def test_hier_up_button_moves_base():
    env = HierarchicalMaze(5, 8)
    walls = np.zeros((1, 5, 5), bool)
    base = StateBatch(walls=walls, agent=np.array([[2, 2]]), goal=np.array([[4, 4]]), terminal=np.array([False]))
    s = env.wrap(base)
    for a in [UP] * 4 + [RIGHT] * 4:
        s, r, _ = env.step_batch(s, np.array([a]))
        if s.countdown[0] == 8:
            break
    assert tuple(s.agent[0]) == (1, 2)


def test_hier_observation_dim():
    env = HierarchicalMaze(5, 8)
    assert env.spec.observation_dim == 3 * 25 + 64 + 5 + 8


@given(st.integers(0, 2**32 - 1))
def test_hier_base_moves_only_on_fire(seed):
    rng = np.random.default_rng(seed)
    env = HierarchicalMaze(5, 8)
    s = env.reset_batch(1, rng)
    fires = 0
    for t in range(40):
        before = s.agent.copy()
        s, r, term = env.step_batch(s, rng.integers(4, size=1))
        fired = (t + 1) % 8 == 0
        fires += fired
        if not fired:
            assert np.array_equal(before, s.agent) and r[0] == 0.0
        if term[0]:
            break
    assert fires == (t + 1) // 8


@given(st.integers(0, 2**32 - 1))
def test_optimal_policy_never_enters_walls(seed):
    m = generate_maze(5, np.random.default_rng(seed))
    electric = value_iteration(m, electric=True)
    blocked = value_iteration(m, electric=False)
    assert not greedy_visits_wall(electric, m)
    for i, cell in enumerate(blocked.cells):
        assert electric.q[electric.index(cell)].max() == pytest.approx(blocked.q[i].max())


def test_make_env_kinds():
    assert isinstance(make_env({"env": "compass", "width": 15, "timeout": 20}), Compass)
    assert make_env({"env": "procmaze", "width": 5, "timeout": 50}).electric is False
    assert make_env({"env": "electric_procmaze", "width": 7, "timeout": 120}).penalty == 31
    assert isinstance(make_env({"env": "hier_electric_procmaze", "width": 5, "timeout": 960}), HierarchicalMaze)
    with pytest.raises(ValueError):
        make_env({"env": "nope", "width": 5, "timeout": 5})
