"""Environment contract shared by every simulator.

Environments are written batch-first: a :class:`StateBatch` holds ``B``
states as parallel numpy arrays, so the planner can advance thousands of
rollouts with a handful of array operations.  The single-state functions
:func:`reset`, :func:`step` and :func:`run_episode` are thin wrappers over
batches of length one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class MdpSpec:
    num_actions: int
    observation_dim: int
    discount: float = 0.99

    def __post_init__(self):
        if self.num_actions < 1 or self.observation_dim < 1:
            raise ValueError("num_actions and observation_dim must be positive")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError(f"discount must lie in [0, 1], got {self.discount}")


class StateBatch:
    """A batch of environment states stored as row-aligned arrays.

    Every array shares the leading axis.  ``terminal`` is always present.
    Equality and hashing are by value so single states can be used as dict
    keys in tests.
    """

    __slots__ = ("_arrays",)

    def __init__(self, **arrays: np.ndarray):
        if "terminal" not in arrays:
            raise ValueError("StateBatch requires a 'terminal' array")
        n = len(arrays["terminal"])
        for name, arr in arrays.items():
            if len(arr) != n:
                raise ValueError(f"array {name!r} has {len(arr)} rows, expected {n}")
        object.__setattr__(self, "_arrays", arrays)

    def __getattr__(self, name):
        try:
            return self._arrays[name]
        except KeyError:
            raise AttributeError(name) from None

    def __setattr__(self, name, value):
        raise AttributeError("StateBatch is immutable; use replace()")

    def __len__(self) -> int:
        return len(self._arrays["terminal"])

    @property
    def fields(self) -> tuple[str, ...]:
        return tuple(self._arrays)

    def replace(self, **arrays: np.ndarray) -> StateBatch:
        merged = dict(self._arrays)
        merged.update(arrays)
        return StateBatch(**merged)

    def take(self, idx) -> StateBatch:
        idx = np.atleast_1d(np.asarray(idx))
        return StateBatch(**{k: v[idx] for k, v in self._arrays.items()})

    def repeat(self, reps: int) -> StateBatch:
        """Each row repeated ``reps`` times consecutively (clones for rollouts)."""
        return StateBatch(**{k: np.repeat(v, reps, axis=0) for k, v in self._arrays.items()})

    def copy(self) -> StateBatch:
        return StateBatch(**{k: v.copy() for k, v in self._arrays.items()})

    def put(self, idx, other: StateBatch) -> None:
        """Overwrite rows ``idx`` in place with the rows of ``other``."""
        for k, v in self._arrays.items():
            v[idx] = other._arrays[k]

    @staticmethod
    def concat(batches: Sequence[StateBatch]) -> StateBatch:
        keys = batches[0].fields
        return StateBatch(**{k: np.concatenate([b._arrays[k] for b in batches]) for k in keys})

    def row_key(self, i: int) -> tuple:
        return tuple((k, v[i].tobytes()) for k, v in self._arrays.items())

    def __iter__(self) -> Iterator[StateBatch]:
        for i in range(len(self)):
            yield self.take(i)

    def __eq__(self, other):
        if not isinstance(other, StateBatch) or self.fields != other.fields:
            return NotImplemented
        return all(np.array_equal(self._arrays[k], other._arrays[k]) for k in self.fields)

    def __hash__(self):
        return hash(tuple(self.row_key(i) for i in range(len(self))))

    def __repr__(self):
        parts = ", ".join(f"{k}={v.tolist() if v.size <= 8 else v.shape}" for k, v in self._arrays.items())
        return f"StateBatch({parts})"


class Environment:
    """Base class for batch simulators.

    Subclasses set ``spec`` and ``timeout`` and implement ``reset_batch``,
    ``_step_batch`` and ``encode``.  Transitions of the shipped environments
    are deterministic given (state, action); only the start distribution is
    random.
    """

    spec: MdpSpec
    timeout: int
    name: str = "env"

    def reset_batch(self, n: int, rng: np.random.Generator) -> StateBatch:
        raise NotImplementedError

    def _step_batch(self, states: StateBatch, actions: np.ndarray):
        raise NotImplementedError

    def encode(self, states: StateBatch) -> np.ndarray:
        """Binary observations, shape ``(B, observation_dim)``, dtype uint8."""
        raise NotImplementedError

    def step_batch(self, states: StateBatch, actions) -> tuple[StateBatch, np.ndarray, np.ndarray]:
        """Advance every row by one action.

        Returns ``(next_states, rewards, terminal)`` with float64 rewards.
        Stepping a terminal row is a contract violation.
        """
        actions = np.asarray(actions)
        if actions.shape != (len(states),):
            raise ValueError(f"expected {len(states)} actions, got shape {actions.shape}")
        if np.any(states.terminal):
            raise RuntimeError("cannot step a terminal state")
        if np.any((actions < 0) | (actions >= self.spec.num_actions)):
            raise ValueError("action out of range")
        nxt, rewards, terminal = self._step_batch(states, actions.astype(np.int64))
        return nxt, np.asarray(rewards, dtype=np.float64), terminal


@dataclass(frozen=True)
class Transition:
    next_state: StateBatch
    reward: float
    terminal: bool


@dataclass
class EpisodeRecord:
    steps: list = field(default_factory=list)  # (state, observation, action, reward)
    undiscounted_return: float = 0.0
    ended_by: str = "timeout"

    def __len__(self):
        return len(self.steps)

    def recomputed_return(self) -> float:
        return float(sum(r for _, _, _, r in self.steps))


def reset(env: Environment, rng: np.random.Generator) -> tuple[StateBatch, np.ndarray]:
    state = env.reset_batch(1, rng)
    return state, env.encode(state)[0]


def step(env: Environment, state: StateBatch, action: int, rng: np.random.Generator | None = None) -> Transition:
    # rng is part of the contract for stochastic simulators; the shipped ones are deterministic
    if len(state) != 1:
        raise ValueError("step() takes a single state; use step_batch for batches")
    nxt, r, term = env.step_batch(state, np.array([action]))
    return Transition(nxt, float(r[0]), bool(term[0]))


ActionSource = Callable[[StateBatch, np.ndarray, np.random.Generator], int]


def run_episode(env: Environment, action_source: ActionSource, timeout: int, rng: np.random.Generator) -> EpisodeRecord:
    """Play one episode until termination or exactly ``timeout`` steps."""
    if timeout < 1:
        raise ValueError("timeout must be >= 1")
    state, obs = reset(env, rng)
    rec = EpisodeRecord()
    total = 0.0
    for _ in range(timeout):
        action = int(action_source(state, obs, rng))
        tr = step(env, state, action, rng)
        rec.steps.append((state, obs, action, tr.reward))
        total += tr.reward
        state = tr.next_state
        if tr.terminal:
            rec.ended_by = "terminal"
            break
        obs = env.encode(state)[0]
    rec.undiscounted_return = total
    return rec


def spawn_generators(seed: int | np.random.SeedSequence, n: int) -> list[np.random.Generator]:
    """Independent PCG64 streams derived from one seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(n)]
