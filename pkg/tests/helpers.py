"""Small environments and scripted policies used as test oracles."""
import numpy as np

from optit.core import Environment, MdpSpec, StateBatch

ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail):
    """Collect one PASS/FAIL line for the end-of-session acceptance report."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


class Chain(Environment):
    """States 0..L; action 1 moves right, 0 stays.  Reaching L terminates
    with reward ``goal_reward``; every other step pays ``step_reward``."""

    name = "chain"

    def __init__(self, length=6, step_reward=0.0, goal_reward=1.0, discount=0.9):
        self.length = length
        self.step_reward = step_reward
        self.goal_reward = goal_reward
        self.timeout = 100
        self.spec = MdpSpec(num_actions=2, observation_dim=length + 1, discount=discount)
        self.calls = []

    def reset_batch(self, n, rng):
        return StateBatch(x=np.zeros(n, np.int64), terminal=np.zeros(n, bool))

    def _step_batch(self, states, actions):
        self.calls.append(actions.copy())
        x = np.minimum(states.x + actions, self.length)
        term = x == self.length
        r = np.where(term, self.goal_reward, self.step_reward)
        return states.replace(x=x, terminal=term), r, term

    def encode(self, states):
        return np.eye(self.length + 1, dtype=np.uint8)[states.x]


class TablePolicy:
    """Options given as fixed action distributions, the same in every state."""

    def __init__(self, probs, value=0.0):
        self.probs = np.asarray(probs, dtype=np.float64)  # (N, A)
        self.num_options = self.probs.shape[0]
        self.value = value

    def option_log_probs(self, obs):
        with np.errstate(divide="ignore"):
            lp = np.log(self.probs)
        return np.broadcast_to(lp, (len(obs),) + lp.shape).copy()

    def forward_value(self, obs):
        return np.full(len(obs), float(self.value))

    def forward_policy(self, obs):
        lp = self.option_log_probs(obs)
        return lp, np.full(lp.shape[:2], -np.log(self.num_options))


class ScriptedButtonPolicy:
    """Option n always presses toward controller button ``targets[n]``."""

    def __init__(self, targets, num_actions=4):
        self.targets = list(targets)
        self.num_options = len(self.targets)
        self.num_actions = num_actions

    def option_log_probs(self, obs):
        lp = np.full((len(obs), self.num_options, self.num_actions), -1e9)
        for n, a in enumerate(self.targets):
            lp[:, n, a] = 0.0
        return lp


def random_loss_case(seed, N=None, K=None, termination=False):
    """A small float64 network and a padded segment batch with fixed actions."""
    from optit.learn.buffer import SegmentBatch
    from optit.neural import OptionNet

    r = np.random.default_rng(seed)
    N = N if N is not None else int(r.integers(1, 4))
    K = K if K is not None else int(r.integers(1, 5))
    B, D, A = int(r.integers(1, 4)), 5, 4
    net = OptionNet(D, A, N, int(r.integers(1, 3)), int(r.integers(3, 7)), termination=termination,
                    dtype=np.float64, rng=int(r.integers(1 << 31)), zero_heads=False)
    obs = r.integers(0, 2, (B, K, D)).astype(np.uint8)
    pi = r.dirichlet(np.ones(A), size=(B, K))
    v = r.normal(size=(B, K))
    mask = np.arange(K)[None] < r.integers(1, K + 1, size=B)[:, None]
    actions = r.integers(0, A, (B, K))
    return net, SegmentBatch(obs, pi, v, mask), actions


def gradient_error(net, loss_fn, value=False):
    """Max relative error between analytic and central-difference gradients."""
    from optit.neural import finite_difference_gradients, max_relative_error

    _, g = loss_fn()
    names = [k for k in net.params if net.is_value_param(k) == value]
    # the tighter value tolerance needs the fourth-order stencil
    num = finite_difference_gradients(lambda: loss_fn()[0], net.params, names=names,
                                      h=1e-4 if value else 1e-5, points=4 if value else 2)
    return max_relative_error(g, num, floor=1e-6)
