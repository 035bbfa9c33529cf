"""Dense networks with hand-written backpropagation.

:class:`OptionNet` bundles a shared ELU trunk feeding several linear
heads (``N`` option policies, the option-selection head, an optional
termination head) with a separate value MLP of the same shape.  Output
layers start at zero so every initial policy is uniform and the initial
value is 0.  Identical options receive identical gradients forever, so
training passes ``option_init_scale > 0`` to jitter the option head.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "MlpConfig",
    "OptionNet",
    "AdamW",
    "log_softmax",
    "log_softmax_backward",
    "finite_difference_gradients",
    "max_relative_error",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_layers: int = 3
    hidden_units: int = 400

    def __post_init__(self):
        if min(self.input_dim, self.hidden_layers, self.hidden_units) < 1:
            raise ValueError("MLP dimensions must be positive")


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def log_softmax_backward(logp: np.ndarray, g: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient wrt logits given the gradient ``g`` wrt log-probabilities."""
    return g - np.exp(logp) * g.sum(axis=axis, keepdims=True)


def log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def _uniform_init(rng, fan_in, fan_out, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype), \
        rng.uniform(-bound, bound, size=fan_out).astype(dtype)


def _mlp_forward(layers, x):
    """ELU after every layer.  Returns output and per-layer (input, pre, post)."""
    cache = []
    h = x
    for w, b in layers:
        pre = h @ w + b
        post = elu(pre)
        cache.append((h, pre, post))
        h = post
    return h, cache


def _mlp_backward(layers, cache, dh):
    grads = []
    for (w, _), (inp, pre, post) in zip(reversed(layers), reversed(cache)):
        dpre = dh * np.where(pre > 0, 1.0, post + 1.0).astype(dh.dtype)
        grads.append((inp.T @ dpre, dpre.sum(axis=0)))
        dh = dpre @ w.T
    return grads[::-1]


class OptionNet:
    """Option policies, option selection, optional termination, and value.

    Parameters live in ``self.params``, an insertion-ordered dict.  The
    order (trunk, option head, rho head, termination head, value network)
    is the declaration order used by checkpoints and the optimizer.
    """

    def __init__(self, input_dim: int, num_actions: int, num_options: int,
                 hidden_layers: int = 3, hidden_units: int = 400,
                 termination: bool = False, dtype=np.float32,
                 rng: np.random.Generator | int | None = 0, zero_heads: bool = True,
                 option_init_scale: float = 0.0):
        self.input_dim = input_dim
        self.num_actions = num_actions
        self.num_options = num_options
        self.hidden_layers = hidden_layers
        self.hidden_units = hidden_units
        self.termination = termination
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        if rng is None:
            return  # caller fills params (checkpoint loading / copies)
        rng = np.random.default_rng(rng)
        MlpConfig(input_dim, hidden_layers, hidden_units)
        dims = [input_dim] + [hidden_units] * hidden_layers
        for i in range(hidden_layers):
            self.params[f"trunk.{i}.w"], self.params[f"trunk.{i}.b"] = _uniform_init(rng, dims[i], dims[i + 1], dtype)
        heads = [("option", num_options * num_actions), ("rho", num_options)]
        if termination:
            heads.append(("term", num_options))
        for name, width in heads:
            w, b = _uniform_init(rng, hidden_units, width, dtype)
            if zero_heads:
                w, b = np.zeros_like(w), np.zeros_like(b)
                if name == "option" and option_init_scale > 0:
                    w = (option_init_scale * _uniform_init(rng, hidden_units, width, dtype)[0]).astype(dtype)
            self.params[f"{name}.w"], self.params[f"{name}.b"] = w, b
        for i in range(hidden_layers):
            self.params[f"value.{i}.w"], self.params[f"value.{i}.b"] = _uniform_init(rng, dims[i], dims[i + 1], dtype)
        w, b = _uniform_init(rng, hidden_units, 1, dtype)
        if zero_heads:
            w, b = np.zeros_like(w), np.zeros_like(b)
        self.params["value.out.w"], self.params["value.out.b"] = w, b

    # -- bookkeeping ------------------------------------------------------

    def architecture(self) -> dict:
        return dict(input_dim=self.input_dim, num_actions=self.num_actions, num_options=self.num_options,
                    hidden_layers=self.hidden_layers, hidden_units=self.hidden_units,
                    termination=self.termination)

    def copy(self, dtype=None) -> OptionNet:
        dtype = np.dtype(dtype or self.dtype)
        net = OptionNet(**self.architecture(), dtype=dtype, rng=None)
        net.params = {k: v.astype(dtype, copy=True) for k, v in self.params.items()}
        return net

    def is_value_param(self, name: str) -> bool:
        return name.startswith("value.")

    def _layers(self, prefix):
        return [(self.params[f"{prefix}.{i}.w"], self.params[f"{prefix}.{i}.b"]) for i in range(self.hidden_layers)]

    def _check(self, obs):
        obs = np.asarray(obs)
        if obs.shape[-1] != self.input_dim:
            raise ValueError(f"observation has {obs.shape[-1]} features, network expects {self.input_dim}")
        return obs.astype(self.dtype, copy=False)

    # -- policy side ------------------------------------------------------

    def policy_forward(self, obs, heads=("option", "rho")):
        """Logits of the requested heads for a batch ``(B, D)``.

        Returns ``(logits, cache)`` where ``logits`` maps head name to an
        array: option ``(B, N, A)``, rho ``(B, N)``, term ``(B, N)``.
        """
        x = self._check(obs)
        h, trunk_cache = _mlp_forward(self._layers("trunk"), x)
        out = {}
        for name in heads:
            z = h @ self.params[f"{name}.w"] + self.params[f"{name}.b"]
            if name == "option":
                z = z.reshape(len(x), self.num_options, self.num_actions)
            out[name] = z
        return out, (trunk_cache, h)

    def policy_backward(self, cache, dlogits: dict) -> dict:
        trunk_cache, h = cache
        grads = {}
        dh = np.zeros_like(h)
        for name, dz in dlogits.items():
            dz = dz.reshape(len(h), -1).astype(h.dtype, copy=False)
            grads[f"{name}.w"] = h.T @ dz
            grads[f"{name}.b"] = dz.sum(axis=0)
            dh += dz @ self.params[f"{name}.w"].T
        for i, (gw, gb) in enumerate(_mlp_backward(self._layers("trunk"), trunk_cache, dh)):
            grads[f"trunk.{i}.w"], grads[f"trunk.{i}.b"] = gw, gb
        return grads

    def option_log_probs(self, obs) -> np.ndarray:
        """``(B, N, A)`` log-probabilities of every option policy."""
        logits, _ = self.policy_forward(np.atleast_2d(obs), heads=("option",))
        return log_softmax(logits["option"])

    def forward_policy(self, obs):
        """Option and option-selection log-probabilities.

        A single observation gives ``(N, A)`` and ``(N,)``; a batch adds a
        leading axis.
        """
        obs = np.asarray(obs)
        logits, _ = self.policy_forward(np.atleast_2d(obs))
        opt, rho = log_softmax(logits["option"]), log_softmax(logits["rho"])
        if obs.ndim == 1:
            return opt[0], rho[0]
        return opt, rho

    # -- value side -------------------------------------------------------

    def value_forward(self, obs):
        x = self._check(np.atleast_2d(obs))
        h, cache = _mlp_forward(self._layers("value"), x)
        v = (h @ self.params["value.out.w"] + self.params["value.out.b"])[:, 0]
        return v, (cache, h)

    def value_backward(self, cache, dv) -> dict:
        trunk_cache, h = cache
        dv = np.asarray(dv, dtype=h.dtype)[:, None]
        grads = {"value.out.w": h.T @ dv, "value.out.b": dv.sum(axis=0)}
        dh = dv @ self.params["value.out.w"].T
        for i, (gw, gb) in enumerate(_mlp_backward(self._layers("value"), trunk_cache, dh)):
            grads[f"value.{i}.w"], grads[f"value.{i}.b"] = gw, gb
        return grads

    def forward_value(self, obs):
        """Scalar for one observation, ``(B,)`` for a batch.

        Terminal states are never passed here; callers use 0 for them.
        """
        obs = np.asarray(obs)
        v, _ = self.value_forward(obs)
        return float(v[0]) if obs.ndim == 1 else v


class AdamW:
    """Adam with decoupled weight decay and per-tensor step sizes."""

    def __init__(self, params: dict, step_size: float | Callable[[str], float] | dict,
                 beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-5, weight_decay: float = 1e-6):
        if callable(step_size):
            self.lr = {k: float(step_size(k)) for k in params}
        elif isinstance(step_size, dict):
            self.lr = {k: float(step_size[k]) for k in params}
        else:
            self.lr = {k: float(step_size) for k in params}
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place.  Tensors without a gradient only decay."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            lr = self.lr[k]
            p *= 1.0 - lr * self.weight_decay
            g = grads.get(k)
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def finite_difference_gradients(loss_fn: Callable[[], float], params: dict, h: float = 1e-5,
                                names=None, points: int = 2) -> dict:
    """Central differences of ``loss_fn()`` wrt every entry of ``params``.

    ``points=4`` uses the fourth-order stencil, which resolves gradients
    several digits below the plain two-point rule (h around 1e-4 suits float64).
    ``loss_fn`` must read the arrays in ``params`` (they are perturbed in
    place and restored).
    """
    if points not in (2, 4):
        raise ValueError("points must be 2 or 4")
    out = {}
    for k in names or params:
        p = params[k]
        g = np.zeros(p.shape, dtype=np.float64)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]

            def f(delta):
                flat[i] = orig + delta
                return loss_fn()

            d1 = f(h) - f(-h)
            if points == 2:
                gflat[i] = d1 / (2 * h)
            else:
                gflat[i] = (8 * d1 - (f(2 * h) - f(-2 * h))) / (12 * h)
            flat[i] = orig
        out[k] = g
    return out


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-8) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)`` over all tensors."""
    worst = 0.0
    for k, n in numeric.items():
        a = np.asarray(analytic.get(k, np.zeros_like(n)), dtype=np.float64).reshape(n.shape)
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"OPTITCKP"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, net: OptionNet, config: dict | None = None) -> None:
    """Header (magic, version, JSON length, JSON) then little-endian float32
    tensors in declaration order."""
    header = {
        "architecture": net.architecture(),
        "tensors": [[k, list(v.shape)] for k, v in net.params.items()],
        "config": config or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for v in net.params.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[OptionNet, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen])
    net = OptionNet(**header["architecture"], dtype=np.float32, rng=None)
    offset = 16 + hlen
    for name, shape in header["tensors"]:
        n = int(np.prod(shape))
        net.params[name] = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape).astype(np.float32)
        offset += 4 * n
    if offset != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return net, header["config"]


def describe_checkpoint(path) -> list[tuple[str, tuple, float]]:
    net, _ = load_checkpoint(path)
    return [(k, v.shape, float(np.linalg.norm(v))) for k, v in net.params.items()]

