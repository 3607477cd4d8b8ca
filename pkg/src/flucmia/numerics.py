"""Dense numerical kernel: seeded randomness, a small MLP with hand-written
backpropagation, and an AdamW optimiser.

Arrays are plain ``numpy.ndarray`` of ``float64``. Batched inputs carry the
feature axis last, so a single record of shape ``(d,)`` and a batch of shape
``(B, d)`` go through the same code path.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import TrainingError

ACTIVATIONS = ("tanh", "identity", "softplus")


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 generator whose stream is fixed by ``seed`` and any integer ``keys``.

    Distinct key tuples give statistically independent streams, which is how
    per-record and per-worker streams are derived.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def gaussian_sample(rng: np.random.Generator, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std < 0):
        raise ValueError("std must be non-negative")
    shape = np.broadcast_shapes(mean.shape, std.shape)
    eps = rng.standard_normal(shape)
    return mean + std * eps


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(a)
    if name == "identity":
        return a
    if name == "softplus":
        return softplus(a)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    # derivative w.r.t. pre-activation a, given h = act(a)
    if name == "tanh":
        return 1.0 - h * h
    if name == "identity":
        return np.ones_like(a)
    if name == "softplus":
        return sigmoid(a)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class MlpParams:
    """Layer stack ``h_{i+1} = act_i(h_i @ W_i + b_i)``; ``W_i`` has shape (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        if not self.weights:
            raise ValueError("an MLP needs at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bad shapes {w.shape}, {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input dim {w.shape[0]} does not chain")
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list in canonical order (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], list(self.activations))

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases],
                         list(self.activations))


def init_mlp(rng: np.random.Generator, dims: Sequence[int], hidden: str = "tanh", output: str = "identity") -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases."""
    if len(dims) < 2:
        raise ValueError("dims needs at least input and output sizes")
    weights, biases, acts = [], [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=(fan_out,)))
        acts.append(output if i == len(dims) - 2 else hidden)
    return MlpParams(weights, biases, acts)


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != params.input_dim:
        raise ValueError(f"input last dim {x.shape[-1:] or ()} != {params.input_dim}")
    return x


def _forward(params: MlpParams, x: np.ndarray):
    pre, post = [], [x]
    h = x
    for w, b, name in zip(params.weights, params.biases, params.activations):
        a = h @ w + b
        h = _act(name, a)
        pre.append(a)
        post.append(h)
    return pre, post


def mlp_apply(params: MlpParams, x) -> np.ndarray:
    x = _check_input(params, x)
    h = x
    for w, b, name in zip(params.weights, params.biases, params.activations):
        h = _act(name, h @ w + b)
    return h


def mlp_grad(params: MlpParams, x, upstream_grad) -> tuple[MlpParams, np.ndarray]:
    """Reverse-mode gradient of ``sum(upstream_grad * mlp_apply(params, x))``.

    Returns parameter gradients packed as an ``MlpParams`` and the gradient
    with respect to ``x``. Batch axes are summed into the parameter gradients.
    """
    x = _check_input(params, x)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    out_shape = x.shape[:-1] + (params.output_dim,)
    if upstream_grad.shape != out_shape:
        raise ValueError(f"upstream_grad shape {upstream_grad.shape} != output shape {out_shape}")
    lead = x.shape[:-1]
    pre, post = _forward(params, x.reshape(-1, params.input_dim))
    g = upstream_grad.reshape(-1, params.output_dim)
    n_layers = len(params.weights)
    dws: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in reversed(range(n_layers)):
        g = g * _act_grad(params.activations[i], pre[i], post[i + 1])
        dws[i] = post[i].T @ g
        dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return MlpParams(dws, dbs, list(params.activations)), g.reshape(lead + (params.input_dim,))


def params_digest(*arrays: np.ndarray, meta: bytes = b"") -> str:
    """SHA-256 over little-endian float64 bytes of ``arrays`` (and their shapes)."""
    h = hashlib.sha256(meta)
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams | Sequence[MlpParams], **hyper) -> "OptimizerState":
        state = cls(**hyper)
        state.m = [np.zeros_like(a) for a in _flat(params)]
        state.v = [np.zeros_like(a) for a in _flat(params)]
        return state


def _flat(params: MlpParams | Sequence[MlpParams]) -> list[np.ndarray]:
    if isinstance(params, MlpParams):
        return params.arrays()
    out = []
    for p in params:
        out.extend(p.arrays())
    return out


def _decay_mask(params: MlpParams | Sequence[MlpParams]) -> list[bool]:
    nets = [params] if isinstance(params, MlpParams) else list(params)
    mask = []
    for p in nets:
        mask.extend([True, False] * len(p.weights))
    return mask


def optimizer_step(params: MlpParams | Sequence[MlpParams], grads: MlpParams | Sequence[MlpParams],
                   state: OptimizerState) -> None:
    """One AdamW update, in place on ``params`` and ``state``.

    Weight matrices are first shrunk by ``(1 - lr * weight_decay)``; biases are
    not decayed. Several networks trained jointly may be passed as a sequence.
    """
    p_arrays, g_arrays = _flat(params), _flat(grads)
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ValueError("gradient shapes do not mirror parameter shapes")
    if not state.m:
        state.m = [np.zeros_like(a) for a in p_arrays]
        state.v = [np.zeros_like(a) for a in p_arrays]
    if len(state.m) != len(p_arrays):
        raise ValueError("optimizer state does not match parameters")
    for g in g_arrays:
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v, decay in zip(p_arrays, g_arrays, state.m, state.v, _decay_mask(params)):
        if decay and state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
