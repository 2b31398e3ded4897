"""Reverse-mode gradients for the fixed dense tanh stack used as the graybox blackbox.

The network is ``hidden tanh layers -> head``, where the head has some linear
units followed by some tanh units. Forward passes are batched over rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericError, NumericOverflowError

LOSS_FLOOR = 1e-12
DEFAULT_WIDTHS = (1024, 512, 128, 64, 32, 16, 8, 4)


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.width < 1:
            raise InvalidArgumentError("layer width must be >= 1")
        if self.activation not in ("tanh", "linear"):
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")


@dataclass
class NetworkParams:
    """Weights ``W[l]`` of shape (fan_in, fan_out) and biases ``b[l]``; the last pair is the head."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden: tuple[LayerSpec, ...]
    n_linear_head: int = 3
    n_tanh_head: int = 2

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def head_width(self) -> int:
        return self.n_linear_head + self.n_tanh_head

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: list[np.ndarray]) -> "NetworkParams":
        return NetworkParams(list(arrays[0::2]), list(arrays[1::2]), self.hidden, self.n_linear_head, self.n_tanh_head)

    def copy(self) -> "NetworkParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def init_network(
    input_width: int,
    hidden: tuple[LayerSpec, ...] | tuple[int, ...] = DEFAULT_WIDTHS,
    seed: int = 0,
    n_linear_head: int = 3,
    n_tanh_head: int = 2,
) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    hidden = tuple(h if isinstance(h, LayerSpec) else LayerSpec(int(h)) for h in hidden)
    rng = np.random.default_rng(seed)
    widths = [input_width] + [h.width for h in hidden] + [n_linear_head + n_tanh_head]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases, hidden, n_linear_head, n_tanh_head)


@dataclass
class Tape:
    """Layer outputs of one batched forward pass (``acts[0]`` is the input)."""

    acts: list[np.ndarray]
    head_pre: np.ndarray
    head: np.ndarray
    params: NetworkParams = field(repr=False)


def _activate(z: np.ndarray, spec: LayerSpec) -> np.ndarray:
    return np.tanh(z) if spec.activation == "tanh" else z


def network_forward(params: NetworkParams, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Evaluate the network on rows of ``x``; returns head values ``(N, 5)`` and the tape."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.input_width:
        raise InvalidArgumentError(f"input width {x.shape[1]} != network input width {params.input_width}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("network inputs must be finite")
    acts = [x]
    a = x
    for w, b, spec in zip(params.weights[:-1], params.biases[:-1], params.hidden):
        a = _activate(a @ w + b, spec)
        acts.append(a)
    z = a @ params.weights[-1] + params.biases[-1]
    head = z.copy()
    head[:, params.n_linear_head :] = np.tanh(z[:, params.n_linear_head :])
    if not np.all(np.isfinite(head)):
        raise NumericOverflowError("non-finite network output")
    return head, Tape(acts, z, head, params)


def backward(tape: Tape, head_gradient: np.ndarray) -> list[np.ndarray]:
    """Gradient of ``sum(head * head_gradient)`` w.r.t. ``[W0, b0, W1, b1, ...]``."""
    p = tape.params
    g = np.asarray(head_gradient, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.head.shape:
        raise InvalidArgumentError(f"head gradient shape {g.shape} != head shape {tape.head.shape}")
    dz = g.copy()
    th = tape.head[:, p.n_linear_head :]
    dz[:, p.n_linear_head :] *= 1 - th * th
    grads: list[np.ndarray] = []
    for layer in range(len(p.weights) - 1, -1, -1):
        a_in = tape.acts[layer]
        grads.append(dz.sum(axis=0))
        grads.append(a_in.T @ dz)
        if layer == 0:
            break
        da = dz @ p.weights[layer].T
        if p.hidden[layer - 1].activation == "tanh":
            a = tape.acts[layer]
            da *= 1 - a * a
        dz = da
    grads.reverse()
    return grads


def log_mse_loss(predictions, targets, mode: str = "batch", floor: float = LOSS_FLOOR) -> tuple[float, np.ndarray]:
    """Log of the mean squared error and its gradient w.r.t. ``predictions``.

    ``mode="batch"``: ``ln(mean(d^2) + floor)``.
    ``mode="per_example"``: ``mean(ln(d^2 + floor))``.
    """
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape or p.ndim != 1:
        raise InvalidArgumentError("predictions and targets must be equal-length vectors")
    n = len(p)
    if n == 0:
        raise InvalidArgumentError("empty batch")
    d = p - t
    if mode == "batch":
        denom = np.mean(d * d) + floor
        return float(np.log(denom)), 2 * d / (n * denom)
    if mode == "per_example":
        sq = d * d + floor
        return float(np.mean(np.log(sq))), 2 * d / (n * sq)
    raise InvalidArgumentError(f"unknown loss mode {mode!r}")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays, **hyper) -> "AdamState":
        state = cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **hyper)
        if not (0 < state.beta1 < 1 and 0 < state.beta2 < 1) or state.lr <= 0 or state.eps <= 0:
            raise InvalidArgumentError("invalid Adam hyperparameters")
        return state


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise InvalidArgumentError("parameter and gradient shapes differ")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericError("non-finite gradient; Adam step rejected")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m = [b1 * mi + (1 - b1) * g for mi, g in zip(state.m, grads)]
    v = [b2 * vi + (1 - b2) * g * g for vi, g in zip(state.v, grads)]
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new = [p - state.lr * (mi / c1) / (np.sqrt(vi / c2) + state.eps) for p, mi, vi in zip(params, m, v)]
    return new, AdamState(m, v, t, state.lr, b1, b2, state.eps)
