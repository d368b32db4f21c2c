"""Small dense feedforward networks with hand-written reverse-mode gradients.

Everything here is functional: updates return new objects and never mutate
their inputs, so a network snapshot can be shared freely between threads.
Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of
shape ``(B, fan_in)`` maps to ``X @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

LEAKY_SLOPE = 0.01
HIDDEN_ACTIVATIONS = ("leaky_relu",)
OUTPUT_ACTIVATIONS = ("sigmoid", "identity")


class ShapeError(ValueError):
    """Raised when array shapes do not chain with a network's layer dims."""


@dataclass(frozen=True)
class Mlp:
    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    hidden_activation: str = "leaky_relu"
    output_activation: str = "identity"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ShapeError(f"layer_dims must hold >= 2 positive ints, got {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("need exactly one weight matrix and bias per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ShapeError(
                    f"layer {i}: expected W{(dims[i], dims[i + 1])} b({dims[i + 1]},), "
                    f"got W{w.shape} b{b.shape}"
                )
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        """Parameters interleaved as ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "Mlp":
        return Mlp(
            self.layer_dims,
            tuple(np.asarray(p, dtype=float) for p in params[0::2]),
            tuple(np.asarray(p, dtype=float) for p in params[1::2]),
            self.hidden_activation,
            self.output_activation,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def init_mlp(
    layer_dims: Sequence[int],
    rng: np.random.Generator,
    output_activation: str = "identity",
) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(tuple(layer_dims), tuple(weights), tuple(biases), "leaky_relu", output_activation)


def zeros_like_mlp(net: Mlp) -> Mlp:
    return net.with_params([np.zeros_like(p) for p in net.params()])


def _leaky(a):
    return np.where(a > 0, a, LEAKY_SLOPE * a)


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _as_batch(net: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"input of shape {x.shape} does not match input dim {net.input_dim}")
    return x, single


def _forward_cache(net: Mlp, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Return per-layer inputs and pre-activations."""
    inputs, pre = [], []
    h = x
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        a = h @ w + b
        pre.append(a)
        if i < last:
            h = _leaky(a)
        elif net.output_activation == "sigmoid":
            h = _sigmoid(a)
        else:
            h = a
    inputs.append(h)
    return inputs, pre


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate the network on one vector ``(d,)`` or a batch ``(B, d)``."""
    batch, single = _as_batch(net, x)
    out = _forward_cache(net, batch)[0][-1]
    return out[0] if single else out


class Gradients(NamedTuple):
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    inputs: np.ndarray

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def backward(net: Mlp, input_batch, output_grad) -> Gradients:
    """Gradient of ``sum_i <net(x_i), output_grad_i>`` w.r.t. every parameter.

    The gradient w.r.t. the inputs is returned too; chaining a generator into
    a critic needs it.
    """
    x, _ = _as_batch(net, input_batch)
    if x.shape[0] == 0:
        raise ShapeError("empty batch")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input batch")
    g = np.asarray(output_grad, dtype=float).reshape(x.shape[0], -1)
    if g.shape[1] != net.output_dim:
        raise ShapeError(f"output_grad has {g.shape[1]} columns, expected {net.output_dim}")

    inputs, pre = _forward_cache(net, x)
    if net.output_activation == "sigmoid":
        s = inputs[-1]
        delta = g * s * (1.0 - s)
    else:
        delta = g

    dws: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    for i in range(net.n_layers - 1, -1, -1):
        dws[i] = inputs[i].T @ delta
        dbs[i] = delta.sum(axis=0)
        back = delta @ net.weights[i].T
        if i > 0:
            delta = back * np.where(pre[i - 1] > 0, 1.0, LEAKY_SLOPE)
    return Gradients(tuple(dws), tuple(dbs), back)


@dataclass(frozen=True)
class RmsPropState:
    accum: tuple[np.ndarray, ...]
    rho: float = 0.9
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], rho: float = 0.9, eps: float = 1e-8):
        return cls(tuple(np.zeros_like(p) for p in params), rho, eps)


def rmsprop_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: RmsPropState,
    learning_rate: float,
) -> tuple[list[np.ndarray], RmsPropState]:
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    if not (len(params) == len(grads) == len(state.accum)):
        raise ShapeError("params, grads and accumulator lists differ in length")
    new_params, new_accum = [], []
    for p, g, v in zip(params, grads, state.accum):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {v.shape}")
        # overflow to inf is left for the caller's finiteness check
        with np.errstate(over="ignore", invalid="ignore"):
            v2 = state.rho * v + (1.0 - state.rho) * g * g
            new_accum.append(v2)
            new_params.append(p - learning_rate * g / (np.sqrt(v2) + state.eps))
    return new_params, RmsPropState(tuple(new_accum), state.rho, state.eps)


def clip_weights(params: Sequence[np.ndarray], c: float) -> list[np.ndarray]:
    if c <= 0:
        raise ValueError("clip value must be positive")
    return [np.clip(p, -c, c) for p in params]

