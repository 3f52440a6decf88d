"""Dense MLP with explicit reverse-mode gradients plus an Adam optimizer.

Everything is float64 and functional: forward/backward are pure, and
parameter updates go through `adam_step`, which returns new objects.
Inputs may be a single vector (1-D) or a batch of row vectors (2-D);
batched backward sums parameter gradients over rows.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class NumericalError(RuntimeError):
    """Raised when a computation produces or receives non-finite values."""


_ACTIVATIONS = ("tanh", "relu")


@dataclass
class MlpParams:
    """Weights/biases of a fully connected net; `activation` applies to hidden layers."""

    weights: list[np.ndarray]  # each (fan_in, fan_out)
    biases: list[np.ndarray]   # each (fan_out,)
    activation: str = "tanh"

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def with_arrays(self, arrays: list[np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        return MlpParams(list(arrays[:n]), list(arrays[n:]), self.activation)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.activation)

    def validate(self) -> None:
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases):
            raise ValueError("weights/biases length mismatch")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {k}: inconsistent shapes {w.shape} / {b.shape}")
            if k > 0 and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: fan_in {w.shape[0]} does not chain")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericalError(f"layer {k}: non-finite parameter entries")


def init_mlp(dims: list[int], rng: np.random.Generator, activation: str = "tanh") -> MlpParams:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], zero biases."""
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    params = MlpParams(weights, biases, activation)
    params.validate()
    return params


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise ValueError(f"input dim {x.shape[-1]} != params.in_dim {params.in_dim}")
    if x.ndim not in (1, 2):
        raise ValueError(f"input must be 1-D or 2-D, got ndim={x.ndim}")
    return x


def _forward_cached(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    # acts[k] is the input to layer k; acts[-1] is the network output
    acts = [x]
    h = x
    n_layers = len(params.weights)
    for k in range(n_layers):
        z = h @ params.weights[k] + params.biases[k]
        if k < n_layers - 1:
            h = np.tanh(z) if params.activation == "tanh" else np.maximum(z, 0.0)
        else:
            h = z
        acts.append(h)
    return h, acts


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the net on a vector or a batch of row vectors."""
    x = _check_input(params, x)
    out, _ = _forward_cached(params, x)
    return out


def mlp_backward(params: MlpParams, x: np.ndarray,
                 grad_output: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Exact reverse-mode gradients of `mlp_forward`.

    Returns (param_grads, grad_input) where param_grads is MlpParams-shaped.
    For batched input the parameter gradients are summed over rows and
    grad_input keeps one row per input row.
    """
    x = _check_input(params, x)
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != (*x.shape[:-1], params.out_dim):
        raise ValueError(f"grad_output shape {grad_output.shape} inconsistent with input")
    _, acts = _forward_cached(params, x)

    n_layers = len(params.weights)
    grad_w = [np.zeros_like(w) for w in params.weights]
    grad_b = [np.zeros_like(b) for b in params.biases]
    g = grad_output
    for k in range(n_layers - 1, -1, -1):
        if k < n_layers - 1:
            a = acts[k + 1]  # post-activation output of layer k
            if params.activation == "tanh":
                g = g * (1.0 - a * a)
            else:
                g = g * (a > 0.0)
        h_in = acts[k]
        if x.ndim == 1:
            grad_w[k] = np.outer(h_in, g)
            grad_b[k] = g.copy()
        else:
            grad_w[k] = h_in.T @ g
            grad_b[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
    return MlpParams(grad_w, grad_b, params.activation), g


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8


def init_adam(params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps_adam: float = 1e-8) -> AdamState:
    """`params` is any object exposing `.arrays()` (MlpParams, VelocityModel, ...)."""
    arrays = params.arrays()
    return AdamState(m=[np.zeros_like(a) for a in arrays],
                     v=[np.zeros_like(a) for a in arrays],
                     step_count=0, lr=lr, beta1=beta1, beta2=beta2, eps_adam=eps_adam)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update.

    `params` and `grads` are same-shaped objects exposing `.arrays()` and
    `.with_arrays()`. Returns (new_params, new_state); inputs are untouched.
    Rejects non-finite gradients.
    """
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays):
        raise ValueError("params/grads array count mismatch")
    for i, g in enumerate(g_arrays):
        if g.shape != p_arrays[i].shape:
            raise ValueError(f"array {i}: grad shape {g.shape} != param shape {p_arrays[i].shape}")
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient entries in array {i}")

    t = state.step_count + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps_adam)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - state.lr * update)
    new_state = replace(state, m=new_m, v=new_v, step_count=t)
    return params.with_arrays(new_p), new_state
