"""Conditional velocity field: an MLP over (x, sinusoidal time features, prompt embedding).

One learned embedding row per prompt id conditions the field. The checkpoint
format is a plain-text list of (array index, row, col, hex float) records and
round-trips bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import MlpParams, init_mlp, mlp_backward, mlp_forward


def time_features(t, n_freq: int) -> np.ndarray:
    """[t, sin(2^j pi t), cos(2^j pi t) for j < n_freq]; accepts scalar or 1-D t."""
    t = np.asarray(t, dtype=np.float64)
    cols = [t]
    for j in range(n_freq):
        w = np.pi * (2.0 ** j)
        cols.append(np.sin(w * t))
        cols.append(np.cos(w * t))
    return np.stack(cols, axis=-1)


@dataclass
class VelocityModel:
    """MLP velocity net plus the per-prompt embedding table."""

    mlp: MlpParams
    embed: np.ndarray  # (n_prompts, embed_dim)
    data_dim: int
    time_freqs: int

    @property
    def n_prompts(self) -> int:
        return self.embed.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embed.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return self.mlp.arrays() + [self.embed]

    def with_arrays(self, arrays: list[np.ndarray]) -> "VelocityModel":
        return VelocityModel(self.mlp.with_arrays(arrays[:-1]), arrays[-1],
                             self.data_dim, self.time_freqs)

    def copy(self) -> "VelocityModel":
        return VelocityModel(self.mlp.copy(), self.embed.copy(),
                             self.data_dim, self.time_freqs)

    def zeros_like(self) -> "VelocityModel":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])


def init_velocity_model(data_dim: int, hidden: list[int], n_prompts: int,
                        embed_dim: int, time_freqs: int, rng: np.random.Generator,
                        activation: str = "tanh") -> VelocityModel:
    in_dim = data_dim + 1 + 2 * time_freqs + embed_dim
    mlp = init_mlp([in_dim, *hidden, data_dim], rng, activation)
    bound = 1.0 / np.sqrt(embed_dim)
    embed = rng.uniform(-bound, bound, size=(n_prompts, embed_dim))
    return VelocityModel(mlp, embed, data_dim, time_freqs)


def _model_input(model: VelocityModel, x: np.ndarray, t, prompt_id) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.data_dim:
        raise ValueError(f"x dim {x.shape[-1]} != data_dim {model.data_dim}")
    tf = time_features(t, model.time_freqs)
    if x.ndim == 1:
        return np.concatenate([x, tf, model.embed[int(prompt_id)]])
    n = x.shape[0]
    if tf.ndim == 1:
        tf = np.broadcast_to(tf, (n, tf.shape[0]))
    ids = np.broadcast_to(np.asarray(prompt_id, dtype=np.intp), (n,))
    return np.concatenate([x, tf, model.embed[ids]], axis=-1)


def velocity(model: VelocityModel, x: np.ndarray, t, prompt_id) -> np.ndarray:
    """v_theta(x, t, c). Batched when x is 2-D; t and prompt_id broadcast."""
    return mlp_forward(model.mlp, _model_input(model, x, t, prompt_id))


def velocity_backward(model: VelocityModel, x: np.ndarray, t, prompt_id,
                      grad_v: np.ndarray) -> "VelocityModel":
    """Model-shaped gradients of sum(grad_v * velocity); batched rows are summed."""
    inp = _model_input(model, x, t, prompt_id)
    mlp_grads, grad_in = mlp_backward(model.mlp, inp, grad_v)
    embed_grad = np.zeros_like(model.embed)
    emb_slice = grad_in[..., -model.embed_dim:]
    if inp.ndim == 1:
        embed_grad[int(prompt_id)] += emb_slice
    else:
        ids = np.broadcast_to(np.asarray(prompt_id, dtype=np.intp), (inp.shape[0],))
        np.add.at(embed_grad, ids, emb_slice)
    return VelocityModel(mlp_grads, embed_grad, model.data_dim, model.time_freqs)


def save_checkpoint(model: VelocityModel, path) -> None:
    """Text checkpoint: header line, then one `array row col hexfloat` record per entry."""
    arrays = model.arrays()
    lines = [
        f"flowrl-checkpoint v1 data_dim={model.data_dim} time_freqs={model.time_freqs} "
        f"activation={model.mlp.activation} n_arrays={len(arrays)}"
    ]
    for idx, a in enumerate(arrays):
        mat = a if a.ndim == 2 else a.reshape(-1, 1)
        lines.append(f"array {idx} {mat.shape[0]} {mat.shape[1]} ndim={a.ndim}")
        for r in range(mat.shape[0]):
            for c in range(mat.shape[1]):
                lines.append(f"{idx} {r} {c} {float(mat[r, c]).hex()}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> VelocityModel:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split()
    if header[0] != "flowrl-checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    meta = dict(field.split("=") for field in header[2:])
    data_dim = int(meta["data_dim"])
    time_freqs = int(meta["time_freqs"])
    activation = meta["activation"]
    n_arrays = int(meta["n_arrays"])

    arrays: list[np.ndarray] = []
    i = 1
    for _ in range(n_arrays):
        tag, _idx, rows, cols, ndim_field = lines[i].split()
        if tag != "array":
            raise ValueError(f"{path}: expected array header at line {i + 1}")
        rows, cols = int(rows), int(cols)
        ndim = int(ndim_field.split("=")[1])
        mat = np.empty((rows, cols))
        i += 1
        for _ in range(rows * cols):
            _a, r, c, hexval = lines[i].split()
            mat[int(r), int(c)] = float.fromhex(hexval)
            i += 1
        arrays.append(mat if ndim == 2 else mat.reshape(-1))

    n_layers = (len(arrays) - 1) // 2
    mlp = MlpParams(arrays[:n_layers], arrays[n_layers:2 * n_layers], activation)
    mlp.validate()
    return VelocityModel(mlp, arrays[-1], data_dim, time_freqs)
