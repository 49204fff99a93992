"""Parameter containers: dense, 1-D convolution and GRU."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .ops import conv1d, dense, sigmoid, tanh
from .tensor import Tensor, as_tensor, parameter


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Anything exposing an ordered name -> parameter mapping."""

    def parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state):
        params = self.parameters()
        if set(params) != set(state):
            raise ShapeError(f"state keys {sorted(state)} do not match {sorted(params)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{k}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = parameter(he_uniform(rng, (n_out, n_in), n_in))
        self.bias = parameter(np.zeros(n_out))

    def __call__(self, x):
        return dense(as_tensor(x), self.weight, self.bias)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        self.weight = parameter(he_uniform(rng, (c_out, c_in, kernel), c_in * kernel))
        self.bias = parameter(np.zeros(c_out))

    def __call__(self, x):
        return conv1d(as_tensor(x), self.weight, self.bias)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


GRU_PARAM_NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


@dataclass
class GruParams:
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    def __post_init__(self):
        n_units, n_in = self.W_z.shape
        for name in GRU_PARAM_NAMES:
            t = getattr(self, name)
            want = {"W": (n_units, n_in), "U": (n_units, n_units), "b": (n_units,)}[name[0]]
            if t.shape != want:
                raise ShapeError(f"{name}: expected shape {want}, got {t.shape}")

    @property
    def n_units(self) -> int:
        return self.W_z.shape[0]

    @property
    def n_in(self) -> int:
        return self.W_z.shape[1]

    @classmethod
    def init(cls, n_in: int, n_units: int, rng: np.random.Generator) -> "GruParams":
        k = 1.0 / np.sqrt(n_units)
        arrays = {}
        for name in GRU_PARAM_NAMES:
            shape = {"W": (n_units, n_in), "U": (n_units, n_units), "b": (n_units,)}[name[0]]
            arrays[name] = parameter(rng.uniform(-k, k, size=shape))
        return cls(**arrays)

    def as_dict(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in GRU_PARAM_NAMES}


def gru_step(x_t, h_prev, p: GruParams) -> Tensor:
    """One GRU update for a batch.

    z = sig(W_z x + U_z h + b_z); r = sig(W_r x + U_r h + b_r);
    h~ = tanh(W_h x + U_h (r * h) + b_h); h' = (1 - z) * h + z * h~
    """
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t = x_t.reshape(1, -1)
        h_prev = h_prev.reshape(1, -1)
    if x_t.shape[1] != p.n_in or h_prev.shape[1] != p.n_units:
        raise ShapeError(f"gru_step: x {x_t.shape}, h {h_prev.shape} vs n_in={p.n_in}, "
                         f"n_units={p.n_units}")
    z = sigmoid(x_t @ p.W_z.T + h_prev @ p.U_z.T + p.b_z)
    r = sigmoid(x_t @ p.W_r.T + h_prev @ p.U_r.T + p.b_r)
    h_cand = tanh(x_t @ p.W_h.T + (r * h_prev) @ p.U_h.T + p.b_h)
    h_new = (1.0 - z) * h_prev + z * h_cand
    return h_new.reshape(-1) if squeeze else h_new


def gru_sequence(xs, p: GruParams, h0=None) -> Tensor:
    """Run the GRU over ``xs`` shaped (B, T, n_in); returns the final state."""
    xs = as_tensor(xs)
    b, steps, _ = xs.shape
    h = as_tensor(np.zeros((b, p.n_units)) if h0 is None else h0)
    for t in range(steps):
        h = gru_step(xs[:, t, :], h, p)
    return h


class Gru(Module):
    def __init__(self, n_in: int, n_units: int, rng: np.random.Generator):
        self.params = GruParams.init(n_in, n_units, rng)

    def __call__(self, xs, h0=None):
        return gru_sequence(xs, self.params, h0)

    def parameters(self):
        return self.params.as_dict()
