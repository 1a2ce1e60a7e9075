"""Projector and uniqueness-filter networks with hand-written backprop.

Projector:  h0 = x W_in + b_in
            h2 = h0 + tanh(h0 W1 + b1) W2 + b2
            z  = h2 / ||h2||
Filter:     r  = sigmoid(tanh(z Wf1 + bf1) Wf2 + bf2)

Parameters are stored as float32; forward and backward passes run in
float64 so finite-difference checks are meaningful.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import DataError, ShapeError
from ..featureio import FeatureMatrix, as_array


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)


class _Params:
    """Shared helpers for parameter dataclasses."""

    def named(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def astype(self, dtype):
        return type(self)(**{k: np.array(v, dtype=dtype) for k, v in self.named().items()})

    def copy(self):
        return self.astype(next(iter(self.named().values())).dtype)

    def n_params(self) -> int:
        return sum(v.size for v in self.named().values())


@dataclass(eq=False)
class ProjectorParams(_Params):
    w_in: np.ndarray
    b_in: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[0]

    @property
    def proj_dim(self) -> int:
        return self.w_in.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def init(cls, input_dim: int, proj_dim: int = 128, hidden_dim: int = 512, rng=None):
        rng = np.random.default_rng(rng)
        return cls(
            w_in=glorot(rng, input_dim, proj_dim),
            b_in=np.zeros(proj_dim, np.float32),
            w1=glorot(rng, proj_dim, hidden_dim),
            b1=np.zeros(hidden_dim, np.float32),
            w2=glorot(rng, hidden_dim, proj_dim),
            b2=np.zeros(proj_dim, np.float32),
        )


@dataclass(eq=False)
class FilterParams(_Params):
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int = 128, rng=None):
        rng = np.random.default_rng(rng)
        return cls(
            w1=glorot(rng, input_dim, hidden_dim),
            b1=np.zeros(hidden_dim, np.float32),
            w2=glorot(rng, hidden_dim, 1),
            b2=np.zeros(1, np.float32),
        )


# ---------------------------------------------------------------------------
# projector

def projector_forward(p: ProjectorParams, x: np.ndarray):
    """Returns ``(z, cache)``; ``cache`` feeds :func:`projector_backward`."""
    x = as_array(x)
    if x.shape[1] != p.input_dim:
        raise ShapeError(f"features have dim {x.shape[1]}, projector expects {p.input_dim}")
    w_in, b_in, w1, b1, w2, b2 = (np.asarray(v, np.float64) for v in p.named().values())
    h0 = x @ w_in + b_in
    a = np.tanh(h0 @ w1 + b1)
    h2 = h0 + a @ w2 + b2
    norm = np.linalg.norm(h2, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise DataError("projector produced a zero vector")
    z = h2 / norm
    return z, (x, h0, a, z, norm)


def projector_backward(p: ProjectorParams, cache, dz: np.ndarray) -> dict[str, np.ndarray]:
    x, h0, a, z, norm = cache
    w1 = np.asarray(p.w1, np.float64)
    w2 = np.asarray(p.w2, np.float64)
    dh2 = (dz - z * np.sum(z * dz, axis=1, keepdims=True)) / norm
    dpre = (dh2 @ w2.T) * (1.0 - a * a)
    dh0 = dh2 + dpre @ w1.T
    return {
        "w_in": x.T @ dh0,
        "b_in": dh0.sum(0),
        "w1": h0.T @ dpre,
        "b1": dpre.sum(0),
        "w2": a.T @ dh2,
        "b2": dh2.sum(0),
    }


def project(p: ProjectorParams, m) -> FeatureMatrix:
    z, _ = projector_forward(p, m)
    return FeatureMatrix(z.astype(np.float32), normalized=True)


# ---------------------------------------------------------------------------
# filter

def filter_forward(f: FilterParams, z: np.ndarray):
    """Returns pre-sigmoid logits of shape (T,) and the backward cache."""
    z = as_array(z)
    w1, b1, w2, b2 = (np.asarray(v, np.float64) for v in f.named().values())
    h = np.tanh(z @ w1 + b1)
    q = (h @ w2 + b2)[:, 0]
    return q, (z, h)


def filter_backward(f: FilterParams, cache, dq: np.ndarray) -> dict[str, np.ndarray]:
    z, h = cache
    w2 = np.asarray(f.w2, np.float64)
    dq = dq[:, None]
    dpre = (dq @ w2.T) * (1.0 - h * h)
    return {"w1": z.T @ dpre, "b1": dpre.sum(0), "w2": h.T @ dq, "b2": dq.sum(0)}


def filter_scores(f: FilterParams, z) -> np.ndarray:
    """Per-frame uniqueness estimates in (0, 1)."""
    q, _ = filter_forward(f, z)
    return expit(q)
