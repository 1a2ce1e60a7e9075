"""Training-free frame importance metrics on unit-norm features.

All functions take a FeatureMatrix or a plain (T, D) array and compute in
float64. Score series are plain 1-D numpy arrays.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ShapeError, TooShortError
from .featureio import as_array

DEFAULT_RATIO = 0.1
DEFAULT_EPSILON = 0.05
DEFAULT_SIGMA = 2.0


@dataclass(frozen=True, eq=False)
class NeighborSets:
    """Top-K cosine neighbors per frame, anchor excluded.

    ``indices[t]`` lists the neighbors of frame t, most similar first.
    """

    indices: np.ndarray
    ratio: float

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def __len__(self):
        return self.indices.shape[0]


def neighbor_count(frames: int, ratio: float) -> int:
    """K = a*T rounded half-up, at least 1 and at most T-1."""
    k = max(1, int(math.floor(ratio * frames + 0.5)))
    return min(k, frames - 1)


def cosine_neighbors(m, a: float = DEFAULT_RATIO) -> NeighborSets:
    x = as_array(m)
    if not 0 < a <= 1:
        raise ValueError("neighbor ratio a must be in (0, 1]")
    frames = len(x)
    if frames < 2:
        raise TooShortError("neighbor retrieval needs at least 2 frames")
    k = neighbor_count(frames, a)
    sim = x @ x.T
    np.fill_diagonal(sim, -np.inf)
    # stable sort on -sim: equal similarities keep ascending frame order
    order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    order.setflags(write=False)
    return NeighborSets(order, a)


def local_dissimilarity(m, neighbors: NeighborSets) -> np.ndarray:
    """Mean squared distance from each frame to its neighbor set."""
    x = as_array(m)
    idx = neighbors.indices
    if idx.shape[0] != len(x):
        raise ShapeError(f"neighbor sets for {idx.shape[0]} frames, features have {len(x)}")
    diff = x[:, None, :] - x[idx]
    return np.einsum("tkd,tkd->tk", diff, diff).mean(axis=1)


def sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances via the Gram identity, clipped at 0."""
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def global_consistency(m) -> np.ndarray:
    """log of the mean Gaussian potential exp(-2 d^2) to every other frame."""
    x = as_array(m)
    frames = len(x)
    if frames < 2:
        raise TooShortError("global consistency needs at least 2 frames")
    logits = -2.0 * sq_distances(x, x)
    np.fill_diagonal(logits, -np.inf)
    return logsumexp(logits, axis=1) - math.log(frames - 1)


def minmax_scale(s) -> np.ndarray:
    """Affine map onto [0, 1]; a constant series maps to 0.5 everywhere."""
    s = np.asarray(s, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full_like(s, 0.5)
    return (s - lo) / (hi - lo)


def combine_scores(parts: Sequence[np.ndarray], epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    if not len(parts):
        raise ValueError("need at least one score series to combine")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    arrays = [np.asarray(p, dtype=np.float64) for p in parts]
    n = len(arrays[0])
    if any(a.shape != (n,) for a in arrays):
        raise ShapeError("score series differ in length")
    return np.prod(arrays, axis=0) + epsilon


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(s, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Convolve with a normalized Gaussian of radius ceil(3*sigma).

    Half-sample symmetric padding makes the operator symmetric, so total
    mass is preserved at the borders.
    """
    s = np.asarray(s, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0 or len(s) < 2:
        return s.copy()
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    padded = np.pad(s, r, mode="symmetric")
    return np.convolve(padded, k, mode="valid")


METRIC_NAMES = ("align", "uniform")


def importance_scores(
    m,
    metrics: Sequence[str] = METRIC_NAMES,
    a: float = DEFAULT_RATIO,
    epsilon: float = DEFAULT_EPSILON,
    sigma: float = DEFAULT_SIGMA,
    neighbors: NeighborSets | None = None,
) -> np.ndarray:
    """Training-free importance: product of scaled metrics plus epsilon, smoothed."""
    x = as_array(m)
    parts = []
    for name in metrics:
        if name == "align":
            n = neighbors if neighbors is not None else cosine_neighbors(x, a)
            parts.append(minmax_scale(local_dissimilarity(x, n)))
        elif name == "uniform":
            parts.append(minmax_scale(global_consistency(x)))
        else:
            raise ValueError(f"unknown training-free metric {name!r}")
    return gaussian_smooth(combine_scores(parts, epsilon), sigma)


def save_scores_json(path, scores: dict[str, np.ndarray]) -> None:
    out = {vid: np.asarray(v, dtype=np.float64).tolist() for vid, v in scores.items()}
    Path(path).write_text(json.dumps(out, sort_keys=True) + "\n")


def load_scores_json(path) -> dict[str, np.ndarray]:
    raw = json.loads(Path(path).read_text())
    return {vid: np.asarray(v, dtype=np.float64) for vid, v in raw.items()}


def save_scores_csv(path, scores) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "score"])
        for i, v in enumerate(np.asarray(scores, dtype=np.float64)):
            w.writerow([i, repr(float(v))])
