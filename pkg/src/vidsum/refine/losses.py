"""Per-frame refinement losses and the joint objective with exact gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, logsumexp

from ..errors import DomainError, EmptyBatchError, ShapeError
from ..featureio import VideoRecord, as_array
from ..metrics import (
    NeighborSets,
    cosine_neighbors,
    global_consistency,
    local_dissimilarity,
    minmax_scale,
    sq_distances,
)
from .networks import (
    FilterParams,
    ProjectorParams,
    filter_backward,
    filter_forward,
    projector_backward,
    projector_forward,
)


def segment_features(z, m: int = 5) -> np.ndarray:
    """L2-normalized means of consecutive length-m blocks; trailing frames dropped."""
    z = as_array(z)
    n = len(z) // m
    if n < 1:
        raise ShapeError(f"{len(z)} frames cannot form a segment of length {m}")
    u = z[: n * m].reshape(n, m, -1).mean(axis=1)
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def refined_losses(z, neighbors: NeighborSets) -> tuple[np.ndarray, np.ndarray]:
    """Alignment and uniformity of projected frames.

    ``neighbors`` must come from the frozen input features, never from z.
    """
    z = as_array(z)
    if len(neighbors) != len(z):
        raise ShapeError(f"neighbor sets for {len(neighbors)} frames, z has {len(z)}")
    return local_dissimilarity(z, neighbors), global_consistency(z)


def uniqueness_loss(z, others: Sequence[np.ndarray]) -> np.ndarray:
    """log mean Gaussian potential between each frame and foreign segments."""
    z = as_array(z)
    segs = [as_array(s).reshape(-1, z.shape[1]) for s in others]
    pool = np.concatenate(segs) if segs else np.zeros((0, z.shape[1]))
    if len(pool) == 0:
        raise EmptyBatchError("uniqueness loss needs segments from at least one other video")
    logits = -2.0 * sq_distances(z, pool)
    return logsumexp(logits, axis=1) - math.log(len(pool))


def filter_targets(u) -> np.ndarray:
    """1 - minmax(u); plain arrays carry no gradient, so this is a constant."""
    return 1.0 - minmax_scale(u)


def filter_loss(y, r) -> float:
    """Mean binary cross-entropy of predictions r against soft targets y."""
    y = np.asarray(y, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if y.shape != r.shape:
        raise ShapeError("targets and predictions differ in shape")
    if np.any((r <= 0) | (r >= 1)):
        raise DomainError("filter outputs must lie strictly inside (0, 1)")
    if np.any((y < 0) | (y > 1)):
        raise DomainError("filter targets must lie in [0, 1]")
    return float(np.mean(-(y * np.log(r) + (1 - y) * np.log1p(-r))))


@dataclass
class LossResult:
    loss: float
    projector_grads: dict[str, np.ndarray]
    filter_grads: dict[str, np.ndarray]
    terms: dict[str, float] = field(default_factory=dict)
    targets: list[np.ndarray] = field(default_factory=list)
    projected: list[np.ndarray] = field(default_factory=list)


def _frames(v) -> np.ndarray:
    if isinstance(v, VideoRecord):
        v = v.features
    return as_array(v)


def full_loss(
    batch: Sequence,
    projector: ProjectorParams,
    filt: FilterParams,
    config,
    neighbors: Sequence[NeighborSets] | None = None,
    targets: Sequence[np.ndarray] | None = None,
    filter_inputs: Sequence[np.ndarray] | None = None,
) -> LossResult:
    """Mean per-frame joint loss over a batch of videos, with gradients.

    loss = mean_t [align + l1*uniform + l2*unique + l3*filter]

    Filter targets and filter inputs are stop-gradient values. By default
    they come from the current forward pass. Passing ``targets`` /
    ``filter_inputs`` pins them, which finite-difference checks need to
    reproduce the stop-gradient semantics.
    """
    xs = [_frames(v) for v in batch]
    if len(xs) < 2:
        raise EmptyBatchError("joint loss needs at least two videos in a batch")
    if neighbors is None:
        neighbors = [cosine_neighbors(x, config.a) for x in xs]
    lam1, lam2, lam3 = config.lambda1, config.lambda2, config.lambda3
    m = config.segment_len
    total_frames = sum(len(x) for x in xs)

    fwd = [projector_forward(projector, x) for x in xs]
    zs = [z for z, _ in fwd]
    seg_u = []
    for z in zs:
        n = len(z) // m
        if n < 1:
            raise ShapeError(f"video with {len(z)} frames is shorter than segment length {m}")
        seg_u.append(z[: n * m].reshape(n, m, -1).mean(axis=1))
    seg_norm = [np.linalg.norm(u, axis=1, keepdims=True) for u in seg_u]
    seg_s = [u / nu for u, nu in zip(seg_u, seg_norm)]

    dz = [np.zeros_like(z) for z in zs]
    dseg = [np.zeros_like(s) for s in seg_s]
    fgrads = {k: np.zeros(v.shape) for k, v in filt.named().items()}
    sums = {"align": 0.0, "uniform": 0.0, "unique": 0.0, "filter": 0.0}
    out_targets = []

    for k, z in enumerate(zs):
        frames = len(z)
        # local alignment over frozen neighbor sets
        idx = neighbors[k].indices
        if idx.shape[0] != frames:
            raise ShapeError("neighbor sets do not match video length")
        diff = z[:, None, :] - z[idx]
        la = np.einsum("tkd,tkd->tk", diff, diff).mean(axis=1)
        g = (2.0 / (total_frames * idx.shape[1])) * diff
        dz[k] += g.sum(axis=1)
        np.add.at(dz[k], idx, -g)

        # global uniformity within the video
        logits = -2.0 * sq_distances(z, z)
        np.fill_diagonal(logits, -np.inf)
        lse = logsumexp(logits, axis=1)
        lu = lse - math.log(frames - 1)
        p = np.exp(logits - lse[:, None])
        c = lam1 / total_frames
        dz[k] += c * (-4.0 * (z - p @ z) + 4.0 * (p.T @ z - p.sum(0)[:, None] * z))

        # uniqueness against segments of the other videos
        owners = [j for j in range(len(zs)) if j != k]
        pool = np.concatenate([seg_s[j] for j in owners])
        logits = -2.0 * sq_distances(z, pool)
        lse = logsumexp(logits, axis=1)
        lq = lse - math.log(len(pool))
        q = np.exp(logits - lse[:, None])
        c = lam2 / total_frames
        dz[k] += c * (-4.0 * (z - q @ pool))
        dpool = c * 4.0 * (q.T @ z - q.sum(0)[:, None] * pool)
        start = 0
        for j in owners:
            n = len(seg_s[j])
            dseg[j] += dpool[start:start + n]
            start += n

        # uniqueness filter on stop-gradient inputs
        y = filter_targets(lq) if targets is None else np.asarray(targets[k], np.float64)
        out_targets.append(y)
        zin = z if filter_inputs is None else as_array(filter_inputs[k])
        logit, fcache = filter_forward(filt, zin)
        bce = np.logaddexp(0.0, logit) - y * logit
        for name, gr in filter_backward(filt, fcache, (lam3 / total_frames) * (expit(logit) - y)).items():
            fgrads[name] += gr

        sums["align"] += la.sum()
        sums["uniform"] += lu.sum()
        sums["unique"] += lq.sum()
        sums["filter"] += bce.sum()

    # segment pooling backward: s = u/|u|, u = mean of m rows
    for j in range(len(zs)):
        s, nu, ds = seg_s[j], seg_norm[j], dseg[j]
        du = (ds - s * np.sum(s * ds, axis=1, keepdims=True)) / nu
        n = len(s)
        dz[j][: n * m] += np.repeat(du, m, axis=0) / m

    pgrads = {k: np.zeros(v.shape) for k, v in projector.named().items()}
    for (_, cache), g in zip(fwd, dz):
        for name, gr in projector_backward(projector, cache, g).items():
            pgrads[name] += gr

    terms = {k: v / total_frames for k, v in sums.items()}
    loss = terms["align"] + lam1 * terms["uniform"] + lam2 * terms["unique"] + lam3 * terms["filter"]
    return LossResult(float(loss), pgrads, fgrads, terms, out_targets, zs)
