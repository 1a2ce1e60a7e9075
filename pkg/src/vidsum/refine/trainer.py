"""Contrastive refinement training loop (Adam, seeded mini-batches)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import EmptyBatchError, TrainingDivergedError
from ..featureio import DatasetManifest, FeatureMatrix, VideoRecord, l2_normalize_rows, normalize_length
from ..metrics import NeighborSets, cosine_neighbors
from .losses import full_loss
from .networks import FilterParams, ProjectorParams

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lambda1: float = 0.5
    lambda2: float = 0.1
    lambda3: float = 0.1
    a: float = 0.1
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 8
    epochs: int = 40
    seed: int = 0
    proj_dim: int = 128
    hidden_dim: int = 512
    filter_hidden: int = 128
    segment_len: int = 5
    # None disables length normalization of training videos
    length: int | None = 200


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)


class Adam:
    """Adam with coupled L2 weight decay (gradient += wd * param).

    Moments and updates are float64; parameters keep their storage dtype.
    """

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            p64 = p.astype(np.float64)
            g = grads[k] + self.weight_decay * p64
            if k not in self.m:
                self.m[k] = np.zeros_like(p64)
                self.v[k] = np.zeros_like(p64)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            update = self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            p[...] = (p64 - update).astype(p.dtype)


def prepare_videos(videos, config: TrainConfig) -> list[FeatureMatrix]:
    """Unit-normalize and (optionally) length-normalize training videos."""
    if isinstance(videos, DatasetManifest):
        videos = [videos.load_video(i).features for i in videos.ids()]
    out = []
    for i, v in enumerate(videos):
        if isinstance(v, VideoRecord):
            v = v.features
        if not isinstance(v, FeatureMatrix) or not v.normalized:
            v = l2_normalize_rows(v)
        if config.length is not None:
            v = normalize_length(v, config.length, seed=config.seed + i)
        out.append(v)
    return out


def make_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled batches; a trailing singleton joins the previous batch."""
    order = rng.permutation(n)
    size = max(2, batch_size)
    batches = [order[i:i + size] for i in range(0, n, size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def init_params(input_dim: int, config: TrainConfig) -> tuple[ProjectorParams, FilterParams]:
    rng = np.random.default_rng(config.seed)
    proj = ProjectorParams.init(input_dim, config.proj_dim, config.hidden_dim, rng)
    filt = FilterParams.init(config.proj_dim, config.filter_hidden, rng)
    return proj, filt


def train(
    videos: DatasetManifest | Sequence,
    config: TrainConfig | None = None,
    max_steps: int | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> tuple[ProjectorParams, FilterParams, TrainHistory]:
    """Fit projector and filter; deterministic for a given ``config.seed``.

    ``max_steps`` stops early after that many optimizer updates.
    """
    config = config or TrainConfig()
    feats = prepare_videos(videos, config)
    if len(feats) < 2:
        raise EmptyBatchError("training needs at least two videos")
    xs = [f.data for f in feats]
    neighbors: list[NeighborSets] = [cosine_neighbors(x, config.a) for x in xs]
    proj, filt = init_params(xs[0].shape[1], config)
    history = TrainHistory()
    opt = Adam(config.lr, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    step = 0

    for epoch in range(config.epochs):
        losses = []
        for batch in make_batches(len(xs), config.batch_size, shuffle_rng):
            res = full_loss(
                [xs[i] for i in batch], proj, filt, config, neighbors=[neighbors[i] for i in batch]
            )
            if not np.isfinite(res.loss):
                raise TrainingDivergedError(f"loss became {res.loss} at epoch {epoch}, step {step}")
            params = {"p." + k: v for k, v in proj.named().items()}
            params.update({"f." + k: v for k, v in filt.named().items()})
            grads = {"p." + k: v for k, v in res.projector_grads.items()}
            grads.update({"f." + k: v for k, v in res.filter_grads.items()})
            opt.step(params, grads)
            losses.append(res.loss)
            history.step_loss.append(res.loss)
            step += 1
            if max_steps is not None and step >= max_steps:
                break
        history.epoch_loss.append(float(np.mean(losses)))
        log.info("epoch %d loss %.6f", epoch + 1, history.epoch_loss[-1])
        if callback is not None:
            callback(epoch, history.epoch_loss[-1])
        if max_steps is not None and step >= max_steps:
            break
    return proj.copy(), filt.copy(), history
