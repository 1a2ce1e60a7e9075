"""Contrastive refinement: learnable projector, uniqueness loss and filter."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..featureio import as_array
from ..metrics import (
    DEFAULT_EPSILON,
    DEFAULT_SIGMA,
    NeighborSets,
    combine_scores,
    cosine_neighbors,
    gaussian_smooth,
    global_consistency,
    local_dissimilarity,
    minmax_scale,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import (
    LossResult,
    filter_loss,
    filter_targets,
    full_loss,
    refined_losses,
    segment_features,
    uniqueness_loss,
)
from .networks import (
    FilterParams,
    ProjectorParams,
    filter_scores,
    project,
    projector_forward,
)
from .trainer import Adam, TrainConfig, TrainHistory, init_params, train

REFINED_METRICS = ("align", "uniform", "filter")


def refined_importance(
    x,
    projector: ProjectorParams,
    filt: FilterParams | None = None,
    metrics: Sequence[str] = REFINED_METRICS,
    a: float = 0.1,
    epsilon: float = DEFAULT_EPSILON,
    sigma: float = DEFAULT_SIGMA,
    scale_filter: bool = True,
    neighbors: NeighborSets | None = None,
) -> np.ndarray:
    """Importance from projected features: product of scaled parts + epsilon, smoothed.

    Neighbor sets are retrieved on the frozen input features ``x``.
    """
    x = as_array(x)
    z, _ = projector_forward(projector, x)
    parts = []
    for name in metrics:
        if name == "align":
            n = neighbors if neighbors is not None else cosine_neighbors(x, a)
            parts.append(minmax_scale(local_dissimilarity(z, n)))
        elif name == "uniform":
            parts.append(minmax_scale(global_consistency(z)))
        elif name == "filter":
            if filt is None:
                raise ValueError("the 'filter' metric needs trained filter parameters")
            r = filter_scores(filt, z)
            parts.append(minmax_scale(r) if scale_filter else r)
        else:
            raise ValueError(f"unknown refined metric {name!r}")
    return gaussian_smooth(combine_scores(parts, epsilon), sigma)


__all__ = [
    "Adam",
    "FilterParams",
    "LossResult",
    "ProjectorParams",
    "REFINED_METRICS",
    "TrainConfig",
    "TrainHistory",
    "filter_loss",
    "filter_scores",
    "filter_targets",
    "full_loss",
    "init_params",
    "load_checkpoint",
    "project",
    "refined_importance",
    "refined_losses",
    "save_checkpoint",
    "segment_features",
    "train",
    "uniqueness_loss",
]
