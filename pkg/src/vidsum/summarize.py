"""Shot-level summary selection under a frame budget (0/1 knapsack)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

DEFAULT_RATIO = 0.15
DEFAULT_SHOT_LEN = 30


@dataclass(frozen=True, eq=False)
class ShotSegmentation:
    """Half-open frame intervals ``[start, end)``, contiguous from frame 0."""

    intervals: np.ndarray

    def __post_init__(self):
        iv = np.asarray(self.intervals, dtype=np.int64).reshape(-1, 2)
        if len(iv) == 0:
            raise ShapeError("shot segmentation is empty")
        if iv[0, 0] != 0:
            raise ShapeError("first shot must start at frame 0")
        if np.any(iv[:, 1] <= iv[:, 0]):
            raise ShapeError("every shot must contain at least one frame")
        if np.any(iv[1:, 0] != iv[:-1, 1]):
            raise ShapeError("shots must be sorted, disjoint and gap-free")
        iv.setflags(write=False)
        object.__setattr__(self, "intervals", iv)

    @property
    def frames(self) -> int:
        return int(self.intervals[-1, 1])

    @property
    def lengths(self) -> np.ndarray:
        return self.intervals[:, 1] - self.intervals[:, 0]

    def __len__(self):
        return len(self.intervals)

    def to_list(self) -> list[list[int]]:
        return self.intervals.tolist()


@dataclass(frozen=True, eq=False)
class SummarySelection:
    selected: np.ndarray  # bool per shot
    frame_mask: np.ndarray  # 0/1 per frame
    budget: int
    value: float = 0.0

    @property
    def selected_shots(self) -> list[int]:
        return np.flatnonzero(self.selected).tolist()


def default_shots(frames: int, shot_len: int = DEFAULT_SHOT_LEN) -> ShotSegmentation:
    if shot_len < 1:
        raise ValueError("shot_len must be >= 1")
    starts = np.arange(0, frames, shot_len)
    ends = np.minimum(starts + shot_len, frames)
    return ShotSegmentation(np.stack([starts, ends], axis=1))


def shot_scores(scores, shots: ShotSegmentation) -> np.ndarray:
    """Mean frame score of every shot."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != shots.frames:
        raise ShapeError(f"{len(scores)} scores for shots covering {shots.frames} frames")
    return np.add.reduceat(scores, shots.intervals[:, 0]) / shots.lengths


def knapsack_select(values, lengths, budget: int) -> SummarySelection:
    """Exact 0/1 knapsack by dynamic programming over the frame budget.

    Among optimal subsets the backtrace leaves an item out whenever an
    equally good solution without it exists, scanning from the last item
    down. The result is the optimal subset that favors low shot indices.

    ``frame_mask`` of the returned selection is empty; see ``make_summary``.
    """
    values = np.asarray(values, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if values.shape != lengths.shape or values.ndim != 1:
        raise ShapeError("values and lengths must be 1-D and equal length")
    if np.any(lengths < 1):
        raise ValueError("shot lengths must be >= 1")
    budget = max(int(budget), 0)
    n = len(values)
    dp = np.zeros(budget + 1)
    take = np.zeros((n, budget + 1), dtype=bool)
    for i in range(n):
        w, v = lengths[i], values[i]
        if w > budget:
            continue
        cand = dp[: budget + 1 - w] + v
        better = cand > dp[w:]
        take[i, w:] = better
        dp[w:] = np.where(better, cand, dp[w:])
    selected = np.zeros(n, dtype=bool)
    cap = budget
    for i in range(n - 1, -1, -1):
        if take[i, cap]:
            selected[i] = True
            cap -= lengths[i]
    return SummarySelection(
        selected=selected,
        frame_mask=np.zeros(0, dtype=np.int8),
        budget=budget,
        value=float(values[selected].sum()),
    )


def budget_for(frames: int, ratio: float) -> int:
    # tolerance keeps e.g. 0.29 * 100 from flooring to 28
    return int(math.floor(ratio * frames + 1e-9))


def make_summary(scores, shots: ShotSegmentation, ratio: float = DEFAULT_RATIO) -> SummarySelection:
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    frames = shots.frames
    budget = budget_for(frames, ratio)
    sel = knapsack_select(shot_scores(scores, shots), shots.lengths, budget)
    mask = np.zeros(frames, dtype=np.int8)
    for (start, end) in shots.intervals[sel.selected]:
        mask[start:end] = 1
    return SummarySelection(sel.selected, mask, budget, sel.value)


def summary_to_json(sel: SummarySelection) -> dict:
    return {"selected_shots": sel.selected_shots, "frame_mask": sel.frame_mask.astype(int).tolist()}
