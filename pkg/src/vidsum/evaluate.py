"""Summary F1, rank correlations and the cross-validation harness."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy.stats import kendalltau, rankdata

from .errors import DegenerateInputWarning, MissingReferenceError, ShapeError
from .featureio import (
    DatasetManifest,
    ReferenceSet,
    VideoRecord,
    expand_scores,
    l2_normalize_rows,
    length_indices,
    normalize_length,
)
from .metrics import DEFAULT_EPSILON, DEFAULT_RATIO, DEFAULT_SIGMA, METRIC_NAMES, importance_scores
from .refine import REFINED_METRICS, TrainConfig, refined_importance, train
from .summarize import DEFAULT_RATIO as SUMMARY_RATIO
from .summarize import DEFAULT_SHOT_LEN, default_shots, make_summary

__all__ = [
    "EvalResult",
    "PrecomputedScorer",
    "ReferenceSet",
    "RefinedScorer",
    "SettingResult",
    "TrainingFreeScorer",
    "correlations_protocol",
    "evaluate_video",
    "f1_multi",
    "f1_single",
    "kendall_tau",
    "run_setting",
    "spearman_rho",
]


def _degenerate(msg: str) -> float:
    warnings.warn(msg, DegenerateInputWarning, stacklevel=3)
    return 0.0


def f1_single(pred, ref) -> float:
    """F1 between a predicted and a reference frame mask.

    With A the reference frames and B the predicted ones, precision is
    |A&B|/|A| and recall |A&B|/|B|. F1 is symmetric in the two, so the
    role swap relative to the usual convention does not matter.
    """
    pred = np.asarray(pred).astype(bool)
    ref = np.asarray(ref).astype(bool)
    if pred.shape != ref.shape:
        raise ShapeError("prediction and reference masks differ in length")
    n_a, n_b = ref.sum(), pred.sum()
    if n_a == 0 or n_b == 0:
        return _degenerate("empty summary mask; F1 defined as 0")
    overlap = np.logical_and(pred, ref).sum()
    if overlap == 0:
        return 0.0
    precision = overlap / n_a
    recall = overlap / n_b
    return float(2 * precision * recall / (precision + recall))


def f1_multi(pred, refs: ReferenceSet | Sequence, agg: str = "mean") -> float:
    summaries = refs.summaries if isinstance(refs, ReferenceSet) else np.asarray(refs)
    if len(summaries) == 0:
        raise MissingReferenceError("no reference summaries to compare against")
    scores = [f1_single(pred, s) for s in summaries]
    if agg == "mean":
        return float(np.mean(scores))
    if agg == "max":
        return float(np.max(scores))
    raise ValueError(f"unknown aggregation {agg!r}")


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("rank correlation needs two 1-D vectors of equal length")
    if len(a) < 2:
        raise ShapeError("rank correlation needs at least two entries")
    return a, b


def kendall_tau(a, b) -> float:
    """Kendall's tau-b (tie-corrected)."""
    a, b = _check_pair(a, b)
    if np.all(a == a[0]) or np.all(b == b[0]):
        return _degenerate("all values tied; Kendall tau defined as 0")
    return float(kendalltau(a, b, variant="b").statistic)


def spearman_rho(a, b) -> float:
    """Pearson correlation of average-tie ranks."""
    a, b = _check_pair(a, b)
    ra = rankdata(a) - (len(a) + 1) / 2
    rb = rankdata(b) - (len(b) + 1) / 2
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if denom == 0:
        return _degenerate("zero rank variance; Spearman rho defined as 0")
    return float((ra * rb).sum() / denom)


def annotator_vectors(refs: ReferenceSet) -> np.ndarray:
    """Per-annotator score vectors; binary summaries stand in when absent."""
    if len(refs.score_vectors):
        return refs.score_vectors
    return refs.summaries.astype(np.float64)


def video_correlations(pred, refs: ReferenceSet) -> tuple[float, float]:
    vecs = annotator_vectors(refs)
    if len(vecs) == 0:
        raise MissingReferenceError("no annotator scores")
    taus = [kendall_tau(pred, v) for v in vecs]
    rhos = [spearman_rho(pred, v) for v in vecs]
    return float(np.mean(taus)), float(np.mean(rhos))


def correlations_protocol(
    preds: Mapping[str, np.ndarray], refs: Mapping[str, ReferenceSet]
) -> tuple[float, float]:
    """Average over annotators within each video, then over videos."""
    per_video = []
    for vid in sorted(preds):
        if vid not in refs or refs[vid] is None:
            raise MissingReferenceError(f"video {vid!r} has no annotations")
        per_video.append(video_correlations(preds[vid], refs[vid]))
    if not per_video:
        raise MissingReferenceError("no videos to evaluate")
    tau, rho = np.mean(per_video, axis=0)
    return float(tau), float(rho)


def reference_summaries(refs: ReferenceSet, shots, ratio: float = SUMMARY_RATIO) -> np.ndarray:
    """Binary references; built from annotator scores by knapsack when missing."""
    if len(refs.summaries):
        return refs.summaries
    return np.stack([make_summary(v, shots, ratio).frame_mask for v in refs.score_vectors])


def evaluate_video(
    record: VideoRecord,
    scores,
    ratio: float = SUMMARY_RATIO,
    aggregation: str = "mean",
    shot_len: int = DEFAULT_SHOT_LEN,
) -> dict:
    if record.references is None:
        raise MissingReferenceError(f"video {record.id!r} has no references")
    scores = np.asarray(scores, dtype=np.float64)
    shots = record.shots or default_shots(record.features.frames, shot_len)
    pred = make_summary(scores, shots, ratio).frame_mask
    refs = record.references
    f1 = f1_multi(pred, reference_summaries(refs, shots, ratio), aggregation)
    tau, rho = video_correlations(scores, refs)
    return {"video_id": record.id, "f1": f1, "tau": tau, "rho": rho}


# ---------------------------------------------------------------------------
# scorers

class Scorer(Protocol):
    def fit(self, videos: Sequence[VideoRecord]) -> "Scorer": ...

    def score(self, record: VideoRecord) -> np.ndarray: ...


@dataclass
class TrainingFreeScorer:
    metrics: Sequence[str] = METRIC_NAMES
    a: float = DEFAULT_RATIO
    epsilon: float = DEFAULT_EPSILON
    sigma: float = DEFAULT_SIGMA

    def fit(self, videos):
        return self

    def score(self, record: VideoRecord) -> np.ndarray:
        x = record.features if record.features.normalized else l2_normalize_rows(record.features)
        return importance_scores(x, self.metrics, self.a, self.epsilon, self.sigma)


@dataclass
class RefinedScorer:
    """Trains projector and filter on the fold's train videos, then scores."""

    config: TrainConfig | None = None
    metrics: Sequence[str] = REFINED_METRICS
    epsilon: float = DEFAULT_EPSILON
    sigma: float = DEFAULT_SIGMA
    scale_filter: bool = True
    params: tuple | None = field(default=None, repr=False)
    # keep ``params`` fixed (e.g. loaded from a checkpoint) instead of training per fold
    pretrained: bool = False

    def fit(self, videos):
        if self.pretrained:
            if self.params is None:
                raise ValueError("pretrained RefinedScorer needs params")
            return self
        cfg = self.config or TrainConfig()
        proj, filt, _ = train(list(videos), cfg)
        self.params = (proj, filt)
        return self

    def score(self, record: VideoRecord) -> np.ndarray:
        if self.params is None:
            raise RuntimeError("RefinedScorer.score called before fit")
        cfg = self.config or TrainConfig()
        x = record.features if record.features.normalized else l2_normalize_rows(record.features)
        proj, filt = self.params
        return refined_importance(
            x, proj, filt, self.metrics, cfg.a, self.epsilon, self.sigma, self.scale_filter
        )


@dataclass
class PrecomputedScorer:
    """Looks up scores computed elsewhere, keyed by video id."""

    scores: Mapping[str, np.ndarray]

    def fit(self, videos):
        return self

    def score(self, record: VideoRecord) -> np.ndarray:
        if record.id not in self.scores:
            raise MissingReferenceError(f"no precomputed scores for video {record.id!r}")
        s = np.asarray(self.scores[record.id], dtype=np.float64)
        if s.shape != (record.features.frames,):
            raise ShapeError(f"video {record.id}: {s.shape[0]} scores for {record.features.frames} frames")
        return s


# ---------------------------------------------------------------------------
# harness

@dataclass
class EvalResult:
    """Scores of one fold; headline numbers are means of ``per_video``."""

    fold: int
    f1: float
    kendall_tau: float
    spearman_rho: float
    per_video: list[dict]

    @classmethod
    def from_rows(cls, fold: int, rows: list[dict]) -> "EvalResult":
        return cls(
            fold,
            float(np.mean([r["f1"] for r in rows])),
            float(np.mean([r["tau"] for r in rows])),
            float(np.mean([r["rho"] for r in rows])),
            rows,
        )


@dataclass
class SettingResult:
    setting: str
    folds: list[EvalResult]

    @property
    def f1(self) -> float:
        return float(np.mean([f.f1 for f in self.folds]))

    @property
    def kendall_tau(self) -> float:
        return float(np.mean([f.kendall_tau for f in self.folds]))

    @property
    def spearman_rho(self) -> float:
        return float(np.mean([f.spearman_rho for f in self.folds]))

    def rows(self) -> list[dict]:
        out = [
            {"setting": self.setting, "fold": str(f.fold), "videos": len(f.per_video),
             "f1": f.f1, "tau": f.kendall_tau, "rho": f.spearman_rho}
            for f in self.folds
        ]
        out.append({"setting": self.setting, "fold": "mean", "videos": sum(len(f.per_video) for f in self.folds),
                    "f1": self.f1, "tau": self.kendall_tau, "rho": self.spearman_rho})
        return out


def _score_record(scorer, record: VideoRecord, eval_length: int | None, seed: int) -> np.ndarray:
    if eval_length is None or eval_length == record.features.frames:
        return scorer.score(record)
    idx = length_indices(record.features.frames, eval_length, seed)
    short = VideoRecord(record.id, normalize_length(record.features, eval_length, seed), group=record.group)
    return expand_scores(scorer.score(short), idx, record.features.frames)


def run_setting(
    manifest: DatasetManifest,
    scorer,
    setting: str | None = None,
    ratio: float = SUMMARY_RATIO,
    shot_len: int = DEFAULT_SHOT_LEN,
    aggregation: str | None = None,
    eval_length: int | None = None,
    seed: int = 0,
) -> SettingResult:
    """Evaluate ``scorer`` under the canonical, augmented or transfer protocol."""
    if setting is not None and setting != manifest.setting:
        manifest = DatasetManifest(
            manifest.videos, manifest.splits, setting, manifest.aggregation, manifest.root
        )
    agg = aggregation or manifest.aggregation
    cache: dict[str, VideoRecord] = {}

    def load(vid):
        if vid not in cache:
            cache[vid] = manifest.load_video(vid)
        return cache[vid]

    folds = []
    for k, (train_ids, test_ids) in enumerate(manifest.folds()):
        scorer.fit([load(v) for v in train_ids])
        rows = []
        for vid in test_ids:
            rec = load(vid)
            scores = _score_record(scorer, rec, eval_length, seed)
            row = evaluate_video(rec, scores, ratio, agg, shot_len)
            row["fold"] = k
            rows.append(row)
        folds.append(EvalResult.from_rows(k, rows))
    return SettingResult(manifest.setting, folds)


RESULT_COLUMNS = ("setting", "fold", "videos", "f1", "tau", "rho")


def write_results_csv(path, result: SettingResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        for row in result.rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_per_video_csv(path, result: SettingResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("fold", "video_id", "f1", "tau", "rho"))
        w.writeheader()
        for f in result.folds:
            for r in f.per_video:
                w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in w.fieldnames})


def format_table(result: SettingResult) -> str:
    lines = [f"{'setting':<10} {'fold':>5} {'videos':>6} {'F1':>7} {'tau':>8} {'rho':>8}"]
    for r in result.rows():
        lines.append(
            f"{r['setting']:<10} {r['fold']:>5} {r['videos']:>6} {100 * r['f1']:7.2f} {r['tau']:8.4f} {r['rho']:8.4f}"
        )
    return "\n".join(lines)
