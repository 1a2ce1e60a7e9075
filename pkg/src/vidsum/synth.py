"""Synthetic feature datasets with planted frame roles.

Every video mixes three kinds of frames:

* ``redundant`` - near-duplicates of one of the video's theme directions,
* ``key``       - spread around a theme (diverse but on-topic),
* ``background``- drawn from a vector pool shared by all videos.

Themes are mutually orthonormal, so distances between roles are under
analytic control. Frames come in homogeneous blocks ("shots") of
``shot_len`` frames whose order is shuffled per video.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateLabelsError, SpecError
from .featureio import (
    DatasetManifest,
    FeatureMatrix,
    ReferenceSet,
    VideoEntry,
    VideoRecord,
    make_splits,
    save_features,
    save_manifest,
    save_references,
)
from .summarize import ShotSegmentation, make_summary

LABELS = ("key", "redundant", "background")
# mean annotator importance per role
ROLE_IMPORTANCE = {"key": 0.8, "redundant": 0.3, "background": 0.15}


@dataclass(frozen=True)
class SynthSpec:
    n_videos: int = 8
    frames: int = 200
    dim: int = 32
    n_clusters: int = 3
    redundancy: int = 40  # redundant frames per cluster
    noise: float = 0.05  # norm of the perturbation of redundant/background frames
    key_fraction: float = 0.3
    key_spread: float = 0.6
    background_pool_size: int = 12
    shot_len: int = 10
    n_annotators: int = 5
    annotator_noise: float = 0.15
    n_aux: int = 0  # extra train-only videos
    seed: int = 0

    def validate(self):
        if not 0 < self.key_fraction < 1:
            raise SpecError("key_fraction must lie in (0, 1)")
        if self.noise < 0 or self.key_spread < 0:
            raise SpecError("noise and key_spread must be >= 0")
        if min(self.n_videos, self.frames, self.dim, self.n_clusters, self.shot_len) < 1:
            raise SpecError("counts must be positive")
        if self.redundancy < 0 or self.background_pool_size < 0 or self.n_aux < 0:
            raise SpecError("redundancy, background_pool_size and n_aux must be >= 0")
        themes = (self.n_videos + self.n_aux) * self.n_clusters + (self.background_pool_size > 0)
        if themes > self.dim:
            raise SpecError(f"dim={self.dim} cannot hold {themes} orthogonal theme directions")
        n_key, n_red, n_bg = self.role_counts()
        if n_bg < 0:
            raise SpecError(
                f"{n_key} key + {n_red} redundant frames exceed the {self.frames}-frame video"
            )

    def role_counts(self) -> tuple[int, int, int]:
        n_key = max(1, int(math.floor(self.key_fraction * self.frames + 0.5)))
        n_red = self.n_clusters * self.redundancy
        n_bg = self.frames - n_key - n_red
        if self.background_pool_size == 0 and n_bg > 0:
            n_red, n_bg = n_red + n_bg, 0
        return n_key, n_red, n_bg


@dataclass
class SynthData:
    spec: SynthSpec
    videos: list[VideoRecord]
    labels: dict[str, np.ndarray]


def _perturb(rng, center: np.ndarray, scale: float) -> np.ndarray:
    """center plus a tangent Gaussian of expected norm ~scale, renormalized."""
    g = rng.normal(size=center.shape) / math.sqrt(center.shape[-1])
    g -= (g @ center) * center
    v = center + scale * g
    return v / np.linalg.norm(v)


def _video(spec: SynthSpec, rng, themes: np.ndarray, pool: np.ndarray):
    n_key, n_red, n_bg = spec.role_counts()
    k = spec.n_clusters
    groups: dict[tuple[str, int], int] = {}
    for i in range(n_key):
        groups[("key", i % k)] = groups.get(("key", i % k), 0) + 1
    for i in range(n_red):
        groups[("redundant", i % k)] = groups.get(("redundant", i % k), 0) + 1
    if n_bg:
        groups[("background", 0)] = n_bg

    blocks = []
    for (role, c), count in sorted(groups.items()):
        for start in range(0, count, spec.shot_len):
            blocks.append((role, c, min(spec.shot_len, count - start)))
    order = rng.permutation(len(blocks))

    rows, labels, bounds = [], [], []
    t = 0
    for b in order:
        role, c, n = blocks[b]
        for _ in range(n):
            if role == "key":
                rows.append(_perturb(rng, themes[c], spec.key_spread))
            elif role == "redundant":
                rows.append(_perturb(rng, themes[c], spec.noise))
            else:
                rows.append(_perturb(rng, pool[rng.integers(len(pool))], spec.noise))
            labels.append(role)
        bounds.append((t, t + n))
        t += n
    feats = FeatureMatrix(np.array(rows, dtype=np.float32), normalized=True)
    return feats, ShotSegmentation(np.array(bounds)), np.array(labels)


def _references(spec: SynthSpec, rng, shots: ShotSegmentation, labels: np.ndarray) -> ReferenceSet:
    base = np.array([ROLE_IMPORTANCE[labels[s]] for s, _ in shots.intervals])
    vectors = []
    for _ in range(spec.n_annotators):
        per_shot = np.clip(base + rng.normal(0, spec.annotator_noise, len(base)), 0, 1)
        vectors.append(np.repeat(np.round(per_shot, 4), shots.lengths))
    vectors = np.array(vectors)
    summaries = np.array([make_summary(v, shots).frame_mask for v in vectors])
    return ReferenceSet(vectors, summaries)


def generate(spec: SynthSpec) -> SynthData:
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    total = spec.n_videos + spec.n_aux
    n_themes = total * spec.n_clusters + (spec.background_pool_size > 0)
    q, _ = np.linalg.qr(rng.normal(size=(spec.dim, n_themes)))
    basis = q.T
    pool = np.zeros((0, spec.dim))
    if spec.background_pool_size:
        bg = basis[-1]
        pool = np.array([_perturb(rng, bg, spec.key_spread) for _ in range(spec.background_pool_size)])

    videos, labels = [], {}
    for v in range(total):
        vid = f"video_{v:03d}" if v < spec.n_videos else f"aux_{v - spec.n_videos:03d}"
        themes = basis[v * spec.n_clusters:(v + 1) * spec.n_clusters]
        vrng = np.random.default_rng([spec.seed, v + 1])  # per-video stream
        feats, shots, lab = _video(spec, vrng, themes, pool)
        group = "eval" if v < spec.n_videos else "train-only"
        refs = _references(spec, vrng, shots, lab) if group == "eval" else None
        videos.append(VideoRecord(vid, feats, shots, refs, group))
        labels[vid] = lab
    return SynthData(spec, videos, labels)


def write_dataset(data: SynthData, out_dir) -> DatasetManifest:
    """Write VFEAT files, references, labels.json and manifest.json."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "references").mkdir(exist_ok=True)
    entries = []
    for rec in data.videos:
        fpath = out / "features" / f"{rec.id}.vfeat"
        save_features(fpath, rec.features)
        rpath = None
        if rec.references is not None:
            rpath = out / "references" / f"{rec.id}.json"
            save_references(rpath, rec.references)
        entries.append(VideoEntry(rec.id, fpath, tuple(map(tuple, rec.shots.to_list())), rpath, rec.group))
    eval_ids = [r.id for r in data.videos if r.group == "eval"]
    splits = make_splits(eval_ids, min(5, len(eval_ids)), data.spec.seed)
    manifest = DatasetManifest(entries, splits, "canonical", "mean", out)
    save_manifest(out / "manifest.json", manifest)
    (out / "labels.json").write_text(
        json.dumps({k: v.tolist() for k, v in data.labels.items()}, sort_keys=True) + "\n"
    )
    (out / "synth_spec.json").write_text(json.dumps(asdict(data.spec), sort_keys=True, indent=1) + "\n")
    return manifest


def load_labels(path) -> dict[str, np.ndarray]:
    return {k: np.array(v) for k, v in json.loads(Path(path).read_text()).items()}


def planted_auc(scores, labels, positive: str = "key", negative: str | None = None) -> float:
    """P(score of a positive frame > score of a negative frame), ties count 1/2.

    Negatives are all non-positive frames, or only frames labeled ``negative``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == positive]
    neg = scores[labels != positive] if negative is None else scores[labels == negative]
    if len(pos) == 0 or len(neg) == 0:
        raise DegenerateLabelsError("need at least one positive and one negative frame")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)
