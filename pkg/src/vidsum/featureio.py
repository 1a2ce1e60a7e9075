"""On-disk dataset model: VFEAT feature files, reference annotations, manifests.

VFEAT layout (little-endian)::

    offset  size  field
    0       4     magic b"VF01"
    4       4     u32 frame count T (>= 1)
    8       4     u32 feature dim D (>= 1)
    12      1     u8 normalized flag (0 or 1)
    13      3     reserved, zero
    16      4*T*D float32 payload, row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, DegenerateFeatureError, FormatError, ManifestError
from .summarize import ShotSegmentation

MAGIC = b"VF01"
_HEADER = struct.Struct("<4sIIB3s")
NORM_TOL = 1e-5

SETTINGS = ("canonical", "augmented", "transfer")
GROUPS = ("eval", "train-only")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """T x D float32 frame features, optionally with unit-norm rows.

    The array is stored read-only; operations return new matrices.
    """

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if data.ndim != 2:
            raise FormatError(f"feature matrix must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise FormatError(f"feature matrix must be non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("feature matrix contains NaN or Inf entries")
        if self.normalized:
            norms = np.linalg.norm(data.astype(np.float64), axis=1)
            worst = float(np.max(np.abs(norms - 1.0)))
            if worst > NORM_TOL:
                raise DataError(f"rows flagged normalized deviate from unit norm by {worst:.3g}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "normalized", bool(self.normalized))

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.frames


def as_array(m) -> np.ndarray:
    """float64 view of a FeatureMatrix or array-like, for numerics."""
    if isinstance(m, FeatureMatrix):
        m = m.data
    return np.asarray(m, dtype=np.float64)


# ---------------------------------------------------------------------------
# VFEAT

def encode_features(m: FeatureMatrix) -> bytes:
    header = _HEADER.pack(MAGIC, m.frames, m.dim, int(m.normalized), b"\0\0\0")
    return header + m.data.astype("<f4").tobytes(order="C")


def decode_features(buf: bytes) -> FeatureMatrix:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated VFEAT header")
    magic, frames, dim, flag, reserved = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if frames == 0 or dim == 0:
        raise FormatError(f"empty feature matrix (T={frames}, D={dim})")
    if flag not in (0, 1) or reserved != b"\0\0\0":
        raise FormatError("corrupt VFEAT header flags")
    expected = _HEADER.size + 4 * frames * dim
    if len(buf) != expected:
        raise FormatError(f"payload size {len(buf) - _HEADER.size} does not match T*D*4={4 * frames * dim}")
    payload = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(frames, dim)
    if np.isnan(payload).any():
        raise DataError("feature payload contains NaN")
    return FeatureMatrix(payload, normalized=bool(flag))


def save_features(path, m: FeatureMatrix) -> None:
    Path(path).write_bytes(encode_features(m))


def load_features(path) -> FeatureMatrix:
    path = Path(path)
    try:
        return decode_features(path.read_bytes())
    except (FormatError, DataError) as exc:
        raise type(exc)(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# normalization

def l2_normalize_rows(m) -> FeatureMatrix:
    x = as_array(m)
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise DegenerateFeatureError(f"zero-norm feature row(s) at {bad[:5].tolist()}")
    return FeatureMatrix((x / norms[:, None]).astype(np.float32), normalized=True)


def length_indices(frames: int, target: int, seed: int = 0) -> np.ndarray:
    """Source row for each output row when resampling ``frames`` to ``target``.

    Longer inputs keep a sorted random subset; shorter ones use
    nearest-neighbor index ``round(i * (T-1) / (target-1))`` with halves
    rounded up.
    """
    if target < 1:
        raise ValueError("target length must be >= 1")
    if frames == target:
        return np.arange(frames)
    if frames > target:
        rng = np.random.default_rng(seed)
        return np.sort(rng.choice(frames, size=target, replace=False))
    pos = np.arange(target) * (frames - 1) / (target - 1)
    return np.floor(pos + 0.5).astype(np.int64)


def normalize_length(m: FeatureMatrix, target: int = 200, seed: int = 0) -> FeatureMatrix:
    idx = length_indices(m.frames, target, seed)
    if m.frames == target:
        return m
    return FeatureMatrix(m.data[idx], normalized=m.normalized)


def expand_scores(scores: np.ndarray, indices: np.ndarray, frames: int) -> np.ndarray:
    """Map scores of resampled rows back onto the original ``frames`` rows.

    Each original frame takes the score of the resampled row whose source
    index is closest (earliest on ties).
    """
    scores = np.asarray(scores, dtype=np.float64)
    indices = np.asarray(indices)
    uniq, first = np.unique(indices, return_index=True)
    vals = scores[first]
    t = np.arange(frames)
    right = np.clip(np.searchsorted(uniq, t), 0, len(uniq) - 1)
    left = np.clip(right - 1, 0, len(uniq) - 1)
    pick = np.where(np.abs(uniq[left] - t) <= np.abs(uniq[right] - t), left, right)
    return vals[pick]


# ---------------------------------------------------------------------------
# references

@dataclass(frozen=True, eq=False)
class ReferenceSet:
    """Annotator data for one video.

    ``score_vectors`` holds one importance vector per annotator,
    ``summaries`` one binary keyshot mask per reference summary.
    """

    score_vectors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    summaries: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int8))

    def __post_init__(self):
        sv = np.atleast_2d(np.asarray(self.score_vectors, dtype=np.float64))
        sm = np.atleast_2d(np.asarray(self.summaries))
        if sv.size == 0:
            sv = sv.reshape(0, 0)
        if sm.size == 0:
            sm = sm.reshape(0, 0)
        if not len(sv) and not len(sm):
            raise DataError("reference set needs score vectors or summaries")
        if len(sv) and len(sm) and sv.shape[1] != sm.shape[1]:
            raise DataError("score vectors and summaries have different lengths")
        if len(sm) and not np.isin(sm, (0, 1)).all():
            raise DataError("reference summaries must be binary")
        if len(sv) and not np.isfinite(sv).all():
            raise DataError("reference scores contain NaN/Inf")
        object.__setattr__(self, "score_vectors", sv)
        object.__setattr__(self, "summaries", sm.astype(np.int8))

    @property
    def frames(self) -> int:
        return self.score_vectors.shape[1] if len(self.score_vectors) else self.summaries.shape[1]


def load_references(path) -> ReferenceSet:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: references must be a JSON object")
    return ReferenceSet(raw.get("scores", []), raw.get("summaries", []))


def save_references(path, refs: ReferenceSet) -> None:
    out = {}
    if len(refs.score_vectors):
        out["scores"] = refs.score_vectors.tolist()
    if len(refs.summaries):
        out["summaries"] = refs.summaries.astype(int).tolist()
    Path(path).write_text(json.dumps(out, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# manifest

@dataclass(frozen=True)
class VideoEntry:
    """Manifest descriptor; paths are resolved, nothing is loaded yet."""

    id: str
    feature_path: Path
    shots: tuple | None = None
    references_path: Path | None = None
    group: str = "eval"


@dataclass(frozen=True, eq=False)
class VideoRecord:
    id: str
    features: FeatureMatrix
    shots: ShotSegmentation | None = None
    references: ReferenceSet | None = None
    group: str = "eval"

    def __post_init__(self):
        if self.shots is not None and self.shots.frames != self.features.frames:
            raise DataError(
                f"video {self.id}: shots cover {self.shots.frames} frames, features have {self.features.frames}"
            )
        if self.references is not None and self.references.frames != self.features.frames:
            raise DataError(
                f"video {self.id}: references have length {self.references.frames}, "
                f"features have {self.features.frames}"
            )


@dataclass
class DatasetManifest:
    videos: list[VideoEntry]
    splits: list[list[str]]
    setting: str = "canonical"
    aggregation: str = "mean"
    root: Path = Path(".")

    def __post_init__(self):
        ids = [v.id for v in self.videos]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate video ids: {dup}")
        if self.setting not in SETTINGS:
            raise ManifestError(f"unknown setting {self.setting!r}")
        if self.aggregation not in ("mean", "max"):
            raise ManifestError(f"unknown F1 aggregation {self.aggregation!r}")
        for v in self.videos:
            if v.group not in GROUPS:
                raise ManifestError(f"video {v.id}: unknown group {v.group!r}")
        groups = {v.id: v.group for v in self.videos}
        for k, test in enumerate(self.splits):
            for vid in test:
                if vid not in groups:
                    raise ManifestError(f"split {k} references unknown video {vid!r}")
                if groups[vid] != "eval":
                    raise ManifestError(f"split {k}: train-only video {vid!r} cannot be tested")
            if len(set(test)) != len(test):
                raise ManifestError(f"split {k} lists a video twice")

    def __iter__(self) -> Iterator[VideoEntry]:
        return iter(self.videos)

    def __len__(self):
        return len(self.videos)

    def entry(self, video_id: str) -> VideoEntry:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise KeyError(video_id)

    def ids(self, group: str | None = None) -> list[str]:
        return [v.id for v in self.videos if group is None or v.group == group]

    def load_video(self, video_id: str) -> VideoRecord:
        e = self.entry(video_id)
        if not e.feature_path.exists():
            raise FileNotFoundError(f"feature file not found: {e.feature_path}")
        feats = load_features(e.feature_path)
        shots = ShotSegmentation(np.asarray(e.shots)) if e.shots else None
        refs = None
        if e.references_path is not None:
            if not e.references_path.exists():
                raise FileNotFoundError(f"references file not found: {e.references_path}")
            refs = load_references(e.references_path)
        return VideoRecord(e.id, feats, shots, refs, e.group)

    def folds(self) -> list[tuple[list[str], list[str]]]:
        """(train_ids, test_ids) per fold for this manifest's setting."""
        eval_ids = self.ids("eval")
        aux = self.ids("train-only")
        if self.setting == "transfer":
            return [(list(aux), list(eval_ids))]
        if not self.splits:
            raise ManifestError("canonical/augmented settings need splits")
        out = []
        for test in self.splits:
            test_set = set(test)
            train = [i for i in eval_ids if i not in test_set]
            if self.setting == "augmented":
                train += aux
            if test_set & set(train):
                raise ManifestError("fold test set overlaps its train set")
            out.append((train, list(test)))
        return out


def make_splits(ids: Sequence[str], n_folds: int = 5, seed: int = 0) -> list[list[str]]:
    """Random disjoint test splits covering ``ids``; fold sizes differ by at most one."""
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    return [order[k::n_folds] for k in range(n_folds)]


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    root = path.parent
    videos = []
    for i, v in enumerate(raw.get("videos", [])):
        try:
            vid, fpath = str(v["id"]), v["feature_path"]
        except (KeyError, TypeError):
            raise ManifestError(f"{path}: video #{i} needs 'id' and 'feature_path'") from None
        refs = v.get("references_path")
        shots = v.get("shots")
        videos.append(VideoEntry(
            id=vid,
            feature_path=root / fpath,
            shots=tuple(tuple(int(b) for b in s) for s in shots) if shots else None,
            references_path=root / refs if refs else None,
            group=v.get("group", "eval"),
        ))
    return DatasetManifest(
        videos=videos,
        splits=[list(map(str, s)) for s in raw.get("splits", [])],
        setting=raw.get("setting", "canonical"),
        aggregation=raw.get("aggregation", "mean"),
        root=root,
    )


def _relpath(p: Path, root: Path) -> str:
    try:
        return p.relative_to(root).as_posix()
    except ValueError:
        return str(p)


def save_manifest(path, manifest: DatasetManifest) -> None:
    path = Path(path)
    root = path.parent
    videos = []
    for v in manifest.videos:
        d = {"id": v.id, "feature_path": _relpath(v.feature_path, root), "group": v.group}
        if v.shots:
            d["shots"] = [list(s) for s in v.shots]
        if v.references_path is not None:
            d["references_path"] = _relpath(v.references_path, root)
        videos.append(d)
    raw = {
        "videos": videos,
        "splits": manifest.splits,
        "setting": manifest.setting,
        "aggregation": manifest.aggregation,
    }
    path.write_text(json.dumps(raw, indent=1, sort_keys=True) + "\n")
