"""Manifest and feature persistence, the synthetic benchmark, and KNN retrieval."""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    NORMAL_LABEL,
    CorruptFileError,
    FeatureSequence,
    NotFoundError,
    ValidationError,
    VideoRecord,
    make_rng,
)

FSEQ_MAGIC = b"FSEQ"
FSEQ_VERSION = 1
# magic, u32 version, u32 L, u32 E, f32 fps, u32 stride_frames, little endian
_HEADER = struct.Struct("<4sIIIfI")


def write_feature_file(path: Path, seq: FeatureSequence) -> None:
    payload = np.ascontiguousarray(seq.features, dtype="<f4")
    header = _HEADER.pack(
        FSEQ_MAGIC, FSEQ_VERSION, seq.length, seq.width, float(seq.fps), int(seq.stride_frames)
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_feature_file(path: Path, video_id: str) -> FeatureSequence:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptFileError(f"{path}: shorter than the fixed header")
    magic, version, length, width, fps, stride = _HEADER.unpack_from(raw)
    if magic != FSEQ_MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}")
    if version != FSEQ_VERSION:
        raise CorruptFileError(f"{path}: unsupported version {version}")
    expected = length * width * 4
    body = raw[_HEADER.size :]
    if len(body) != expected:
        raise CorruptFileError(
            f"{path}: payload holds {len(body)} bytes, header declares {expected}"
        )
    feats = np.frombuffer(body, dtype="<f4").reshape(length, width)
    return FeatureSequence(
        video_id=video_id, features=feats.copy(), stride_frames=stride, fps=fps
    )


class FeatureRepository:
    """Directory of one binary feature file per video id."""

    def __init__(self, root, embedding_width: Optional[int] = None):
        self.root = Path(root)
        self.features_dir = self.root / "features"
        self.embedding_width = embedding_width
        self.features_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, video_id: str) -> Path:
        if "/" in video_id or "\\" in video_id or video_id in (".", ".."):
            raise ValidationError(f"video_id {video_id!r} is not filesystem-safe")
        return self.features_dir / f"{video_id}.fseq"

    def video_ids(self) -> List[str]:
        return sorted(p.stem for p in self.features_dir.glob("*.fseq"))

    def __contains__(self, video_id: str) -> bool:
        return self._path(video_id).exists()

    def write(self, seq: FeatureSequence) -> None:
        if self.embedding_width is None:
            self.embedding_width = seq.width
        elif seq.width != self.embedding_width:
            raise ValidationError(
                f"{seq.video_id!r}: width {seq.width} != repository width {self.embedding_width}"
            )
        write_feature_file(self._path(seq.video_id), seq)

    def read(self, video_id: str) -> FeatureSequence:
        path = self._path(video_id)
        if not path.exists():
            raise NotFoundError(f"no features stored for video {video_id!r}")
        seq = read_feature_file(path, video_id)
        if self.embedding_width is None:
            self.embedding_width = seq.width
        elif seq.width != self.embedding_width:
            raise CorruptFileError(
                f"{video_id!r}: width {seq.width} != repository width {self.embedding_width}"
            )
        return seq


def load_manifest(path) -> List[VideoRecord]:
    """Read a JSONL manifest, validating each row against the core invariants."""
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"manifest {path} does not exist")
    records: List[VideoRecord] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                record = VideoRecord(
                    video_id=obj["video_id"],
                    split=obj["split"],
                    video_label=obj["label"],
                    description=obj.get("description"),
                    frame_labels=None
                    if obj.get("frame_labels") is None
                    else np.asarray(obj["frame_labels"], dtype=np.int64),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            if record.video_id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate video_id {record.video_id!r}")
            seen.add(record.video_id)
            records.append(record)
    return records


def save_manifest(records: Sequence[VideoRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj = {"video_id": r.video_id, "split": r.split, "label": r.video_label}
            if r.description is not None:
                obj["description"] = r.description
            if r.frame_labels is not None:
                obj["frame_labels"] = [int(x) for x in r.frame_labels]
            fh.write(json.dumps(obj) + "\n")


def cross_validate_manifest(records: Sequence[VideoRecord], repo: FeatureRepository) -> None:
    """Check that every record resolves to features and label lengths agree."""
    for r in records:
        if r.video_id not in repo:
            raise NotFoundError(f"manifest video {r.video_id!r} has no feature file")
        if r.frame_labels is not None:
            seq = repo.read(r.video_id)
            if len(r.frame_labels) != seq.length:
                raise ValidationError(
                    f"{r.video_id!r}: frame_labels length {len(r.frame_labels)} "
                    f"!= feature length {seq.length}"
                )


def split_counts(records: Sequence[VideoRecord]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for r in records:
        counts[r.split] = counts.get(r.split, 0) + 1
    return counts


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic feature benchmark."""

    num_categories: int = 5
    videos_per_split: Dict[str, int] = field(
        default_factory=lambda: {"train": 200, "val": 50}
    )
    embedding_width: int = 32
    length_range: Tuple[int, int] = (20, 60)
    anomaly_fraction_range: Tuple[float, float] = (0.2, 0.6)
    noise_scale: float = 0.05
    seed: int = 0
    stride_frames: int = 8
    fps: float = 24.0

    def __post_init__(self):
        lo, hi = self.length_range
        if lo < 4 or hi < lo:
            raise ValidationError(f"length_range must satisfy 4 <= L_min <= L_max, got {self.length_range}")
        flo, fhi = self.anomaly_fraction_range
        if not (0.0 < flo <= fhi < 1.0):
            raise ValidationError(
                f"anomaly_fraction_range must lie strictly inside (0, 1), got {self.anomaly_fraction_range}"
            )
        if self.num_categories < 1:
            raise ValidationError("num_categories must be >= 1")
        if self.embedding_width < 2:
            raise ValidationError("embedding_width must be >= 2")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be >= 0")
        for split, count in self.videos_per_split.items():
            if split not in ("train", "val", "test"):
                raise ValidationError(f"unknown split {split!r}")
            if count < 0:
                raise ValidationError(f"negative video count for split {split!r}")


def category_name(index: int) -> str:
    return f"cat{index}"


_DESCRIPTION_TEMPLATES = (
    "an incident of {c} disrupts the otherwise calm scene",
    "footage showing {c} in progress near the center of the frame",
    "a {c} event breaks out partway through the recording",
    "the camera captures {c} unfolding among bystanders",
)


def blend_prototype(background: np.ndarray, proto: np.ndarray) -> np.ndarray:
    """Unit-norm mixture of the background and a category prototype."""
    mix = background.astype(np.float64) + proto.astype(np.float64)
    mix = mix / np.linalg.norm(mix)
    return mix.astype(np.float32)


def generate_synthetic_dataset(
    spec: SyntheticSpec, out_dir
) -> Tuple[List[VideoRecord], FeatureRepository, Dict[str, np.ndarray]]:
    """Create a fully-labeled synthetic benchmark on disk.

    Normal videos are background-plus-noise; abnormal videos carry one
    contiguous segment drawn toward their category prototype, recorded in
    frame_labels. The prototype table (categories plus the normal
    background) is persisted for the toy text encoder.
    """
    out_dir = Path(out_dir)
    rng = make_rng(spec.seed)
    E = spec.embedding_width

    def unit(v: np.ndarray) -> np.ndarray:
        return (v / np.linalg.norm(v)).astype(np.float32)

    prototypes: Dict[str, np.ndarray] = {}
    for c in range(spec.num_categories):
        prototypes[category_name(c)] = unit(rng.standard_normal(E))
    background = unit(rng.standard_normal(E))
    prototypes[NORMAL_LABEL] = background

    repo = FeatureRepository(out_dir, embedding_width=E)
    records: List[VideoRecord] = []
    lo, hi = spec.length_range
    flo, fhi = spec.anomaly_fraction_range

    for split in ("train", "val", "test"):
        count = spec.videos_per_split.get(split, 0)
        n_abnormal = count // 2
        for i in range(count):
            abnormal = i < n_abnormal
            length = int(rng.integers(lo, hi + 1))
            noise = rng.standard_normal((length, E)) * spec.noise_scale
            feats = np.tile(background.astype(np.float64), (length, 1))
            if abnormal:
                cat = category_name(i % spec.num_categories)
                frac = float(rng.uniform(flo, fhi))
                seg_len = max(1, int(round(frac * length)))
                seg_len = min(seg_len, length)
                start = int(rng.integers(0, length - seg_len + 1))
                segment = blend_prototype(background, prototypes[cat])
                feats[start : start + seg_len] = segment.astype(np.float64)
                labels = np.zeros(length, dtype=np.int64)
                labels[start : start + seg_len] = 1
                template = _DESCRIPTION_TEMPLATES[int(rng.integers(len(_DESCRIPTION_TEMPLATES)))]
                description = template.format(c=cat)
                video_id = f"{split}_anm_{i:04d}"
                label = cat
            else:
                labels = np.zeros(length, dtype=np.int64)
                description = None
                video_id = f"{split}_nrm_{i:04d}"
                label = NORMAL_LABEL
            feats = (feats + noise).astype(np.float32)
            seq = FeatureSequence(
                video_id=video_id,
                features=feats,
                stride_frames=spec.stride_frames,
                fps=spec.fps,
            )
            repo.write(seq)
            records.append(
                VideoRecord(
                    video_id=video_id,
                    split=split,
                    video_label=label,
                    description=description,
                    frame_labels=labels,
                )
            )

    save_manifest(records, out_dir / "manifest.jsonl")
    save_prototypes(prototypes, out_dir / "prototypes.json")
    return records, repo, prototypes


def save_prototypes(prototypes: Dict[str, np.ndarray], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    obj = {name: [float(x) for x in vec] for name, vec in sorted(prototypes.items())}
    path.write_text(json.dumps(obj, indent=1))


def load_prototypes(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"prototype table {path} does not exist")
    obj = json.loads(path.read_text())
    return {name: np.asarray(vec, dtype=np.float32) for name, vec in obj.items()}


def central_step_feature(seq: FeatureSequence) -> np.ndarray:
    """Row floor(L/2); for even lengths this is the later of the two middles."""
    return seq.features[seq.length // 2]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom < 1e-12:
        return 0.0
    return float(np.dot(a, b) / denom)


@dataclass
class KnnIndex:
    """For each training video, its nearest normal training videos."""

    neighbors: Dict[str, List[str]]

    def neighbor_ids(self, video_id: str) -> List[str]:
        if video_id not in self.neighbors:
            raise NotFoundError(f"video {video_id!r} missing from the KNN index")
        return self.neighbors[video_id]

    def to_json(self) -> str:
        return json.dumps({k: v for k, v in sorted(self.neighbors.items())})

    @staticmethod
    def from_json(text: str) -> "KnnIndex":
        obj = json.loads(text)
        return KnnIndex(neighbors={str(k): [str(x) for x in v] for k, v in obj.items()})

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path) -> "KnnIndex":
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"KNN index {path} does not exist")
        return KnnIndex.from_json(path.read_text())


def build_knn_index(
    repo: FeatureRepository, records: Sequence[VideoRecord], n: int
) -> KnnIndex:
    """Nearest normal training videos by cosine of central-step features.

    Neighbors come only from the normal training split; a video is never its
    own neighbor; ties break by ascending video_id.
    """
    train = [r for r in records if r.split == "train"]
    normal_ids = sorted(r.video_id for r in train if not r.is_abnormal)
    if not normal_ids:
        raise ValidationError("cannot build a KNN index without normal training videos")
    if len(normal_ids) - 1 < n:
        warnings.warn(
            f"only {len(normal_ids)} normal training videos; "
            f"neighbor lists truncated below n={n}",
            stacklevel=2,
        )

    centrals = {r.video_id: central_step_feature(repo.read(r.video_id)) for r in train}
    normal_matrix = np.stack([centrals[vid] for vid in normal_ids]).astype(np.float64)
    norms = np.linalg.norm(normal_matrix, axis=1)
    norms[norms < 1e-12] = 1.0

    position = {vid: i for i, vid in enumerate(normal_ids)}
    neighbors: Dict[str, List[str]] = {}
    for r in train:
        query = centrals[r.video_id].astype(np.float64)
        qnorm = np.linalg.norm(query)
        if qnorm < 1e-12:
            qnorm = 1.0
        sims = normal_matrix @ query / (norms * qnorm)
        ranked = sorted(
            (vid for vid in normal_ids if vid != r.video_id),
            key=lambda vid: (-sims[position[vid]], vid),
        )
        neighbors[r.video_id] = ranked[:n]
    return KnnIndex(neighbors=neighbors)
