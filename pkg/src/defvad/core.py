"""Shared domain types, configuration, deterministic seeding, and errors."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

NORMAL_LABEL = "normal"
DEFAULT_NORMAL_PROMPT = "normal scene with ordinary activities"

SPLITS = ("train", "val", "test")


class DefVadError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DefVadError):
    """An input or configuration violated a documented invariant."""


class NotFoundError(DefVadError):
    """A referenced video id, file, or class is unknown."""


class CorruptFileError(DefVadError):
    """A persisted artifact failed its header or shape checks."""


def make_rng(seed: int) -> np.random.Generator:
    """Create the canonical deterministic random stream for a seed.

    Every stochastic operation in the package draws from generators built
    here (PCG64 is reproducible across platforms). Derived streams are
    obtained via ``derive_seed``.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(seed: int, *tags) -> int:
    """Stable 63-bit sub-seed from a base seed and a tag path.

    Used to key independent substreams (e.g. per training step) so that
    resuming at step t reproduces the same draws as an uninterrupted run.
    """
    text = ":".join([str(int(seed))] + [str(t) for t in tags])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def topk_count(length: int, divisor: int = 16) -> int:
    """Number of instances kept by top-k pooling: floor(L / divisor) + 1."""
    if length < 1:
        raise ValidationError(f"length must be >= 1, got {length}")
    return length // divisor + 1


@dataclass(frozen=True)
class FeatureSequence:
    """Per-video L x E feature matrix with temporal stride metadata."""

    video_id: str
    features: np.ndarray
    stride_frames: int = 8
    fps: float = 24.0

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValidationError(
                f"features must be a non-empty 2-D matrix, got shape {feats.shape}"
            )
        if not np.all(np.isfinite(feats)):
            raise ValidationError(f"features of {self.video_id!r} contain non-finite entries")
        if self.stride_frames < 1:
            raise ValidationError(f"stride_frames must be >= 1, got {self.stride_frames}")
        if not self.fps > 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "features", feats)

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ClassEntry:
    """One class of an anomaly definition: a name, a prompt, or a raw vector."""

    class_id: str
    prompt_text: str = ""
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.class_id:
            raise ValidationError("class_id must be non-empty")
        if self.embedding is None:
            if not self.prompt_text.strip():
                raise ValidationError(
                    f"entry {self.class_id!r}: prompt_text required when no embedding is given"
                )
        else:
            emb = np.asarray(self.embedding, dtype=np.float32)
            if emb.ndim != 1 or not np.all(np.isfinite(emb)):
                raise ValidationError(f"entry {self.class_id!r}: embedding must be a finite vector")
            object.__setattr__(self, "embedding", emb)


@dataclass(frozen=True)
class AnomalyDefinition:
    """Ordered class entries with exactly one designated normal entry."""

    entries: tuple
    normal_index: int

    def __post_init__(self):
        entries = tuple(self.entries)
        if len(entries) < 2:
            raise ValidationError(f"definition needs >= 2 entries, got {len(entries)}")
        names = [e.class_id for e in entries]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate class names in definition: {names}")
        if not 0 <= self.normal_index < len(entries):
            raise ValidationError(
                f"normal_index {self.normal_index} out of range for {len(entries)} entries"
            )
        object.__setattr__(self, "entries", entries)

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    @property
    def class_ids(self) -> list:
        return [e.class_id for e in self.entries]

    @property
    def abnormal_indices(self) -> list:
        return [i for i in range(len(self.entries)) if i != self.normal_index]

    def index_of(self, class_id: str) -> int:
        for i, e in enumerate(self.entries):
            if e.class_id == class_id:
                return i
        raise NotFoundError(f"class {class_id!r} not in definition")

    def to_dict(self) -> dict:
        classes = []
        for e in self.entries:
            item = {"class_id": e.class_id, "prompt_text": e.prompt_text}
            if e.embedding is not None:
                item["embedding"] = [float(x) for x in e.embedding]
            classes.append(item)
        return {"classes": classes, "normal_index": self.normal_index}

    @staticmethod
    def from_dict(obj: dict) -> "AnomalyDefinition":
        try:
            classes = obj["classes"]
            normal_index = int(obj["normal_index"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed definition document: {exc}") from exc
        entries = []
        for item in classes:
            emb = item.get("embedding")
            entries.append(
                ClassEntry(
                    class_id=str(item.get("class_id", "")),
                    prompt_text=str(item.get("prompt_text", "")),
                    embedding=None if emb is None else np.asarray(emb, dtype=np.float32),
                )
            )
        return AnomalyDefinition(entries=tuple(entries), normal_index=normal_index)


def definition_from_classes(
    class_ids: Sequence[str],
    prompts: Optional[dict] = None,
    normal_prompt: str = DEFAULT_NORMAL_PROMPT,
) -> AnomalyDefinition:
    """Build a definition from abnormal class ids plus the trailing normal entry."""
    entries = []
    for cid in class_ids:
        if cid == NORMAL_LABEL:
            raise ValidationError("abnormal class list must not contain the normal marker")
        prompt = (prompts or {}).get(cid, cid)
        entries.append(ClassEntry(class_id=cid, prompt_text=prompt))
    entries.append(ClassEntry(class_id=NORMAL_LABEL, prompt_text=normal_prompt))
    return AnomalyDefinition(entries=tuple(entries), normal_index=len(entries) - 1)


@dataclass(frozen=True)
class VideoRecord:
    """One manifest row: split, weak video-level label, optional extras."""

    video_id: str
    split: str
    video_label: str
    description: Optional[str] = None
    frame_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"{self.video_id!r}: unknown split {self.split!r}")
        if not self.video_id:
            raise ValidationError("video_id must be non-empty")
        if self.split == "train":
            if self.is_abnormal and not self.description:
                raise ValidationError(
                    f"{self.video_id!r}: abnormal train record requires a description"
                )
            if not self.is_abnormal and self.description:
                raise ValidationError(
                    f"{self.video_id!r}: normal train record must not carry a description"
                )
        if self.frame_labels is not None:
            labels = np.asarray(self.frame_labels, dtype=np.int64)
            if labels.ndim != 1 or not np.isin(labels, (0, 1)).all():
                raise ValidationError(f"{self.video_id!r}: frame_labels must be a binary vector")
            object.__setattr__(self, "frame_labels", labels)

    @property
    def is_abnormal(self) -> bool:
        return self.video_label != NORMAL_LABEL


@dataclass(frozen=True)
class Config:
    """Model, synthesis, and training hyperparameters.

    Defaults follow the reference settings: temperatures tau/eta 0.02,
    synthesis theta 0.7 / alpha 0.5 / delta_m 5 / 200 neighbors, AdamW with
    batch 64 and learning rate 5e-5 for 40 epochs, kernel 9 detection convs,
    hidden width 512, 2 encoder and 2 fusion layers.
    """

    hidden_size: int = 512
    encoder_layers: int = 2
    fusion_layers: int = 2
    conv_kernel: int = 9
    tau: float = 0.02
    eta: float = 0.02
    theta: float = 0.7
    alpha: float = 0.5
    delta_m: int = 5
    knn_n: int = 200
    batch_size: int = 64
    learning_rate: float = 5e-5
    epochs: int = 40
    topk_divisor: int = 16
    mil_align_temperature: float = 0.07
    seed: int = 0
    use_dvs: bool = True
    use_neg: bool = True
    language_guided: bool = True
    weight_decay: float = 0.01
    grad_clip: float = 0.0  # 0 disables clipping
    restrict_dvs_third_term_to_m_gt_1: bool = False


def validate_config(cfg: Config) -> Config:
    """Return cfg unchanged if all invariants hold, else raise naming the field."""

    def check(cond: bool, name: str, msg: str):
        if not cond:
            raise ValidationError(f"config field {name!r}: {msg} (got {getattr(cfg, name)})")

    check(cfg.hidden_size >= 1, "hidden_size", "must be >= 1")
    check(cfg.encoder_layers >= 0, "encoder_layers", "must be >= 0")
    check(cfg.fusion_layers >= 0, "fusion_layers", "must be >= 0")
    check(cfg.conv_kernel >= 1 and cfg.conv_kernel % 2 == 1, "conv_kernel", "must be odd and >= 1")
    check(cfg.tau > 0, "tau", "must be > 0")
    check(cfg.eta > 0, "eta", "must be > 0")
    check(0.0 <= cfg.theta <= 1.0, "theta", "must lie in [0, 1]")
    check(0.0 <= cfg.alpha <= 1.0, "alpha", "must lie in [0, 1]")
    check(cfg.delta_m >= 1, "delta_m", "must be >= 1")
    check(cfg.knn_n >= 1, "knn_n", "must be >= 1")
    check(cfg.batch_size >= 1, "batch_size", "must be >= 1")
    check(cfg.learning_rate >= 0, "learning_rate", "must be >= 0")
    check(cfg.epochs >= 0, "epochs", "must be >= 0")
    check(cfg.topk_divisor >= 1, "topk_divisor", "must be >= 1")
    check(cfg.mil_align_temperature > 0, "mil_align_temperature", "must be > 0")
    check(cfg.weight_decay >= 0, "weight_decay", "must be >= 0")
    check(cfg.grad_clip >= 0, "grad_clip", "must be >= 0")
    return cfg


def config_to_json(cfg: Config) -> str:
    """Serialize a config as a flat JSON document with sorted keys."""
    return json.dumps(dataclasses.asdict(cfg), sort_keys=True)


def config_from_json(text: str) -> Config:
    """Parse a flat JSON config; unknown keys are rejected."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError("config document must be a JSON object")
    known = {f.name for f in dataclasses.fields(Config)}
    unknown = set(obj) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return validate_config(Config(**obj))


def config_hash(cfg: Config) -> str:
    """Stable hash identifying a config (used to guard checkpoint loads)."""
    return hashlib.sha256(config_to_json(cfg).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ScoreResult:
    """Inference output for one (video, definition) pair."""

    video_id: str
    y_bin: np.ndarray  # (L,) pre-sigmoid logits
    y_mul: np.ndarray  # (L, C) cosine similarities
    video_class_probs: np.ndarray  # (C,), sums to 1
    definition_used: AnomalyDefinition

    def __post_init__(self):
        probs = np.asarray(self.video_class_probs, dtype=np.float64)
        if probs.ndim != 1 or np.any(probs < -1e-9) or np.any(probs > 1 + 1e-9):
            raise ValidationError("video_class_probs entries must lie in [0, 1]")
        if abs(float(probs.sum()) - 1.0) > 1e-6:
            raise ValidationError(f"video_class_probs must sum to 1, got {probs.sum()}")

    @property
    def frame_scores(self) -> np.ndarray:
        """Per-step anomaly probabilities (sigmoid of the detection logits)."""
        return 1.0 / (1.0 + np.exp(-np.asarray(self.y_bin, dtype=np.float64)))
