"""Detection metrics, the two zero-shot protocols, and the invariance check."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import (
    NORMAL_LABEL,
    AnomalyDefinition,
    Config,
    NotFoundError,
    ValidationError,
    VideoRecord,
    definition_from_classes,
)
from .data import FeatureRepository
from .model import AnomalyDetector, TextEncoder, score_sequence

# ---- frame-level metrics ----------------------------------------------------


def roc_auc(scores, labels) -> float:
    """Frame-level ROC area with midpoint handling of score ties.

    Equals P(score+ > score-) + 0.5 * P(tie), computed from tie-averaged
    ranks.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be equal-length vectors")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("roc_auc needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores, labels) -> float:
    """AP as the recall-weighted sum of precisions at each positive.

    Ties order deterministically by descending score then ascending index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be equal-length vectors")
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise ValidationError("average_precision needs at least one positive")
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = labels[order] == 1
    cum_tp = np.cumsum(hits)
    ranks = np.arange(1, len(scores) + 1)
    precision_at_pos = cum_tp[hits] / ranks[hits]
    return float(precision_at_pos.sum() / n_pos)


def multiclass_metrics(predicted, truth) -> Dict[str, float]:
    """Accuracy and macro-F1 over the classes present in the ground truth."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape or predicted.ndim != 1 or len(truth) == 0:
        raise ValidationError("predictions and truth must be equal-length non-empty vectors")
    accuracy = float((predicted == truth).mean())
    f1s = []
    for cls in np.unique(truth):
        tp = int(((predicted == cls) & (truth == cls)).sum())
        fp = int(((predicted == cls) & (truth != cls)).sum())
        fn = int(((predicted != cls) & (truth == cls)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return {"accuracy": accuracy, "macro_f1": float(np.mean(f1s))}


def expand_to_frames(step_scores: np.ndarray, stride_frames: int, n_frames: int) -> np.ndarray:
    """Repeat each step score stride_frames times; the last score covers any
    partial trailing window."""
    expanded = np.repeat(np.asarray(step_scores, dtype=np.float64), stride_frames)
    if len(expanded) >= n_frames:
        return expanded[:n_frames]
    pad = np.full(n_frames - len(expanded), expanded[-1])
    return np.concatenate([expanded, pad])


# ---- protocol harness -------------------------------------------------------


@dataclass(frozen=True)
class SubsetDefinition:
    """A drift setting: the classes treated abnormal, the rest normal."""

    name: str
    class_ids: Tuple[str, ...]

    def __post_init__(self):
        if not self.class_ids:
            raise ValidationError(f"subset {self.name!r} must include at least one class")
        if NORMAL_LABEL in self.class_ids:
            raise ValidationError(f"subset {self.name!r} must not list the normal marker")
        object.__setattr__(self, "class_ids", tuple(self.class_ids))

    @staticmethod
    def from_dict(obj: dict) -> "SubsetDefinition":
        return SubsetDefinition(name=str(obj["name"]), class_ids=tuple(obj["classes"]))

    def to_dict(self) -> dict:
        return {"name": self.name, "classes": list(self.class_ids)}


def load_subsets(path) -> List[SubsetDefinition]:
    obj = json.loads(open(path, "r", encoding="utf-8").read())
    return [SubsetDefinition.from_dict(item) for item in obj]


@dataclass
class EvalReport:
    per_dataset: Dict[str, Dict[str, float]] = field(default_factory=dict)
    per_subset: Dict[str, Dict[str, float]] = field(default_factory=dict)
    drift_mean: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_dataset": self.per_dataset,
            "per_subset": self.per_subset,
            "drift_mean": self.drift_mean,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _collect_frame_scores(
    model: AnomalyDetector,
    text_encoder: TextEncoder,
    repo: FeatureRepository,
    records: Sequence[VideoRecord],
    definition: AnomalyDefinition,
) -> Tuple[np.ndarray, np.ndarray, List[dict]]:
    all_scores: List[np.ndarray] = []
    all_labels: List[np.ndarray] = []
    per_video: List[dict] = []
    for record in records:
        seq = repo.read(record.video_id)
        result = score_sequence(model, text_encoder, seq, definition)
        scores = result.frame_scores
        per_video.append(
            {
                "video_id": record.video_id,
                "scores": scores,
                "probs": result.video_class_probs,
                "record": record,
            }
        )
        if record.frame_labels is None:
            continue
        labels = np.asarray(record.frame_labels, dtype=np.int64)
        if len(labels) == seq.length:
            all_scores.append(scores)
        else:
            all_scores.append(expand_to_frames(scores, seq.stride_frames, len(labels)))
        all_labels.append(labels)
    if all_scores:
        return np.concatenate(all_scores), np.concatenate(all_labels), per_video
    return np.empty(0), np.empty(0, dtype=np.int64), per_video


def _classification_metrics(
    per_video: Sequence[dict], definition: AnomalyDefinition
) -> Optional[Dict[str, float]]:
    predicted, truth = [], []
    known = set(definition.class_ids)
    for item in per_video:
        label = item["record"].video_label
        if label not in known:
            warnings.warn(
                f"{item['video_id']}: label {label!r} not in the definition; "
                "skipped for classification",
                stacklevel=2,
            )
            continue
        predicted.append(int(np.argmax(item["probs"])))
        truth.append(definition.index_of(label))
    if not truth:
        return None
    return multiclass_metrics(np.asarray(predicted), np.asarray(truth))


@dataclass(frozen=True)
class ManifestEval:
    """One test set for the cross-manifest protocol."""

    name: str
    records: Tuple[VideoRecord, ...]
    repo: FeatureRepository
    definition: AnomalyDefinition
    metric: str = "auc"  # "auc" or "ap"

    def __post_init__(self):
        if self.metric not in ("auc", "ap"):
            raise ValidationError(f"metric must be 'auc' or 'ap', got {self.metric!r}")
        object.__setattr__(self, "records", tuple(self.records))


def evaluate_protocol1(
    model: AnomalyDetector,
    text_encoder: TextEncoder,
    manifests: Sequence[ManifestEval],
    cfg: Config,
) -> EvalReport:
    """Score each test set separately under its own definition.

    Sets that contain only abnormal videos get a dataset-level min-max score
    normalization before the detection metric.
    """
    report = EvalReport()
    for m in manifests:
        scores, labels, per_video = _collect_frame_scores(
            model, text_encoder, m.repo, m.records, m.definition
        )
        entry: Dict[str, float] = {}
        if scores.size and labels.size:
            anomaly_only = all(r.is_abnormal for r in m.records)
            if anomaly_only:
                lo, hi = scores.min(), scores.max()
                if hi > lo:
                    scores = (scores - lo) / (hi - lo)
            if m.metric == "auc":
                entry["auc"] = roc_auc(scores, labels)
            else:
                entry["ap"] = average_precision(scores, labels)
        else:
            warnings.warn(f"{m.name}: no frame labels; detection metric skipped", stacklevel=2)
        cls = _classification_metrics(per_video, m.definition)
        if cls is not None:
            entry["accuracy"] = cls["accuracy"]
            entry["f1"] = cls["macro_f1"]
        report.per_dataset[m.name] = entry
    return report


def relabel_for_subset(
    records: Sequence[VideoRecord], subset: SubsetDefinition
) -> List[VideoRecord]:
    """Apply a drift subset: excluded abnormal classes become entirely normal."""
    inventory = {r.video_label for r in records if r.is_abnormal}
    unknown = set(subset.class_ids) - inventory
    if unknown:
        raise ValidationError(
            f"subset {subset.name!r} references unknown classes: {sorted(unknown)}"
        )
    out = []
    for r in records:
        if not r.is_abnormal or r.video_label in subset.class_ids:
            out.append(r)
        else:
            zeros = None if r.frame_labels is None else np.zeros_like(r.frame_labels)
            out.append(
                VideoRecord(
                    video_id=r.video_id,
                    split=r.split,
                    video_label=NORMAL_LABEL,
                    description=None,
                    frame_labels=zeros,
                )
            )
    return out


def evaluate_protocol2(
    model: AnomalyDetector,
    text_encoder: TextEncoder,
    repo: FeatureRepository,
    records: Sequence[VideoRecord],
    subsets: Sequence[SubsetDefinition],
    cfg: Config,
    prompts: Optional[Dict[str, str]] = None,
) -> EvalReport:
    """One test set under varying definitions; reports per-subset and mean.

    Each subset's definition contains only its included classes plus the
    normal entry; excluded abnormal videos are relabeled normal before
    metrics.
    """
    if not subsets:
        raise ValidationError("protocol 2 needs at least one subset")
    report = EvalReport()
    aucs, aps = [], []
    for subset in subsets:
        definition = definition_from_classes(sorted(subset.class_ids), prompts)
        relabeled = relabel_for_subset(records, subset)
        scores, labels, _ = _collect_frame_scores(
            model, text_encoder, repo, relabeled, definition
        )
        if not scores.size:
            raise ValidationError(f"subset {subset.name!r}: no labeled frames to score")
        entry = {
            "auc": roc_auc(scores, labels),
            "ap": average_precision(scores, labels),
        }
        report.per_subset[subset.name] = entry
        aucs.append(entry["auc"])
        aps.append(entry["ap"])
    report.drift_mean = {"auc": float(np.mean(aucs)), "ap": float(np.mean(aps))}
    return report


# ---- definition-invariance enumeration --------------------------------------


@dataclass(frozen=True)
class InvarianceResult:
    identical: bool
    compared_pairs: int
    skipped_pairs: int

    def __bool__(self) -> bool:
        return self.identical


def check_proposition1(
    label_fn: Mapping,
    d1: Mapping,
    d2: Mapping,
    label_fn_second: Optional[Mapping] = None,
    tol: float = 1e-12,
) -> InvarianceResult:
    """Enumerate P(Y | V, Z) in two finite domains and compare.

    ``label_fn`` maps (v, z) pairs to labels and induces the joint of each
    domain together with its (v, z) distribution. When labels are a pure
    function of (v, z) shared by both domains the conditionals must match
    exactly; passing a differing ``label_fn_second`` models a corrupted,
    domain-dependent labeling and must be detected. Pairs with zero mass in
    either domain cannot be conditioned on and are skipped (counted in the
    result).
    """
    second = label_fn if label_fn_second is None else label_fn_second
    for dist in (d1, d2):
        total = sum(dist.values())
        if abs(total - 1.0) > 1e-9 or any(p < 0 for p in dist.values()):
            raise ValidationError("domain distributions must be normalized and non-negative")

    def conditional(fn: Mapping, pair: Hashable) -> Dict[Hashable, float]:
        # Y is determined by fn, so mass concentrates on one label.
        return {fn[pair]: 1.0}

    pairs = set(d1) | set(d2)
    compared = 0
    skipped = 0
    identical = True
    for pair in sorted(pairs, key=repr):
        p1 = d1.get(pair, 0.0)
        p2 = d2.get(pair, 0.0)
        if p1 <= 0.0 or p2 <= 0.0:
            skipped += 1
            continue
        c1 = conditional(label_fn, pair)
        c2 = conditional(second, pair)
        compared += 1
        labels = set(c1) | set(c2)
        for y in labels:
            if abs(c1.get(y, 0.0) - c2.get(y, 0.0)) > tol:
                identical = False
    return InvarianceResult(identical=identical, compared_pairs=compared, skipped_pairs=skipped)


def dump_scores_jsonl(per_video: Sequence[dict], definition_name: str, path) -> None:
    """Score dump: one JSON line per video."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in per_video:
            fh.write(
                json.dumps(
                    {
                        "video_id": item["video_id"],
                        "frame_scores": [float(x) for x in item["scores"]],
                        "class_probs": [float(x) for x in item["probs"]],
                        "definition_name": definition_name,
                    }
                )
                + "\n"
            )
