"""On-the-fly sample synthesis: anchor plus retrieved normal neighbors."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .core import Config, FeatureSequence, NotFoundError, ValidationError
from .data import KnnIndex


@dataclass(frozen=True)
class SynthesizedSample:
    """A concatenated feature sequence with its binary pseudo-label.

    ``pseudo_label`` is 1 exactly on the anchor slot's steps when the anchor
    is abnormal and all-zero otherwise. ``anchor_slot`` is 1-based (1 <= j <= m).
    """

    features: np.ndarray
    pseudo_label: np.ndarray
    video_level_label: int
    anchor_id: str
    segment_count: int
    anchor_slot: int
    segment_boundaries: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        if not 1 <= self.anchor_slot <= self.segment_count:
            raise ValidationError(
                f"anchor slot {self.anchor_slot} outside 1..{self.segment_count}"
            )
        total = self.segment_boundaries[-1][1]
        if total != self.features.shape[0] or total != self.pseudo_label.shape[0]:
            raise ValidationError("segment boundaries do not cover the concatenation")

    @property
    def total_length(self) -> int:
        return self.features.shape[0]

    def provenance(self) -> dict:
        return {
            "anchor_id": self.anchor_id,
            "video_level_label": int(self.video_level_label),
            "segment_count": int(self.segment_count),
            "anchor_slot": int(self.anchor_slot),
            "segment_boundaries": [[int(a), int(b)] for a, b in self.segment_boundaries],
        }


def synthesize(
    normal_set: Sequence[FeatureSequence],
    abnormal_set: Sequence[FeatureSequence],
    knn: KnnIndex,
    cfg: Config,
    rng: np.random.Generator,
) -> SynthesizedSample:
    """One pass of the synthesis procedure.

    Draw order (fixed for reproducibility): p1, p2, segment count m (only
    when p1 <= theta), anchor index, anchor slot j, then one neighbor draw
    per non-anchor slot, in slot order and with replacement.
    """
    if not normal_set or not abnormal_set:
        raise ValidationError("both the normal and abnormal sets must be non-empty")

    normal_by_id = {seq.video_id: seq for seq in normal_set}

    p1 = float(rng.uniform())
    p2 = float(rng.uniform())
    if p1 > cfg.theta:
        m = 1
    else:
        m = int(rng.integers(1, cfg.delta_m + 1))  # both bounds inclusive

    if p2 > cfg.alpha:
        pool = abnormal_set
        abnormal_anchor = True
    else:
        pool = normal_set
        abnormal_anchor = False
    anchor = pool[int(rng.integers(len(pool)))]
    j = int(rng.integers(1, m + 1))

    slots: List[FeatureSequence] = []
    neighbor_ids: List[str] = []
    if m > 1:
        neighbor_ids = knn.neighbor_ids(anchor.video_id)
        if not neighbor_ids:
            raise NotFoundError(f"anchor {anchor.video_id!r} has an empty neighbor list")
    for i in range(1, m + 1):
        if i == j:
            slots.append(anchor)
        else:
            pick = neighbor_ids[int(rng.integers(len(neighbor_ids)))]
            if pick not in normal_by_id:
                raise NotFoundError(f"neighbor {pick!r} is not in the provided normal set")
            slots.append(normal_by_id[pick])

    boundaries = []
    offset = 0
    for seq in slots:
        boundaries.append((offset, offset + seq.length))
        offset += seq.length
    features = np.concatenate([seq.features for seq in slots], axis=0)
    pseudo = np.zeros(offset, dtype=np.int64)
    if abnormal_anchor:
        start, end = boundaries[j - 1]
        pseudo[start:end] = 1

    return SynthesizedSample(
        features=features,
        pseudo_label=pseudo,
        video_level_label=1 if abnormal_anchor else 0,
        anchor_id=anchor.video_id,
        segment_count=m,
        anchor_slot=j,
        segment_boundaries=tuple(boundaries),
    )


def synthesis_statistics(samples: Sequence[SynthesizedSample]) -> Dict[str, float]:
    """Empirical fractions used to check the synthesis branch probabilities."""
    if not samples:
        raise ValidationError("need at least one sample")
    n = len(samples)
    return {
        "fraction_multi_segment": sum(s.segment_count > 1 for s in samples) / n,
        "fraction_abnormal_anchor": sum(s.video_level_label == 1 for s in samples) / n,
        "mean_total_length": sum(s.total_length for s in samples) / n,
    }


def dump_provenance(samples: Sequence[SynthesizedSample], path) -> None:
    """Optional debug dump of synthesis provenance as JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([s.provenance() for s in samples], fh)
