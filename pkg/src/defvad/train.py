"""Weakly-supervised training: batch assembly, optimization, checkpointing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .core import (
    DEFAULT_NORMAL_PROMPT,
    NORMAL_LABEL,
    AnomalyDefinition,
    ClassEntry,
    Config,
    DefVadError,
    FeatureSequence,
    ValidationError,
    VideoRecord,
    definition_from_classes,
    derive_seed,
    make_rng,
)
from .data import FeatureRepository, KnnIndex
from .evaluate import roc_auc
from .losses import BatchViews, total_loss
from .model import AnomalyDetector, TextEncoder, save_checkpoint, score_sequence
from .synthesis import SynthesizedSample, synthesize

CLASS_NAME_MODE = "class_name"
DESCRIPTION_MODE = "description"


@dataclass
class TrainingBatch:
    """Assembled inputs for one optimization step."""

    features: torch.Tensor       # (B, Lmax, E)
    mask: torch.Tensor           # (B, Lmax) bool
    pseudo_label: torch.Tensor   # (B, Lmax)
    y_hat: torch.Tensor          # (B,)
    class_index: torch.Tensor    # (B,)
    segment_counts: torch.Tensor  # (B,)
    definition: AnomalyDefinition
    z_embed: np.ndarray          # (C, E)
    mode: str
    anchor_ids: List[str]


def taxonomy_classes(records: Sequence[VideoRecord]) -> List[str]:
    return sorted({r.video_label for r in records if r.split == "train" and r.is_abnormal})


def sample_batch(
    train_records: Sequence[VideoRecord],
    sequences: Dict[str, FeatureSequence],
    knn: KnnIndex,
    cfg: Config,
    rng: np.random.Generator,
    text_encoder: TextEncoder,
    taxonomy: Sequence[str],
) -> TrainingBatch:
    """Synthesize one batch and pick its definition mode.

    Draw order: the definition-mode coin first, then one synthesis pass per
    sample. Class-name mode uses the fixed taxonomy plus the normal entry;
    description mode builds the definition from the batch's abnormal-sample
    descriptions, labeling every other sample normal relative to that set.
    """
    normal_ids = [r.video_id for r in train_records if not r.is_abnormal]
    abnormal = [r for r in train_records if r.is_abnormal]
    if not normal_ids or not abnormal:
        raise ValidationError("training needs at least one normal and one abnormal video")
    normal_set = [sequences[v] for v in normal_ids]
    abnormal_set = [sequences[r.video_id] for r in abnormal]
    by_id = {r.video_id: r for r in train_records}

    use_class_names = bool(rng.uniform() < 0.5)
    samples: List[SynthesizedSample] = []
    for _ in range(cfg.batch_size):
        samples.append(synthesize(normal_set, abnormal_set, knn, cfg, rng))

    mode = CLASS_NAME_MODE if use_class_names else DESCRIPTION_MODE
    if mode == DESCRIPTION_MODE:
        descriptions: List[str] = []
        for s in samples:
            if s.video_level_label == 1:
                desc = by_id[s.anchor_id].description
                if desc and desc not in descriptions:
                    descriptions.append(desc)
        if not descriptions:
            # no abnormal anchors this batch: fall back to the taxonomy
            mode = CLASS_NAME_MODE

    if mode == CLASS_NAME_MODE:
        definition = definition_from_classes(list(taxonomy))
        class_index = [
            definition.index_of(by_id[s.anchor_id].video_label)
            if s.video_level_label == 1
            else definition.normal_index
            for s in samples
        ]
    else:
        entries = [
            ClassEntry(class_id=f"desc_{i}", prompt_text=text)
            for i, text in enumerate(descriptions)
        ]
        entries.append(ClassEntry(class_id=NORMAL_LABEL, prompt_text=DEFAULT_NORMAL_PROMPT))
        definition = AnomalyDefinition(entries=tuple(entries), normal_index=len(entries) - 1)
        desc_pos = {text: i for i, text in enumerate(descriptions)}
        class_index = [
            desc_pos[by_id[s.anchor_id].description]
            if s.video_level_label == 1
            else definition.normal_index
            for s in samples
        ]

    z_embed = text_encoder.encode(definition)

    max_len = max(s.total_length for s in samples)
    b = len(samples)
    e = samples[0].features.shape[1]
    feats = torch.zeros((b, max_len, e), dtype=torch.float32)
    mask = torch.zeros((b, max_len), dtype=torch.bool)
    pseudo = torch.zeros((b, max_len), dtype=torch.float32)
    for i, s in enumerate(samples):
        n = s.total_length
        feats[i, :n] = torch.from_numpy(s.features)
        mask[i, :n] = True
        pseudo[i, :n] = torch.from_numpy(s.pseudo_label.astype(np.float32))

    return TrainingBatch(
        features=feats,
        mask=mask,
        pseudo_label=pseudo,
        y_hat=torch.tensor([float(s.video_level_label) for s in samples]),
        class_index=torch.tensor(class_index, dtype=torch.long),
        segment_counts=torch.tensor([s.segment_count for s in samples], dtype=torch.long),
        definition=definition,
        z_embed=z_embed,
        mode=mode,
        anchor_ids=[s.anchor_id for s in samples],
    )


def batch_views(model: AnomalyDetector, batch: TrainingBatch) -> BatchViews:
    out = model(batch.features.to(model.dtype_), batch.z_embed, batch.mask)
    return BatchViews(
        y_bin=out["y_bin"],
        y_mul=out["y_mul"],
        v_t=out["v_t"],
        z_t=out["z_t"],
        pseudo_label=batch.pseudo_label.to(out["y_bin"].dtype),
        y_hat=batch.y_hat,
        class_index=batch.class_index,
        mask=batch.mask,
        segment_counts=batch.segment_counts,
    )


@dataclass
class TrainState:
    model: AnomalyDetector
    optimizer: torch.optim.Optimizer
    cfg: Config
    epoch: int = 0
    step: int = 0
    best_metric: Optional[float] = None
    best_parameters: Optional[dict] = None


def make_train_state(cfg: Config, embed_width: int) -> TrainState:
    model = AnomalyDetector(cfg, embed_width=embed_width)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=cfg.weight_decay,
    )
    return TrainState(model=model, optimizer=optimizer, cfg=cfg)


def train_step(state: TrainState, batch: TrainingBatch) -> Dict[str, float]:
    """One AdamW update on the summed objective."""
    state.optimizer.zero_grad()
    views = batch_views(state.model, batch)
    loss, breakdown = total_loss(views, state.cfg)
    if not math.isfinite(breakdown["loss_total"]):
        raise DefVadError(
            "non-finite loss; batch composition: "
            + json.dumps({"mode": batch.mode, "anchors": batch.anchor_ids})
        )
    loss.backward()
    if state.cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(state.model.parameters(), state.cfg.grad_clip)
    state.optimizer.step()
    state.step += 1
    return breakdown


def validation_frame_auc(
    model: AnomalyDetector,
    text_encoder: TextEncoder,
    repo: FeatureRepository,
    records: Sequence[VideoRecord],
    taxonomy: Sequence[str],
) -> Optional[float]:
    labeled = [r for r in records if r.frame_labels is not None]
    if not labeled:
        return None
    definition = definition_from_classes(list(taxonomy))
    scores, labels = [], []
    for r in labeled:
        seq = repo.read(r.video_id)
        result = score_sequence(model, text_encoder, seq, definition)
        scores.append(result.frame_scores)
        labels.append(np.asarray(r.frame_labels))
    scores = np.concatenate(scores)
    labels = np.concatenate(labels)
    if labels.min() == labels.max():
        return None
    return roc_auc(scores, labels)


@dataclass
class FitResult:
    state: TrainState
    log_lines: List[dict]
    best_val_auc: Optional[float]
    checkpoint_path: Optional[Path] = None


def fit(
    records: Sequence[VideoRecord],
    repo: FeatureRepository,
    knn: KnnIndex,
    cfg: Config,
    text_encoder: TextEncoder,
    out_dir: Optional[Path] = None,
) -> FitResult:
    """Full training run with per-epoch validation and best-checkpoint keeping.

    Batch composition is keyed by (seed, step) substreams, so resuming at
    step t reproduces an uninterrupted run's batches.
    """
    train_records = [r for r in records if r.split == "train"]
    val_records = [r for r in records if r.split == "val"]
    if not train_records:
        raise ValidationError("train split is empty")
    taxonomy = taxonomy_classes(records)
    sequences = {r.video_id: repo.read(r.video_id) for r in train_records}
    embed_width = next(iter(sequences.values())).width

    state = make_train_state(cfg, embed_width)
    steps_per_epoch = math.ceil(len(train_records) / cfg.batch_size)
    log_lines: List[dict] = []

    def snapshot() -> dict:
        return {k: v.detach().clone() for k, v in state.model.state_dict().items()}

    best_auc: Optional[float] = None
    state.best_parameters = snapshot()

    for epoch in range(cfg.epochs):
        state.epoch = epoch
        for _ in range(steps_per_epoch):
            rng = make_rng(derive_seed(cfg.seed, "batch", state.step))
            batch = sample_batch(
                train_records, sequences, knn, cfg, rng, text_encoder, taxonomy
            )
            breakdown = train_step(state, batch)
            log_lines.append(
                {
                    "step": state.step,
                    "epoch": epoch,
                    "mode": batch.mode,
                    **breakdown,
                }
            )
        val_auc = validation_frame_auc(
            state.model, text_encoder, repo, val_records, taxonomy
        )
        log_lines.append({"epoch": epoch, "summary": True, "val_auc": val_auc})
        if val_auc is not None and (best_auc is None or val_auc >= best_auc):
            best_auc = val_auc
            state.best_parameters = snapshot()
            state.best_metric = best_auc

    if best_auc is None:
        # no labeled validation data: keep the final parameters
        state.best_parameters = snapshot()
    state.model.load_state_dict(state.best_parameters)

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out_dir / "checkpoint.bin"
        save_checkpoint(state.model, checkpoint_path)
        with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
            for line in log_lines:
                fh.write(json.dumps(line) + "\n")
    return FitResult(
        state=state,
        log_lines=log_lines,
        best_val_auc=best_auc,
        checkpoint_path=checkpoint_path,
    )
