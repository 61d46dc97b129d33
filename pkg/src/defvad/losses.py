"""The four weak-supervision objectives and their unweighted sum."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch

from .core import Config, ValidationError, topk_count

_EPS = 1e-8


def _clamped_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(x, _EPS, 1.0 - _EPS))


def _valid(values: torch.Tensor, mask: Optional[torch.Tensor]) -> torch.Tensor:
    if mask is None:
        return values
    return values[mask]


def mil_loss(y_bin: torch.Tensor, y_hat: float,
             mask: Optional[torch.Tensor] = None, divisor: int = 16) -> torch.Tensor:
    """Binary cross-entropy on the mean of the top-k step probabilities."""
    logits = _valid(y_bin, mask)
    if logits.numel() == 0:
        raise ValidationError("mil_loss needs at least one valid step")
    k = topk_count(logits.numel(), divisor)
    top = torch.topk(logits, k).values
    s = torch.clamp(torch.sigmoid(top).mean(), _EPS, 1.0 - _EPS)
    y = float(y_hat)
    return -y * torch.log(s) - (1.0 - y) * torch.log(1.0 - s)


def mil_align_loss(y_mul: torch.Tensor, class_index: int,
                   mask: Optional[torch.Tensor] = None,
                   temperature: float = 0.07, divisor: int = 16) -> torch.Tensor:
    """Cross-entropy over per-class top-k pooled similarities."""
    if y_mul.dim() != 2 or y_mul.shape[1] < 2:
        raise ValidationError(f"y_mul must be (L, C>=2), got {tuple(y_mul.shape)}")
    if mask is not None:
        y_mul = y_mul[mask]
    if y_mul.shape[0] == 0:
        raise ValidationError("mil_align_loss needs at least one valid step")
    if not 0 <= class_index < y_mul.shape[1]:
        raise ValidationError(f"class index {class_index} out of range")
    k = topk_count(y_mul.shape[0], divisor)
    pooled = torch.topk(y_mul, k, dim=0).values.mean(dim=0)  # (C,)
    logp = torch.log_softmax(pooled / temperature, dim=0)
    return -logp[class_index]


def dvs_loss(y_bin: torch.Tensor, pseudo_label: torch.Tensor, y_hat: float,
             mask: Optional[torch.Tensor] = None, divisor: int = 16,
             include_dense_term: bool = True) -> torch.Tensor:
    """Pseudo-label loss of the synthesis module.

    Abnormal samples: top-k pooling restricted to pseudo-label-1 steps plus
    the dense per-step term; normal samples: the complementary top-k term
    over all valid steps.
    """
    logits = _valid(y_bin, mask)
    pseudo = _valid(pseudo_label, mask).to(logits.dtype)
    if logits.numel() == 0:
        raise ValidationError("dvs_loss needs at least one valid step")
    if pseudo.shape != logits.shape:
        raise ValidationError("pseudo_label length must match the valid steps")
    length = logits.numel()
    k = topk_count(length, divisor)
    probs = torch.sigmoid(logits)
    y = float(y_hat)

    loss = logits.new_zeros(())
    if y >= 0.5:
        region = pseudo > 0.5
        region_count = int(region.sum().item())
        if region_count == 0:
            raise ValidationError("abnormal sample arrived with an all-zero pseudo label")
        ka = min(k, region_count)
        top_region = torch.topk(probs[region], ka).values
        loss = loss - _clamped_log(top_region.mean())
        if include_dense_term:
            loss = loss - (pseudo * _clamped_log(probs)).sum() / length
    else:
        top_all = torch.topk(probs, k).values
        loss = loss - _clamped_log(1.0 - top_all.mean())
        if include_dense_term:
            # pseudo is all-zero for normal samples; keep the term for symmetry
            loss = loss - (pseudo * _clamped_log(probs)).sum() / length
    return loss


def aggregate_pos_neg(v_t: torch.Tensor, y_bin: torch.Tensor, eta: float,
                      mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Score-weighted temporal aggregates: foreground and background vectors."""
    if mask is not None:
        v_t = v_t[mask]
        y_bin = y_bin[mask]
    if y_bin.numel() == 0:
        raise ValidationError("aggregate_pos_neg needs at least one valid step")
    w_pos = torch.softmax(y_bin / eta, dim=0)
    w_neg = torch.softmax(-y_bin / eta, dim=0)
    return w_pos @ v_t, w_neg @ v_t


@dataclass
class BatchViews:
    """Per-batch tensors consumed by the losses.

    ``z_t`` holds the pre-fusion text features of the batch definition; each
    sample's own class row is selected through ``class_index``. Lists are
    indexed by sample; padded tensors carry ``mask``.
    """

    y_bin: torch.Tensor          # (B, Lmax)
    y_mul: torch.Tensor          # (B, Lmax, C)
    v_t: torch.Tensor            # (B, Lmax, H)
    z_t: torch.Tensor            # (C, H)
    pseudo_label: torch.Tensor   # (B, Lmax)
    y_hat: torch.Tensor          # (B,)
    class_index: torch.Tensor    # (B,)
    mask: torch.Tensor           # (B, Lmax) bool
    segment_counts: torch.Tensor  # (B,)

    def __post_init__(self):
        b = self.y_bin.shape[0]
        for name in ("y_mul", "v_t", "pseudo_label", "y_hat", "class_index",
                     "mask", "segment_counts"):
            if getattr(self, name).shape[0] != b:
                raise ValidationError(f"batch field {name} disagrees on batch size")

    @property
    def batch_size(self) -> int:
        return self.y_bin.shape[0]

    @property
    def abnormal_count(self) -> int:
        return int((self.y_hat >= 0.5).sum().item())


def contrastive_neg_loss(batch: BatchViews, tau: float, eta: float) -> torch.Tensor:
    """Contrastive alignment with the background aggregate as hard negative.

    Video rows are ordered [abnormal foreground | normal foreground |
    abnormal background]; text rows are each abnormal sample's own pre-fusion
    class feature, so the diagonal pairs every abnormal video with its own
    description. Returns 0 when the batch holds no abnormal samples.
    """
    abnormal = [i for i in range(batch.batch_size) if batch.y_hat[i] >= 0.5]
    normal = [i for i in range(batch.batch_size) if batch.y_hat[i] < 0.5]
    b2 = len(abnormal)
    if b2 == 0:
        return batch.y_bin.new_zeros(())

    pos = {}
    neg = {}
    for i in range(batch.batch_size):
        pos[i], neg[i] = aggregate_pos_neg(
            batch.v_t[i], batch.y_bin[i], eta, mask=batch.mask[i]
        )
    video_rows = torch.stack(
        [pos[i] for i in abnormal] + [pos[i] for i in normal] + [neg[i] for i in abnormal]
    )
    text_rows = batch.z_t[batch.class_index[abnormal]]

    vn = video_rows / video_rows.norm(dim=1, keepdim=True).clamp_min(1e-12)
    tn = text_rows / text_rows.norm(dim=1, keepdim=True).clamp_min(1e-12)
    return contrastive_from_similarity(vn @ tn.T, b2, tau)


def contrastive_from_similarity(s: torch.Tensor, b2: int, tau: float) -> torch.Tensor:
    """Both InfoNCE directions over a (B1 + B2, B2) similarity matrix.

    Text-to-video contrasts each text column against every video row; the
    video-to-text direction runs only over the abnormal foreground rows.
    """
    if s.dim() != 2 or s.shape[1] != b2 or s.shape[0] < b2:
        raise ValidationError(f"similarity matrix shape {tuple(s.shape)} inconsistent with B2={b2}")
    logits = s / tau
    diag = torch.arange(b2)
    loss_t2v = (torch.logsumexp(logits, dim=0) - logits[diag, diag]).sum()
    loss_v2t = (torch.logsumexp(logits[:b2], dim=1) - logits[diag, diag]).sum()
    return loss_t2v + loss_v2t


def total_loss(batch: BatchViews, cfg: Config) -> Tuple[torch.Tensor, Dict[str, float]]:
    """Unweighted sum of the four objectives with a per-term breakdown.

    MIL, alignment, and pseudo-label terms average over the batch; the
    contrastive term is a batch-level sum as defined. Ablation flags zero
    out the pseudo-label and contrastive terms.
    """
    b = batch.batch_size
    zero = batch.y_bin.new_zeros(())
    mil = zero.clone()
    align = zero.clone()
    dvs = zero.clone()
    for i in range(b):
        mask = batch.mask[i]
        y_hat = float(batch.y_hat[i].item())
        mil = mil + mil_loss(batch.y_bin[i], y_hat, mask, cfg.topk_divisor)
        align = align + mil_align_loss(
            batch.y_mul[i], int(batch.class_index[i].item()), mask,
            cfg.mil_align_temperature, cfg.topk_divisor,
        )
        if cfg.use_dvs:
            include_dense = True
            if cfg.restrict_dvs_third_term_to_m_gt_1:
                include_dense = int(batch.segment_counts[i].item()) > 1
            dvs = dvs + dvs_loss(
                batch.y_bin[i], batch.pseudo_label[i], y_hat, mask,
                cfg.topk_divisor, include_dense_term=include_dense,
            )
    mil = mil / b
    align = align / b
    dvs = dvs / b
    neg = contrastive_neg_loss(batch, cfg.tau, cfg.eta) if cfg.use_neg else zero
    total = mil + align + dvs + neg
    breakdown = {
        "loss_mil": float(mil.item()),
        "loss_align": float(align.item()),
        "loss_dvs": float(dvs.item()),
        "loss_neg": float(neg.item()),
        "loss_total": float(total.item()),
    }
    return total, breakdown
