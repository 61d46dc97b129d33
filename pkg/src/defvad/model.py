"""The detection network: text encoding, temporal encoding, fusion, heads."""

from __future__ import annotations

import json
import re
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import (
    AnomalyDefinition,
    Config,
    CorruptFileError,
    FeatureSequence,
    NotFoundError,
    ScoreResult,
    ValidationError,
    config_hash,
    derive_seed,
    make_rng,
    validate_config,
)

TOY_MODE = "toy_prototype"
EXTERNAL_MODE = "external_embedding"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class TextEncoder:
    """Deterministic stand-in for a pretrained text encoder.

    Known class ids resolve to their planted prototype; any other prompt is
    embedded by averaging seeded random projections of its hashed tokens and
    L2-normalizing. External embeddings pass through untouched.
    """

    def __init__(self, embed_width: int, prototypes: Optional[Dict[str, np.ndarray]] = None,
                 token_seed: int = 0):
        self.embed_width = embed_width
        self.prototypes = dict(prototypes or {})
        self.token_seed = token_seed
        self._token_cache: Dict[str, np.ndarray] = {}
        for name, vec in self.prototypes.items():
            if vec.shape != (embed_width,):
                raise ValidationError(
                    f"prototype {name!r} has shape {vec.shape}, expected ({embed_width},)"
                )

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            rng = make_rng(derive_seed(self.token_seed, "tok", token))
            vec = rng.standard_normal(self.embed_width)
            self._token_cache[token] = vec
        return vec

    def embed_prompt(self, text: str) -> np.ndarray:
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            raise ValidationError(f"prompt {text!r} has no tokens to embed")
        acc = np.zeros(self.embed_width, dtype=np.float64)
        for tok in tokens:
            acc += self._token_vector(tok)
        acc /= len(tokens)
        norm = np.linalg.norm(acc)
        if norm < 1e-12:
            raise ValidationError(f"prompt {text!r} embedded to a zero vector")
        return (acc / norm).astype(np.float32)

    def encode(self, definition: AnomalyDefinition, mode: str = TOY_MODE) -> np.ndarray:
        """Return the (C, E) class embedding matrix for a definition."""
        rows = []
        for entry in definition.entries:
            if mode == EXTERNAL_MODE:
                if entry.embedding is None:
                    raise ValidationError(
                        f"entry {entry.class_id!r}: external mode requires an embedding"
                    )
                vec = np.asarray(entry.embedding, dtype=np.float32)
            elif mode == TOY_MODE:
                if entry.class_id in self.prototypes:
                    vec = self.prototypes[entry.class_id]
                else:
                    vec = self.embed_prompt(entry.prompt_text)
            else:
                raise ValidationError(f"unknown text encoder mode {mode!r}")
            if vec.shape != (self.embed_width,):
                raise ValidationError(
                    f"entry {entry.class_id!r}: embedding width {vec.shape} != ({self.embed_width},)"
                )
            rows.append(vec)
        return np.stack(rows).astype(np.float32)


def _apply_rope(x: torch.Tensor, positions: torch.Tensor, base: float = 10000.0) -> torch.Tensor:
    # x: (B, H, L, Dh) with even Dh; rotate interleaved channel pairs
    dh = x.shape[-1]
    half = dh // 2
    inv_freq = base ** (
        -torch.arange(0, half, dtype=x.dtype, device=x.device) * 2.0 / dh
    )
    angles = positions.to(x.dtype)[:, None] * inv_freq[None, :]  # (L, half)
    cos = torch.cos(angles)
    sin = torch.sin(angles)
    x_even = x[..., 0::2]
    x_odd = x[..., 1::2]
    out_even = x_even * cos - x_odd * sin
    out_odd = x_even * sin + x_odd * cos
    return torch.stack((out_even, out_odd), dim=-1).flatten(-2)


class MultiHeadAttention(nn.Module):
    def __init__(self, hidden: int, heads: int, dtype=torch.float32):
        super().__init__()
        if hidden % heads != 0:
            raise ValidationError(f"hidden size {hidden} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = hidden // heads
        self.q_proj = nn.Linear(hidden, hidden, dtype=dtype)
        self.k_proj = nn.Linear(hidden, hidden, dtype=dtype)
        self.v_proj = nn.Linear(hidden, hidden, dtype=dtype)
        self.out_proj = nn.Linear(hidden, hidden, dtype=dtype)

    def forward(self, query, keyvalue, key_mask=None, rope=False):
        # query (B, Lq, H), keyvalue (B, Lk, H), key_mask (B, Lk) bool valid
        b, lq, hidden = query.shape
        lk = keyvalue.shape[1]

        def split(x):
            return x.view(b, -1, self.heads, self.head_dim).transpose(1, 2)

        q = split(self.q_proj(query))
        k = split(self.k_proj(keyvalue))
        v = split(self.v_proj(keyvalue))
        if rope:
            if self.head_dim % 2 != 0:
                raise ValidationError("rotary encoding needs an even head dimension")
            q = _apply_rope(q, torch.arange(lq, device=q.device))
            k = _apply_rope(k, torch.arange(lk, device=k.device))
        scores = q @ k.transpose(-1, -2) / self.head_dim**0.5
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, lq, hidden)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, hidden: int, dtype=torch.float32):
        super().__init__()
        self.fc1 = nn.Linear(hidden, 4 * hidden, dtype=dtype)
        self.fc2 = nn.Linear(4 * hidden, hidden, dtype=dtype)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderBlock(nn.Module):
    """Pre-norm self-attention with rotary positions, then a feed-forward."""

    def __init__(self, hidden: int, heads: int, dtype=torch.float32):
        super().__init__()
        self.ln1 = nn.LayerNorm(hidden, dtype=dtype)
        self.attn = MultiHeadAttention(hidden, heads, dtype=dtype)
        self.ln2 = nn.LayerNorm(hidden, dtype=dtype)
        self.ffn = FeedForward(hidden, dtype=dtype)

    def forward(self, x, mask):
        h = self.ln1(x)
        x = x + self.attn(h, h, key_mask=mask, rope=True)
        return x + self.ffn(self.ln2(x))


class CoAttentionBlock(nn.Module):
    """One fusion layer: each modality cross-attends to the other plus FFN.

    Both branches are updated simultaneously from the incoming pair, with
    residual connections around the cross-attention and the feed-forward.
    """

    def __init__(self, hidden: int, heads: int, dtype=torch.float32):
        super().__init__()
        self.ln_vq = nn.LayerNorm(hidden, dtype=dtype)
        self.ln_vkv = nn.LayerNorm(hidden, dtype=dtype)
        self.attn_v = MultiHeadAttention(hidden, heads, dtype=dtype)
        self.ln_v2 = nn.LayerNorm(hidden, dtype=dtype)
        self.ffn_v = FeedForward(hidden, dtype=dtype)
        self.ln_zq = nn.LayerNorm(hidden, dtype=dtype)
        self.ln_zkv = nn.LayerNorm(hidden, dtype=dtype)
        self.attn_z = MultiHeadAttention(hidden, heads, dtype=dtype)
        self.ln_z2 = nn.LayerNorm(hidden, dtype=dtype)
        self.ffn_z = FeedForward(hidden, dtype=dtype)

    def forward(self, v, z, v_mask):
        v_new = v + self.attn_v(self.ln_vq(v), self.ln_vkv(z))
        z_new = z + self.attn_z(self.ln_zq(z), self.ln_zkv(v), key_mask=v_mask)
        v_new = v_new + self.ffn_v(self.ln_v2(v_new))
        z_new = z_new + self.ffn_z(self.ln_z2(z_new))
        return v_new, z_new


def _replicate_pad_rows(x: torch.Tensor, pad: int) -> torch.Tensor:
    # x (L, H): clamp-index so L=1 still yields kernel-many replicated rows
    length = x.shape[0]
    idx = torch.clamp(torch.arange(-pad, length + pad, device=x.device), 0, length - 1)
    return x[idx]


def attention_heads(hidden_size: int) -> int:
    return max(1, hidden_size // 64)


class AnomalyDetector(nn.Module):
    """Maps (feature sequence, class embeddings) to per-step scores.

    A shared input projection lifts both modalities from the feature width E
    to the hidden width. Detection runs two 1-D convolutions with replicate
    padding, one on pre-fusion and one on post-fusion features, blended by a
    learnable gate. Classification is a cosine-similarity matrix between
    linearly projected representations of both modalities.
    """

    def __init__(self, cfg: Config, embed_width: int, dtype=torch.float32):
        super().__init__()
        validate_config(cfg)
        self.cfg = cfg
        self.embed_width = embed_width
        hidden = cfg.hidden_size
        heads = attention_heads(hidden)
        if (hidden // heads) % 2 != 0:
            raise ValidationError(
                f"hidden_size {hidden} gives odd head dimension {hidden // heads}"
            )
        self.dtype_ = dtype
        if embed_width != hidden:
            self.input_proj = nn.Linear(embed_width, hidden, dtype=dtype)
        else:
            self.input_proj = nn.Identity()
        self.encoder = nn.ModuleList(
            EncoderBlock(hidden, heads, dtype=dtype) for _ in range(cfg.encoder_layers)
        )
        self.fusion = nn.ModuleList(
            CoAttentionBlock(hidden, heads, dtype=dtype) for _ in range(cfg.fusion_layers)
        )
        self.conv_pre = nn.Conv1d(hidden, 1, cfg.conv_kernel, dtype=dtype)
        self.conv_post = nn.Conv1d(hidden, 1, cfg.conv_kernel, dtype=dtype)
        self.gate_raw = nn.Parameter(torch.zeros((), dtype=dtype))
        self.proj_v = nn.Linear(hidden, hidden, dtype=dtype)
        self.proj_t = nn.Linear(hidden, hidden, dtype=dtype)
        self.reset_parameters(cfg.seed)

    def reset_parameters(self, seed: int) -> None:
        """Deterministic init tuned for short optimization budgets.

        Residual-branch output layers start small so the encoded features
        begin close to the input projection; the scoring convolutions start
        near zero so their weights are dominated by the learned direction
        after few steps; the classification projections start at identity to
        keep the shared-space cosine structure.
        """
        gen = torch.Generator().manual_seed(derive_seed(seed, "init"))
        for module in self.modules():
            if isinstance(module, nn.Linear):
                bound = module.weight.shape[1] ** -0.5
                module.weight.data.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.data.zero_()
            elif isinstance(module, nn.Conv1d):
                module.weight.data.uniform_(-1e-3, 1e-3, generator=gen)
                if module.bias is not None:
                    module.bias.data.zero_()
            elif isinstance(module, nn.LayerNorm):
                module.weight.data.fill_(1.0)
                module.bias.data.zero_()
        for module in self.modules():
            if isinstance(module, MultiHeadAttention):
                module.out_proj.weight.data.mul_(0.1)
            elif isinstance(module, FeedForward):
                module.fc2.weight.data.mul_(0.1)
        hidden = self.cfg.hidden_size
        eye = torch.eye(hidden, dtype=self.proj_v.weight.dtype)
        self.proj_v.weight.data.copy_(eye)
        self.proj_t.weight.data.copy_(eye)
        self.gate_raw.data.zero_()

    # ---- stages -----------------------------------------------------------

    def project_text(self, z_embed) -> torch.Tensor:
        z = torch.as_tensor(z_embed, dtype=self.dtype_)
        return self.input_proj(z)

    def encode_video(self, feats: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        # feats (B, L, E); mask (B, L) bool valid, None means all valid
        if not torch.isfinite(feats).all():
            raise ValidationError("video features contain non-finite entries")
        if mask is None:
            mask = torch.ones(feats.shape[:2], dtype=torch.bool, device=feats.device)
        x = self.input_proj(feats)
        for block in self.encoder:
            x = block(x, mask)
        return x * mask.unsqueeze(-1)

    def fuse(self, v_t: torch.Tensor, z_t: torch.Tensor,
             mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        # v_t (B, L, H); z_t (C, H) shared or (B, C, H) per sample
        if z_t.dim() == 2:
            z = z_t.unsqueeze(0).expand(v_t.shape[0], -1, -1)
        else:
            z = z_t
        if mask is None:
            mask = torch.ones(v_t.shape[:2], dtype=torch.bool, device=v_t.device)
        v = v_t
        for block in self.fusion:
            v, z = block(v, z, mask)
        return v * mask.unsqueeze(-1), z

    def detect(self, v_t: torch.Tensor, v_u: torch.Tensor,
               lengths: Sequence[int]) -> torch.Tensor:
        """Gated mix of the pre- and post-fusion convolution pathways.

        Convolutions run per sample on the valid prefix so replicate padding
        sits at each sample's own boundary. Returns (B, Lmax) logits with
        zeros past each sample's length.
        """
        pad = self.cfg.conv_kernel // 2
        gate = torch.sigmoid(self.gate_raw)
        out = v_t.new_zeros(v_t.shape[:2])
        for b, length in enumerate(lengths):
            pre = self.conv_pre(
                _replicate_pad_rows(v_t[b, :length], pad).T.unsqueeze(0)
            ).squeeze(0).squeeze(0)
            if self.cfg.language_guided:
                post = self.conv_post(
                    _replicate_pad_rows(v_u[b, :length], pad).T.unsqueeze(0)
                ).squeeze(0).squeeze(0)
                y = gate * post + (1.0 - gate) * pre
            else:
                y = pre
            out[b, :length] = y
        return out

    def classify(self, v_u: torch.Tensor, z_u: torch.Tensor,
                 mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        # returns (B, L, C) cosine similarities of projected representations
        pv = self.proj_v(v_u)
        pt = self.proj_t(z_u)
        pv = pv / pv.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        pt = pt / pt.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        y_mul = pv @ pt.transpose(-1, -2)
        if mask is not None:
            y_mul = y_mul * mask.unsqueeze(-1)
        return y_mul

    def forward(self, feats: torch.Tensor, z_embed,
                mask: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
        """Full pipeline on a padded batch.

        With language guidance disabled, detection consumes only the
        pre-fusion pathway; fusion still runs so classification stays
        definition-conditioned.
        """
        if mask is None:
            mask = torch.ones(feats.shape[:2], dtype=torch.bool, device=feats.device)
        lengths = mask.sum(dim=1).tolist()
        v_t = self.encode_video(feats, mask)
        z_t = self.project_text(z_embed)
        v_u, z_u = self.fuse(v_t, z_t, mask)
        y_bin = self.detect(v_t, v_u, lengths)
        y_mul = self.classify(v_u, z_u, mask)
        return {
            "v_t": v_t,
            "v_u": v_u,
            "z_t": z_t,
            "z_u": z_u,
            "y_bin": y_bin,
            "y_mul": y_mul,
        }


def video_class_probs(y_mul: np.ndarray, normal_index: int) -> np.ndarray:
    """Video-level class probabilities from the per-step similarity matrix.

    Abnormal classes pool with a temporal max, the normal class with a
    temporal min, and the pooled values pass through a softmax.
    """
    y_mul = np.asarray(y_mul, dtype=np.float64)
    if y_mul.ndim != 2 or y_mul.shape[1] < 2:
        raise ValidationError(f"y_mul must be (L, C>=2), got {y_mul.shape}")
    if not 0 <= normal_index < y_mul.shape[1]:
        raise ValidationError(f"normal_index {normal_index} out of range")
    logits = y_mul.max(axis=0)
    logits[normal_index] = y_mul[:, normal_index].min()
    logits = logits - logits.max()
    exp = np.exp(logits)
    return exp / exp.sum()


def score_sequence(
    model: AnomalyDetector,
    text_encoder: TextEncoder,
    seq: FeatureSequence,
    definition: AnomalyDefinition,
    mode: str = TOY_MODE,
) -> ScoreResult:
    """Deterministic inference for one (video, definition) pair."""
    if seq.width != model.embed_width:
        raise ValidationError(
            f"{seq.video_id!r}: feature width {seq.width} != model width {model.embed_width}"
        )
    z_embed = text_encoder.encode(definition, mode)
    feats = torch.as_tensor(seq.features, dtype=model.dtype_).unsqueeze(0)
    with torch.no_grad():
        out = model(feats, z_embed)
    y_bin = out["y_bin"][0].numpy().astype(np.float64)
    y_mul = out["y_mul"][0].numpy().astype(np.float64)
    probs = video_class_probs(y_mul, definition.normal_index)
    return ScoreResult(
        video_id=seq.video_id,
        y_bin=y_bin,
        y_mul=y_mul,
        video_class_probs=probs,
        definition_used=definition,
    )


# ---- checkpoint format -----------------------------------------------------

CKPT_MAGIC = b"DVCP"
CKPT_VERSION = 1


def save_checkpoint(model: AnomalyDetector, path) -> None:
    """Header (config hash + parameter manifest) then a little-endian f32 payload."""
    names = sorted(name for name, _ in model.named_parameters())
    params = dict(model.named_parameters())
    manifest = []
    offset = 0
    blobs = []
    for name in names:
        tensor = params[name].detach().to(torch.float32).contiguous()
        manifest.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        offset += tensor.numel()
        blobs.append(tensor.numpy().astype("<f4").tobytes())
    header = json.dumps(
        {
            "version": CKPT_VERSION,
            "config_hash": config_hash(model.cfg),
            "config": asdict(model.cfg),
            "embed_width": model.embed_width,
            "params": manifest,
        }
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expected_config: Optional[Config] = None,
                    force: bool = False) -> AnomalyDetector:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"checkpoint {path} does not exist")
    raw = path.read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CorruptFileError(f"{path}: bad checkpoint magic")
    (header_len,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    if header.get("version") != CKPT_VERSION:
        raise CorruptFileError(f"{path}: unsupported checkpoint version")
    cfg = Config(**header["config"])
    if expected_config is not None and not force:
        if config_hash(expected_config) != header["config_hash"]:
            raise ValidationError(
                "checkpoint config hash mismatch; pass force=True to load anyway"
            )
    payload = np.frombuffer(raw[8 + header_len :], dtype="<f4")
    model = AnomalyDetector(cfg, embed_width=int(header["embed_width"]))
    state = dict(model.named_parameters())
    with torch.no_grad():
        for item in header["params"]:
            name, shape, offset = item["name"], item["shape"], item["offset"]
            if name not in state:
                raise CorruptFileError(f"{path}: unknown parameter {name!r}")
            numel = int(np.prod(shape)) if shape else 1
            chunk = payload[offset : offset + numel]
            if chunk.size != numel:
                raise CorruptFileError(f"{path}: payload truncated at {name!r}")
            state[name].copy_(torch.from_numpy(chunk.copy()).reshape(shape))
    return model
