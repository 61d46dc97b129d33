"""Stateless HTTP scoring service over a loaded checkpoint and repository."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .core import AnomalyDefinition, ValidationError, config_hash
from .data import FeatureRepository, load_manifest, load_prototypes
from .model import AnomalyDetector, TextEncoder, load_checkpoint, score_sequence


class DefinitionClass(BaseModel):
    class_id: str
    prompt_text: str = ""
    embedding: Optional[List[float]] = None


class DefinitionPayload(BaseModel):
    classes: List[DefinitionClass]
    normal_index: int


class ScoreRequest(BaseModel):
    video_id: str
    definition: DefinitionPayload


class ServiceState:
    def __init__(self, checkpoint_path, data_dir, split: Optional[str] = None):
        self.checkpoint_path = Path(checkpoint_path)
        self.data_dir = Path(data_dir)
        self.split = split
        self.model: Optional[AnomalyDetector] = None
        self.text_encoder: Optional[TextEncoder] = None
        self.repo: Optional[FeatureRepository] = None
        self.records: Dict[str, object] = {}
        self.config_hash: str = ""

    @property
    def loaded(self) -> bool:
        return self.model is not None

    def load(self) -> None:
        model = load_checkpoint(self.checkpoint_path)
        records = load_manifest(self.data_dir / "manifest.jsonl")
        if self.split:
            records = [r for r in records if r.split == self.split]
        repo = FeatureRepository(self.data_dir)
        prototypes = {}
        proto_path = self.data_dir / "prototypes.json"
        if proto_path.exists():
            prototypes = load_prototypes(proto_path)
        self.model = model
        self.text_encoder = TextEncoder(model.embed_width, prototypes)
        self.repo = repo
        self.records = {r.video_id: r for r in records}
        self.config_hash = config_hash(model.cfg)


def create_app(checkpoint_path, data_dir, split: Optional[str] = None,
               defer_load: bool = False) -> FastAPI:
    """Build the service; with defer_load the caller triggers state.load()."""
    app = FastAPI(title="defvad scoring service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    state = ServiceState(checkpoint_path, data_dir, split)
    app.state.service = state
    if not defer_load:
        state.load()

    def require_loaded() -> ServiceState:
        if not state.loaded:
            raise HTTPException(status_code=503, detail="checkpoint still loading")
        return state

    @app.get("/videos")
    def list_videos():
        st = require_loaded()
        items = []
        for video_id in sorted(st.records):
            record = st.records[video_id]
            seq = st.repo.read(video_id)
            items.append(
                {
                    "video_id": video_id,
                    "L": seq.length,
                    "duration_s": seq.length * seq.stride_frames / seq.fps,
                    "has_frame_labels": record.frame_labels is not None,
                }
            )
        return items

    @app.post("/score")
    def score(request: ScoreRequest):
        st = require_loaded()
        if request.video_id not in st.records:
            raise HTTPException(status_code=404, detail=f"unknown video {request.video_id!r}")
        try:
            definition = AnomalyDefinition.from_dict(request.definition.model_dump())
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        seq = st.repo.read(request.video_id)
        try:
            result = score_sequence(st.model, st.text_encoder, seq, definition)
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        y_mul = np.asarray(result.y_mul)
        pooled = y_mul.max(axis=0)
        pooled[definition.normal_index] = y_mul[:, definition.normal_index].min()
        return {
            "video_id": request.video_id,
            "frame_scores": [float(x) for x in result.frame_scores],
            "stride_frames": seq.stride_frames,
            "fps": seq.fps,
            "class_ids": definition.class_ids,
            "pooled_similarities": [float(x) for x in pooled],
            "video_class_probs": [float(x) for x in result.video_class_probs],
            "definition_echo": definition.to_dict(),
            "config_hash": st.config_hash,
        }

    @app.get("/videos/{video_id}/labels")
    def labels(video_id: str):
        st = require_loaded()
        if video_id not in st.records:
            raise HTTPException(status_code=404, detail=f"unknown video {video_id!r}")
        record = st.records[video_id]
        if record.frame_labels is None:
            return Response(status_code=204)
        return [int(x) for x in record.frame_labels]

    return app
