import json

import pytest
from fastapi.testclient import TestClient

from defvad.core import Config, VideoRecord, definition_from_classes
from defvad.data import (
    SyntheticSpec,
    build_knn_index,
    generate_synthetic_dataset,
    load_manifest,
    save_manifest,
)
from defvad.model import TextEncoder
from defvad.service import create_app
from defvad.train import fit


@pytest.fixture(scope="module")
def served(tmp_path_factory):
    root = tmp_path_factory.mktemp("service") / "data"
    spec = SyntheticSpec(
        num_categories=2,
        videos_per_split={"train": 10, "val": 6},
        embedding_width=8,
        length_range=(8, 10),
        anomaly_fraction_range=(0.3, 0.5),
        seed=0,
    )
    records, repo, prototypes = generate_synthetic_dataset(spec, root)
    # strip labels from one normal video so the 204 path is reachable
    patched = [
        VideoRecord(r.video_id, r.split, r.video_label, r.description, None)
        if r.video_id == "val_nrm_0005"
        else r
        for r in records
    ]
    save_manifest(patched, root / "manifest.jsonl")
    knn = build_knn_index(repo, records, 3)
    cfg = Config(hidden_size=16, encoder_layers=1, fusion_layers=1,
                 batch_size=4, epochs=1, knn_n=3, seed=0)
    te = TextEncoder(8, prototypes)
    result = fit(patched, repo, knn, cfg, te, out_dir=root.parent / "run")
    app = create_app(result.checkpoint_path, root)
    return {
        "client": TestClient(app),
        "root": root,
        "checkpoint": result.checkpoint_path,
        "records": patched,
    }


def _definition_payload(classes):
    return definition_from_classes(classes).to_dict()


class TestVideos:
    def test_lists_all_served_videos(self, served):
        resp = served["client"].get("/videos")
        assert resp.status_code == 200
        items = resp.json()
        assert len(items) == len(served["records"])
        entry = {i["video_id"]: i for i in items}["val_anm_0000"]
        assert entry["L"] >= 8 and entry["has_frame_labels"]
        assert entry["duration_s"] == pytest.approx(entry["L"] * 8 / 24.0)

    def test_empty_split_gives_empty_array(self, served):
        app = create_app(served["checkpoint"], served["root"], split="test")
        client = TestClient(app)
        resp = client.get("/videos")
        assert resp.status_code == 200 and resp.json() == []

    def test_503_before_load(self, served):
        app = create_app(served["checkpoint"], served["root"], defer_load=True)
        client = TestClient(app)
        assert client.get("/videos").status_code == 503
        assert client.post(
            "/score",
            json={"video_id": "x", "definition": _definition_payload(["cat0"])},
        ).status_code == 503
        app.state.service.load()
        assert client.get("/videos").status_code == 200


class TestScore:
    def test_deterministic_byte_identical(self, served):
        body = {"video_id": "val_anm_0000", "definition": _definition_payload(["cat0", "cat1"])}
        r1 = served["client"].post("/score", json=body)
        r2 = served["client"].post("/score", json=body)
        assert r1.status_code == 200
        assert r1.content == r2.content

    def test_two_class_definition_probs(self, served):
        body = {"video_id": "val_anm_0000", "definition": _definition_payload(["cat0"])}
        resp = served["client"].post("/score", json=body)
        assert resp.status_code == 200
        payload = resp.json()
        assert len(payload["video_class_probs"]) == 2
        assert sum(payload["video_class_probs"]) == pytest.approx(1.0, abs=1e-6)
        assert len(payload["frame_scores"]) >= 8
        assert payload["stride_frames"] == 8
        assert payload["config_hash"]

    def test_different_definitions_change_scores(self, served):
        b1 = {"video_id": "val_anm_0000", "definition": _definition_payload(["cat0", "cat1"])}
        b2 = {"video_id": "val_anm_0000",
              "definition": _definition_payload(["people fighting on the street"])}
        s1 = served["client"].post("/score", json=b1).json()["frame_scores"]
        s2 = served["client"].post("/score", json=b2).json()["frame_scores"]
        assert s1 != s2

    def test_unknown_video_404(self, served):
        body = {"video_id": "ghost", "definition": _definition_payload(["cat0"])}
        assert served["client"].post("/score", json=body).status_code == 404

    def test_invalid_definition_422(self, served):
        payload = _definition_payload(["cat0"])
        payload["normal_index"] = 9
        body = {"video_id": "val_anm_0000", "definition": payload}
        assert served["client"].post("/score", json=body).status_code == 422

    def test_malformed_body_422(self, served):
        assert served["client"].post("/score", json={"video_id": "x"}).status_code == 422


class TestLabels:
    def test_labeled_video_returns_array(self, served):
        resp = served["client"].get("/videos/val_anm_0000/labels")
        assert resp.status_code == 200
        labels = resp.json()
        assert set(labels) <= {0, 1} and sum(labels) > 0

    def test_unlabeled_video_204(self, served):
        resp = served["client"].get("/videos/val_nrm_0005/labels")
        assert resp.status_code == 204

    def test_unknown_video_404(self, served):
        assert served["client"].get("/videos/ghost/labels").status_code == 404
