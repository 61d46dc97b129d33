import json

import numpy as np
import pytest

from defvad.core import (
    CorruptFileError,
    FeatureSequence,
    NotFoundError,
    ValidationError,
    VideoRecord,
    make_rng,
)
from defvad.data import (
    FeatureRepository,
    KnnIndex,
    SyntheticSpec,
    blend_prototype,
    build_knn_index,
    central_step_feature,
    cosine_similarity,
    cross_validate_manifest,
    generate_synthetic_dataset,
    load_manifest,
    load_prototypes,
    save_manifest,
)


class TestFeatureFiles:
    def test_write_read_bit_exact(self, tmp_path):
        repo = FeatureRepository(tmp_path)
        feats = make_rng(1).standard_normal((7, 32)).astype(np.float32)
        repo.write(FeatureSequence("vid", feats, stride_frames=4, fps=30.0))
        back = repo.read("vid")
        assert np.array_equal(back.features, feats)
        assert back.stride_frames == 4 and back.fps == 30.0

    def test_unknown_id(self, tmp_path):
        repo = FeatureRepository(tmp_path)
        with pytest.raises(NotFoundError):
            repo.read("ghost")

    def test_truncated_payload(self, tmp_path):
        repo = FeatureRepository(tmp_path)
        feats = np.ones((7, 6), dtype=np.float32)
        repo.write(FeatureSequence("vid", feats))
        path = tmp_path / "features" / "vid.fseq"
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 6 * 4])  # drop one row
        with pytest.raises(CorruptFileError, match="payload"):
            repo.read("vid")

    def test_bad_magic(self, tmp_path):
        repo = FeatureRepository(tmp_path)
        repo.write(FeatureSequence("vid", np.ones((2, 3), dtype=np.float32)))
        path = tmp_path / "features" / "vid.fseq"
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(CorruptFileError, match="magic"):
            repo.read("vid")

    def test_width_mismatch_rejected(self, tmp_path):
        repo = FeatureRepository(tmp_path)
        repo.write(FeatureSequence("a", np.ones((2, 3), dtype=np.float32)))
        with pytest.raises(ValidationError, match="width"):
            repo.write(FeatureSequence("b", np.ones((2, 4), dtype=np.float32)))


class TestManifest:
    def test_round_trip(self, tmp_path):
        records = [
            VideoRecord("n1", "train", "normal"),
            VideoRecord("a1", "train", "fire", description="a fire breaks out"),
            VideoRecord("a2", "train", "crash", description="cars crash",
                        frame_labels=np.array([0, 1, 1])),
        ]
        path = tmp_path / "manifest.jsonl"
        save_manifest(records, path)
        back = load_manifest(path)
        assert len(back) == 3
        assert back[1].description == "a fire breaks out"
        assert np.array_equal(back[2].frame_labels, [0, 1, 1])

    def test_abnormal_train_without_description_errors(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text(json.dumps({"video_id": "a", "split": "train", "label": "fire"}) + "\n")
        with pytest.raises(ValidationError, match=":1"):
            load_manifest(path)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        good = json.dumps({"video_id": "n", "split": "train", "label": "normal"})
        path.write_text(good + "\n{not json\n")
        with pytest.raises(ValidationError, match=":2"):
            load_manifest(path)

    def test_frame_label_length_cross_check(self, tmp_path):
        repo = FeatureRepository(tmp_path)
        repo.write(FeatureSequence("a", np.ones((5, 4), dtype=np.float32)))
        records = [VideoRecord("a", "val", "fire", frame_labels=np.array([0, 1]))]
        with pytest.raises(ValidationError, match="length"):
            cross_validate_manifest(records, repo)


class TestSyntheticDataset:
    def test_exact_fraction(self, tmp_path):
        spec = SyntheticSpec(
            num_categories=2,
            videos_per_split={"train": 8},
            embedding_width=8,
            length_range=(10, 10),
            anomaly_fraction_range=(0.3, 0.3),
            noise_scale=0.05,
            seed=0,
        )
        records, _, _ = generate_synthetic_dataset(spec, tmp_path / "d")
        for r in records:
            if r.is_abnormal:
                labels = np.asarray(r.frame_labels)
                assert labels.sum() == 3
                on = np.flatnonzero(labels)
                assert on[-1] - on[0] == 2  # contiguous

    def test_noise_free_segment_equals_blend(self, tmp_path):
        spec = SyntheticSpec(
            num_categories=2,
            videos_per_split={"train": 4},
            embedding_width=8,
            length_range=(10, 10),
            anomaly_fraction_range=(0.4, 0.4),
            noise_scale=0.0,
            seed=3,
        )
        records, repo, protos = generate_synthetic_dataset(spec, tmp_path / "d")
        for r in records:
            if not r.is_abnormal:
                continue
            seq = repo.read(r.video_id)
            expected = blend_prototype(protos["normal"], protos[r.video_label])
            seg = seq.features[np.asarray(r.frame_labels) == 1]
            assert np.array_equal(seg, np.tile(expected, (len(seg), 1)))

    def test_seed_reproducibility(self, tmp_path):
        spec = SyntheticSpec(num_categories=2, videos_per_split={"train": 6},
                             embedding_width=8, length_range=(6, 10),
                             anomaly_fraction_range=(0.2, 0.5), seed=11)
        generate_synthetic_dataset(spec, tmp_path / "a")
        generate_synthetic_dataset(spec, tmp_path / "b")
        for name in ["manifest.jsonl", "prototypes.json"]:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for f in sorted((tmp_path / "a" / "features").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / "features" / f.name).read_bytes()

    def test_abnormal_records_complete(self, tiny_dataset):
        for r in tiny_dataset["records"]:
            if r.is_abnormal:
                assert r.description and r.frame_labels is not None

    def test_prototype_table_round_trip(self, tiny_dataset):
        loaded = load_prototypes(tiny_dataset["out"] / "prototypes.json")
        for name, vec in tiny_dataset["prototypes"].items():
            assert np.array_equal(loaded[name], vec)

    def test_segment_prototype_affinity_over_seeds(self, tmp_path):
        # the planted segment should point at its own category prototype
        spec_base = dict(
            num_categories=3,
            videos_per_split={"train": 6},
            embedding_width=16,
            length_range=(10, 14),
            anomaly_fraction_range=(0.3, 0.6),
            noise_scale=0.1,
        )
        successes = 0
        trials = 0
        for seed in range(100):
            spec = SyntheticSpec(seed=seed, **spec_base)
            records, repo, protos = generate_synthetic_dataset(spec, tmp_path / f"s{seed}")
            ok = True
            for r in records:
                if not r.is_abnormal:
                    continue
                seq = repo.read(r.video_id)
                seg_mean = seq.features[np.asarray(r.frame_labels) == 1].mean(axis=0)
                own = cosine_similarity(seg_mean, protos[r.video_label])
                others = [
                    cosine_similarity(seg_mean, protos[f"cat{c}"])
                    for c in range(spec.num_categories)
                    if f"cat{c}" != r.video_label
                ]
                if not all(own > o for o in others):
                    ok = False
            successes += ok
            trials += 1
        assert successes / trials >= 0.99


class TestCentralStep:
    @pytest.mark.parametrize("length,expected_row", [(1, 0), (5, 2), (4, 2)])
    def test_floor_convention(self, length, expected_row):
        feats = np.arange(length * 3, dtype=np.float32).reshape(length, 3)
        seq = FeatureSequence("v", feats)
        assert np.array_equal(central_step_feature(seq), feats[expected_row])


def _brute_force_knn(repo, records, n):
    train = [r for r in records if r.split == "train"]
    normals = [r.video_id for r in train if not r.is_abnormal]
    result = {}
    for r in train:
        query = central_step_feature(repo.read(r.video_id))
        sims = []
        for vid in normals:
            if vid == r.video_id:
                continue
            sims.append((-cosine_similarity(query, central_step_feature(repo.read(vid))), vid))
        sims.sort()
        result[r.video_id] = [vid for _, vid in sims[:n]]
    return result


class TestKnnIndex:
    def test_identical_pair(self, tmp_path):
        repo = FeatureRepository(tmp_path)
        same = np.ones((3, 4), dtype=np.float32)
        far = np.tile(np.array([1, -1, 1, -1], dtype=np.float32), (3, 1))
        repo.write(FeatureSequence("a", same))
        repo.write(FeatureSequence("b", same.copy()))
        repo.write(FeatureSequence("c", far))
        records = [VideoRecord(v, "train", "normal") for v in ("a", "b", "c")]
        index = build_knn_index(repo, records, 2)
        assert index.neighbor_ids("a")[0] == "b"
        assert index.neighbor_ids("b")[0] == "a"

    def test_truncation_warns(self, tmp_path):
        repo = FeatureRepository(tmp_path)
        for vid in ("a", "b"):
            repo.write(FeatureSequence(vid, np.ones((2, 4), dtype=np.float32)))
        records = [VideoRecord(v, "train", "normal") for v in ("a", "b")]
        with pytest.warns(UserWarning, match="truncated"):
            index = build_knn_index(repo, records, 5)
        assert index.neighbor_ids("a") == ["b"]

    def test_empty_normal_set_errors(self, tmp_path):
        repo = FeatureRepository(tmp_path)
        repo.write(FeatureSequence("a", np.ones((2, 4), dtype=np.float32)))
        records = [VideoRecord("a", "train", "fire", description="d")]
        with pytest.raises(ValidationError, match="normal"):
            build_knn_index(repo, records, 3)

    def test_matches_exhaustive_oracle(self, tiny_dataset):
        oracle = _brute_force_knn(tiny_dataset["repo"], tiny_dataset["records"], 5)
        for vid, expected in oracle.items():
            assert tiny_dataset["knn"].neighbor_ids(vid) == expected

    def test_matches_oracle_random_sets(self, tmp_path):
        rng = make_rng(42)
        for trial in range(3):
            root = tmp_path / f"t{trial}"
            repo = FeatureRepository(root)
            records = []
            count = int(rng.integers(5, 15))
            for i in range(count):
                vid = f"v{i:02d}"
                feats = rng.standard_normal((int(rng.integers(1, 6)), 6)).astype(np.float32)
                repo.write(FeatureSequence(vid, feats))
                label = "normal" if rng.uniform() < 0.7 else "fire"
                desc = None if label == "normal" else "a fire"
                records.append(VideoRecord(vid, "train", label, description=desc))
            if not any(not r.is_abnormal for r in records):
                continue
            n = int(rng.integers(1, count + 2))
            built = build_knn_index(repo, records, n)
            oracle = _brute_force_knn(repo, records, n)
            assert built.neighbors == oracle

    def test_json_round_trip(self, tiny_dataset, tmp_path):
        path = tmp_path / "knn.json"
        tiny_dataset["knn"].save(path)
        assert KnnIndex.load(path).neighbors == tiny_dataset["knn"].neighbors
