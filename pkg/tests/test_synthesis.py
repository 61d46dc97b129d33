import numpy as np
import pytest

from defvad.core import Config, FeatureSequence, NotFoundError, ValidationError, make_rng
from defvad.data import KnnIndex
from defvad.synthesis import synthesis_statistics, synthesize


class ScriptedRng:
    """Deterministic stand-in replaying queued draws."""

    def __init__(self, uniforms, integers):
        self.uniforms = list(uniforms)
        self.ints = list(integers)

    def uniform(self, *args, **kwargs):
        return self.uniforms.pop(0)

    def integers(self, *args, **kwargs):
        return self.ints.pop(0)


def _sets_from(dataset):
    records = dataset["records"]
    repo = dataset["repo"]
    train = [r for r in records if r.split == "train"]
    normal = [repo.read(r.video_id) for r in train if not r.is_abnormal]
    abnormal = [repo.read(r.video_id) for r in train if r.is_abnormal]
    return normal, abnormal


class TestSynthesize:
    def test_theta_zero_is_identity(self, tiny_dataset):
        normal, abnormal = _sets_from(tiny_dataset)
        cfg = Config(theta=0.0, delta_m=5)
        rng = make_rng(0)
        for _ in range(50):
            s = synthesize(normal, abnormal, tiny_dataset["knn"], cfg, rng)
            assert s.segment_count == 1
            source = {q.video_id: q for q in normal + abnormal}[s.anchor_id]
            assert np.array_equal(s.features, source.features)

    def test_alpha_one_always_normal(self, tiny_dataset):
        normal, abnormal = _sets_from(tiny_dataset)
        cfg = Config(alpha=1.0, delta_m=3)
        rng = make_rng(1)
        for _ in range(50):
            s = synthesize(normal, abnormal, tiny_dataset["knn"], cfg, rng)
            assert s.video_level_label == 0
            assert s.pseudo_label.sum() == 0

    def test_concatenation_arithmetic(self):
        e = 4
        n5 = FeatureSequence("n5", np.full((5, e), 1.0, dtype=np.float32))
        n6 = FeatureSequence("n6", np.full((6, e), 2.0, dtype=np.float32))
        a4 = FeatureSequence("a4", np.full((4, e), 3.0, dtype=np.float32))
        knn = KnnIndex(neighbors={"a4": ["n5", "n6"]})
        cfg = Config(theta=0.7, alpha=0.5, delta_m=3)
        # draws: p1 (<= theta), p2 (> alpha), m=3, anchor idx, j=2, picks n5 then n6
        rng = ScriptedRng(uniforms=[0.0, 1.0], integers=[3, 0, 2, 0, 1])
        s = synthesize([n5, n6], [a4], knn, cfg, rng)
        assert s.segment_count == 3 and s.anchor_slot == 2
        assert s.total_length == 15
        expected = np.concatenate([np.zeros(5), np.ones(4), np.zeros(6)])
        assert np.array_equal(s.pseudo_label, expected)
        assert np.array_equal(s.features[5:9], a4.features)

    def test_anchor_missing_from_knn(self, tiny_dataset):
        normal, abnormal = _sets_from(tiny_dataset)
        cfg = Config(theta=1.0, alpha=0.0, delta_m=4)  # always synthesize, normal anchor
        empty = KnnIndex(neighbors={})
        rng = make_rng(0)
        with pytest.raises(NotFoundError):
            for _ in range(50):  # m=1 draws need no neighbors; retry until m>1
                synthesize(normal, abnormal, empty, cfg, rng)

    def test_empty_sets_rejected(self, tiny_dataset):
        normal, abnormal = _sets_from(tiny_dataset)
        with pytest.raises(ValidationError):
            synthesize([], abnormal, tiny_dataset["knn"], Config(), make_rng(0))
        with pytest.raises(ValidationError):
            synthesize(normal, [], tiny_dataset["knn"], Config(), make_rng(0))

    def test_structural_invariants(self, tiny_dataset):
        normal, abnormal = _sets_from(tiny_dataset)
        by_id = {q.video_id: q for q in normal + abnormal}
        cfg = Config()
        rng = make_rng(5)
        for _ in range(300):
            s = synthesize(normal, abnormal, tiny_dataset["knn"], cfg, rng)
            assert 1 <= s.segment_count <= cfg.delta_m
            assert 1 <= s.anchor_slot <= s.segment_count
            assert s.total_length == sum(b - a for a, b in s.segment_boundaries)
            anchor = by_id[s.anchor_id]
            start, end = s.segment_boundaries[s.anchor_slot - 1]
            assert np.array_equal(s.features[start:end], anchor.features)
            if s.video_level_label == 1:
                assert s.pseudo_label.sum() == anchor.length
                assert s.pseudo_label[start:end].all()
                if s.segment_count == 1:
                    assert s.pseudo_label.all()
            else:
                assert s.pseudo_label.sum() == 0


class TestStatistics:
    def test_single_sample_degenerate(self, tiny_dataset):
        normal, abnormal = _sets_from(tiny_dataset)
        s = synthesize(normal, abnormal, tiny_dataset["knn"], Config(), make_rng(2))
        stats = synthesis_statistics([s])
        assert stats["fraction_multi_segment"] in (0.0, 1.0)
        assert stats["fraction_abnormal_anchor"] in (0.0, 1.0)

    def test_branch_probabilities(self, tiny_dataset):
        normal, abnormal = _sets_from(tiny_dataset)
        cfg = Config()  # theta 0.7, alpha 0.5, delta_m 5
        rng = make_rng(10)
        n = 4000
        samples = [
            synthesize(normal, abnormal, tiny_dataset["knn"], cfg, rng) for _ in range(n)
        ]
        stats = synthesis_statistics(samples)
        # P(m > 1) = theta * (delta_m - 1) / delta_m: the else-branch can draw m=1
        p_multi = cfg.theta * (cfg.delta_m - 1) / cfg.delta_m
        sigma = (p_multi * (1 - p_multi) / n) ** 0.5
        assert abs(stats["fraction_multi_segment"] - p_multi) <= 3 * sigma
        # P(abnormal anchor) = 1 - alpha
        p_abn = 1 - cfg.alpha
        sigma = (p_abn * (1 - p_abn) / n) ** 0.5
        assert abs(stats["fraction_abnormal_anchor"] - p_abn) <= 3 * sigma

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            synthesis_statistics([])

    def test_provenance_dump(self, tiny_dataset, tmp_path):
        import json

        from defvad.synthesis import dump_provenance

        normal, abnormal = _sets_from(tiny_dataset)
        samples = [
            synthesize(normal, abnormal, tiny_dataset["knn"], Config(), make_rng(3))
            for _ in range(5)
        ]
        path = tmp_path / "prov.json"
        dump_provenance(samples, path)
        loaded = json.loads(path.read_text())
        assert len(loaded) == 5
        assert loaded[0]["anchor_id"] == samples[0].anchor_id
        assert loaded[0]["segment_boundaries"][-1][1] == samples[0].total_length
