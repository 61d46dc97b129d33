import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defvad.core import (
    AnomalyDefinition,
    ClassEntry,
    Config,
    FeatureSequence,
    ScoreResult,
    ValidationError,
    VideoRecord,
    config_from_json,
    config_hash,
    config_to_json,
    definition_from_classes,
    derive_seed,
    make_rng,
    topk_count,
    validate_config,
)


class TestMakeRng:
    def test_same_seed_same_stream(self):
        a = make_rng(0)
        b = make_rng(0)
        assert [a.uniform() for _ in range(100)] == [b.uniform() for _ in range(100)]

    def test_pinned_first_draws(self):
        # regression values observed once and frozen
        assert make_rng(0).uniform() == pytest.approx(0.6369616873214543, abs=0)
        assert make_rng(1).uniform() == pytest.approx(0.5118216247002567, abs=0)

    def test_uniform_in_range(self):
        rng = make_rng(3)
        draws = rng.uniform(size=1000)
        assert np.all(draws >= 0.0) and np.all(draws < 1.0)

    def test_derive_seed_distinct_tags(self):
        assert derive_seed(0, "a") != derive_seed(0, "b")
        assert derive_seed(0, "a") == derive_seed(0, "a")
        assert 0 <= derive_seed(0, "a") < 2**63


class TestConfig:
    def test_defaults_accepted(self):
        cfg = validate_config(Config())
        assert cfg.tau == 0.02 and cfg.eta == 0.02
        assert cfg.theta == 0.7 and cfg.alpha == 0.5 and cfg.delta_m == 5
        assert cfg.knn_n == 200 and cfg.batch_size == 64
        assert cfg.learning_rate == 5e-5 and cfg.epochs == 40
        assert cfg.conv_kernel == 9 and cfg.hidden_size == 512
        assert cfg.encoder_layers == 2 and cfg.fusion_layers == 2

    def test_theta_out_of_range(self):
        with pytest.raises(ValidationError, match="theta"):
            validate_config(dataclasses.replace(Config(), theta=1.5))

    def test_delta_m_zero(self):
        with pytest.raises(ValidationError, match="delta_m"):
            validate_config(dataclasses.replace(Config(), delta_m=0))

    def test_json_round_trip(self):
        cfg = Config(hidden_size=64, seed=9, use_neg=False)
        assert config_from_json(config_to_json(cfg)) == cfg

    def test_unknown_key_rejected(self):
        doc = json.loads(config_to_json(Config()))
        doc["mystery"] = 1
        with pytest.raises(ValidationError, match="mystery"):
            config_from_json(json.dumps(doc))

    def test_hash_changes_with_config(self):
        assert config_hash(Config()) != config_hash(Config(seed=1))

    @settings(max_examples=25, deadline=None)
    @given(
        theta=st.floats(0, 1), alpha=st.floats(0, 1),
        delta_m=st.integers(1, 9), seed=st.integers(0, 2**31),
    )
    def test_valid_configs_round_trip(self, theta, alpha, delta_m, seed):
        cfg = dataclasses.replace(Config(), theta=theta, alpha=alpha,
                                  delta_m=delta_m, seed=seed)
        assert config_from_json(config_to_json(validate_config(cfg))) == cfg


class TestTopkCount:
    @pytest.mark.parametrize("length,expected", [(1, 1), (15, 1), (16, 2), (32, 3), (160, 11)])
    def test_rule(self, length, expected):
        assert topk_count(length, 16) == expected


class TestDomainTypes:
    def test_feature_sequence_validation(self):
        with pytest.raises(ValidationError):
            FeatureSequence("v", np.full((2, 3), np.nan))
        with pytest.raises(ValidationError):
            FeatureSequence("v", np.zeros((0, 3)))
        seq = FeatureSequence("v", np.zeros((4, 3)))
        assert seq.length == 4 and seq.width == 3 and seq.stride_frames == 8

    def test_definition_needs_two_entries(self):
        with pytest.raises(ValidationError):
            AnomalyDefinition(entries=(ClassEntry("a", "x"),), normal_index=0)

    def test_definition_unique_names(self):
        with pytest.raises(ValidationError, match="duplicate"):
            AnomalyDefinition(
                entries=(ClassEntry("a", "x"), ClassEntry("a", "y")), normal_index=0
            )

    def test_definition_round_trip(self):
        d = definition_from_classes(["fire", "crash"])
        back = AnomalyDefinition.from_dict(d.to_dict())
        assert back.class_ids == ["fire", "crash", "normal"]
        assert back.normal_index == 2

    def test_class_entry_needs_prompt_or_embedding(self):
        with pytest.raises(ValidationError):
            ClassEntry("a", "")
        ClassEntry("a", "", embedding=np.ones(4))  # fine with embedding

    def test_record_description_iff_abnormal_in_train(self):
        with pytest.raises(ValidationError, match="description"):
            VideoRecord("v", "train", "fire")
        with pytest.raises(ValidationError, match="description"):
            VideoRecord("v", "train", "normal", description="oops")
        VideoRecord("v", "test", "fire")  # non-train manifests are laxer

    def test_score_result_prob_sum(self):
        d = definition_from_classes(["a"])
        with pytest.raises(ValidationError, match="sum"):
            ScoreResult("v", np.zeros(2), np.zeros((2, 2)), np.array([0.7, 0.7]), d)
        ScoreResult("v", np.zeros(2), np.zeros((2, 2)), np.array([0.5, 0.5]), d)
