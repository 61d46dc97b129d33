import pytest

from defvad.core import Config, definition_from_classes
from defvad.data import SyntheticSpec, build_knn_index, generate_synthetic_dataset
from defvad.model import AnomalyDetector, TextEncoder
from defvad.train import taxonomy_classes


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small synthetic dataset shared by data/model/train tests."""
    out = tmp_path_factory.mktemp("tiny_data")
    spec = SyntheticSpec(
        num_categories=3,
        videos_per_split={"train": 16, "val": 8},
        embedding_width=16,
        length_range=(8, 14),
        anomaly_fraction_range=(0.3, 0.5),
        noise_scale=0.05,
        seed=0,
    )
    records, repo, prototypes = generate_synthetic_dataset(spec, out)
    knn = build_knn_index(repo, records, 5)
    return {
        "out": out,
        "spec": spec,
        "records": records,
        "repo": repo,
        "prototypes": prototypes,
        "knn": knn,
    }


@pytest.fixture()
def tiny_cfg():
    return Config(hidden_size=32, encoder_layers=1, fusion_layers=1, batch_size=4,
                  epochs=1, knn_n=5, seed=0)


@pytest.fixture()
def tiny_model(tiny_cfg):
    return AnomalyDetector(tiny_cfg, embed_width=16)


@pytest.fixture()
def tiny_text_encoder(tiny_dataset):
    return TextEncoder(16, tiny_dataset["prototypes"])


@pytest.fixture()
def tiny_definition(tiny_dataset):
    return definition_from_classes(taxonomy_classes(tiny_dataset["records"]))
