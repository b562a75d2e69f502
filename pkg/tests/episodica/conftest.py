import pytest

from episodica.config import RunConfig
from episodica.synthetic import SyntheticSpec, write_synthetic
from episodica.training import embed, init_network, pretrain


@pytest.fixture(scope="session")
def synthetic_manifest(tmp_path_factory):
    return write_synthetic(SyntheticSpec(), tmp_path_factory.mktemp("synthetic"))


@pytest.fixture(scope="session")
def trained(synthetic_manifest):
    """Default-config SimCLR run on the training classes, plus test-split embeddings."""
    cfg = RunConfig()
    train_images, _ = synthetic_manifest.load_split("train")
    test_images, test_labels = synthetic_manifest.load_split("test")
    result = pretrain(train_images, cfg)
    return {
        "cfg": cfg,
        "result": result,
        "train_features": embed(result.encoder, train_images, cfg),
        "features": embed(result.encoder, test_images, cfg),
        "untrained_features": embed(init_network(cfg).encoder, test_images, cfg),
        "labels": test_labels,
    }
