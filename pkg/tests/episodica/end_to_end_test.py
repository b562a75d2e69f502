import json

import numpy as np
import pytest

from episodica.cli import main
from episodica.episodes import CLASSIFIERS, LabeledPool, TaskSpec, run_protocol
from episodica.formats import read_labels, read_tensor
from episodica.pca import pca_fit, pca_transform
from episodica.synthetic import SyntheticSpec, write_synthetic

EVAL_TASKS = 2000
TINY = """\
image_size = 8
channels = 4, 8
embed_dim = 8
projection_dim = 4
batch_size = 16
epochs = 2
n_tasks = 50
n_query = 5
"""


def _accuracy(features, labels, k_shot=1, classifier="attn"):
    spec = TaskSpec(5, k_shot, 15, EVAL_TASKS)
    return run_protocol(LabeledPool(features, labels), spec, classifier, seed=0).mean


@pytest.mark.slow
def test_pretraining_beats_the_untrained_encoder(trained):
    history = trained["result"].history
    assert history[-1] < history[0]
    one_shot = _accuracy(trained["features"], trained["labels"])
    baseline = _accuracy(trained["untrained_features"], trained["labels"])
    assert one_shot >= 0.35
    assert one_shot > baseline
    assert one_shot <= _accuracy(trained["features"], trained["labels"], k_shot=5)


@pytest.mark.slow
@pytest.mark.parametrize("classifier", ["1nn", "attn"])
def test_centroids_do_not_hurt_five_shot(trained, classifier):
    plain = _accuracy(trained["features"], trained["labels"], 5, classifier)
    centroid = _accuracy(trained["features"], trained["labels"], 5, f"{classifier}-centroid")
    assert centroid >= plain - 0.01


@pytest.mark.slow
@pytest.mark.parametrize("divisor", [2, 4])
def test_pca_reduction_keeps_accuracy(trained, divisor):
    features = trained["features"]
    model = pca_fit(trained["train_features"], features.shape[1] // divisor)
    reduced = pca_transform(model, features)
    full = _accuracy(features, trained["labels"])
    assert abs(_accuracy(reduced, trained["labels"]) - full) < 0.02


@pytest.mark.slow
def test_full_rank_pca_preserves_distances(trained):
    features = trained["features"][:200].astype(np.float64)
    model = pca_fit(trained["train_features"], features.shape[1])
    reduced = pca_transform(model, features)
    original = np.linalg.norm(features[:, None] - features[None], axis=2)
    projected = np.linalg.norm(reduced[:, None] - reduced[None], axis=2)
    np.testing.assert_allclose(projected, original, atol=1e-4)


@pytest.mark.slow
@pytest.mark.parametrize("classifier", sorted(CLASSIFIERS))
def test_random_embeddings_score_chance(classifier):
    rng = np.random.default_rng(11)
    labels = np.repeat(np.arange(20), 30)
    pool = LabeledPool(rng.normal(size=(len(labels), 32)), labels)
    report = run_protocol(pool, TaskSpec(5, 1, 15, 10000), classifier, seed=1)
    assert 0.19 <= report.mean <= 0.21


def _pipeline(root, data, config):
    checkpoint, embeddings, labels = root / "ckpt", root / "emb.eten", root / "labels.csv"
    common = ["--config", str(config)]
    assert main(["pretrain", "--data", str(data), "--out", str(checkpoint)] + common) == 0
    argv = ["embed", "--checkpoint", str(checkpoint), "--data", str(data)]
    argv += ["--embeddings", str(embeddings), "--labels", str(labels)]
    assert main(argv + common) == 0
    report = root / "report.json"
    argv = ["eval", "--embeddings", str(embeddings), "--labels", str(labels)]
    assert main(argv + ["--report", str(report), "--per-task"] + common) == 0
    return report.read_text(), embeddings, labels


def test_seeded_pipeline_is_reproducible(tmp_path, monkeypatch):
    monkeypatch.delenv("EPISODICA_SEED", raising=False)
    spec = SyntheticSpec(n_classes=8, per_class=10, image_size=8, n_test_classes=5)
    write_synthetic(spec, tmp_path / "data")
    data = tmp_path / "data" / "manifest.csv"
    config = tmp_path / "run.conf"
    config.write_text(TINY)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first, embeddings, labels = _pipeline(tmp_path / "a", data, config)
    second, _, _ = _pipeline(tmp_path / "b", data, config)
    assert first == second
    document = json.loads(first)
    assert document["n_tasks"] == 50
    in_process = run_protocol(
        LabeledPool(read_tensor(embeddings).data, read_labels(labels)),
        TaskSpec(5, 1, 5, 50),
        "attn",
        seed=0,
    )
    assert in_process.to_json(per_task=True) == document
