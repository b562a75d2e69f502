# pylint: disable=redefined-outer-name
import inspect

import numpy as np
import pytest

from episodica.episodes import (
    CLASSIFIERS,
    AnswerKey,
    Episode,
    EvalReport,
    LabeledPool,
    TaskSpec,
    aggregate,
    attention_weights,
    centroid_episode,
    centroid_reduce,
    classify_1nn,
    classify_attn,
    get_classifier,
    run_protocol,
    sample_task,
    score_task,
)
from episodica.exceptions import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    SamplingError,
)
from episodica.rng import stream
from tests.episodica.utils import unit_rows

CHI2_DF9_P001 = 27.877


def indexed_pool(n_classes=10, per_class=20):
    """Feature row ``i`` is ``[i]`` so sampled rows can be traced back."""
    labels = np.repeat(np.arange(n_classes), per_class)
    features = np.arange(len(labels), dtype=np.float64)[:, None]
    return LabeledPool(features, labels)


@pytest.fixture
def pool():
    return indexed_pool()


@pytest.mark.parametrize("k_shot,n_keys", [(1, 5), (5, 25)])
def test_sample_sizes(pool, k_shot, n_keys):
    episode = sample_task(pool, TaskSpec(5, k_shot, 15, 1), stream(0))
    assert episode.n_keys == n_keys
    assert episode.n_queries == 75
    assert len(np.unique(episode.answers.key_labels)) == 5


def test_sample_is_class_major(pool):
    episode = sample_task(pool, TaskSpec(5, 3, 4, 1), stream(1))
    keys = episode.answers.key_labels.reshape(5, 3)
    queries = episode.answers.query_labels.reshape(5, 4)
    assert np.all(keys == keys[:, :1])
    np.testing.assert_array_equal(keys[:, 0], queries[:, 0])


def test_sample_never_repeats_an_example(pool):
    for seed in range(50):
        episode = sample_task(pool, TaskSpec(5, 5, 15, 1), stream(seed))
        rows = np.concatenate([episode.key_features[:, 0], episode.query_features[:, 0]])
        assert len(np.unique(rows)) == len(rows)
        drawn = pool.labels[rows.astype(int)]
        np.testing.assert_array_equal(drawn[: episode.n_keys], episode.answers.key_labels)


def test_sample_exhausts_a_pool_of_exact_size():
    pool = indexed_pool(n_classes=3, per_class=4)
    episode = sample_task(pool, TaskSpec(3, 1, 3, 1), stream(2))
    rows = np.concatenate([episode.key_features[:, 0], episode.query_features[:, 0]])
    np.testing.assert_array_equal(np.sort(rows), np.arange(12))


def test_too_few_classes(pool):
    with pytest.raises(SamplingError, match="10 classes"):
        sample_task(pool, TaskSpec(11, 1, 1, 1), stream(0))


def test_deficient_class_is_named():
    labels = np.array([0] * 5 + [1] * 3 + [2] * 5)
    pool = LabeledPool(np.ones((13, 2)), labels)
    with pytest.raises(SamplingError, match="class 1"):
        sample_task(pool, TaskSpec(2, 1, 3, 1), stream(0))


@pytest.mark.slow
def test_class_selection_is_uniform(pool):
    spec = TaskSpec(5, 1, 1, 1)
    rng = stream(3)
    counts = np.zeros(10)
    for _ in range(50000):
        episode = sample_task(pool, spec, rng)
        counts[episode.answers.key_labels] += 1
    expected = counts.sum() / 10
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert chi2 < CHI2_DF9_P001


def test_pool_validation():
    with pytest.raises(DimensionError):
        LabeledPool(np.ones(4), [0, 1, 2, 3])
    with pytest.raises(DimensionError):
        LabeledPool(np.ones((4, 2)), [0, 1, 2])
    with pytest.raises(DegenerateInputError, match="row 1"):
        LabeledPool(np.array([[1.0, 0.0], [0.0, 0.0]]), [0, 1]).normalized()


@pytest.mark.parametrize(
    "settings", [{"n_way": 0}, {"k_shot": -1}, {"n_query": 1.5}, {"n_tasks": 0}]
)
def test_task_spec_validation(settings):
    with pytest.raises(ConfigError):
        TaskSpec(**settings)


def test_1nn_hand_case():
    keys = np.array([[0.0, 0.0], [10.0, 0.0]])
    queries = np.array([[1.0, 0.0], [9.0, 1.0], [5.0, 0.0]])
    np.testing.assert_array_equal(classify_1nn(queries, keys), [0, 1, 0])


def test_attn_hand_case():
    keys = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    queries = np.array([[5.0, 1.0], [0.1, 3.0], [-2.0, -0.5], [1.0, 1.0]])
    np.testing.assert_array_equal(classify_attn(queries, keys), [0, 1, 2, 0])


def test_attention_weights_are_a_distribution():
    rng = np.random.default_rng(0)
    weights = attention_weights(rng.normal(size=(4, 3)), rng.normal(size=(6, 3)))
    assert weights.shape == (4, 6)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0)
    assert np.all(weights > 0)


def test_1nn_and_attn_agree_on_unit_features():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        keys = unit_rows(rng.normal(size=(5, 8)))
        queries = unit_rows(rng.normal(size=(15, 8)))
        np.testing.assert_array_equal(classify_1nn(queries, keys), classify_attn(queries, keys))


def test_1nn_matches_a_distance_scan():
    rng = np.random.default_rng(10)
    for _ in range(100):
        keys, queries = rng.normal(size=(10, 4)), rng.normal(size=(15, 4))
        expected = []
        for query in queries:
            distances = [float(np.sum((query - key) ** 2)) for key in keys]
            expected.append(distances.index(min(distances)))
        np.testing.assert_array_equal(classify_1nn(queries, keys), expected)


def test_1nn_is_invariant_to_rigid_motions():
    rng = np.random.default_rng(2)
    keys, queries = rng.normal(size=(10, 4)), rng.normal(size=(30, 4))
    rotation, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    shift = rng.normal(size=4) * 5
    expected = classify_1nn(queries, keys)
    np.testing.assert_array_equal(classify_1nn(queries + shift, keys + shift), expected)
    np.testing.assert_array_equal(classify_1nn(queries @ rotation, keys @ rotation), expected)


def test_attn_is_invariant_to_positive_row_scaling():
    rng = np.random.default_rng(3)
    keys, queries = rng.normal(size=(10, 4)), rng.normal(size=(30, 4))
    expected = classify_attn(queries, keys)
    scaled_keys = keys * rng.uniform(0.1, 10, size=(10, 1))
    scaled_queries = queries * rng.uniform(0.1, 10, size=(30, 1))
    np.testing.assert_array_equal(classify_attn(scaled_queries, scaled_keys), expected)


def test_ties_go_to_the_lowest_index():
    keys = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert classify_1nn(np.array([[0.5, 0.5]]), keys)[0] == 0
    assert classify_attn(np.array([[0.5, 0.5]]), keys)[0] == 0


def test_classifier_errors():
    with pytest.raises(ContractError):
        classify_1nn(np.ones((2, 3)), np.zeros((0, 3)))
    with pytest.raises(DimensionError):
        classify_attn(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(DegenerateInputError):
        classify_attn(np.ones((2, 3)), np.zeros((2, 3)))


def test_classifiers_never_see_labels():
    for entry in CLASSIFIERS.values():
        assert list(inspect.signature(entry.classify).parameters) == [
            "query_features",
            "key_features",
        ]


def test_centroids_in_first_appearance_order():
    keys = np.array([[0.0, 0.0], [2.0, 2.0], [4.0, 0.0], [4.0, 4.0]])
    centroids, classes = centroid_reduce(keys, [7, 3, 7, 3])
    np.testing.assert_array_equal(classes, [7, 3])
    np.testing.assert_allclose(centroids, [[2.0, 0.0], [3.0, 3.0]])


def test_single_shot_centroids_are_the_keys():
    keys = np.random.default_rng(4).normal(size=(5, 3))
    centroids, _ = centroid_reduce(keys, np.arange(5))
    np.testing.assert_array_equal(centroids, keys)


def test_centroid_reduce_errors():
    with pytest.raises(ContractError):
        centroid_reduce(np.zeros((0, 2)), [])
    with pytest.raises(ContractError, match="class 9"):
        centroid_reduce(np.ones((2, 2)), [1, 1], classes=[1, 9])


def test_centroid_episode_keeps_queries(pool):
    episode = sample_task(pool, TaskSpec(4, 3, 2, 1), stream(5))
    reduced = centroid_episode(episode)
    assert reduced.n_keys == 4
    np.testing.assert_array_equal(reduced.query_features, episode.query_features)
    np.testing.assert_array_equal(reduced.answers.key_labels, episode.answers.key_labels[::3])


def _two_class_episode():
    return Episode(
        np.array([[0.0], [1.0]]),
        np.array([[0.1], [0.9], [0.2], [0.8]]),
        AnswerKey(np.array([4, 6]), np.array([4, 6, 6, 6])),
    )


def test_score_task():
    episode = _two_class_episode()
    assert score_task(episode, [0, 1, 1, 1]) == 1.0
    assert score_task(episode, [0, 1, 0, 1]) == 0.75
    assert score_task(episode, [1, 0, 0, 0]) == 0.0


@pytest.mark.parametrize("predictions", [[0, 1], [0, 1, 2, 0], [-1, 0, 0, 0]])
def test_score_task_rejects_bad_predictions(predictions):
    with pytest.raises(ContractError):
        score_task(_two_class_episode(), predictions)


def test_random_predictions_score_chance(pool):
    rng = np.random.default_rng(6)
    spec = TaskSpec(5, 1, 15, 1)
    scores = []
    for seed in range(2000):
        episode = sample_task(pool, spec, stream(seed))
        scores.append(score_task(episode, rng.integers(0, 5, size=episode.n_queries)))
    assert np.mean(scores) == pytest.approx(0.2, abs=0.01)


def test_unknown_classifier():
    with pytest.raises(ConfigError, match="1nn-centroid"):
        get_classifier("knn")


def separated_pool(n_classes=6, per_class=20, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.eye(n_classes, dim) * 10
    labels = np.repeat(np.arange(n_classes), per_class)
    return LabeledPool(centers[labels] + rng.normal(scale=0.1, size=(len(labels), dim)), labels)


@pytest.mark.parametrize("classifier", sorted(CLASSIFIERS))
def test_separated_classes_score_perfectly(classifier):
    spec = TaskSpec(5, 2, 5, 50)
    report = run_protocol(separated_pool(), spec, classifier=classifier, seed=1)
    assert report.mean == 1.0
    assert report.ci95_halfwidth == 0.0
    assert report.n_tasks == 50


@pytest.mark.slow
def test_null_features_score_chance():
    rng = np.random.default_rng(7)
    labels = np.repeat(np.arange(20), 30)
    pool = LabeledPool(rng.normal(size=(len(labels), 16)), labels)
    report = run_protocol(pool, TaskSpec(5, 1, 15, 2000), classifier="1nn", seed=2)
    assert 0.19 <= report.mean <= 0.21


def test_protocol_is_deterministic_and_worker_independent():
    rng = np.random.default_rng(8)
    labels = np.repeat(np.arange(8), 25)
    pool = LabeledPool(rng.normal(size=(len(labels), 6)), labels)
    spec = TaskSpec(5, 1, 10, 40)
    first = run_protocol(pool, spec, seed=3)
    again = run_protocol(pool, spec, seed=3)
    threaded = run_protocol(pool, spec, seed=3, workers=4)
    np.testing.assert_array_equal(first.per_task_accuracy, again.per_task_accuracy)
    np.testing.assert_array_equal(first.per_task_accuracy, threaded.per_task_accuracy)
    other = run_protocol(pool, spec, seed=4)
    assert not np.array_equal(first.per_task_accuracy, other.per_task_accuracy)


def test_normalized_protocol_matches_attn():
    pool = separated_pool(seed=9)
    spec = TaskSpec(5, 1, 5, 30)
    with_1nn = run_protocol(pool, spec, classifier="1nn", seed=5, normalize=True)
    with_attn = run_protocol(pool, spec, classifier="attn", seed=5)
    np.testing.assert_array_equal(with_1nn.per_task_accuracy, with_attn.per_task_accuracy)


def test_protocol_errors_name_the_task():
    labels = np.repeat(np.arange(3), 4)
    features = np.ones((12, 2))
    features[labels == 0] = 0.0
    with pytest.raises(DegenerateInputError, match="task 0"):
        run_protocol(LabeledPool(features, labels), TaskSpec(3, 1, 2, 5), classifier="attn")


def test_aggregate_and_report_json():
    report = aggregate([1.0, 0.5, 0.5, 0.0], TaskSpec(n_tasks=4), seed=11, classifier="1nn")
    assert isinstance(report, EvalReport)
    assert report.mean == 0.5
    assert report.ci95_halfwidth == pytest.approx(1.96 * np.sqrt(0.125) / 2)
    data = report.to_json()
    assert data["n_tasks"] == 4
    assert data["spec"]["n_way"] == 5
    assert data["seed"] == 11
    assert "per_task" not in data
    assert report.to_json(per_task=True)["per_task"] == [1.0, 0.5, 0.5, 0.0]
