"""N-way K-shot episodes: sampling, label-free classifiers and scoring.

Classifiers only ever see feature matrices and return key indices. Labels stay
in the :class:`AnswerKey` carried by the episode and are read by
:func:`score_task` alone.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np

from .exceptions import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    EpisodicaError,
    SamplingError,
    with_context,
)
from .rng import stream
from .tensor import EPSILON

LOG = logging.getLogger(__name__)

Z_95 = 1.96
CI_FORMULA = "1.96 * std(per_task, ddof=0) / sqrt(n_tasks)"


@dataclass(frozen=True)
class TaskSpec:
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 15
    n_tasks: int = 10000

    def __post_init__(self):
        for name in ("n_way", "k_shot", "n_query", "n_tasks"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")


class LabeledPool:
    """Feature rows with their class ids, indexed by class."""

    def __init__(self, features, labels):
        features = np.asarray(getattr(features, "data", features))
        labels = np.asarray(labels, dtype=np.int64)
        if features.ndim != 2:
            raise DimensionError(f"features must be a matrix, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DimensionError(
                f"{labels.shape[0]} labels for {features.shape[0]} feature rows"
            )
        self.features = features
        self.labels = labels
        self.classes = np.unique(labels)
        self.members = {int(c): np.flatnonzero(labels == c) for c in self.classes}

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def normalized(self) -> "LabeledPool":
        norms = np.linalg.norm(self.features.astype(np.float64), axis=1)
        if np.any(norms <= EPSILON):
            row = int(np.argmax(norms <= EPSILON))
            raise DegenerateInputError(f"feature row {row} has zero norm")
        return LabeledPool(self.features / norms[:, None], self.labels)


class AnswerKey(NamedTuple):
    key_labels: np.ndarray
    query_labels: np.ndarray


@dataclass(frozen=True)
class Episode:
    key_features: np.ndarray
    query_features: np.ndarray
    answers: AnswerKey = field(repr=False)

    @property
    def n_keys(self) -> int:
        return self.key_features.shape[0]

    @property
    def n_queries(self) -> int:
        return self.query_features.shape[0]


def check_pool(pool: LabeledPool, spec: TaskSpec):
    needed = spec.k_shot + spec.n_query
    if len(pool.classes) < spec.n_way:
        raise SamplingError(
            f"pool has {len(pool.classes)} classes, a {spec.n_way}-way task needs {spec.n_way}"
        )
    for class_id, members in pool.members.items():
        if len(members) < needed:
            raise SamplingError(
                f"class {class_id} has {len(members)} examples, "
                f"{spec.k_shot}-shot tasks with {spec.n_query} queries need {needed}"
            )


def sample_task(pool: LabeledPool, spec: TaskSpec, rng: np.random.Generator) -> Episode:
    """Draw N classes, then K keys and Q queries per class, all without replacement.

    Rows are class-major: the K keys (and Q queries) of the first drawn class
    come first.
    """
    check_pool(pool, spec)
    classes = rng.choice(pool.classes, size=spec.n_way, replace=False)
    keys, queries = [], []
    for class_id in classes:
        drawn = rng.permutation(pool.members[int(class_id)])[: spec.k_shot + spec.n_query]
        keys.append(drawn[: spec.k_shot])
        queries.append(drawn[spec.k_shot :])
    key_index = np.concatenate(keys)
    query_index = np.concatenate(queries)
    return Episode(
        pool.features[key_index],
        pool.features[query_index],
        AnswerKey(pool.labels[key_index], pool.labels[query_index]),
    )


def _check_features(query_features, key_features):
    query = np.asarray(query_features, dtype=np.float64)
    keys = np.asarray(key_features, dtype=np.float64)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ContractError("cannot classify against an empty key set")
    if query.ndim != 2 or query.shape[1] != keys.shape[1]:
        raise DimensionError(
            f"query features {query.shape} do not match key features {keys.shape}"
        )
    return query, keys


def classify_1nn(query_features, key_features) -> np.ndarray:
    """Index of the key at the smallest squared Euclidean distance; lowest index on ties."""
    query, keys = _check_features(query_features, key_features)
    distances = np.square(query[:, None, :] - keys[None, :, :]).sum(axis=2)
    return np.argmin(distances, axis=1)


def _unit_rows(x, name):
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms <= EPSILON):
        row = int(np.argmax(norms <= EPSILON))
        raise DegenerateInputError(f"{name} row {row} has zero norm")
    return x / norms[:, None]


def cosine_similarities(query_features, key_features) -> np.ndarray:
    query, keys = _check_features(query_features, key_features)
    return _unit_rows(query, "query") @ _unit_rows(keys, "key").T


def attention_weights(query_features, key_features) -> np.ndarray:
    """Softmax over keys of the cosine similarity, one row per query."""
    cosines = cosine_similarities(query_features, key_features)
    weights = np.exp(cosines - cosines.max(axis=1, keepdims=True))
    return weights / weights.sum(axis=1, keepdims=True)


def classify_attn(query_features, key_features) -> np.ndarray:
    """Index of the key with the largest attention weight; lowest index on ties.

    Softmax is monotone, so the argmax is taken over the cosines directly.
    """
    return np.argmax(cosine_similarities(query_features, key_features), axis=1)


def centroid_reduce(key_features, key_labels, classes=None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-class mean of the key features.

    Returns ``(centroids, class_order)`` where ``class_order`` lists classes in
    order of first appearance among the keys unless ``classes`` is given.
    """
    keys = np.asarray(key_features, dtype=np.float64)
    labels = np.asarray(key_labels)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ContractError("cannot build centroids from an empty key set")
    if labels.shape != (keys.shape[0],):
        raise DimensionError(f"{labels.shape[0]} key labels for {keys.shape[0]} keys")
    if classes is None:
        _, first = np.unique(labels, return_index=True)
        classes = labels[np.sort(first)]
    classes = np.asarray(classes)
    centroids = np.empty((len(classes), keys.shape[1]))
    for row, class_id in enumerate(classes):
        members = labels == class_id
        if not members.any():
            raise ContractError(f"class {class_id} has no keys")
        centroids[row] = keys[members].mean(axis=0)
    return centroids, classes


def centroid_episode(episode: Episode) -> Episode:
    """Replace the keys with one centroid per class."""
    centroids, classes = centroid_reduce(episode.key_features, episode.answers.key_labels)
    answers = AnswerKey(classes, episode.answers.query_labels)
    return Episode(centroids, episode.query_features, answers)


def score_task(episode: Episode, predictions) -> float:
    """Fraction of queries whose chosen key carries the query's class."""
    predictions = np.asarray(predictions)
    if predictions.shape != (episode.n_queries,):
        raise ContractError(
            f"expected {episode.n_queries} predictions, got shape {predictions.shape}"
        )
    if predictions.size and (predictions.min() < 0 or predictions.max() >= episode.n_keys):
        raise ContractError(f"prediction out of range for {episode.n_keys} keys")
    chosen = episode.answers.key_labels[predictions]
    return float(np.mean(chosen == episode.answers.query_labels))


class Classifier(NamedTuple):
    classify: Callable[..., np.ndarray]
    centroids: bool


CLASSIFIERS: Dict[str, Classifier] = {
    "1nn": Classifier(classify_1nn, False),
    "attn": Classifier(classify_attn, False),
    "1nn-centroid": Classifier(classify_1nn, True),
    "attn-centroid": Classifier(classify_attn, True),
}


def get_classifier(name: str) -> Classifier:
    try:
        return CLASSIFIERS[name]
    except KeyError:
        raise ConfigError(
            f"unknown classifier '{name}', expected one of {', '.join(CLASSIFIERS)}"
        ) from None


def run_task(pool: LabeledPool, spec: TaskSpec, classifier: Classifier, rng) -> float:
    episode = sample_task(pool, spec, rng)
    if classifier.centroids:
        episode = centroid_episode(episode)
    predictions = classifier.classify(episode.query_features, episode.key_features)
    return score_task(episode, predictions)


@dataclass(frozen=True)
class EvalReport:
    per_task_accuracy: np.ndarray = field(repr=False)
    mean: float
    ci95_halfwidth: float
    spec: TaskSpec
    seed: int
    classifier: str

    @property
    def n_tasks(self) -> int:
        return len(self.per_task_accuracy)

    def to_json(self, per_task=False) -> dict:
        report = {
            "mean": self.mean,
            "ci95": self.ci95_halfwidth,
            "n_tasks": self.n_tasks,
            "spec": asdict(self.spec),
            "seed": self.seed,
            "classifier": self.classifier,
            "ci_formula": CI_FORMULA,
        }
        if per_task:
            report["per_task"] = [float(value) for value in self.per_task_accuracy]
        return report


def aggregate(per_task, spec: TaskSpec, seed: int, classifier: str) -> EvalReport:
    per_task = np.asarray(per_task, dtype=np.float64)
    halfwidth = Z_95 * float(np.std(per_task)) / math.sqrt(len(per_task))
    return EvalReport(per_task, float(np.mean(per_task)), halfwidth, spec, seed, classifier)


def run_protocol(
    pool: LabeledPool,
    spec: TaskSpec,
    classifier: str = "attn",
    seed: int = 0,
    normalize: bool = False,
    workers: Optional[int] = None,
) -> EvalReport:
    """Sample ``spec.n_tasks`` episodes, classify and aggregate accuracy.

    Task ``i`` draws from its own stream ``(seed, i)``, so the report does not
    depend on ``workers``.
    """
    chosen = get_classifier(classifier)
    if normalize:
        pool = pool.normalized()
    check_pool(pool, spec)
    LOG.info(
        "Evaluating %d %d-way %d-shot tasks with '%s'",
        spec.n_tasks,
        spec.n_way,
        spec.k_shot,
        classifier,
    )

    def task(index):
        try:
            return run_task(pool, spec, chosen, stream(seed, index))
        except EpisodicaError as e:
            raise with_context(e, f"task {index}") from e

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            per_task = list(executor.map(task, range(spec.n_tasks)))
    else:
        per_task = [task(index) for index in range(spec.n_tasks)]
    report = aggregate(per_task, spec, seed, classifier)
    LOG.info("Mean accuracy %.4f +- %.4f", report.mean, report.ci95_halfwidth)
    return report
