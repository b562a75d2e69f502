"""Contrastive objectives: in-batch NT-Xent and queue-backed dictionary lookup.

Both reduce to the same per-anchor cross-entropy: the log-sum-exp of all
scaled similarities (positive plus negatives) minus the scaled positive
similarity. The batch loss is the mean over anchors.
"""
import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import (
    ConfigError,
    ContractError,
    DimensionError,
    EmptyBatchError,
    StateError,
)
from .tensor import Tensor

LOG = logging.getLogger(__name__)

SIMILARITIES = ("cosine", "dot")
DEFAULT_TEMPERATURE = {"simclr": 0.5, "moco": 0.2}


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.5
    similarity: str = "cosine"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.similarity not in SIMILARITIES:
            raise ConfigError(
                f"similarity must be one of {', '.join(SIMILARITIES)}, got '{self.similarity}'"
            )


def anchor_loss(positive: float, negatives, temperature: float) -> float:
    """Contrastive loss of a single anchor from raw similarity values."""
    logits = np.concatenate([[positive], np.asarray(negatives, dtype=np.float64)])
    logits = logits / temperature
    peak = logits.max()
    return float(peak + np.log(np.exp(logits - peak).sum()) - logits[0])


def partner_indices(n: int) -> np.ndarray:
    """Row ``i`` of a ``[view A; view B]`` batch is paired with row ``(i + n) % 2n``."""
    return (np.arange(2 * n) + n) % (2 * n)


def _check_temperature(cfg: LossConfig):
    if not cfg.temperature > 0:
        raise ConfigError(f"temperature must be positive, got {cfg.temperature}")


def ntxent_simclr(reps: Tensor, cfg: LossConfig) -> Tensor:
    """Mean NT-Xent over all 2N anchors of a ``[view A; view B]`` batch.

    Each anchor's positive is its partner view; the other 2N - 2 rows are
    its negatives and the anchor itself is excluded.
    """
    _check_temperature(cfg)
    if reps.ndim != 2:
        raise DimensionError(f"representations must be a matrix, got shape {reps.shape}")
    rows = reps.shape[0]
    if rows == 0:
        raise EmptyBatchError("ntxent_simclr needs at least one pair")
    if rows % 2:
        raise ContractError(f"expected an even number of rows (2N), got {rows}")
    z = T.l2_normalize(reps) if cfg.similarity == "cosine" else reps
    logits = T.scale(T.matmul(z, T.transpose(z)), 1.0 / cfg.temperature)
    others = ~np.eye(rows, dtype=bool)
    lse = T.logsumexp_rows(logits, others)
    positives = T.pick(logits, np.arange(rows), partner_indices(rows // 2))
    return T.mean(T.sub(lse, positives))


class KeyQueue:
    """Fixed-capacity FIFO of key embeddings used as negatives.

    Single writer; :meth:`snapshot` returns an immutable copy that can be read
    from other threads.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity <= 0 or dim <= 0:
            raise ConfigError(f"queue capacity and dim must be positive, got {capacity}, {dim}")
        self.capacity = capacity
        self.dim = dim
        self._buffer = np.zeros((capacity, dim), dtype=np.float32)
        self._start = 0
        self.fill = 0

    def __len__(self):
        return self.fill

    @property
    def full(self) -> bool:
        return self.fill == self.capacity

    def push(self, keys) -> "KeyQueue":
        keys = keys.data if isinstance(keys, Tensor) else np.asarray(keys)
        if keys.ndim != 2 or keys.shape[1] != self.dim:
            raise ContractError(f"keys of shape {keys.shape} do not fit a {self.dim}-dim queue")
        count = keys.shape[0]
        if count >= self.capacity:
            self._buffer[:] = keys[count - self.capacity :]
            self._start, self.fill = 0, self.capacity
            return self
        slots = (self._start + self.fill + np.arange(count)) % self.capacity
        self._buffer[slots] = keys
        overflow = max(0, self.fill + count - self.capacity)
        self._start = (self._start + overflow) % self.capacity
        self.fill = min(self.capacity, self.fill + count)
        return self

    def entries(self) -> np.ndarray:
        """Oldest-to-newest copy of the stored keys."""
        return self._buffer[(self._start + np.arange(self.fill)) % self.capacity].copy()

    def snapshot(self) -> Tensor:
        return Tensor(self.entries())

    @classmethod
    def from_entries(cls, capacity: int, entries) -> "KeyQueue":
        entries = entries.data if isinstance(entries, Tensor) else np.asarray(entries)
        queue = cls(capacity, entries.shape[1])
        if len(entries):
            queue.push(entries)
        return queue


def queue_push(queue: KeyQueue, keys) -> KeyQueue:
    return queue.push(keys)


def moco_loss(q_reps: Tensor, kplus_reps: Tensor, queue: KeyQueue, cfg: LossConfig) -> Tensor:
    """Mean dictionary-lookup loss: positive is the aligned key, negatives the queue.

    Keys and queue entries are constants; gradients flow only into ``q_reps``.
    """
    _check_temperature(cfg)
    if queue.fill == 0:
        raise StateError("the negative key queue is empty")
    if q_reps.ndim != 2 or q_reps.shape != kplus_reps.shape:
        raise DimensionError(
            f"query shape {q_reps.shape} and key shape {kplus_reps.shape} must match"
        )
    if q_reps.shape[1] != queue.dim:
        raise DimensionError(f"{q_reps.shape[1]}-dim queries against a {queue.dim}-dim queue")
    keys = T.stop_gradient(kplus_reps)
    negatives = queue.snapshot()
    if cfg.similarity == "cosine":
        q_reps = T.l2_normalize(q_reps)
        keys = T.stop_gradient(T.l2_normalize(keys))
        negatives = T.stop_gradient(T.l2_normalize(negatives))
    count = q_reps.shape[0]
    l_pos = T.reshape(T.sum(T.mul(q_reps, keys), axis=1), (count, 1))
    l_neg = T.matmul(q_reps, T.transpose(negatives))
    logits = T.scale(T.concat([l_pos, l_neg], axis=1), 1.0 / cfg.temperature)
    lse = T.logsumexp_rows(logits)
    return T.mean(T.sub(lse, T.pick(logits, np.arange(count), np.zeros(count))))
