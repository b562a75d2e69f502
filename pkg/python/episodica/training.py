"""Contrastive pretraining, embedding extraction and run checkpoints.

One step augments a batch into query and key views, encodes them, computes
the variant's loss and updates the query network. The ``moco`` variant also
moves the key network towards the query network and enqueues the new keys;
its queue is filled once before the first epoch.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, List, Optional

import numpy as np

from . import tensor as T
from .augment import make_pair, prepare
from .config import RunConfig, parse_config, serialize_config
from .encoder import (
    EncoderModel,
    forward,
    init_encoder,
    load_checkpoint,
    save_checkpoint,
)
from .exceptions import ConfigError, EmptyBatchError, EpisodicaError, NumericError, with_context
from .formats import read_tensor, write_tensor
from .losses import KeyQueue, moco_loss, ntxent_simclr
from .optim import OptimState, learning_rate, momentum_update, sgd_step
from .rng import SHUFFLE, RngKey
from .tensor import Tape, Tensor

LOG = logging.getLogger(__name__)

HEAD_DIR = "head"
KEY_DIR = "key"
QUEUE_FILE = "queue.eten"
CONFIG_FILE = "config.conf"
HEAD_SEED_OFFSET = 1
WARMUP_SEED_OFFSET = 2


@dataclass(frozen=True)
class Network:
    """Encoder plus the optional projection head used only by the loss."""

    encoder: EncoderModel
    head: Optional[EncoderModel] = None

    def project(self, batch) -> Tensor:
        reps = forward(self.encoder, batch)
        return forward(self.head, reps) if self.head is not None else reps

    @property
    def out_dim(self) -> int:
        return (self.head or self.encoder).embed_dim

    def parts(self):
        return {"encoder": self.encoder, "head": self.head}


def init_network(cfg: RunConfig, in_channels=3) -> Network:
    encoder = init_encoder(cfg.encoder.arch(in_channels), cfg.train.seed)
    head_arch = cfg.encoder.head_arch()
    head = init_encoder(head_arch, cfg.train.seed + HEAD_SEED_OFFSET) if head_arch else None
    return Network(encoder, head)


@dataclass
class PretrainResult:
    network: Network
    key_network: Optional[Network] = None
    queue: Optional[KeyQueue] = None
    history: List[float] = field(default_factory=list)

    @property
    def encoder(self) -> EncoderModel:
        return self.network.encoder


class Trainer:
    def __init__(self, cfg: RunConfig, network: Network):
        self.cfg = cfg
        self.network = network
        base = cfg.optim.state()
        self.optims = {
            name: OptimState(base.lr, base.momentum, base.weight_decay, base.nesterov)
            for name, part in network.parts().items()
            if part is not None
        }
        self.key_network = None
        self.queue = None
        if cfg.train.variant == "moco":
            self.key_network = network
            self.queue = KeyQueue(cfg.train.queue_capacity, network.out_dim)

    def set_lr(self, lr: float):
        for opt in self.optims.values():
            opt.lr = lr

    def _update(self, loss: Tensor, tape: Tape):
        parts = {name: part for name, part in self.network.parts().items() if part is not None}
        updated = {}
        for name, part in parts.items():
            grads = T.backward(loss, tape, part.params)
            updated[name] = sgd_step(part, grads, self.optims[name])
        self.network = Network(updated["encoder"], updated.get("head"))

    def simclr_step(self, query: np.ndarray, key: np.ndarray) -> float:
        with Tape() as tape:
            reps = self.network.project(Tensor(np.concatenate([query, key])))
            loss = ntxent_simclr(reps, self.cfg.loss)
        self._update(loss, tape)
        return loss.item()

    def _keys(self, key: np.ndarray) -> np.ndarray:
        reps = self.key_network.project(Tensor(key))
        if self.cfg.loss.similarity == "cosine":
            reps = T.l2_normalize(reps)
        return reps.numpy()

    def warm_up(self, key: np.ndarray) -> int:
        """Enqueue the keys of one batch without a loss or an update."""
        keys = self._keys(key)
        LOG.debug("Warm-up step: enqueueing %d keys", len(keys))
        self.queue.push(keys)
        return len(keys)

    def moco_step(self, query: np.ndarray, key: np.ndarray) -> Optional[float]:
        """Returns ``None`` for a warm-up step that only fills the empty queue."""
        if len(self.queue) == 0:
            self.warm_up(key)
            return None
        keys = self._keys(key)
        with Tape() as tape:
            q_reps = self.network.project(Tensor(query))
            loss = moco_loss(q_reps, Tensor(keys), self.queue, self.cfg.loss)
        self._update(loss, tape)
        # enqueue only after both networks moved
        m = self.cfg.train.moco_momentum
        key_head = self.key_network.head
        self.key_network = Network(
            momentum_update(self.key_network.encoder, self.network.encoder, m),
            momentum_update(key_head, self.network.head, m) if key_head is not None else None,
        )
        self.queue.push(keys)
        return loss.item()

    def step(self, query, key) -> Optional[float]:
        if self.cfg.train.variant == "moco":
            return self.moco_step(query, key)
        return self.simclr_step(query, key)


def batch_indices(n: int, cfg: RunConfig, epoch: int) -> List[np.ndarray]:
    order = RngKey(cfg.train.seed).child(SHUFFLE, epoch).generator().permutation(n)
    size = cfg.train.batch_size
    return [order[start : start + size] for start in range(0, n, size)]


def prefetch(items: Iterator, pool: ThreadPoolExecutor) -> Iterator:
    """Yield ``items`` while the next one is produced on ``pool``."""
    done = object()
    future = pool.submit(next, items, done)
    while True:
        item = future.result()
        if item is done:
            return
        future = pool.submit(next, items, done)
        yield item


def augmented_batches(images, cfg: RunConfig, epoch: int, executor=None) -> Iterator:
    key = RngKey(cfg.train.seed).child(epoch)
    for index, rows in enumerate(batch_indices(len(images), cfg, epoch)):
        yield index, make_pair(images[rows], cfg.augment, key.child(index), executor=executor)


def warm_up_queue(trainer: Trainer, images, executor=None) -> int:
    """Fill an empty queue from one batch drawn outside the epoch streams."""
    cfg = trainer.cfg
    key = RngKey(cfg.train.seed + WARMUP_SEED_OFFSET)
    rows = key.child(SHUFFLE).generator().permutation(len(images))[: cfg.train.batch_size]
    _, keys = make_pair(images[rows], cfg.augment, key.child(0), executor=executor)
    return trainer.warm_up(keys)


def pretrain(
    images,
    cfg: RunConfig,
    network: Optional[Network] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> PretrainResult:
    """Run ``cfg.train.epochs`` epochs over ``images`` (n, C, H, W)."""
    images = np.asarray(images, dtype=np.float32)
    if len(images) == 0:
        raise EmptyBatchError("no training images")
    network = network or init_network(cfg, images.shape[1])
    trainer = Trainer(cfg, network)
    history = []
    workers = cfg.train.workers
    LOG.info(
        "Pretraining %s on %d images for %d epochs",
        cfg.train.variant,
        len(images),
        cfg.train.epochs,
    )
    with ThreadPoolExecutor(max_workers=1) as loader:
        augment_pool = ThreadPoolExecutor(max_workers=workers) if workers else None
        try:
            if trainer.queue is not None and len(trainer.queue) == 0:
                warm_up_queue(trainer, images, augment_pool)
            for epoch in range(cfg.train.epochs):
                trainer.set_lr(
                    learning_rate(cfg.optim.lr, epoch, cfg.train.epochs, cfg.optim.schedule)
                )
                losses = []
                batches = augmented_batches(images, cfg, epoch, augment_pool)
                for index, (query, key) in prefetch(batches, loader):
                    try:
                        loss = trainer.step(query, key)
                        if loss is not None and not math.isfinite(loss):
                            raise NumericError(f"non-finite loss {loss}")
                    except EpisodicaError as e:
                        raise with_context(e, f"epoch {epoch} batch {index}") from e
                    if loss is not None:
                        losses.append(loss)
                mean = float(np.mean(losses)) if losses else float("nan")
                history.append(mean)
                LOG.info("Epoch %d/%d: mean loss %.6f", epoch + 1, cfg.train.epochs, mean)
                if on_epoch is not None:
                    on_epoch(epoch, mean)
        finally:
            if augment_pool is not None:
                augment_pool.shutdown()
    return PretrainResult(trainer.network, trainer.key_network, trainer.queue, history)


def embed(encoder: EncoderModel, images, cfg: RunConfig, batch_size=256) -> np.ndarray:
    """Pre-projection embeddings of the deterministic evaluation views."""
    info = encoder.info
    if info.input_rank != 4 or info.input_features != 3:
        raise ConfigError(
            f"encoder expects rank-{info.input_rank} input with {info.input_features} "
            "features, not RGB images"
        )
    if len(images) == 0:
        raise EmptyBatchError("no images to embed")
    rows = []
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        batch = np.stack([prepare(image, cfg.augment) for image in chunk])
        rows.append(forward(encoder, Tensor(batch)).numpy())
    return np.concatenate(rows).astype(np.float32)


def save_pretrained(result: PretrainResult, cfg: RunConfig, directory):
    directory = Path(directory)
    save_checkpoint(result.network.encoder, directory)
    if result.network.head is not None:
        save_checkpoint(result.network.head, directory / HEAD_DIR)
    if result.key_network is not None:
        save_checkpoint(result.key_network.encoder, directory / KEY_DIR)
        if result.key_network.head is not None:
            save_checkpoint(result.key_network.head, directory / KEY_DIR / HEAD_DIR)
    if result.queue is not None:
        write_tensor(directory / QUEUE_FILE, result.queue.entries())
    (directory / CONFIG_FILE).write_text(serialize_config(cfg), encoding="utf-8")
    LOG.info("Saved checkpoint to '%s'", directory)


def _load_network(directory: Path) -> Network:
    head = load_checkpoint(directory / HEAD_DIR) if (directory / HEAD_DIR).is_dir() else None
    return Network(load_checkpoint(directory), head)


def load_pretrained(directory):
    """(PretrainResult, RunConfig) from a directory written by :func:`save_pretrained`."""
    directory = Path(directory)
    config_path = directory / CONFIG_FILE
    cfg = RunConfig()
    if config_path.is_file():
        cfg = parse_config(config_path.read_text(encoding="utf-8"))
    network = _load_network(directory)
    key_network = _load_network(directory / KEY_DIR) if (directory / KEY_DIR).is_dir() else None
    queue = None
    if (directory / QUEUE_FILE).is_file():
        entries = read_tensor(directory / QUEUE_FILE)
        queue = KeyQueue.from_entries(cfg.train.queue_capacity, entries)
    return PretrainResult(network, key_network, queue), cfg
