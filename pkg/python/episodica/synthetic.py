"""Class-coded sinusoid gratings standing in for a real image dataset.

Class ``c`` has a fixed orientation and spatial frequency; each image gets a
random phase and Gaussian pixel noise. Orientations stay in [0, pi/2) so a
horizontal flip never turns one class into another.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .dataset import DatasetManifest, ManifestEntry, write_manifest
from .exceptions import ConfigError
from .formats import write_ppm_pgm
from .rng import stream

LOG = logging.getLogger(__name__)

ORIENTATIONS = 5
BASE_FREQUENCY = 2.0
FREQUENCY_STEP = 2.0
MANIFEST_NAME = "manifest.csv"


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 10
    per_class: int = 120
    image_size: int = 32
    noise: float = 0.1
    seed: int = 0
    n_test_classes: int = 5
    n_val_classes: int = 0

    def __post_init__(self):
        if self.n_classes <= 0 or self.per_class <= 0 or self.image_size <= 0:
            raise ConfigError("class count, images per class and image size must be positive")
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if self.n_test_classes < 0 or self.n_val_classes < 0:
            raise ConfigError("split class counts must be >= 0")
        if self.n_test_classes + self.n_val_classes >= self.n_classes:
            raise ConfigError(
                f"{self.n_classes} classes leave no training classes after "
                f"{self.n_val_classes} val and {self.n_test_classes} test classes"
            )

    def split_of(self, class_id: int) -> str:
        if class_id >= self.n_classes - self.n_test_classes:
            return "test"
        if class_id >= self.n_classes - self.n_test_classes - self.n_val_classes:
            return "val"
        return "train"


def class_pattern(class_id: int) -> Tuple[float, float]:
    """(orientation in radians, cycles per image) of a class; distinct per class."""
    angle = (class_id % ORIENTATIONS) * (math.pi / 2) / ORIENTATIONS
    frequency = BASE_FREQUENCY + FREQUENCY_STEP * (class_id // ORIENTATIONS)
    return angle, frequency


def grating(size: int, angle: float, frequency: float, phase: float) -> np.ndarray:
    coords = np.arange(size) / size
    v, u = np.meshgrid(coords, coords, indexing="ij")
    wave = np.sin(2 * math.pi * frequency * (u * math.cos(angle) + v * math.sin(angle)) + phase)
    return 0.5 + 0.5 * wave


def synthetic_image(spec: SyntheticSpec, class_id: int, index: int) -> np.ndarray:
    rng = stream(spec.seed, class_id, index)
    angle, frequency = class_pattern(class_id)
    plane = grating(spec.image_size, angle, frequency, rng.uniform(0.0, 2 * math.pi))
    image = np.repeat(plane[None], 3, axis=0)
    if spec.noise > 0:
        image = image + rng.normal(0.0, spec.noise, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True)
class SyntheticSet:
    images: np.ndarray
    labels: np.ndarray
    splits: Tuple[str, ...]

    def split(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        rows = np.asarray([split == name for split in self.splits])
        return self.images[rows], self.labels[rows]


def generate_synthetic(spec: SyntheticSpec) -> SyntheticSet:
    images, labels, splits = [], [], []
    for class_id in range(spec.n_classes):
        for index in range(spec.per_class):
            images.append(synthetic_image(spec, class_id, index))
            labels.append(class_id)
            splits.append(spec.split_of(class_id))
    LOG.info(
        "Generated %d synthetic images (%d classes)", len(images), spec.n_classes
    )
    return SyntheticSet(np.stack(images), np.asarray(labels, dtype=np.int64), tuple(splits))


def write_synthetic(spec: SyntheticSpec, directory) -> DatasetManifest:
    """Write the images as PPM files plus ``manifest.csv`` and return the manifest."""
    directory = Path(directory)
    LOG.debug("Making folder '%s'", directory / "images")
    (directory / "images").mkdir(parents=True, exist_ok=True)
    data = generate_synthetic(spec)
    entries: List[ManifestEntry] = []
    counters = {}
    for image, class_id, split in zip(data.images, data.labels, data.splits):
        index = counters.get(int(class_id), 0)
        counters[int(class_id)] = index + 1
        relative = f"images/c{int(class_id):03d}_{index:05d}.ppm"
        write_ppm_pgm(directory / relative, image)
        entries.append(ManifestEntry(relative, int(class_id), split))
    write_manifest(directory / MANIFEST_NAME, entries)
    return DatasetManifest(directory, tuple(entries)).validate()
