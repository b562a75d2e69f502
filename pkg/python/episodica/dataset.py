"""Image datasets described by a ``path,class_id,split`` manifest."""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .exceptions import DatasetError, FormatError
from .formats import as_rgb, load_ppm_pgm

LOG = logging.getLogger(__name__)

MANIFEST_HEADER = ["path", "class_id", "split"]
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    class_id: int
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    entries: Tuple[ManifestEntry, ...]

    def classes(self, split: str):
        return sorted({entry.class_id for entry in self.entries if entry.split == split})

    def split(self, split: str) -> List[ManifestEntry]:
        if split not in SPLITS:
            raise DatasetError(f"unknown split '{split}', expected one of {', '.join(SPLITS)}")
        return [entry for entry in self.entries if entry.split == split]

    def validate(self):
        for entry in self.entries:
            if not (self.root / entry.path).is_file():
                raise DatasetError(f"{self.root}: missing image '{entry.path}'")
        seen = {}
        for split in SPLITS:
            for class_id in self.classes(split):
                if class_id in seen:
                    raise DatasetError(
                        f"class {class_id} appears in both '{seen[class_id]}' "
                        f"and '{split}' splits"
                    )
                seen[class_id] = split
        return self

    def load_split(self, split: str) -> Tuple[np.ndarray, np.ndarray]:
        """Stack a split into an (n, 3, H, W) float32 array plus class ids."""
        entries = self.split(split)
        if not entries:
            raise DatasetError(f"split '{split}' is empty")
        images = [as_rgb(load_ppm_pgm(self.root / entry.path)) for entry in entries]
        shapes = {image.shape for image in images}
        if len(shapes) != 1:
            raise DatasetError(f"split '{split}' mixes image shapes {sorted(shapes)}")
        LOG.info("Loaded %d '%s' images of shape %s", len(images), split, images[0].shape)
        labels = np.asarray([entry.class_id for entry in entries], dtype=np.int64)
        return np.stack(images).astype(np.float32), labels


def write_manifest(path, entries):
    path = Path(path)
    LOG.debug("Writing manifest '%s'", path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for entry in entries:
            writer.writerow([entry.path, entry.class_id, entry.split])


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        with path.open("r", newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise DatasetError(f"cannot read manifest '{path}': {e}") from e
    if not rows or rows[0] != MANIFEST_HEADER:
        raise FormatError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
    entries = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise FormatError(f"{path}: line {line}: expected 3 fields, got {len(row)}")
        relative, class_id, split = row
        try:
            class_id = int(class_id)
        except ValueError:
            raise FormatError(f"{path}: line {line}: bad class id {class_id!r}") from None
        if split not in SPLITS:
            raise FormatError(f"{path}: line {line}: unknown split '{split}'")
        entries.append(ManifestEntry(relative, class_id, split))
    return DatasetManifest(path.parent, tuple(entries)).validate()
