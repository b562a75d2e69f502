import numpy as np
import pytest

from episodica.dataset import (
    DatasetManifest,
    ManifestEntry,
    load_manifest,
    write_manifest,
)
from episodica.exceptions import DatasetError, FormatError
from episodica.formats import write_ppm_pgm


def _images(root, names, size=4):
    for name in names:
        write_ppm_pgm(root / name, np.full((3, size, size), 0.5, dtype=np.float32))


def test_manifest_round_trip(tmp_path):
    _images(tmp_path, ["a.ppm", "b.ppm", "c.ppm"])
    entries = [
        ManifestEntry("a.ppm", 0, "train"),
        ManifestEntry("b.ppm", 1, "val"),
        ManifestEntry("c.ppm", 2, "test"),
    ]
    write_manifest(tmp_path / "manifest.csv", entries)
    assert (tmp_path / "manifest.csv").read_text().startswith("path,class_id,split\n")
    manifest = load_manifest(tmp_path / "manifest.csv")
    assert manifest.entries == tuple(entries)
    assert manifest.root == tmp_path


def test_gray_images_load_as_rgb(tmp_path):
    write_ppm_pgm(tmp_path / "g.pgm", np.zeros((1, 4, 4), dtype=np.float32))
    images, labels = DatasetManifest(tmp_path, (ManifestEntry("g.pgm", 5, "test"),)).load_split(
        "test"
    )
    assert images.shape == (1, 3, 4, 4)
    assert images.dtype == np.float32
    np.testing.assert_array_equal(labels, [5])


def test_class_shared_between_splits_is_rejected(tmp_path):
    _images(tmp_path, ["a.ppm", "b.ppm"])
    manifest = DatasetManifest(
        tmp_path, (ManifestEntry("a.ppm", 3, "train"), ManifestEntry("b.ppm", 3, "test"))
    )
    with pytest.raises(DatasetError, match="class 3"):
        manifest.validate()


def test_missing_image_is_rejected(tmp_path):
    write_manifest(tmp_path / "manifest.csv", [ManifestEntry("gone.ppm", 0, "train")])
    with pytest.raises(DatasetError, match="gone.ppm"):
        load_manifest(tmp_path / "manifest.csv")


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError, match="cannot read"):
        load_manifest(tmp_path / "nothing.csv")


@pytest.mark.parametrize(
    "text,message",
    [
        ("file,label,split\n", "header"),
        ("path,class_id,split\na.ppm,0\n", "line 2: expected 3 fields"),
        ("path,class_id,split\na.ppm,zero,train\n", "line 2: bad class id"),
        ("path,class_id,split\na.ppm,0,holdout\n", "line 2: unknown split"),
    ],
)
def test_malformed_manifest(tmp_path, text, message):
    _images(tmp_path, ["a.ppm"])
    (tmp_path / "manifest.csv").write_text(text)
    with pytest.raises(FormatError, match=message):
        load_manifest(tmp_path / "manifest.csv")


def test_mixed_image_shapes(tmp_path):
    _images(tmp_path, ["a.ppm"], size=4)
    _images(tmp_path, ["b.ppm"], size=6)
    manifest = DatasetManifest(
        tmp_path, (ManifestEntry("a.ppm", 0, "train"), ManifestEntry("b.ppm", 1, "train"))
    )
    with pytest.raises(DatasetError, match="mixes image shapes"):
        manifest.load_split("train")


def test_split_errors(tmp_path):
    _images(tmp_path, ["a.ppm"])
    manifest = DatasetManifest(tmp_path, (ManifestEntry("a.ppm", 0, "train"),))
    with pytest.raises(DatasetError, match="empty"):
        manifest.load_split("test")
    with pytest.raises(DatasetError, match="unknown split"):
        manifest.split("holdout")
