"""On-disk formats: ETEN1 tensors, binary PPM/PGM images and label CSVs."""
import csv
import logging
import struct
from pathlib import Path

import numpy as np

from .exceptions import DataError, FormatError
from .tensor import MAX_RANK, Tensor

LOG = logging.getLogger(__name__)

ETEN_MAGIC = b"ETEN1\0"
LABEL_HEADER = ["index", "class_id"]


def _as_array(value):
    if isinstance(value, Tensor):
        return value.data
    return np.asarray(value)


def encode_tensor(value) -> bytes:
    array = _as_array(value)
    if array.ndim > MAX_RANK:
        raise FormatError(f"cannot encode rank {array.ndim} tensor")
    header = ETEN_MAGIC + struct.pack("<B", array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def decode_tensor(buffer: bytes) -> Tensor:
    magic_len = len(ETEN_MAGIC)
    if buffer[:magic_len] != ETEN_MAGIC:
        raise FormatError("bad ETEN1 magic", offset=0)
    if len(buffer) < magic_len + 1:
        raise FormatError("truncated ETEN1 header", offset=len(buffer))
    rank = buffer[magic_len]
    if rank > MAX_RANK:
        raise FormatError(f"unsupported rank {rank}", offset=magic_len)
    dims_at = magic_len + 1
    payload_at = dims_at + 4 * rank
    if len(buffer) < payload_at:
        raise FormatError("truncated ETEN1 dimensions", offset=len(buffer))
    shape = struct.unpack_from(f"<{rank}I", buffer, dims_at)
    count = int(np.prod(shape, dtype=np.int64))
    expected = payload_at + 4 * count
    if len(buffer) < expected:
        raise FormatError(
            f"truncated ETEN1 payload: expected {4 * count} bytes", offset=len(buffer)
        )
    if len(buffer) > expected:
        raise FormatError("trailing bytes after ETEN1 payload", offset=expected)
    values = np.frombuffer(buffer, dtype="<f4", count=count, offset=payload_at)
    return Tensor(values.reshape(shape))


def write_tensor(path, value):
    path = Path(path)
    LOG.debug("Writing tensor '%s'", path)
    path.write_bytes(encode_tensor(value))


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read '{path}': {e.strerror}") from e


def read_tensor(path) -> Tensor:
    buffer = _read_bytes(path)
    try:
        return decode_tensor(buffer)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e


def _next_token(buffer, pos):
    """Return (token, end) skipping whitespace and ``#`` comments."""
    length = len(buffer)
    while pos < length:
        byte = buffer[pos : pos + 1]
        if byte.isspace():
            pos += 1
        elif byte == b"#":
            while pos < length and buffer[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < length:
        byte = buffer[pos : pos + 1]
        if byte.isspace() or byte == b"#":
            break
        pos += 1
    if start == pos:
        raise FormatError("truncated header", offset=start)
    return buffer[start:pos], pos


def decode_netpbm(buffer: bytes) -> np.ndarray:
    """Decode binary P6/P5 data into a CHW float32 image in [0, 1]."""
    magic = buffer[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"bad magic {magic!r}, expected P5 or P6", offset=0)
    channels = 3 if magic == b"P6" else 1
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        token, end = _next_token(buffer, pos)
        if not token.isdigit() or int(token) <= 0:
            raise FormatError(f"invalid {name} {token!r}", offset=end - len(token))
        fields.append(int(token))
        pos = end
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, expected 255", offset=pos - 3)
    if pos >= len(buffer) or not buffer[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after header", offset=pos)
    payload_at = pos + 1
    size = width * height * channels
    available = len(buffer) - payload_at
    if available < size:
        raise FormatError(
            f"truncated payload: expected {size} bytes, found {available}",
            offset=len(buffer),
        )
    pixels = np.frombuffer(buffer, dtype=np.uint8, count=size, offset=payload_at)
    image = pixels.reshape(height, width, channels).transpose(2, 0, 1)
    return image.astype(np.float32) / np.float32(255.0)


def load_ppm_pgm(path) -> np.ndarray:
    buffer = _read_bytes(path)
    try:
        return decode_netpbm(buffer)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e


def encode_netpbm(image) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise FormatError(f"expected a CHW image with 1 or 3 channels, got {image.shape}")
    channels, height, width = image.shape
    magic = "P6" if channels == 3 else "P5"
    pixels = np.clip(np.rint(image.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    header = f"{magic}\n{width} {height}\n255\n".encode("ascii")
    return header + pixels.transpose(1, 2, 0).tobytes()


def write_ppm_pgm(path, image):
    path = Path(path)
    LOG.debug("Writing image '%s'", path)
    path.write_bytes(encode_netpbm(image))


def as_rgb(image) -> np.ndarray:
    """Promote a 1-channel image to 3 channels by replication."""
    image = np.asarray(image)
    if image.shape[0] == 1:
        return np.repeat(image, 3, axis=0)
    return image


def write_labels(path, labels):
    path = Path(path)
    LOG.debug("Writing labels '%s'", path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LABEL_HEADER)
        for index, class_id in enumerate(labels):
            writer.writerow([index, int(class_id)])


def read_labels(path) -> np.ndarray:
    try:
        with Path(path).open("r", newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise DataError(f"cannot read '{path}': {e.strerror}") from e
    if not rows or rows[0] != LABEL_HEADER:
        raise FormatError(f"{path}: expected header {','.join(LABEL_HEADER)}")
    labels = []
    for line, row in enumerate(rows[1:], start=2):
        try:
            index, class_id = (int(field) for field in row)
        except ValueError as e:
            raise FormatError(f"{path}: line {line}: malformed row {row!r}") from e
        if index != len(labels):
            raise FormatError(f"{path}: line {line}: expected index {len(labels)}")
        labels.append(class_id)
    return np.asarray(labels, dtype=np.int64)
