"""Stochastic augmentation: two independent views of every image in a batch.

Each transform is split into a ``sample_*_params`` step that consumes a random
stream and a deterministic ``apply`` step, so branch frequencies can be
measured and any draw can be replayed from its key.
"""
import enum
import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, DimensionError, EmptyBatchError
from .formats import as_rgb
from .rng import BLUR, CROP, DISTORT, RngKey

LOG = logging.getLogger(__name__)

CROP_SCALE = (0.08, 1.0)
CROP_RATIO = (3.0 / 4.0, 4.0 / 3.0)
CROP_ATTEMPTS = 10
FLIP_PROB = 0.5
JITTER_PROB = 0.8
GRAYSCALE_PROB = 0.2
BLUR_PROB = 0.5
BLUR_SIGMA = (0.1, 2.0)
LUMA = np.array([0.299, 0.587, 0.114])


class TransformPair(enum.Enum):
    CROP_DISTORT = "crop+distort"
    CROP_BLUR = "crop+blur"
    DISTORT_BLUR = "distort+blur"

    @property
    def transforms(self) -> Tuple[int, int]:
        return {
            TransformPair.CROP_DISTORT: (CROP, DISTORT),
            TransformPair.CROP_BLUR: (CROP, BLUR),
            TransformPair.DISTORT_BLUR: (DISTORT, BLUR),
        }[self]


@dataclass(frozen=True)
class AugmentConfig:
    image_size: int = 32
    jitter_strength: float = 0.5
    image_mean: Tuple[float, ...] = (0.5, 0.5, 0.5)
    image_std: Tuple[float, ...] = (0.25, 0.25, 0.25)
    transform_pair: TransformPair = TransformPair.CROP_DISTORT
    rng_seed: int = 0

    def __post_init__(self):
        if self.image_size < 8:
            raise ConfigError(f"image_size must be at least 8, got {self.image_size}")
        if self.jitter_strength < 0:
            raise ConfigError(f"jitter_strength must be >= 0, got {self.jitter_strength}")
        if len(self.image_mean) != len(self.image_std):
            raise ConfigError("image_mean and image_std must have the same length")
        if any(std <= 0 for std in self.image_std):
            raise ConfigError(f"image_std must be positive, got {self.image_std}")


def resize_bilinear(image, height, width) -> np.ndarray:
    """Bilinear resize of a CHW image (half-pixel centers, edge clamped)."""
    image = np.asarray(image, dtype=np.float64)
    _, in_h, in_w = image.shape

    def _axis(out_size, in_size):
        src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
        src = np.clip(src, 0, in_size - 1)
        low = np.floor(src).astype(np.intp)
        high = np.minimum(low + 1, in_size - 1)
        return low, high, src - low

    y0, y1, wy = _axis(height, in_h)
    x0, x1, wx = _axis(width, in_w)
    rows = image[:, y0, :] * (1 - wy)[None, :, None] + image[:, y1, :] * wy[None, :, None]
    return rows[:, :, x0] * (1 - wx)[None, None, :] + rows[:, :, x1] * wx[None, None, :]


def hflip(image) -> np.ndarray:
    return np.asarray(image)[:, :, ::-1]


@dataclass(frozen=True)
class CropParams:
    top: int
    left: int
    height: int
    width: int
    flip: bool


def sample_crop_params(height, width, rng, scale=CROP_SCALE, ratio=CROP_RATIO) -> CropParams:
    area = height * width
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(CROP_ATTEMPTS):
        target = area * rng.uniform(*scale)
        aspect = math.exp(rng.uniform(*log_ratio))
        w = int(round(math.sqrt(target * aspect)))
        h = int(round(math.sqrt(target / aspect)))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            break
    else:
        LOG.debug("Crop sampling failed %d times, using a center crop", CROP_ATTEMPTS)
        in_ratio = width / height
        if in_ratio < ratio[0]:
            w, h = width, int(round(width / ratio[0]))
        elif in_ratio > ratio[1]:
            h, w = height, int(round(height * ratio[1]))
        else:
            w, h = width, height
        top, left = (height - h) // 2, (width - w) // 2
    flip = bool(rng.random() < FLIP_PROB)
    return CropParams(top, left, h, w, flip)


def apply_crop(image, params: CropParams, size) -> np.ndarray:
    patch = np.asarray(image)[
        :, params.top : params.top + params.height, params.left : params.left + params.width
    ]
    out = resize_bilinear(patch, size, size)
    return hflip(out) if params.flip else out


def random_resized_crop(image, size, rng) -> np.ndarray:
    _, height, width = np.shape(image)
    if height < 8 or width < 8:
        raise DimensionError(f"random_resized_crop needs at least 8x8, got {height}x{width}")
    return apply_crop(image, sample_crop_params(height, width, rng), size)


def jitter_strengths(s: float) -> Tuple[float, float, float, float]:
    """(brightness, contrast, saturation, hue) strengths for jitter strength ``s``."""
    if s < 0:
        raise ConfigError(f"jitter strength must be >= 0, got {s}")
    return 0.8 * s, 0.8 * s, 0.8 * s, 0.2 * s


@dataclass(frozen=True)
class DistortionParams:
    jitter: bool
    brightness: float
    contrast: float
    saturation: float
    hue: float
    grayscale: bool


def sample_distortion_params(s, rng) -> DistortionParams:
    brightness, contrast, saturation, hue = jitter_strengths(s)
    jitter = bool(rng.random() < JITTER_PROB)
    factors = [rng.uniform(max(0.0, 1 - b), 1 + b) for b in (brightness, contrast, saturation)]
    shift = rng.uniform(-hue, hue)
    grayscale = bool(rng.random() < GRAYSCALE_PROB)
    return DistortionParams(jitter, *factors, shift, grayscale)


def luminance(image) -> np.ndarray:
    return np.tensordot(LUMA, np.asarray(image, dtype=np.float64), axes=(0, 0))


def _rgb_to_hsv(image):
    r, g, b = image
    maxc = image.max(axis=0)
    minc = image.min(axis=0)
    chroma = maxc - minc
    s = chroma / np.where(maxc == 0, 1.0, maxc)
    safe = np.where(chroma == 0, 1.0, chroma)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    hr = (maxc == r) * (bc - gc)
    hg = ((maxc == g) & (maxc != r)) * (2.0 + rc - bc)
    hb = ((maxc != g) & (maxc != r)) * (4.0 + gc - rc)
    h = np.mod((hr + hg + hb) / 6.0 + 1.0, 1.0)
    return h, s, maxc


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    i = i.astype(np.intp) % 6
    p = np.clip(v * (1.0 - s), 0, 1)
    q = np.clip(v * (1.0 - s * f), 0, 1)
    t = np.clip(v * (1.0 - s * (1.0 - f)), 0, 1)
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def adjust_hue(image, shift) -> np.ndarray:
    h, s, v = _rgb_to_hsv(np.asarray(image, dtype=np.float64))
    return _hsv_to_rgb(np.mod(h + shift, 1.0), s, v)


def color_jitter(image, params: DistortionParams) -> np.ndarray:
    """Brightness, contrast, saturation then hue, each clamped to [0, 1]."""
    out = np.asarray(image, dtype=np.float64)
    if params.brightness != 1:
        out = np.clip(out * params.brightness, 0, 1)
    if params.contrast != 1:
        mean = luminance(out).mean()
        out = np.clip(params.contrast * out + (1 - params.contrast) * mean, 0, 1)
    if params.saturation != 1:
        gray = luminance(out)[None]
        out = np.clip(params.saturation * out + (1 - params.saturation) * gray, 0, 1)
    if params.hue != 0:
        out = adjust_hue(out, params.hue)
    return out


def apply_distortion(image, params: DistortionParams) -> np.ndarray:
    out = np.asarray(image, dtype=np.float64)
    if params.jitter:
        out = color_jitter(out, params)
    if params.grayscale:
        out = np.repeat(luminance(out)[None], 3, axis=0)
    return np.clip(out, 0, 1)


def color_distortion(image, s, rng) -> np.ndarray:
    if np.shape(image)[0] != 3:
        raise DimensionError(f"color_distortion needs 3 channels, got {np.shape(image)[0]}")
    return apply_distortion(image, sample_distortion_params(s, rng))


def blur_kernel_size(image_size) -> int:
    """10% of the image size, rounded half-up, forced odd and at least 3."""
    if image_size < 10:
        raise ConfigError(f"gaussian blur needs image_size >= 10, got {image_size}")
    size = int(math.floor(image_size / 10 + 0.5))
    if size % 2 == 0:
        size += 1
    return max(size, 3)


def gaussian_kernel(size, sigma) -> np.ndarray:
    offsets = np.arange(size) - size // 2
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


@dataclass(frozen=True)
class BlurParams:
    apply: bool
    sigma: float


def sample_blur_params(rng) -> BlurParams:
    apply = bool(rng.random() < BLUR_PROB)
    return BlurParams(apply, rng.uniform(*BLUR_SIGMA))


def blur(image, kernel_size, sigma) -> np.ndarray:
    """Separable Gaussian blur with reflect padding."""
    image = np.asarray(image, dtype=np.float64)
    kernel = gaussian_kernel(kernel_size, sigma)
    pad = kernel_size // 2
    _, height, width = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (0, 0)), mode="reflect")
    out = sum(weight * padded[:, i : i + height, :] for i, weight in enumerate(kernel))
    padded = np.pad(out, ((0, 0), (0, 0), (pad, pad)), mode="reflect")
    return sum(weight * padded[:, :, i : i + width] for i, weight in enumerate(kernel))


def gaussian_blur(image, image_size, rng) -> np.ndarray:
    size = blur_kernel_size(image_size)
    params = sample_blur_params(rng)
    if not params.apply:
        return np.asarray(image, dtype=np.float64)
    return blur(image, size, params.sigma)


def _channel_stats(image, mean, std):
    image = np.asarray(image, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64).reshape(-1, 1, 1)
    std = np.asarray(std, dtype=np.float64).reshape(-1, 1, 1)
    if np.any(std <= 0):
        raise ConfigError(f"std must be positive, got {std.ravel().tolist()}")
    if mean.shape[0] != image.shape[0] or std.shape[0] != image.shape[0]:
        raise DimensionError(
            f"{image.shape[0]}-channel image with {mean.shape[0]} means "
            f"and {std.shape[0]} stds"
        )
    return image, mean, std


def normalize(image, mean, std) -> np.ndarray:
    image, mean, std = _channel_stats(image, mean, std)
    return (image - mean) / std


def denormalize(image, mean, std) -> np.ndarray:
    image, mean, std = _channel_stats(image, mean, std)
    return image * std + mean


def prepare(image, cfg: AugmentConfig) -> np.ndarray:
    """Deterministic evaluation view: RGB, resized to image_size, normalized."""
    image = as_rgb(image)
    if image.shape[1:] != (cfg.image_size, cfg.image_size):
        image = resize_bilinear(image, cfg.image_size, cfg.image_size)
    return normalize(image, cfg.image_mean, cfg.image_std).astype(np.float32)


def augment_view(image, cfg: AugmentConfig, key: RngKey, normalized=True) -> np.ndarray:
    """One augmented view; transforms run in the configured pair's order."""
    image = as_rgb(image)
    steps = cfg.transform_pair.transforms
    if CROP not in steps and image.shape[1:] != (cfg.image_size, cfg.image_size):
        image = resize_bilinear(image, cfg.image_size, cfg.image_size)
    for transform in steps:
        rng = key.child(transform).generator()
        if transform == CROP:
            image = random_resized_crop(image, cfg.image_size, rng)
        elif transform == DISTORT:
            image = color_distortion(image, cfg.jitter_strength, rng)
        else:
            image = gaussian_blur(image, cfg.image_size, rng)
    if normalized:
        image = normalize(image, cfg.image_mean, cfg.image_std)
    return np.asarray(image, dtype=np.float32)


def make_pair(
    batch: Sequence[np.ndarray],
    cfg: AugmentConfig,
    key: RngKey,
    views: Tuple[int, int] = (0, 1),
    executor=None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Query and key batches; row i of both derives from ``batch[i]``.

    Image i of view v draws from ``key.child(i, v, transform)``. Passing the
    same view twice reproduces the query batch as the key batch.
    """
    if len(batch) == 0:
        raise EmptyBatchError("cannot augment an empty batch")

    def _view(args):
        index, view = args
        return augment_view(batch[index], cfg, key.child(index, view))

    mapper = executor.map if executor is not None else map
    out = []
    for view in views:
        jobs = [(i, view) for i in range(len(batch))]
        out.append(np.stack(list(mapper(_view, jobs))))
    return out[0], out[1]


def preview(image, cfg: AugmentConfig, key: RngKey, count: int, view: int = 0):
    """``count`` un-normalized augmented views of one image, for inspection."""
    return [
        augment_view(image, cfg, key.child(0, view, i), normalized=False)
        for i in range(count)
    ]
