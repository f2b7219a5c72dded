"""Synthetic datasets: Klein-bottle circle images and Gabor-Klein filters.

Images are stored in a small binary raster format (``KIMG``)::

    offset  size  field
    0       4     magic b"KIMG"
    4       4     u32 format version (1)
    8       4     u32 count
    12      4     u32 height
    16      4     u32 width
    20      4*N   little-endian f32 pixels, N = count*height*width, C order
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .covering import CoveringMap, DomainError

MAGIC = b"KIMG"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
HEADER_SIZE = _HEADER.size  # 20 bytes

# images generated per vectorised chunk; bounds the (chunk, S*S, lifts) scratch array
_CHUNK = 256


class FormatError(ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class ImageSet:
    pixels: np.ndarray  # (count, height, width) float32 in [0, 1]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[0] < 1:
            raise DomainError(f"ImageSet needs a (count, H, W) array, got {px.shape}")
        if not np.all((px >= 0.0) & (px <= 1.0)):
            raise DomainError("pixel values must lie in [0, 1]")
        self.pixels = px

    @property
    def count(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(self.count, -1).astype(np.float64)


@dataclass
class FilterCloud:
    filters: np.ndarray  # (count, 9)
    thetas: np.ndarray  # (count, 2)

    @property
    def count(self) -> int:
        return self.filters.shape[0]


# ------------------------------------------------------------------ circles

def pixel_centers(size: int) -> np.ndarray:
    """(size*size, 2) array of (x, y) pixel centres, row-major over (i, j)."""
    g = (np.arange(size) + 0.5) / size
    x, y = np.meshgrid(g, g)  # x varies along columns j, y along rows i
    return np.stack([x.ravel(), y.ravel()], axis=-1)


def circle_centers(n: int, seed) -> np.ndarray:
    """Centre of image ``i`` comes from its own stream ``(seed, i)``."""
    return np.array([np.random.default_rng((seed, i)).uniform(0.0, 1.0, 2) for i in range(n)]).reshape(n, 2)


def render_circles(centers, image_size: int, radius: float) -> np.ndarray:
    """Binary disks of ``radius`` around each centre on the Klein bottle."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    K = CoveringMap.klein()
    pix = pixel_centers(image_size)
    out = np.empty((len(centers), image_size * image_size), dtype=np.float32)
    for lo in range(0, len(centers), _CHUNK):
        c = centers[lo:lo + _CHUNK]
        d = K.quotient_distance(pix[None, :, :], c[:, None, :])
        out[lo:lo + _CHUNK] = d <= radius
    return out.reshape(len(centers), image_size, image_size)


def gen_klein_circles(n: int, image_size: int = 30, radius: float = 0.3, seed=0,
                      return_centers: bool = False):
    if not 0.0 < radius < 0.5:
        raise DomainError("radius must lie in (0, 0.5)")
    if image_size < 2:
        raise DomainError("image_size must be at least 2")
    if n < 1:
        raise DomainError("n must be positive")
    centers = circle_centers(n, seed)
    images = ImageSet(render_circles(centers, image_size, radius))
    return (images, centers) if return_centers else images


# ------------------------------------------------------------------ filters

GRID = np.array([-1.0, 0.0, 1.0])


def gabor_klein(theta1: float, theta2: float) -> np.ndarray:
    """3x3 filter ``sin(t2) t + cos(t2) (2 t^2 - 1)``, ``t = cos(t1) x + sin(t1) y``.

    Rows index ``y`` and columns index ``x``, both over ``(-1, 0, 1)``.
    """
    x, y = np.meshgrid(GRID, GRID)
    t = math.cos(theta1) * x + math.sin(theta1) * y
    return math.sin(theta2) * t + math.cos(theta2) * (2.0 * t * t - 1.0)


def gabor_klein_batch(thetas: np.ndarray) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float).reshape(-1, 2)
    x, y = np.meshgrid(GRID, GRID)
    t1 = thetas[:, 0, None, None]
    t2 = thetas[:, 1, None, None]
    t = np.cos(t1) * x + np.sin(t1) * y
    return np.sin(t2) * t + np.cos(t2) * (2.0 * t * t - 1.0)


def sample_filter_cloud(n: int, seed) -> FilterCloud:
    if n < 1:
        raise DomainError("n must be positive")
    rng = np.random.default_rng(seed)
    thetas = rng.uniform(0.0, 2.0 * math.pi, size=(n, 2))
    return FilterCloud(gabor_klein_batch(thetas).reshape(n, 9), thetas)


# ------------------------------------------------------------------ storage

def dump_array(images: ImageSet | np.ndarray) -> bytes:
    px = images.pixels if isinstance(images, ImageSet) else np.asarray(images, dtype=np.float32)
    if px.ndim != 3:
        raise DomainError("expected a (count, H, W) array")
    count, h, w = px.shape
    return _HEADER.pack(MAGIC, VERSION, count, h, w) + np.ascontiguousarray(px, dtype="<f4").tobytes()


def parse_array(blob: bytes) -> np.ndarray:
    """Raw (count, H, W) float32 raster from KIMG bytes; no range check."""
    if len(blob) < HEADER_SIZE:
        raise FormatError("file shorter than the header", len(blob))
    magic, version, count, h, w = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    expected = HEADER_SIZE + 4 * count * h * w
    if len(blob) != expected:
        raise FormatError(f"expected {expected} bytes for {count}x{h}x{w}, found {len(blob)}",
                          min(len(blob), expected))
    data = np.frombuffer(blob, dtype="<f4", offset=HEADER_SIZE).astype(np.float32)
    return data.reshape(count, h, w)


def save_images(images: ImageSet | np.ndarray, path) -> None:
    Path(path).write_bytes(dump_array(images))


def load_array(path) -> np.ndarray:
    return parse_array(Path(path).read_bytes())


def load_images(path) -> ImageSet:
    return ImageSet(load_array(path))


def _thetas_path(path) -> Path:
    return Path(str(path) + ".thetas")


def save_filters(cloud: FilterCloud, path) -> None:
    """Filters as a (count, 3, 3) raster plus a ``.thetas`` (count, 1, 2) sidecar."""
    save_images(np.asarray(cloud.filters, dtype=np.float32).reshape(-1, 3, 3), path)
    save_images(np.asarray(cloud.thetas, dtype=np.float32).reshape(-1, 1, 2), _thetas_path(path))


def load_filters(path) -> FilterCloud:
    filters = load_array(path)
    if filters.shape[1:] != (3, 3):
        raise FormatError(f"filter file holds {filters.shape[1:]} rasters, not 3x3", 12)
    side = _thetas_path(path)
    thetas = load_array(side).reshape(-1, 2) if side.exists() else np.full((len(filters), 2), np.nan)
    return FilterCloud(filters.reshape(-1, 9), thetas)
