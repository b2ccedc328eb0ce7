"""
Grayscale image I/O, zero-border cropping and random-crop augmentation.
Reads and writes through Pillow.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .config import GRAY_LEVELS, ZERO_THRESHOLD
from .errors import DegenerateImageError, ImageFormatError, ImageReadError, PreconditionError

# Pillow modes we refuse, with the bit depth they stand for
_UNSUPPORTED_DEPTHS = {
    "1": "1-bit",
    "I;16": "16-bit",
    "I;16L": "16-bit",
    "I;16B": "16-bit",
    "I;16N": "16-bit",
    "F": "32-bit float",
}


@dataclass
class GrayImage:
    """Single-channel image with integer levels 0..levels-1."""

    pixels: np.ndarray
    source_id: str = ""
    levels: int = GRAY_LEVELS

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2 or pixels.size == 0:
            raise PreconditionError(f"GrayImage needs a non-empty 2D pixel array, got shape {pixels.shape}")
        if not np.issubdtype(pixels.dtype, np.integer):
            raise PreconditionError(f"GrayImage pixels must be integers, got {pixels.dtype}")
        if pixels.min() < 0 or pixels.max() > self.levels - 1:
            raise PreconditionError(f"GrayImage pixels must lie in [0, {self.levels - 1}]")
        dtype = np.uint8 if self.levels <= 256 else np.int64
        self.pixels = pixels.astype(dtype, copy=False)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def normalized(self, dtype=np.float64):
        """Pixels scaled to [0, 1]."""
        return self.pixels.astype(dtype) / (self.levels - 1)


def load_gray(path):
    """
    Load an 8-bit grayscale PGM or PNG.

    RGB inputs are converted to luminance.

    Args:
        path (str): Image file path

    Returns:
        GrayImage: Exact pixel values, source_id set to the path
    """
    if not os.path.exists(path):
        raise ImageReadError(f"image file not found: {path}")
    try:
        with Image.open(path) as image:
            image.load()
            mode = image.mode
            if mode in _UNSUPPORTED_DEPTHS or mode == "I":
                # PGM/PNG only reach mode "I" through 16-bit samples
                depth = _UNSUPPORTED_DEPTHS.get(mode) or ("16-bit" if image.format in ("PPM", "PNG") else "32-bit")
                raise ImageFormatError(f"{path}: unsupported bit depth {depth} (only 8-bit grayscale is read)")
            if mode == "LA":
                image = image.getchannel("L")
            elif mode != "L":
                image = image.convert("RGB").convert("L")
            pixels = np.array(image, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise ImageReadError(f"cannot read image {path}: {e}") from e
    return GrayImage(pixels=pixels, source_id=str(path))


def save_gray(img, path):
    """
    Write an image as binary PGM (.pgm) or PNG (.png).

    Args:
        img (GrayImage): Image to write
        path (str): Destination; the extension picks the format
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(img.pixels, dtype=np.uint8)).save(path)


def content_box(img, zero_threshold=ZERO_THRESHOLD):
    """
    Bounding box of pixels above the zero threshold.

    Returns:
        tuple: (top, left, bottom, right), bottom/right exclusive
    """
    content = img.pixels > zero_threshold
    rows = np.flatnonzero(content.any(axis=1))
    cols = np.flatnonzero(content.any(axis=0))
    if rows.size == 0:
        raise DegenerateImageError(f"{img.source_id or 'image'} has no pixel above {zero_threshold}; nothing to keep")
    return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


def crop_black_borders(img, zero_threshold=ZERO_THRESHOLD):
    """
    Remove outer rows and columns whose pixels are all <= zero_threshold.

    Interior zeros are untouched.

    Args:
        img (GrayImage): Image to crop
        zero_threshold (int): Largest value still treated as border (0 = strictly zero)

    Returns:
        GrayImage: Minimal sub-image containing all content
    """
    if zero_threshold < 0:
        raise PreconditionError("zero_threshold must be >= 0")
    top, left, bottom, right = content_box(img, zero_threshold)
    if (top, left, bottom, right) == (0, 0, img.height, img.width):
        return img
    return GrayImage(pixels=img.pixels[top:bottom, left:right].copy(),
                     source_id=img.source_id, levels=img.levels)


def random_crop_box(height, width, size, rng):
    """
    Draw a uniformly positioned size x size window.

    Returns:
        tuple: (top, left)
    """
    if size < 1 or size > min(height, width):
        raise PreconditionError(f"crop size {size} does not fit a {height}x{width} image")
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    return top, left


def random_crop(img, size, rng):
    """
    Crop a uniformly positioned size x size window.

    Args:
        img (GrayImage): Source image
        size (int): Crop side, at most min(height, width)
        rng (numpy.random.Generator): Seeded generator

    Returns:
        GrayImage: The crop; source_id records the window origin
    """
    top, left = random_crop_box(img.height, img.width, size, rng)
    return GrayImage(pixels=img.pixels[top:top + size, left:left + size].copy(),
                     source_id=f"{img.source_id}@{top},{left}", levels=img.levels)


def to_gray_image(values, source_id="", scaling="rescale"):
    """
    Turn a real-valued array into an 8-bit GrayImage.

    Args:
        values (array-like): 2D real values
        scaling (str): "rescale" maps min..max to 0..255, "clamp" clips values
            already in 0..255 units

    Returns:
        GrayImage
    """
    arr = np.asarray(values, dtype=np.float64)
    if scaling == "rescale":
        lo, hi = float(arr.min()), float(arr.max())
        arr = (arr - lo) * (255.0 / (hi - lo)) if hi > lo else np.zeros_like(arr)
    elif scaling != "clamp":
        raise PreconditionError(f"unknown scaling {scaling!r}")
    return GrayImage(pixels=np.clip(np.rint(arr), 0, 255).astype(np.uint8), source_id=source_id)
