"""
Deterministic synthetic infrared-like corpora.

Pretraining corpora mix Gaussian hot spots, smooth ramps and checkerboards.
Curation corpora plant near-duplicate families and zero borders and write the
plant list that curation must reproduce.
"""

import os
from dataclasses import dataclass

import numpy as np
from rich.console import Console

from .imaging import GrayImage, save_gray

console = Console(stderr=True)

# Gaussian hot spots per blob image
BLOB_COUNT = 3
# Peak brightness added by one hot spot
BLOB_CONTRAST = 120.0
# Standard deviation of the additive sensor noise
NOISE_STD = 4.0
# Smallest brightness span of a ramp
RAMP_MIN_CONTRAST = 60.0

KINDS = ("blobs", "ramp", "checkerboard")

# Content sizes (height, width) used by curation families
CURATION_SIZES = ((64, 64), (48, 64), (64, 40), (56, 56))
FAMILY_SIZE = 4
DUPLICATE_PIXEL_FRACTION = 0.01
MAX_BORDER = 6


@dataclass
class PlantedImage:
    path: str
    scene: str
    family: int
    duplicate: bool
    width: int
    height: int
    border: tuple


def _finish(values, rng, noise, low=0):
    values = values + rng.normal(0.0, noise, size=values.shape)
    return np.clip(np.rint(values), low, 255).astype(np.uint8)


def blob_image(height, width, rng, blobs=BLOB_COUNT, contrast=BLOB_CONTRAST, noise=NOISE_STD, low=0):
    """Cool background with a few Gaussian hot spots."""
    rows, cols = np.mgrid[0:height, 0:width]
    values = np.full((height, width), rng.uniform(20, 80))
    for _ in range(blobs):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        sigma = rng.uniform(3, max(4.0, min(height, width) / 6))
        amplitude = contrast * rng.uniform(0.6, 1.0)
        values += amplitude * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * sigma * sigma))
    return _finish(values, rng, noise, low)


def ramp_image(height, width, rng, noise=NOISE_STD, low=0):
    """Linear temperature gradient in a random direction."""
    angle = rng.uniform(0, 2 * np.pi)
    rows, cols = np.mgrid[0:height, 0:width]
    t = np.cos(angle) * cols / max(width - 1, 1) + np.sin(angle) * rows / max(height - 1, 1)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    lo = rng.uniform(10, 120)
    hi = lo + rng.uniform(RAMP_MIN_CONTRAST, 125)
    return _finish(lo + (hi - lo) * t, rng, noise, low)


def checkerboard_image(height, width, rng, noise=NOISE_STD, low=0):
    """Two-level checkerboard with a random period."""
    period = int(rng.choice([4, 8, 16]))
    rows, cols = np.mgrid[0:height, 0:width]
    board = ((rows // period + cols // period) % 2).astype(np.float64)
    dark, bright = rng.uniform(20, 100), rng.uniform(140, 230)
    return _finish(dark + (bright - dark) * board, rng, noise, low)


def synth_image(kind, height, width, rng, low=0):
    if kind == "blobs":
        return blob_image(height, width, rng, low=low)
    if kind == "ramp":
        return ramp_image(height, width, rng, low=low)
    if kind == "checkerboard":
        return checkerboard_image(height, width, rng, low=low)
    raise ValueError(f"unknown synthetic image kind {kind!r}")


def make_pretrain_corpus(out_dir, n=64, size=64, seed=0):
    """
    Write `n` size x size PGM images and a `synth_manifest.tsv` (path, kind).

    Returns:
        list: Written paths
    """
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    paths, rows = [], []
    for i in range(n):
        kind = KINDS[int(rng.integers(len(KINDS)))]
        path = os.path.join(out_dir, f"img_{i:04d}.pgm")
        save_gray(GrayImage(synth_image(kind, size, size, rng), source_id=path), path)
        paths.append(path)
        rows.append(f"{os.path.basename(path)}\t{kind}\n")
    with open(os.path.join(out_dir, "synth_manifest.tsv"), "w", encoding="utf-8") as f:
        f.writelines(rows)
    console.print(f"[green]✅ Wrote {n} synthetic images to {out_dir}[/green]")
    return paths


def _near_duplicate(content, rng):
    """Replace a small fraction of pixels with random non-zero values."""
    dup = content.copy()
    count = max(1, int(round(DUPLICATE_PIXEL_FRACTION * dup.size)))
    flat = rng.choice(dup.size, size=count, replace=False)
    dup.reshape(-1)[flat] = rng.integers(1, 256, size=count)
    return dup


def _with_border(content, border):
    top, left, bottom, right = border
    return np.pad(content, ((top, bottom), (left, right)), constant_values=0)


def make_curation_corpus(out_dir, n=50, seed=0, border_rate=0.4):
    """
    Write a corpus of scenes with planted near-duplicates and zero borders.

    Scenes are subdirectories. Most scenes hold one family of FAMILY_SIZE images:
    a base image and near-duplicates of it. The remaining scenes hold a single
    image. Content pixels are never zero, so cropping recovers the content exactly.

    The plant list `plants.tsv` has one row per image:
    path, scene, family, duplicate (1/0), content width, content height.

    Returns:
        list: PlantedImage rows
    """
    rng = np.random.default_rng(seed)
    families = n // (2 * FAMILY_SIZE)
    singles = n - families * FAMILY_SIZE
    planted = []
    image_index = 0

    def write(scene, family, duplicate, content):
        nonlocal image_index
        border = (0, 0, 0, 0)
        if rng.uniform() < border_rate:
            border = tuple(int(b) for b in rng.integers(1, MAX_BORDER + 1, size=4))
        path = os.path.join(out_dir, scene, f"img_{image_index:04d}.pgm")
        image_index += 1
        save_gray(GrayImage(_with_border(content, border), source_id=path), path)
        planted.append(PlantedImage(path=path, scene=scene, family=family, duplicate=duplicate,
                                    width=content.shape[1], height=content.shape[0], border=border))

    for family in range(families + singles):
        scene = f"scene_{family:03d}"
        height, width = CURATION_SIZES[int(rng.integers(len(CURATION_SIZES)))]
        kind = KINDS[int(rng.integers(len(KINDS)))]
        base = synth_image(kind, height, width, rng, low=1)
        write(scene, family, False, base)
        if family < families:
            for _ in range(FAMILY_SIZE - 1):
                write(scene, family, True, _near_duplicate(base, rng))

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "plants.tsv"), "w", encoding="utf-8") as f:
        for p in planted:
            f.write(f"{p.path}\t{p.scene}\t{p.family}\t{int(p.duplicate)}\t{p.width}\t{p.height}\n")
    console.print(f"[green]✅ Wrote {len(planted)} images in {families + singles} scenes to {out_dir}[/green]")
    return planted
