"""
Entropy-based deterministic token masking, plus the random and gray-value
baselines used for ablations.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .config import GRAY_LEVELS
from .errors import MaskMismatchError, PreconditionError, ShapeError
from .imaging import GrayImage

# Gray-value baseline keeps every 4th token of the brightness ranking
GRAY_VALUE_STRIDE = 4

# Value of masked tokens in the mask visualization
MASKED_GRAY = 128


class TokenSource(str, Enum):
    RAW_PIXELS = "raw_pixels"
    CONV_FEATURES = "conv_features"


class MaskStrategy(str, Enum):
    RANDOM = "random"
    GRAY_VALUE = "gray_value"
    ENTROPY = "entropy"


@dataclass
class TokenGrid:
    """rows x cols tokens, each a flattened patch (or feature slice) of equal length."""

    rows: int
    cols: int
    patch: int
    tokens: np.ndarray
    source: TokenSource = TokenSource.RAW_PIXELS
    levels: int = GRAY_LEVELS

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] != self.rows * self.cols:
            raise ShapeError(f"TokenGrid expects {self.rows * self.cols} equal-length tokens, "
                             f"got array of shape {self.tokens.shape}")

    @property
    def n(self):
        return self.rows * self.cols


@dataclass
class MaskSelection:
    """
    Keep/mask partition of a token grid.

    mask[i] == 1 marks a kept (visible) token.
    """

    lam: float
    keep_indices: np.ndarray
    mask: np.ndarray
    entropies: np.ndarray

    @property
    def n(self):
        return self.mask.size

    @property
    def masked_indices(self):
        return np.flatnonzero(self.mask == 0)


def keep_count(n, lam):
    """N - floor(lam * N)."""
    return n - math.floor(lam * n)


def _check_lambda(lam, n):
    if not 0 <= lam < 1:
        raise PreconditionError(f"mask ratio must satisfy 0 <= lambda < 1, got {lam}")
    if n < 1:
        raise PreconditionError("cannot mask an empty token grid")


def grid_from_image(img, patch):
    """
    Cut an image into non-overlapping patch x patch tokens (raster order).

    Args:
        img (GrayImage or numpy.ndarray): Integer-level image whose sides are multiples of `patch`
        patch (int): Patch side in pixels

    Returns:
        TokenGrid
    """
    pixels = img.pixels if isinstance(img, GrayImage) else np.asarray(img)
    levels = img.levels if isinstance(img, GrayImage) else GRAY_LEVELS
    height, width = pixels.shape
    if height % patch or width % patch:
        raise ShapeError(f"image {height}x{width} is not a multiple of patch size {patch}")
    rows, cols = height // patch, width // patch
    tokens = pixels.reshape(rows, patch, cols, patch).transpose(0, 2, 1, 3).reshape(rows * cols, -1)
    return TokenGrid(rows=rows, cols=cols, patch=patch, tokens=tokens.astype(np.int64),
                     source=TokenSource.RAW_PIXELS, levels=levels)


def quantize(values, levels=GRAY_LEVELS, lo=None, hi=None):
    """Map reals to `levels` uniform bins over [lo, hi] (global min/max by default)."""
    values = np.asarray(values, dtype=np.float64)
    lo = float(values.min()) if lo is None else lo
    hi = float(values.max()) if hi is None else hi
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.int64)
    bins = np.floor((values - lo) / (hi - lo) * levels).astype(np.int64)
    return np.clip(bins, 0, levels - 1)


def grid_from_features(features, patch, levels=GRAY_LEVELS):
    """
    Token grid over conv features quantized into `levels` bins over the global range.

    Args:
        features (numpy.ndarray): [rows, cols, length] feature slice per token
        patch (int): Pixel stride the tokens stand for
    """
    rows, cols = features.shape[:2]
    tokens = quantize(features.reshape(rows * cols, -1), levels)
    return TokenGrid(rows=rows, cols=cols, patch=patch, tokens=tokens,
                     source=TokenSource.CONV_FEATURES, levels=levels)


def token_entropy(payload, levels=GRAY_LEVELS, binning=None):
    """
    Shannon entropy in bits of a token's empirical level histogram.

    Args:
        payload (array-like): Token values; integer levels in [0, levels-1] unless `binning` is given
        levels (int): Number of levels J, at least 2
        binning (tuple, optional): (lo, hi) range for quantizing real-valued payloads

    Returns:
        float: Entropy in [0, log2(levels)]
    """
    if levels < 2:
        raise PreconditionError("entropy needs at least 2 levels")
    values = np.asarray(payload).ravel()
    if values.size == 0:
        raise PreconditionError("entropy of an empty token is undefined")
    if binning is not None:
        values = quantize(values, levels, *binning)
    elif values.min() < 0 or values.max() > levels - 1:
        raise PreconditionError(f"token values must be integer levels in [0, {levels - 1}]")
    counts = np.bincount(values.astype(np.int64), minlength=levels)
    p = counts[counts > 0] / values.size
    return float(-(p * np.log2(p)).sum()) + 0.0


def grid_entropies(grid):
    return np.array([token_entropy(token, grid.levels) for token in grid.tokens], dtype=np.float64)


def _selection(lam, keep, entropies, n):
    keep = np.sort(np.asarray(keep, dtype=np.int64))
    mask = np.zeros(n, dtype=np.int8)
    mask[keep] = 1
    return MaskSelection(lam=lam, keep_indices=keep, mask=mask, entropies=entropies)


def select_from_entropies(entropies, lam):
    """
    Keep the last N - floor(lam*N) tokens of the ascending (entropy, index) order.
    """
    entropies = np.asarray(entropies, dtype=np.float64)
    n = entropies.size
    _check_lambda(lam, n)
    order = np.lexsort((np.arange(n), entropies))
    return _selection(lam, order[math.floor(lam * n):], entropies, n)


def select_mask(grid, lam):
    """
    Entropy-based deterministic masking.

    Tokens are sorted by ascending entropy (ties by ascending index) and the last
    N - floor(lam*N) positions are kept.

    Args:
        grid (TokenGrid): Tokens to score
        lam (float): Mask ratio in [0, 1)

    Returns:
        MaskSelection
    """
    _check_lambda(lam, grid.n)
    return select_from_entropies(grid_entropies(grid), lam)


def apply_mask(grid, sel):
    """
    Split tokens into the visible payloads and the masked index list.

    Returns:
        tuple: (visible tokens in original index order, masked indices)
    """
    if sel.n != grid.n:
        raise MaskMismatchError(f"selection covers {sel.n} tokens but the grid has {grid.n}")
    return grid.tokens[sel.keep_indices], sel.masked_indices


def gray_value_keep(means, quota, stride=GRAY_VALUE_STRIDE):
    """
    Rank tokens by descending mean intensity and take every `stride`-th ranked token.

    When one pass is short of the quota the next pass starts one rank later.
    """
    n = means.size
    ranking = np.lexsort((np.arange(n), -np.asarray(means, dtype=np.float64)))
    positions = [p for offset in range(stride) for p in range(offset, n, stride)][:quota]
    return ranking[positions]


def baseline_masks(grid, lam, strategy, rng=None):
    """
    Mask selection for the ablation strategies.

    Args:
        grid (TokenGrid): Tokens to select from
        lam (float): Mask ratio in [0, 1)
        strategy (MaskStrategy or str): random, gray_value or entropy
        rng (numpy.random.Generator, optional): Required for `random`

    Returns:
        MaskSelection
    """
    strategy = MaskStrategy(strategy)
    if strategy is MaskStrategy.ENTROPY:
        return select_mask(grid, lam)
    _check_lambda(lam, grid.n)
    entropies = grid_entropies(grid)
    quota = keep_count(grid.n, lam)
    if strategy is MaskStrategy.RANDOM:
        if rng is None:
            raise PreconditionError("random masking needs a seeded generator")
        return _selection(lam, rng.permutation(grid.n)[:quota], entropies, grid.n)
    means = grid.tokens.astype(np.float64).mean(axis=1)
    return _selection(lam, gray_value_keep(means, quota), entropies, grid.n)


def render_mask(img, sel, patch):
    """
    Visible tokens show their pixels, masked tokens are drawn mid-gray.

    Returns:
        GrayImage
    """
    rows, cols = img.height // patch, img.width // patch
    if rows * cols != sel.n:
        raise MaskMismatchError(f"selection covers {sel.n} tokens but the image holds {rows * cols}")
    keep = np.repeat(np.repeat(sel.mask.reshape(rows, cols), patch, axis=0), patch, axis=1).astype(bool)
    pixels = img.pixels[:rows * patch, :cols * patch]
    return GrayImage(pixels=np.where(keep, pixels, MASKED_GRAY).astype(np.uint8),
                     source_id=f"{img.source_id}#mask")


def render_entropy_map(sel, rows, cols, patch):
    """
    Token entropies rescaled linearly to 0..255, one block per token.

    A grid of equal entropies renders as all zeros.

    Returns:
        GrayImage
    """
    entropies = sel.entropies.reshape(rows, cols)
    lo, hi = float(entropies.min()), float(entropies.max())
    scaled = (entropies - lo) * (255.0 / (hi - lo)) if hi > lo else np.zeros_like(entropies)
    blocks = np.repeat(np.repeat(np.rint(scaled), patch, axis=0), patch, axis=1)
    return GrayImage(pixels=blocks.astype(np.uint8), source_id="entropy-map")
