"""
Hierarchical masked autoencoder for infrared imagery.

Three encoder stages run over the visible tokens at strides 4, 8 and 16. One
masking decision on the stride-16 grid covers the aligned 4x4 and 2x2 blocks of
finer tokens, so tokens are kept block-major: for each visible coarse patch its
stage-1 tokens in raster order, then its stage-2 tokens, then its stage-3 token.
A dual-domain guidance bridge mixes frequency-filtered tokens into the decoder
input, and the encoder stages double as a four-level feature pyramid.
"""

from dataclasses import dataclass, field

import numpy as np

from . import config as settings
from .autodiff import Tensor, place_rows, take
from .errors import ConfigError, MaskMismatchError, ShapeError
from .frequency import FilterVariant, RadialFilterParams, afdm
from .imaging import to_gray_image
from .layers import Block, GuidedBlock, LayerNorm, Linear, Module, Parameter, sincos_2d
from .masking import (MaskSelection, MaskStrategy, TokenGrid, TokenSource, baseline_masks,
                      grid_from_features, grid_from_image)

DDG_STAGES = ("stage1", "stage3")

# Added to the per-patch variance when targets are normalized
NORM_PIX_EPS = 1e-6


@dataclass
class ModelConfig:
    patch_strides: tuple[int, int, int] = (4, 8, 16)
    stage_depths: tuple[int, int, int] = (1, 1, 3)
    embed_dims: tuple[int, int, int] = (32, 64, 128)
    heads: tuple[int, int, int] = (2, 4, 4)
    decoder_depth: int = 2
    decoder_dim: int = 128
    decoder_heads: int = 4
    mlp_ratio: float = 4.0
    mask_lambda: float = 0.75
    ddg_blocks: int = 2
    ddg_input_stage: str = "stage1"
    afdm_variant: str = "notch"
    afdm_enabled: bool = True
    entropy_source: str = "raw_pixels"
    norm_pix_loss: bool = False
    input_size: int = 64
    dtype: str = settings.DEFAULT_DTYPE

    def validate(self):
        """Raise ConfigError if the configuration cannot build a model."""
        s1, s2, s3 = self.patch_strides
        if s1 < 1 or s2 != 2 * s1 or s3 != 2 * s2:
            raise ConfigError(f"patch_strides must double per stage, got {self.patch_strides}", key="patch_strides")
        if any(d < 1 for d in self.stage_depths):
            raise ConfigError("stage_depths must all be >= 1", key="stage_depths")
        if list(self.embed_dims) != sorted(self.embed_dims):
            raise ConfigError(f"embed_dims must be nondecreasing, got {self.embed_dims}", key="embed_dims")
        for dim, heads in zip(self.embed_dims, self.heads):
            if heads < 1 or dim % heads:
                raise ConfigError(f"{heads} heads do not divide embed dim {dim}", key="heads")
            if dim % 4:
                raise ConfigError(f"embed dim {dim} must be divisible by 4 for 2D positions", key="embed_dims")
        if self.decoder_depth < 1 or self.decoder_dim % 4 or self.decoder_dim % self.decoder_heads:
            raise ConfigError("decoder_dim must be divisible by 4 and by decoder_heads, "
                              "decoder_depth >= 1", key="decoder_dim")
        if not 0 <= self.mask_lambda < 1:
            raise ConfigError(f"mask_lambda must lie in [0, 1), got {self.mask_lambda}", key="mask_lambda")
        if self.ddg_blocks < 0:
            raise ConfigError("ddg_blocks must be >= 0", key="ddg_blocks")
        if self.ddg_input_stage not in DDG_STAGES:
            raise ConfigError(f"ddg_input_stage must be one of {DDG_STAGES}", key="ddg_input_stage")
        if self.afdm_variant not in {v.value for v in FilterVariant}:
            raise ConfigError(f"unknown afdm_variant {self.afdm_variant!r}", key="afdm_variant")
        if self.entropy_source not in {s.value for s in TokenSource}:
            raise ConfigError(f"unknown entropy_source {self.entropy_source!r}", key="entropy_source")
        if self.mlp_ratio <= 0 or self.input_size < 1:
            raise ConfigError("mlp_ratio and input_size must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}", key="dtype")
        return self

    @property
    def coarse_stride(self):
        return self.patch_strides[2]

    @property
    def pad_multiple(self):
        """Inputs are padded to a multiple of the F4 stride."""
        return 2 * self.patch_strides[2]


@dataclass
class FeaturePyramid:
    """Encoder features as [rows, cols, channels] grids at strides 4, 8, 16 and 32."""

    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    f4: np.ndarray

    def levels(self):
        return {"F1": self.f1, "F2": self.f2, "F3": self.f3, "F4": self.f4}


@dataclass
class EncoderOutput:
    """Visible token features of each stage, block-major over `keep`."""

    stage1: Tensor
    stage2: Tensor
    stage3: Tensor
    keep: np.ndarray
    rows: int
    cols: int


@dataclass
class ModelInput:
    """A padded, normalized image and its stride-16 grid bookkeeping."""

    pixels: np.ndarray
    x: Tensor
    rows: int
    cols: int
    valid: np.ndarray
    height: int
    width: int
    source_id: str = ""
    patches: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return self.rows * self.cols


def pad_to_multiple(pixels, multiple):
    """Edge-replicate a 2D array up to the next multiple on both sides (bottom and right)."""
    height, width = pixels.shape
    pad_h = -height % multiple
    pad_w = -width % multiple
    if not pad_h and not pad_w:
        return pixels
    return np.pad(pixels, ((0, pad_h), (0, pad_w)), mode="edge")


def block_major_order(rows, cols, group):
    """Raster indices of a (rows*group) x (cols*group) grid, listed block by block."""
    raster = np.arange(rows * group * cols * group).reshape(rows, group, cols, group)
    return raster.transpose(0, 2, 1, 3).reshape(-1)


def patchify_blocks(x, stride, group):
    """
    [H, W] -> [coarse patches, group*group, stride*stride], patches and sub-patches in raster order.
    """
    height, width = x.shape
    coarse = stride * group
    rows, cols = height // coarse, width // coarse
    return (x.reshape(rows, group, stride, cols, group, stride)
            .transpose(0, 3, 1, 4, 2, 5)
            .reshape(rows * cols, group * group, stride * stride))


def merge_tokens(x, visible, per_side):
    """
    Regroup each visible patch's per_side x per_side tokens into 2x2 neighbourhoods.

    [visible * per_side^2, d] -> [visible * (per_side/2)^2, 4 d]
    """
    dim = x.shape[-1]
    half = per_side // 2
    return (x.reshape(visible, half, 2, half, 2, dim)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(visible * half * half, 4 * dim))


def blocks_to_grid(values, rows, cols, group):
    """Block-major token array [rows*cols*group^2, d] -> raster grid [rows*group, cols*group, d]."""
    dim = values.shape[-1]
    return (values.reshape(rows, cols, group, group, dim)
            .transpose(0, 2, 1, 3, 4)
            .reshape(rows * group, cols * group, dim))


def ddg_forward(blocks, spatial, freq):
    """
    Run a chain of guidance blocks.

    Args:
        blocks (list): GuidedBlock chain, the first one frequency-guided
        spatial (Tensor): [n, d] spatial tokens
        freq (Tensor): [n, d] frequency tokens

    Returns:
        Tensor: [n, d] guided tokens
    """
    if spatial.shape != freq.shape:
        raise ShapeError(f"spatial tokens {spatial.shape} and frequency tokens {freq.shape} differ")
    previous = None
    for j, block in enumerate(blocks):
        previous = block(spatial, previous=previous, freq=freq if j == 0 else None)
    return previous


class ThermalMAE(Module):
    """
    Masked autoencoder with a three-stage encoder, dual-domain guidance and a light decoder.
    """

    def __init__(self, config=None, seed=0):
        self.config = config = (config or ModelConfig()).validate()
        rng = np.random.default_rng(seed)
        dtype = np.dtype(config.dtype)
        s1, s2, s3 = config.patch_strides
        c1, c2, c3 = config.embed_dims
        h1, h2, h3 = config.heads
        d1, d2, d3 = config.stage_depths
        ratio = config.mlp_ratio
        self.group1 = s3 // s1
        self.group2 = s3 // s2

        self.patch_embed = Linear(s1 * s1, c1, rng, dtype=dtype)
        self.stage1 = [Block(c1, h1, ratio, rng, dtype=dtype) for _ in range(d1)]
        self.merge1 = Linear(4 * c1, c2, rng, dtype=dtype)
        self.stage2 = [Block(c2, h2, ratio, rng, dtype=dtype) for _ in range(d2)]
        self.merge2 = Linear(4 * c2, c3, rng, dtype=dtype)
        self.stage3 = [Block(c3, h3, ratio, rng, dtype=dtype) for _ in range(d3)]
        self.norm = LayerNorm(c3, dtype=dtype)

        self.ddg = []
        if config.ddg_blocks:
            if config.afdm_enabled:
                self.afdm = RadialFilterParams.for_image(config.input_size, config.input_size, dtype=dtype)
            on_stage1 = config.ddg_input_stage == "stage1"
            dim, stride, heads = (c1, s1, h1) if on_stage1 else (c3, s3, h3)
            self.freq_embed = Linear(stride * stride, dim, rng, dtype=dtype)
            self.ddg = [GuidedBlock(dim, heads, ratio, rng, first=j == 0, dtype=dtype)
                        for j in range(config.ddg_blocks)]
            if on_stage1:
                self.ddg_proj = Linear(self.group1 * self.group1 * c1, config.decoder_dim, rng, dtype=dtype)

        self.decoder_embed = Linear(c3, config.decoder_dim, rng, dtype=dtype)
        self.mask_token = Parameter(rng.normal(0.0, 0.02, config.decoder_dim), dtype=dtype)
        self.decoder = [Block(config.decoder_dim, config.decoder_heads, ratio, rng, dtype=dtype)
                        for _ in range(config.decoder_depth)]
        self.decoder_norm = LayerNorm(config.decoder_dim, dtype=dtype)
        self.head = Linear(config.decoder_dim, s3 * s3, rng, dtype=dtype)

        # F3 -> F4 by a stride-2 2x2 conv, initialized to average pooling. Pretraining never
        # reaches it, so it stays average pooling until a downstream head fine-tunes it.
        self.pyramid_down = Linear(4 * c3, c3, rng, dtype=dtype)
        self.pyramid_down.weight.data = np.tile(np.eye(c3), (1, 4)) * 0.25

        self._positions = {}
        self.parameters()

    @property
    def uses_afdm(self):
        return hasattr(self, "afdm")

    def _position_table(self, dim, rows, cols, group):
        key = (dim, rows, cols, group)
        if key not in self._positions:
            table = sincos_2d(dim, rows * group, cols * group)
            if group > 1:
                table = table[block_major_order(rows, cols, group)]
            self._positions[key] = table.reshape(rows * cols, group * group, dim).astype(self.config.dtype)
        return self._positions[key]

    def _positions_for(self, dim, rows, cols, group, keep):
        return Tensor(self._position_table(dim, rows, cols, group)[keep].reshape(-1, dim), dtype=self.config.dtype)

    def prepare(self, image):
        """
        Pad and normalize an image for the model.

        Args:
            image (GrayImage): Input image of any size

        Returns:
            ModelInput
        """
        coarse = self.config.coarse_stride
        padded = pad_to_multiple(image.pixels, self.config.pad_multiple)
        rows, cols = padded.shape[0] // coarse, padded.shape[1] // coarse
        valid = ((np.arange(rows)[:, None] * coarse < image.height)
                 & (np.arange(cols)[None, :] * coarse < image.width)).reshape(-1)
        x = Tensor(padded.astype(np.float64) / (image.levels - 1), dtype=self.config.dtype)
        return ModelInput(pixels=padded, x=x, rows=rows, cols=cols, valid=valid,
                          height=image.height, width=image.width, source_id=image.source_id)

    def patch_embed_tokens(self, x, keep, rows, cols, linear=None, stride=None, dim=None):
        """
        Strided patch embedding (kernel == stride) of the visible coarse patches plus positions.

        Args:
            x (Tensor): [H, W] image, H and W multiples of the coarse stride
            keep (numpy.ndarray): Visible coarse patch indices
            linear (Linear, optional): Embedding weights, the stage-1 embedding by default

        Returns:
            Tensor: [len(keep) * group^2, dim] tokens, block-major
        """
        linear = linear or self.patch_embed
        stride = stride or self.config.patch_strides[0]
        dim = dim or linear.out_features
        group = self.config.coarse_stride // stride
        patches = patchify_blocks(x, stride, group)
        visible = take(patches, keep).reshape(len(keep) * group * group, stride * stride)
        return linear(visible) + self._positions_for(dim, rows, cols, group, keep)

    def encoder_forward(self, inp, keep):
        """
        Run the three encoder stages over the visible coarse patches.

        Args:
            inp (ModelInput): Prepared image
            keep (numpy.ndarray): Sorted visible indices on the stride-16 grid

        Returns:
            EncoderOutput
        """
        keep = np.asarray(keep, dtype=np.int64)
        if keep.size == 0 or keep.min() < 0 or keep.max() >= inp.n or np.unique(keep).size != keep.size:
            raise MaskMismatchError(f"visible indices do not fit a grid of {inp.n} patches")
        rows, cols, visible = inp.rows, inp.cols, keep.size
        c1, c2, c3 = self.config.embed_dims

        x = self.patch_embed_tokens(inp.x, keep, rows, cols)
        for block in self.stage1:
            x = block(x)
        stage1 = x

        x = self.merge1(merge_tokens(x, visible, self.group1))
        x = x + self._positions_for(c2, rows, cols, self.group2, keep)
        for block in self.stage2:
            x = block(x)
        stage2 = x

        x = self.merge2(merge_tokens(x, visible, self.group2))
        x = x + self._positions_for(c3, rows, cols, 1, keep)
        for block in self.stage3:
            x = block(x)
        return EncoderOutput(stage1=stage1, stage2=stage2, stage3=self.norm(x), keep=keep, rows=rows, cols=cols)

    def visible_pixels(self, inp, keep):
        """The input with every non-visible coarse patch set to zero."""
        coarse = self.config.coarse_stride
        visible = np.zeros(inp.n)
        visible[keep] = 1.0
        grid = visible.reshape(inp.rows, inp.cols)
        pixel_mask = np.repeat(np.repeat(grid, coarse, axis=0), coarse, axis=1)
        return inp.x * Tensor(pixel_mask, dtype=self.config.dtype)

    def build_f_freq(self, inp, keep):
        """
        Frequency tokens aligned with the guidance input: filter, embed, gather visible.

        Returns:
            Tensor: One token per visible spatial token of the guided stage
        """
        source = self.visible_pixels(inp, keep)
        if self.uses_afdm:
            source = afdm(source, self.afdm, self.config.afdm_variant)
        stride = self.config.patch_strides[0 if self.config.ddg_input_stage == "stage1" else 2]
        return self.patch_embed_tokens(source, keep, inp.rows, inp.cols,
                                       linear=self.freq_embed, stride=stride)

    def decoder_input(self, inp, encoded):
        """Visible decoder rows: encoder output merged with the guidance branch."""
        rows = self.decoder_embed(encoded.stage3)
        if not self.ddg:
            return rows
        freq = self.build_f_freq(inp, encoded.keep)
        if self.config.ddg_input_stage == "stage1":
            guided = ddg_forward(self.ddg, encoded.stage1, freq)
            per_patch = guided.reshape(encoded.keep.size, -1)
            return rows + self.ddg_proj(per_patch)
        return self.decoder_embed(ddg_forward(self.ddg, encoded.stage3, freq))

    def decoder_forward(self, visible_rows, keep, targets, rows, cols):
        """
        Reconstruct patch pixels.

        Args:
            visible_rows (Tensor): [len(keep), decoder_dim] decoder inputs
            keep (numpy.ndarray): Visible indices
            targets (numpy.ndarray): Indices whose reconstructions are returned
            rows (int): Coarse grid rows
            cols (int): Coarse grid columns

        Returns:
            Tensor: [len(targets), stride^2] predicted pixels
        """
        if np.intersect1d(keep, targets).size:
            raise MaskMismatchError("reconstruction targets overlap the visible set")
        n = rows * cols
        x = place_rows(visible_rows, self.mask_token, keep, n)
        x = x + Tensor(self._position_table(self.config.decoder_dim, rows, cols, 1).reshape(n, -1),
                       dtype=self.config.dtype)
        for block in self.decoder:
            x = block(x)
        return take(self.head(self.decoder_norm(x)), targets)

    def loss_targets(self, inp, sel):
        """Indices of masked coarse patches that are not padding only."""
        masked = sel.masked_indices
        return masked[inp.valid[masked]]

    def target_patches(self, inp, indices):
        """Normalized pixels of the given coarse patches, [len(indices), stride^2]."""
        coarse = self.config.coarse_stride
        if inp.patches is None:
            inp.patches = patchify_blocks(inp.x.data, coarse, 1).reshape(inp.n, coarse * coarse)
        target = np.asarray(inp.patches[indices], dtype=np.float64)
        if self.config.norm_pix_loss and target.size:
            mean = target.mean(axis=-1, keepdims=True)
            var = target.var(axis=-1, keepdims=True)
            target = (target - mean) / np.sqrt(var + NORM_PIX_EPS)
        return target

    def forward(self, inp, sel, targets=None):
        """
        Encoder, guidance and decoder for one image.

        Args:
            inp (ModelInput): Prepared image
            sel (MaskSelection): Selection over the stride-16 grid
            targets (numpy.ndarray, optional): Patches to reconstruct; masked non-padding patches by default

        Returns:
            tuple: (predicted patches Tensor, target patches array)
        """
        if sel.n != inp.n:
            raise MaskMismatchError(f"selection covers {sel.n} patches but the image has {inp.n}")
        if targets is None:
            targets = self.loss_targets(inp, sel)
        encoded = self.encoder_forward(inp, sel.keep_indices)
        pred = self.decoder_forward(self.decoder_input(inp, encoded), encoded.keep, targets, inp.rows, inp.cols)
        return pred, self.target_patches(inp, targets)

    def select(self, inp, lam=None, strategy=MaskStrategy.ENTROPY, rng=None):
        """
        Choose visible patches among the non-padding coarse patches.

        Returns:
            MaskSelection over the full stride-16 grid
        """
        lam = self.config.mask_lambda if lam is None else lam
        coarse = self.config.coarse_stride
        if self.config.entropy_source == TokenSource.CONV_FEATURES.value:
            grid = grid_from_features(self._conv_features(inp), coarse)
        else:
            grid = grid_from_image(inp.pixels, coarse)
        valid = np.flatnonzero(inp.valid)
        if valid.size == grid.n:
            return baseline_masks(grid, lam, strategy, rng)
        sub = TokenGrid(rows=1, cols=valid.size, patch=coarse, tokens=grid.tokens[valid],
                         source=grid.source, levels=grid.levels)
        picked = baseline_masks(sub, lam, strategy, rng)
        entropies = np.zeros(grid.n)
        entropies[valid] = picked.entropies
        keep = valid[picked.keep_indices]
        mask = np.zeros(grid.n, dtype=np.int8)
        mask[keep] = 1
        return MaskSelection(lam=lam, keep_indices=keep, mask=mask, entropies=entropies)

    def _conv_features(self, inp):
        stride = self.config.patch_strides[0]
        patches = patchify_blocks(inp.x.data, stride, self.group1)
        w, b = self.patch_embed.weight.data, self.patch_embed.bias.data
        return (patches @ w.T + b).reshape(inp.rows, inp.cols, -1)

    def reconstruct(self, image, sel):
        """
        Full-image reconstruction: visible patches from the input, masked ones predicted.

        Args:
            image (GrayImage): Input image
            sel (MaskSelection): Selection over the padded stride-16 grid

        Returns:
            GrayImage
        """
        inp = self.prepare(image)
        masked = sel.masked_indices
        pred, _ = self.forward(inp, sel, targets=masked)
        values = np.array(pred.data, dtype=np.float64)
        coarse = self.config.coarse_stride
        patches = patchify_blocks(inp.x.data, coarse, 1).reshape(inp.n, -1).astype(np.float64)
        if self.config.norm_pix_loss and masked.size:
            own = patches[masked]
            values = values * np.sqrt(own.var(axis=-1, keepdims=True) + NORM_PIX_EPS) + own.mean(axis=-1, keepdims=True)
        patches[masked] = values
        full = (patches.reshape(inp.rows, inp.cols, coarse, coarse)
                .transpose(0, 2, 1, 3)
                .reshape(inp.rows * coarse, inp.cols * coarse))
        return to_gray_image(full[:image.height, :image.width] * (image.levels - 1),
                             source_id=f"{image.source_id}#recon", scaling="clamp")

    def feature_pyramid(self, image):
        """
        Unmasked encoder features at strides 4, 8, 16 and 32.

        F4 comes from the `pyramid_down` strided conv. The reconstruction loss gives it
        no gradient, so after pretraining it is still the 2x2 average pooling of F3.

        Args:
            image (GrayImage): Input; sizes that are not multiples of 32 are edge-padded first

        Returns:
            FeaturePyramid
        """
        inp = self.prepare(image)
        encoded = self.encoder_forward(inp, np.arange(inp.n))
        rows, cols = inp.rows, inp.cols
        c3 = self.config.embed_dims[2]
        f1 = blocks_to_grid(encoded.stage1.data, rows, cols, self.group1)
        f2 = blocks_to_grid(encoded.stage2.data, rows, cols, self.group2)
        f3 = encoded.stage3.data.reshape(rows, cols, c3)
        pooled = f3.reshape(rows // 2, 2, cols // 2, 2, c3).transpose(0, 2, 1, 3, 4).reshape(-1, 4 * c3)
        f4 = self.pyramid_down(Tensor(pooled, dtype=self.config.dtype)).data.reshape(rows // 2, cols // 2, c3)
        return FeaturePyramid(f1=np.array(f1), f2=np.array(f2), f3=np.array(f3), f4=np.array(f4))

