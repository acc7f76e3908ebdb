"""Vision encoder shared by images and videos.

Spatial attention and feed-forward weights serve both modalities; a
temporal-mixing module (exercised only on videos) is the single path
through which information crosses frames. Three interchangeable temporal
modules are provided: grouped local temporal mixing, a single ungrouped
temporal convolution, and per-location temporal self-attention.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .blocks import FeedForward, LayerNorm, Linear, MultiHeadAttention
from .errors import ConfigError, ShapeError
from .tensor import Tensor


class LocalTemporal:
    """Grouped temporal mixing over a (T, L, C) block.

    Per group g: project channels C -> C/G, convolve along the frame axis
    with that group's kernel, apply ReLU; concatenate groups back to width C
    and re-project. The group projections are stored as one fused C -> C map
    whose output columns [g*C/G, (g+1)*C/G) belong to group g; the kernels
    are the rows of one (G, K) tensor. The output projection starts at zero
    so a fresh block is purely spatial until training moves it.
    """

    def __init__(self, rng: np.random.Generator, dim: int, groups: int, kernel_size: int):
        if dim % groups != 0:
            raise ConfigError(f"group count {groups} does not divide width {dim}")
        if kernel_size % 2 == 0:
            raise ConfigError(f"temporal kernel length must be odd, got {kernel_size}")
        self.groups = groups
        self.proj = Linear(rng, dim, dim)
        self.kernels = Tensor(rng.normal(0.0, 0.5, size=(groups, kernel_size)),
                              requires_grad=True)
        self.out_proj = Linear(rng, dim, dim, zero_init=True)

    def __call__(self, v: Tensor) -> Tensor:
        x = T.grouped_temporal_conv(self.proj(v), self.kernels)
        return self.out_proj(T.relu(x))

    def params(self, prefix: str):
        yield from self.proj.params(f"{prefix}.proj")
        yield f"{prefix}.kernels", self.kernels
        yield from self.out_proj.params(f"{prefix}.out")


class TemporalSelfAttention:
    """Per-spatial-location self-attention across frames (ablation baseline)."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        self.attn = MultiHeadAttention(rng, dim, heads, zero_init_out=True)

    def __call__(self, v: Tensor) -> Tensor:
        # transpose so each spatial location becomes an independent sequence
        flipped = T.transpose(v, (1, 0, 2))
        return T.transpose(self.attn.self_attend_frames(flipped), (1, 0, 2))

    def params(self, prefix: str):
        yield from self.attn.params(f"{prefix}.attn")


TEMPORAL_VARIANTS = ("localTemporal", "temporalConvolution", "temporalSelfAttention")


def make_temporal_module(variant: str, rng: np.random.Generator, dim: int,
                         groups: int, kernel_size: int, heads: int):
    if variant == "localTemporal":
        return LocalTemporal(rng, dim, groups, kernel_size)
    if variant == "temporalConvolution":
        return LocalTemporal(rng, dim, 1, kernel_size)
    if variant == "temporalSelfAttention":
        return TemporalSelfAttention(rng, dim, heads)
    raise ConfigError(f"unknown temporal module variant '{variant}', expected one of {TEMPORAL_VARIANTS}")


class DualVisionBlock:
    """Temporal stage, per-frame spatial attention, feed-forward; post-norm
    residuals throughout. Image inputs skip the temporal module but still pass
    through the stage norm, so a zero temporal contribution makes the two
    modes coincide."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int, temporal):
        self.temporal = temporal
        self.ln_temporal = LayerNorm(dim)
        self.sa = MultiHeadAttention(rng, dim, heads)
        self.ln_sa = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim)
        self.ln_ffn = LayerNorm(dim)

    def __call__(self, v: Tensor, video_mode: bool, capture_sa=None) -> Tensor:
        if video_mode:
            v = self.ln_temporal(self.temporal(v) + v)
        else:
            v = self.ln_temporal(v)
        v = self.ln_sa(self.sa.self_attend_frames(v, capture=capture_sa) + v)
        return self.ln_ffn(self.ffn(v) + v)

    def params(self, prefix: str):
        yield from self.temporal.params(f"{prefix}.temporal")
        yield from self.ln_temporal.params(f"{prefix}.ln_temporal")
        yield from self.sa.params(f"{prefix}.sa")
        yield from self.ln_sa.params(f"{prefix}.ln_sa")
        yield from self.ffn.params(f"{prefix}.ffn")
        yield from self.ln_ffn.params(f"{prefix}.ln_ffn")


class VisionEncoder:
    """Patch embedding plus a stack of dual blocks.

    Frames arrive as a raw (T, H, W, ch) pixel array; the output is a
    (T, L, C) feature block with the per-frame summary token at index 0.
    """

    def __init__(self, rng: np.random.Generator, dim: int, depth: int, patch_size: int,
                 image_size: int, channels: int, heads: int,
                 temporal_variant: str = "localTemporal", groups: int | None = None,
                 kernel_size: int = 3):
        if image_size % patch_size != 0:
            raise ShapeError(f"image size {image_size} not divisible by patch size {patch_size}")
        self.dim = dim
        self.patch_size = patch_size
        self.image_size = image_size
        self.channels = channels
        side = image_size // patch_size
        self.num_patches = side * side
        if groups is None:
            groups = dim
        self.patch_proj = Linear(rng, patch_size * patch_size * channels, dim)
        self.positions = Tensor(rng.normal(0.0, 0.02, size=(self.num_patches, dim)), requires_grad=True)
        self.cls = Tensor(rng.normal(0.0, 0.02, size=dim), requires_grad=True)
        self.blocks = [
            DualVisionBlock(rng, dim, heads,
                            make_temporal_module(temporal_variant, rng, dim, groups, kernel_size, heads))
            for _ in range(depth)
        ]

    def patchify(self, frames: np.ndarray) -> Tensor:
        """Split frames into flattened patches, project to C, add spatial
        positions (shared across frames), and prepend the summary token."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 4:
            raise ShapeError(f"frames must be (T, H, W, ch), got shape {frames.shape}")
        Tn, H, W, ch = frames.shape
        P = self.patch_size
        if H % P != 0 or W % P != 0:
            raise ShapeError(f"frame size ({H}, {W}) not divisible by patch size {P}")
        if ch != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {ch}")
        gh, gw = H // P, W // P
        patches = frames.reshape(Tn, gh, P, gw, P, ch).transpose(0, 1, 3, 2, 4, 5)
        patches = patches.reshape(Tn, gh * gw, P * P * ch)
        embedded = self.patch_proj(Tensor(patches)) + self.positions
        cls = T.reshape(self.cls, (1, 1, self.dim)) + np.zeros((Tn, 1, self.dim))
        return T.concat([cls, embedded], axis=1)

    def __call__(self, frames: np.ndarray, video_mode: bool, capture_sa=None) -> Tensor:
        v = self.patchify(frames)
        for block in self.blocks:
            v = block(v, video_mode, capture_sa=capture_sa)
        return v

    def params(self, prefix: str):
        yield from self.patch_proj.params(f"{prefix}.patch_proj")
        yield f"{prefix}.positions", self.positions
        yield f"{prefix}.cls", self.cls
        for i, block in enumerate(self.blocks):
            yield from block.params(f"{prefix}.block{i}")
