"""Cross-modal fusion: text is the query stream, vision the key/value stream."""

from __future__ import annotations

import numpy as np

from .blocks import FeedForward, LayerNorm, MultiHeadAttention
from .tensor import Tensor


class FusionBlock:
    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        self.sa = MultiHeadAttention(rng, dim, heads)
        self.ln_sa = LayerNorm(dim)
        self.ca = MultiHeadAttention(rng, dim, heads)
        self.ln_ca = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim)
        self.ln_ffn = LayerNorm(dim)

    def __call__(self, x: Tensor, vision_kv: Tensor, capture_ca=None) -> Tensor:
        x = self.ln_sa(self.sa(x, x, x) + x)
        x = self.ln_ca(self.ca(x, vision_kv, vision_kv, capture=capture_ca) + x)
        return self.ln_ffn(self.ffn(x) + x)

    def params(self, prefix: str):
        yield from self.sa.params(f"{prefix}.sa")
        yield from self.ln_sa.params(f"{prefix}.ln_sa")
        yield from self.ca.params(f"{prefix}.ca")
        yield from self.ln_ca.params(f"{prefix}.ln_ca")
        yield from self.ffn.params(f"{prefix}.ffn")
        yield from self.ln_ffn.params(f"{prefix}.ln_ffn")


class FusionStack:
    """Stacked fusion blocks producing a multimodal text-length sequence with
    the multimodal summary at index 0."""

    def __init__(self, rng: np.random.Generator, dim: int, depth: int, heads: int):
        self.blocks = [FusionBlock(rng, dim, heads) for _ in range(depth)]

    def fuse(self, vision_aware_text: Tensor, text_aware_vision: Tensor,
             capture_ca=None) -> Tensor:
        x = vision_aware_text
        for block in self.blocks:
            x = block(x, text_aware_vision, capture_ca=capture_ca)
        return x

    def params(self, prefix: str):
        for i, block in enumerate(self.blocks):
            yield from block.params(f"{prefix}.block{i}")
