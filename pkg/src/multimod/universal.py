"""Shared layers that pull vision and text into one semantic space.

A fixed set of learned queries first compresses the variable-length visual
features to k tokens. Each shared layer then runs the SAME self-attention and
feed-forward storage over both the visual-token path and the text path, with
a vision-only cross-attention back to the original visual features. A final
pair of cross-attention maps re-combines the shared-space outputs with the
original sequences.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .blocks import FeedForward, LayerNorm, MultiHeadAttention
from .errors import ContractError
from .tensor import Tensor


def _flatten_visual(vn: Tensor) -> Tensor:
    if len(vn.shape) == 3:
        t, l, c = vn.shape
        return T.reshape(vn, (t * l, c))
    return vn


class UniversalLayer:
    """One shared layer. sa/ffn (and their norms) are single storage used by
    both modality paths; ca touches only the visual-token path."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        self.sa = MultiHeadAttention(rng, dim, heads)
        self.ln_sa = LayerNorm(dim)
        self.ca = MultiHeadAttention(rng, dim, heads)
        self.ln_ca = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim)
        self.ln_ffn = LayerNorm(dim)

    def __call__(self, v: Tensor | None, w: Tensor | None, vn_flat: Tensor | None,
                 capture_ca=None):
        if v is not None:
            v_sa = self.ln_sa(self.sa(v, v, v) + v)
            v_ca = self.ln_ca(self.ca(v_sa, vn_flat, vn_flat, capture=capture_ca) + v_sa)
            v = self.ln_ffn(self.ffn(v_ca) + v_ca)
        if w is not None:
            w_sa = self.ln_sa(self.sa(w, w, w) + w)
            w = self.ln_ffn(self.ffn(w_sa) + w_sa)
        return v, w

    def params(self, prefix: str):
        yield from self.sa.params(f"{prefix}.sa")
        yield from self.ln_sa.params(f"{prefix}.ln_sa")
        yield from self.ca.params(f"{prefix}.ca")
        yield from self.ln_ca.params(f"{prefix}.ln_ca")
        yield from self.ffn.params(f"{prefix}.ffn")
        yield from self.ln_ffn.params(f"{prefix}.ln_ffn")


class UniversalStack:
    def __init__(self, rng: np.random.Generator, dim: int, depth: int,
                 num_queries: int, heads: int):
        self.dim = dim
        self.num_queries = num_queries
        self.queries = Tensor(rng.normal(0.0, 0.5, size=(num_queries, dim)), requires_grad=True)
        self.compress = MultiHeadAttention(rng, dim, heads)
        self.layers = [UniversalLayer(rng, dim, heads) for _ in range(depth)]
        # combination starts as LN(original): zero output projections
        self.combine_vision = MultiHeadAttention(rng, dim, heads, zero_init_out=True)
        self.ln_combine_vision = LayerNorm(dim)
        self.combine_text = MultiHeadAttention(rng, dim, heads, zero_init_out=True)
        self.ln_combine_text = LayerNorm(dim)

    def init_visual_tokens(self, vn: Tensor, capture=None) -> Tensor:
        """Compress (T, L, C) features to exactly num_queries tokens with one
        cross-attention; output shape is independent of T and L."""
        flat = _flatten_visual(vn)
        return self.compress(self.queries, flat, flat, capture=capture)

    def run(self, vn: Tensor | None = None, wm: Tensor | None = None,
            capture_ca=None):
        """Apply the compression (vision only) and every shared layer.

        Either modality may be absent; with depth 0 the result is just the
        compressed visual tokens and the untouched text features.
        """
        if vn is None and wm is None:
            raise ContractError("universal layers need at least one modality")
        vn_flat = _flatten_visual(vn) if vn is not None else None
        v = self.init_visual_tokens(vn_flat) if vn is not None else None
        w = wm
        for layer in self.layers:
            v, w = layer(v, w, vn_flat, capture_ca=capture_ca)
        return v, w

    def combine(self, vn: Tensor | None, wm: Tensor | None,
                vs: Tensor | None, ws: Tensor | None):
        """Cross-attend the original sequences to the shared-space outputs.

        Returns (text_aware_vision, vision_aware_text); an absent modality
        yields None on its side. Output lengths equal the originals.
        """
        kv_parts = [p for p in (vs, ws) if p is not None]
        if not kv_parts:
            raise ContractError("combine needs at least one shared-space sequence")
        kv = T.concat(kv_parts, axis=0) if len(kv_parts) > 1 else kv_parts[0]
        text_aware_vision = None
        vision_aware_text = None
        if vn is not None:
            flat = _flatten_visual(vn)
            text_aware_vision = self.ln_combine_vision(self.combine_vision(flat, kv, kv) + flat)
        if wm is not None:
            vision_aware_text = self.ln_combine_text(self.combine_text(wm, kv, kv) + wm)
        return text_aware_vision, vision_aware_text

    def params(self, prefix: str):
        yield f"{prefix}.queries", self.queries
        yield from self.compress.params(f"{prefix}.compress")
        for i, layer in enumerate(self.layers):
            yield from layer.params(f"{prefix}.layer{i}")
        yield from self.combine_vision.params(f"{prefix}.combine_vision")
        yield from self.ln_combine_vision.params(f"{prefix}.ln_combine_vision")
        yield from self.combine_text.params(f"{prefix}.combine_text")
        yield from self.ln_combine_text.params(f"{prefix}.ln_combine_text")
