"""Bidirectional text encoder producing a summary token at index 0."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .blocks import EmbeddingTable, FeedForward, LayerNorm, Linear, MultiHeadAttention
from .tensor import Tensor


class TextBlock:
    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        self.sa = MultiHeadAttention(rng, dim, heads)
        self.ln_sa = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim)
        self.ln_ffn = LayerNorm(dim)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        x = self.ln_sa(self.sa(x, x, x, mask=mask) + x)
        return self.ln_ffn(self.ffn(x) + x)

    def params(self, prefix: str):
        yield from self.sa.params(f"{prefix}.sa")
        yield from self.ln_sa.params(f"{prefix}.ln_sa")
        yield from self.ffn.params(f"{prefix}.ffn")
        yield from self.ln_ffn.params(f"{prefix}.ln_ffn")


class TextEncoder:
    """Embedding table, a stack of bidirectional blocks, and a width adapter.

    The adapter is identity-initialized; it only matters when the text width
    must be mapped onto a different shared width. The masked-token prediction
    head ties onto the embedding table.
    """

    def __init__(self, rng: np.random.Generator, vocab_size: int, dim: int, depth: int,
                 max_len: int, heads: int, cls_id: int = 1):
        self.dim = dim
        self.table = EmbeddingTable(rng, vocab_size, dim, max_len, cls_id=cls_id)
        self.blocks = [TextBlock(rng, dim, heads) for _ in range(depth)]
        self.adapter = Linear(rng, dim, dim)
        self.adapter.weight.data[:] = np.eye(dim)
        self.adapter.bias.data[:] = 0.0
        self.mlm_bias = Tensor(np.zeros(vocab_size), requires_grad=True)

    def encode(self, tokens, pad_mask=None) -> Tensor:
        """tokens -> (len+1, C) features with the summary at row 0.

        pad_mask, when given, is a per-token boolean (True = real token);
        padded positions are excluded from every attention key set, so their
        ids cannot influence any other row.
        """
        x = self.table.embed(tokens, prepend_cls=True)
        mask = None
        if pad_mask is not None:
            keys = np.concatenate([[True], np.asarray(pad_mask, dtype=bool)])
            mask = np.broadcast_to(keys, (x.shape[0], x.shape[0]))
        for block in self.blocks:
            x = block(x, mask=mask)
        return self.adapter(x)

    def mlm_logits(self, hidden: Tensor) -> Tensor:
        """Vocabulary logits tied to the embedding table."""
        return T.matmul(hidden, T.transpose(self.table.tokens)) + self.mlm_bias

    def params(self, prefix: str):
        yield from self.table.params(f"{prefix}.table")
        for i, block in enumerate(self.blocks):
            yield from block.params(f"{prefix}.block{i}")
        yield from self.adapter.params(f"{prefix}.adapter")
        yield f"{prefix}.mlm_bias", self.mlm_bias
