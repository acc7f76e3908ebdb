"""Transformer building blocks: linear maps, layer norm, multi-head attention,
feed-forward, and the token/position embedding table."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError, VocabularyError
from .tensor import Tensor


def _init_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))


class Linear:
    """y = x @ W + b with W stored (in, out). bias=False drops b entirely."""

    def __init__(self, rng: np.random.Generator, fan_in: int, fan_out: int,
                 bias: bool = True, zero_init: bool = False):
        w = np.zeros((fan_in, fan_out)) if zero_init else _init_weight(rng, fan_in, fan_out)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out

    def params(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)

    def params(self, prefix: str):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta


class MultiHeadAttention:
    """Scaled dot-product attention with per-head projections.

    The same module serves self-attention (q is k is v) and cross-attention.
    mask is boolean (Lq, Lk) with True marking attendable keys; a query row
    whose keys are all masked outputs exactly zeros. `capture`, when given,
    receives the head-averaged attention weights as a plain (Lq, Lk) array.
    """

    def __init__(self, rng: np.random.Generator, dim: int, heads: int,
                 zero_init_out: bool = False):
        if dim % heads != 0:
            raise ConfigError(f"attention dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.wo = Linear(rng, dim, dim, zero_init=zero_init_out)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, mask=None, capture=None) -> Tensor:
        if q.shape[-1] != self.dim or k.shape[-1] != self.dim or v.shape[-1] != self.dim:
            raise ShapeError(f"attention width mismatch: q{q.shape} k{k.shape} v{v.shape} vs dim {self.dim}")
        if k.shape[0] != v.shape[0]:
            raise ShapeError(f"key/value length mismatch: {k.shape} vs {v.shape}")
        Lq, Lk, H, dh = q.shape[0], k.shape[0], self.heads, self.head_dim

        qh = T.transpose(T.reshape(self.wq(q), (Lq, H, dh)), (1, 0, 2))
        kh = T.transpose(T.reshape(self.wk(k), (Lk, H, dh)), (1, 0, 2))
        vh = T.transpose(T.reshape(self.wv(v), (Lk, H, dh)), (1, 0, 2))

        logits = T.matmul(qh, T.transpose(kh, (0, 2, 1))) * (1.0 / math.sqrt(dh))
        m = None
        if mask is not None:
            m = np.asarray(mask, dtype=bool)
            if m.shape != (Lq, Lk):
                raise ShapeError(f"mask shape {m.shape} does not match ({Lq}, {Lk})")
            m = m[np.newaxis]
        weights = T.softmax_lastdim(logits, mask=m)
        if capture is not None:
            capture.append(weights.data.mean(axis=0))

        ctx = T.reshape(T.transpose(T.matmul(weights, vh), (1, 0, 2)), (Lq, self.dim))
        out = self.wo(ctx)
        if mask is not None:
            live = np.asarray(mask, dtype=bool).any(axis=-1)
            if not live.all():
                out = out * live[:, np.newaxis].astype(np.float64)
        return out

    def self_attend_frames(self, v: Tensor, capture=None) -> Tensor:
        """Per-frame self-attention over a (T, L, C) block in one batched
        computation; frames never attend across each other."""
        Tn, L, _ = v.shape
        H, dh = self.heads, self.head_dim

        def split(proj):
            return T.transpose(T.reshape(proj(v), (Tn, L, H, dh)), (0, 2, 1, 3))

        qh, kh, vh = split(self.wq), split(self.wk), split(self.wv)
        logits = T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        weights = T.softmax_lastdim(logits)
        if capture is not None:
            capture.extend(weights.data.mean(axis=1))
        ctx = T.reshape(T.transpose(T.matmul(weights, vh), (0, 2, 1, 3)), (Tn, L, self.dim))
        return self.wo(ctx)

    def params(self, prefix: str):
        yield from self.wq.params(f"{prefix}.wq")
        yield from self.wk.params(f"{prefix}.wk")
        yield from self.wv.params(f"{prefix}.wv")
        yield from self.wo.params(f"{prefix}.wo")


class FeedForward:
    """contract(gelu(expand(x))) with a 4x hidden width."""

    def __init__(self, rng: np.random.Generator, dim: int):
        self.expand = Linear(rng, dim, 4 * dim)
        self.contract = Linear(rng, 4 * dim, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.contract(T.gelu(self.expand(x)))

    def params(self, prefix: str):
        yield from self.expand.params(f"{prefix}.expand")
        yield from self.contract.params(f"{prefix}.contract")


class EmbeddingTable:
    """Learned token embeddings plus learned absolute position embeddings."""

    def __init__(self, rng: np.random.Generator, vocab_size: int, dim: int,
                 max_len: int, cls_id: int = 1):
        self.vocab_size = vocab_size
        self.dim = dim
        self.max_len = max_len
        self.cls_id = cls_id
        # unit-ish scale keeps the post-norm layer norms well conditioned
        self.tokens = Tensor(rng.normal(0.0, 0.5, size=(vocab_size, dim)), requires_grad=True)
        self.positions = Tensor(rng.normal(0.0, 0.5, size=(max_len, dim)), requires_grad=True)

    def embed(self, ids, prepend_cls: bool = False) -> Tensor:
        """Rows are tokens[id_t] + positions[t]; the summary token sits at
        index 0 when prepend_cls is set."""
        ids = list(ids)
        if prepend_cls:
            ids = [self.cls_id] + ids
        for t in ids:
            if not 0 <= t < self.vocab_size:
                raise VocabularyError(f"token id {t} outside vocabulary of size {self.vocab_size}")
        if len(ids) > self.max_len:
            raise ContractError(f"sequence length {len(ids)} exceeds maximum {self.max_len}; refusing to truncate")
        idx = np.asarray(ids, dtype=np.intp)
        return T.take(self.tokens, idx) + T.take(self.positions, np.arange(len(ids)))

    def params(self, prefix: str):
        yield f"{prefix}.tokens", self.tokens
        yield f"{prefix}.positions", self.positions
