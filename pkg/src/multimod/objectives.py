"""Pretraining objectives: masked-token prediction, a symmetric contrastive
loss with momentum targets and FIFO queues of extra negatives, binary
match/mismatch classification on fused features, and the instruction-prefixed
generation loss."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .blocks import Linear
from .errors import ContractError
from .tensor import Tensor

TAU_FLOOR = 1e-3


class MomentumQueue:
    """Fixed-capacity ring buffer of unit-norm embedding rows.

    Pushes append in FIFO order; the oldest rows fall out beyond capacity.
    Rows arriving non-normalized are normalized on entry and counted in
    `normalize_warnings` rather than rejected.
    """

    def __init__(self, capacity: int, dim: int):
        self.capacity = capacity
        self.dim = dim
        self.buffer = np.zeros((capacity, dim))
        self.fill = 0
        self.cursor = 0
        self.normalize_warnings = 0

    def push(self, rows: np.ndarray):
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[1] != self.dim:
            raise ContractError(f"queue expects width {self.dim}, got {rows.shape[1]}")
        for row in rows:
            norm = math.sqrt(float(row @ row))
            if abs(norm - 1.0) > 1e-8:
                self.normalize_warnings += 1
                if norm > 0.0:
                    row = row / norm
            self.buffer[self.cursor] = row
            self.cursor = (self.cursor + 1) % self.capacity
            self.fill = min(self.fill + 1, self.capacity)

    def contents(self) -> np.ndarray:
        """Stored rows, oldest first; shape (fill, dim)."""
        if self.fill < self.capacity:
            return self.buffer[: self.fill].copy()
        return np.vstack([self.buffer[self.cursor:], self.buffer[: self.cursor]])


def momentum_update(online: dict[str, Tensor], momentum: dict[str, Tensor], m: float):
    """theta_m <- m * theta_m + (1 - m) * theta, for every tracked parameter."""
    for name, p in online.items():
        if name not in momentum:
            raise ContractError(f"momentum copy missing parameter '{name}'")
        q = momentum[name]
        if q.data.shape != p.data.shape:
            raise ContractError(f"momentum shape mismatch for '{name}': {q.data.shape} vs {p.data.shape}")
        q.data *= m
        q.data += (1.0 - m) * p.data


def l2_normalize_rows(x: Tensor) -> Tensor:
    norm = T.power((x * x).sum(axis=-1, keepdims=True) + 1e-30, 0.5)
    return x / norm


class ContrastiveHead:
    """Bias-free projections into the contrastive space plus a learnable
    temperature stored as its log; temperature is clamped at 1e-3."""

    def __init__(self, rng: np.random.Generator, dim: int, proj_dim: int,
                 tau_init: float = 0.07):
        self.vision_proj = Linear(rng, dim, proj_dim, bias=False)
        self.text_proj = Linear(rng, dim, proj_dim, bias=False)
        self.log_tau = Tensor(math.log(tau_init), requires_grad=True)

    def tau(self) -> Tensor:
        t = T.exp(self.log_tau)
        if float(t.data) < TAU_FLOOR:
            return Tensor(TAU_FLOOR)
        return t

    def embed_vision(self, cls_batch: Tensor) -> Tensor:
        return l2_normalize_rows(self.vision_proj(cls_batch))

    def embed_text(self, cls_batch: Tensor) -> Tensor:
        return l2_normalize_rows(self.text_proj(cls_batch))

    def params(self, prefix: str):
        yield from self.vision_proj.params(f"{prefix}.vision_proj")
        yield from self.text_proj.params(f"{prefix}.text_proj")
        yield f"{prefix}.log_tau", self.log_tau


def info_nce_direction(queries: Tensor, positive_targets: np.ndarray,
                       queue_rows: np.ndarray, tau: Tensor) -> Tensor:
    """Cross-entropy of each query against [its positive and the other batch
    targets] ++ queue rows; the positive for row i is column i."""
    B = queries.shape[0]
    candidates = positive_targets
    if queue_rows.size:
        candidates = np.vstack([positive_targets, queue_rows])
    logits = T.matmul(queries, Tensor(candidates.T)) / tau
    picked = T.log_softmax_lastdim(logits)[np.arange(B), np.arange(B)]
    return -picked.mean()


def vlc_loss(vision_cls: Tensor, text_cls: Tensor, head: ContrastiveHead,
             momentum_vision_emb: np.ndarray, momentum_text_emb: np.ndarray,
             vision_queue: MomentumQueue, text_queue: MomentumQueue) -> Tensor:
    """Symmetric contrastive loss.

    vision_cls/text_cls are online summaries (B, C); the momentum embeddings
    are already projected, unit-norm rows (B, P) from the momentum path and
    act as constant targets. Queue rows extend the candidate sets. The caller
    pushes the momentum rows to the queues after this returns.
    """
    if vision_cls.shape[0] < 1:
        raise ContractError("contrastive loss needs a non-empty batch")
    if vision_cls.shape[0] != text_cls.shape[0]:
        raise ContractError(f"batch mismatch: {vision_cls.shape[0]} vision vs {text_cls.shape[0]} text")
    v = head.embed_vision(vision_cls)
    t = head.embed_text(text_cls)
    tau = head.tau()
    i2t = info_nce_direction(v, momentum_text_emb, text_queue.contents(), tau)
    t2i = info_nce_direction(t, momentum_vision_emb, vision_queue.contents(), tau)
    return (i2t + t2i) * 0.5


def derangement(rng: np.random.Generator, n: int) -> np.ndarray:
    """A permutation with no fixed point; pairs every item with a different
    partner for negative construction."""
    if n < 2:
        raise ContractError("negative pairing needs a batch of at least 2")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def vlm_loss(positive_cls: Tensor, negative_cls: Tensor, match_head: Linear) -> Tensor:
    """2-way cross-entropy on fused summaries: label 1 for the B matched
    pairs, 0 for the B mismatched ones."""
    if positive_cls.shape[0] < 2:
        raise ContractError("match loss needs at least 2 pairs to build negatives")
    if positive_cls.shape[0] != negative_cls.shape[0]:
        raise ContractError("positive/negative batch sizes differ")
    B = positive_cls.shape[0]
    logits = match_head(T.concat([positive_cls, negative_cls], axis=0))
    labels = np.concatenate([np.ones(B, dtype=np.intp), np.zeros(B, dtype=np.intp)])
    picked = T.log_softmax_lastdim(logits)[np.arange(2 * B), labels]
    return -picked.mean()


# -- masked-token objective -------------------------------------------------


def select_mlm_positions(tokens, mask_rate: float, rng: np.random.Generator,
                         special_ids=frozenset()) -> list[int]:
    """Independently select each non-special position with prob mask_rate."""
    if not 0.0 <= mask_rate <= 1.0:
        raise ContractError(f"mask rate must be in [0, 1], got {mask_rate}")
    return [i for i, t in enumerate(tokens)
            if t not in special_ids and rng.random() < mask_rate]


def corrupt_tokens(tokens, positions, rng: np.random.Generator, mask_id: int,
                   vocab_size: int) -> list[int]:
    """80% mask token, 10% random token, 10% left as-is."""
    out = list(tokens)
    for i in positions:
        r = rng.random()
        if r < 0.8:
            out[i] = mask_id
        elif r < 0.9:
            out[i] = int(rng.integers(0, vocab_size))
    return out


def mlm_loss(tokens, mask_rate: float, encoder, rng: np.random.Generator,
             mask_id: int, special_ids=frozenset()):
    """Mean cross-entropy over the selected positions only; an empty
    selection yields an exact 0 loss. Returns (loss, selected_positions)."""
    positions = select_mlm_positions(tokens, mask_rate, rng, special_ids)
    if not positions:
        return Tensor(0.0), positions
    corrupted = corrupt_tokens(tokens, positions, rng, mask_id, encoder.table.vocab_size)
    hidden = encoder.encode(corrupted)
    logits = encoder.mlm_logits(hidden)
    rows = np.asarray(positions, dtype=np.intp) + 1  # summary token occupies row 0
    targets = np.asarray([tokens[i] for i in positions], dtype=np.intp)
    picked = T.log_softmax_lastdim(logits[rows])[np.arange(len(positions)), targets]
    return -picked.mean(), positions


# -- instruction-prefixed generation objective ----------------------------------


def instruction_lm_loss(instruction_prefix, target_tokens, context, decoder):
    """Teacher-forced cross-entropy over target positions only; BOS and the
    instruction prefix are excluded from the loss. Returns (loss, the logit
    rows that were scored)."""
    target_tokens = list(target_tokens)
    if not target_tokens:
        raise ContractError("instruction LM loss needs a non-empty target")
    prefix = list(instruction_prefix)
    tokens = [decoder.bos_id] + prefix + target_tokens
    logits = decoder.forward(tokens, context)
    rows = np.arange(len(prefix), len(prefix) + len(target_tokens))
    picked = T.log_softmax_lastdim(logits[rows])[np.arange(len(target_tokens)),
                                                 np.asarray(target_tokens, dtype=np.intp)]
    return -picked.mean(), list(rows)
