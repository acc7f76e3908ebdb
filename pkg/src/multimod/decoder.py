"""Shared text decoder over arbitrary context bundles, with greedy and
length-normalized beam decoding."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .blocks import EmbeddingTable, FeedForward, LayerNorm, MultiHeadAttention
from .errors import ContractError
from .tensor import Tensor, no_grad


class ContextBundle:
    """Ordered (source_tag, sequence) pairs concatenated into one key/value
    block for the decoder's cross-attention. Empty bundles are only legal
    when pure language-model mode was asked for explicitly (pass None)."""

    def __init__(self, entries):
        self.entries = list(entries)
        if not self.entries:
            raise ContractError("context bundle is empty; pass None for pure LM mode")

    @property
    def tags(self):
        return [tag for tag, _ in self.entries]

    def concat(self) -> Tensor:
        seqs = [seq for _, seq in self.entries]
        return T.concat(seqs, axis=0) if len(seqs) > 1 else seqs[0]


class DecoderBlock:
    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        self.sa = MultiHeadAttention(rng, dim, heads)
        self.ln_sa = LayerNorm(dim)
        self.ca = MultiHeadAttention(rng, dim, heads)
        self.ln_ca = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim)
        self.ln_ffn = LayerNorm(dim)

    def __call__(self, x: Tensor, context_kv: Tensor | None, causal_mask) -> Tensor:
        x = self.ln_sa(self.sa(x, x, x, mask=causal_mask) + x)
        if context_kv is not None:
            x = self.ln_ca(self.ca(x, context_kv, context_kv) + x)
        return self.ln_ffn(self.ffn(x) + x)

    def params(self, prefix: str):
        yield from self.sa.params(f"{prefix}.sa")
        yield from self.ln_sa.params(f"{prefix}.ln_sa")
        yield from self.ca.params(f"{prefix}.ca")
        yield from self.ln_ca.params(f"{prefix}.ln_ca")
        yield from self.ffn.params(f"{prefix}.ffn")
        yield from self.ln_ffn.params(f"{prefix}.ln_ffn")


class DecoderStack:
    """Causal blocks with cross-attention; the output head ties onto the
    shared embedding table."""

    def __init__(self, rng: np.random.Generator, table: EmbeddingTable, depth: int,
                 heads: int, bos_id: int, eos_id: int, pad_id: int = 0):
        self.table = table
        self.bos_id = bos_id
        self.eos_id = eos_id
        self.pad_id = pad_id
        self.blocks = [DecoderBlock(rng, table.dim, heads) for _ in range(depth)]
        self.out_bias = Tensor(np.zeros(table.vocab_size), requires_grad=True)

    def forward(self, tokens, context: ContextBundle | None) -> Tensor:
        """Teacher-forced logits, (len(tokens), vocab); row t scores token t+1.

        tokens must begin with BOS. context None runs pure LM mode with the
        cross-attention stage skipped.
        """
        tokens = list(tokens)
        if not tokens or tokens[0] != self.bos_id:
            raise ContractError("decoder input must begin with the BOS token")
        x = self.table.embed(tokens)
        n = len(tokens)
        causal = np.tril(np.ones((n, n), dtype=bool))
        kv = context.concat() if context is not None else None
        for block in self.blocks:
            x = block(x, kv, causal)
        return T.matmul(x, T.transpose(self.table.tokens)) + self.out_bias

    def step_log_probs(self, tokens, context: ContextBundle | None) -> np.ndarray:
        """Next-token log-probabilities after `tokens` (no tape)."""
        with no_grad():
            logits = self.forward(tokens, context)
            return T.log_softmax_lastdim(logits[-1]).data

    def generate(self, context: ContextBundle | None, instruction_prefix,
                 max_len: int = 25, beam_size: int = 5,
                 length_normalize: bool = True, allowed_tokens=None):
        """Beam-search continuation after [BOS] + instruction_prefix."""
        prefix = [self.bos_id] + list(instruction_prefix)

        def step_fn(generated):
            return self.step_log_probs(prefix + list(generated), context)

        return beam_search(step_fn, self.table.vocab_size, beam_size=beam_size,
                           max_len=max_len, eos_id=self.eos_id,
                           length_normalize=length_normalize,
                           allowed_tokens=allowed_tokens)

    def params(self, prefix: str):
        for i, block in enumerate(self.blocks):
            yield from block.params(f"{prefix}.block{i}")
        yield f"{prefix}.out_bias", self.out_bias


def beam_search(step_fn, vocab_size: int, beam_size: int, max_len: int,
                eos_id: int | None = None, length_normalize: bool = True,
                allowed_tokens=None):
    """Beam search over step_fn(generated) -> log-prob vector.

    Scores are cumulative log-probs, divided by token count when
    length_normalize is set. Ties break by token id, then beam index, so the
    result is deterministic. Finished beams (EOS emitted) never grow.
    """
    if beam_size < 1:
        raise ContractError(f"beam size must be >= 1, got {beam_size}")
    if max_len < 1:
        raise ContractError(f"max length must be >= 1, got {max_len}")
    choices = list(allowed_tokens) if allowed_tokens is not None else list(range(vocab_size))
    if eos_id is not None and eos_id not in choices:
        choices = choices + [eos_id]

    def score(tokens, logp):
        if length_normalize and tokens:
            return logp / len(tokens)
        return logp

    beams = [([], 0.0, False)]
    for _ in range(max_len):
        if all(done for _, _, done in beams):
            break
        candidates = []
        for bi, (tokens, logp, done) in enumerate(beams):
            if done:
                candidates.append((tokens, logp, True, -1, bi))
                continue
            logprobs = step_fn(tokens)
            for tok in choices:
                lp = logp + float(logprobs[tok])
                candidates.append((tokens + [tok], lp, tok == eos_id, tok, bi))
        candidates.sort(key=lambda c: (-score(c[0], c[1]), c[3], c[4]))
        beams = [(tokens, lp, done) for tokens, lp, done, _, _ in candidates[:beam_size]]
    finished = [b for b in beams if b[2]]
    pool = finished if finished else beams
    best = max(pool, key=lambda b: (score(b[0], b[1]), [-t for t in b[0]]))
    return best[0]
