"""Finite-difference verification suite over every differentiable module.

Primitive operations are checked at h=1e-5 against a 1e-6 relative
tolerance; composite modules and losses use h=3e-4 against 1e-4. Composite
probe losses carry a small scale factor: coordinates whose true gradient
sits at the 1e-8 relative-error floor then see proportionally less float64
cancellation noise, while everything above the floor is scale-invariant.
Dims follow the small verification geometry: 3 frames, 5 positions, width 8,
2 heads, 4 compressed tokens.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .blocks import EmbeddingTable, FeedForward, MultiHeadAttention
from .decoder import ContextBundle, DecoderStack
from .fusion import FusionStack
from .gradcheck import finite_diff_check
from .objectives import (ContrastiveHead, MomentumQueue, instruction_lm_loss,
                         mlm_loss, vlc_loss, vlm_loss)
from .blocks import Linear
from .tensor import Tensor, no_grad
from .text import TextEncoder
from .universal import UniversalStack
from .vision import DualVisionBlock, LocalTemporal

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-4
LOSS_SCALE = 0.0625
DIMS = {"frames": 3, "positions": 5, "width": 8, "heads": 2, "tokens": 4}


def _primitive_cases(seed: int):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    k = Tensor(rng.normal(size=(3,)), requires_grad=True)
    gamma = Tensor(rng.normal(size=(4,)), requires_grad=True)
    beta = Tensor(rng.normal(size=(4,)), requires_grad=True)
    return [
        ("add", lambda: (a + b).mean(), [a, b]),
        ("mul", lambda: (a * b).mean(), [a, b]),
        ("div", lambda: (a / (b * b + 1.0)).mean(), [a, b]),
        ("matmul", lambda: T.matmul(a, w).mean(), [a, w]),
        ("exp", lambda: T.exp(a).mean(), [a]),
        ("log", lambda: T.log(a * a + 0.5).mean(), [a]),
        ("power", lambda: T.power(a * a + 0.5, -0.5).mean(), [a]),
        ("relu", lambda: T.relu(a).mean(), [a]),
        ("gelu", lambda: T.gelu(a).mean(), [a]),
        ("softmax", lambda: (T.softmax_lastdim(a) * b).mean(), [a]),
        ("log_softmax", lambda: (T.log_softmax_lastdim(a) * b).mean(), [a]),
        ("temporal_conv", lambda: T.temporal_conv(a, k).mean(), [a, k]),
        ("layer_norm", lambda: T.layer_norm(a, gamma, beta).mean(), [a, gamma, beta]),
        ("take", lambda: T.take(a, np.array([2, 0, 2])).mean(), [a]),
        ("concat", lambda: T.concat([a, b], axis=1).mean(), [a, b]),
        ("transpose", lambda: (T.transpose(a) * w).mean(), [a, w]),
        ("mean", lambda: a.mean(axis=0).mean(), [a]),
    ]


def check_primitives(seed: int) -> float:
    worst = 0.0
    for _, f, params in _primitive_cases(seed):
        worst = max(worst, finite_diff_check(f, params, h=1e-5))
    return worst


def check_vision_block(seed: int) -> float:
    rng = np.random.default_rng(seed)
    d = DIMS
    temporal = LocalTemporal(rng, d["width"], d["width"], 3)
    block = DualVisionBlock(rng, d["width"], d["heads"], temporal)
    temporal.out_proj.weight.data[:] = rng.normal(size=temporal.out_proj.weight.shape)
    temporal.out_proj.bias.data[:] = rng.normal(size=temporal.out_proj.bias.shape)
    v = Tensor(rng.normal(size=(d["frames"], d["positions"], d["width"])), requires_grad=True)
    params = [v] + [p for _, p in block.params("block")]
    return finite_diff_check(lambda: (block(v, video_mode=True) ** 2.0).mean() * LOSS_SCALE,
                             params, h=3e-4)


def check_text_block(seed: int) -> float:
    enc = TextEncoder(np.random.default_rng(seed), 9, DIMS["width"], 1, 12, heads=DIMS["heads"])
    params = [p for _, p in enc.params("text")]

    def f():
        out = enc.encode([4, 2, 7, 5])
        return (out * out).mean() * LOSS_SCALE

    return finite_diff_check(f, params, h=3e-4)


def check_universal_layer(seed: int) -> float:
    rng = np.random.default_rng(seed)
    d = DIMS
    stack = UniversalStack(rng, d["width"], 1, d["tokens"], d["heads"])
    vn = Tensor(rng.normal(size=(1, d["positions"], d["width"])), requires_grad=True)
    wm = Tensor(rng.normal(size=(4, d["width"])), requires_grad=True)
    params = [vn, wm] + [p for _, p in stack.layers[0].params("layer")]

    def f():
        vs, ws = stack.run(vn=vn, wm=wm)
        return ((vs * vs).mean() + (ws * ws).mean()) * LOSS_SCALE

    return finite_diff_check(f, params, h=3e-4)


def check_fusion_block(seed: int) -> float:
    rng = np.random.default_rng(seed)
    d = DIMS
    stack = FusionStack(rng, d["width"], 1, d["heads"])
    text = Tensor(rng.normal(size=(4, d["width"])), requires_grad=True)
    vision = Tensor(rng.normal(size=(d["positions"], d["width"])), requires_grad=True)
    params = [text, vision] + [p for _, p in stack.blocks[0].params("block")]
    return finite_diff_check(lambda: (stack.fuse(text, vision) ** 2.0).mean() * LOSS_SCALE,
                             params, h=3e-4)


def check_decoder_block(seed: int) -> float:
    rng = np.random.default_rng(seed)
    d = DIMS
    table = EmbeddingTable(rng, 9, d["width"], 16, cls_id=1)
    dec = DecoderStack(rng, table, depth=1, heads=d["heads"], bos_id=2, eos_id=3)
    ctx_seq = Tensor(rng.normal(size=(4, d["width"])), requires_grad=True)
    ctx = ContextBundle([("fused", ctx_seq)])
    params = [ctx_seq] + [p for _, p in dec.blocks[0].params("block")] + [dec.out_bias]

    def f():
        logits = dec.forward([2, 4, 5, 6], ctx)
        return (logits * logits).mean() * LOSS_SCALE

    return finite_diff_check(f, params, h=3e-4)


def check_losses(seed: int) -> float:
    rng = np.random.default_rng(seed)
    d = DIMS
    worst = 0.0

    enc = TextEncoder(np.random.default_rng(seed + 1), 9, d["width"], 1, 12, heads=d["heads"])
    params = [p for _, p in enc.params("text")]

    def f_mlm():
        loss, _ = mlm_loss([5, 6, 7, 8], 0.9, enc, np.random.default_rng(seed + 2), mask_id=4)
        return loss * LOSS_SCALE

    worst = max(worst, finite_diff_check(f_mlm, params, h=3e-4))

    head = ContrastiveHead(np.random.default_rng(seed + 3), d["width"], 4, tau_init=0.3)
    v_cls = Tensor(rng.normal(size=(3, d["width"])), requires_grad=True)
    t_cls = Tensor(rng.normal(size=(3, d["width"])), requires_grad=True)
    with no_grad():
        vm = head.embed_vision(v_cls).data.copy()
        tm = head.embed_text(t_cls).data.copy()
    q1, q2 = MomentumQueue(8, 4), MomentumQueue(8, 4)
    q1.push(rng.normal(size=(4, 4)))
    q2.push(rng.normal(size=(4, 4)))
    params = [v_cls, t_cls] + [p for _, p in head.params("head")]
    worst = max(worst, finite_diff_check(
        lambda: vlc_loss(v_cls, t_cls, head, vm, tm, q1, q2) * LOSS_SCALE,
        params, h=3e-4))

    match_head = Linear(np.random.default_rng(seed + 4), d["width"], 2)
    pos = Tensor(rng.normal(size=(3, d["width"])), requires_grad=True)
    neg = Tensor(rng.normal(size=(3, d["width"])), requires_grad=True)
    params = [pos, neg] + [p for _, p in match_head.params("match")]
    worst = max(worst, finite_diff_check(
        lambda: vlm_loss(pos, neg, match_head) * LOSS_SCALE, params, h=3e-4))

    table = EmbeddingTable(np.random.default_rng(seed + 5), 9, d["width"], 16, cls_id=1)
    dec = DecoderStack(np.random.default_rng(seed + 6), table, 1, d["heads"], bos_id=2, eos_id=3)
    ctx_seq = Tensor(rng.normal(size=(3, d["width"])), requires_grad=True)
    ctx = ContextBundle([("fused", ctx_seq)])
    params = [ctx_seq] + [p for _, p in dec.params("dec")]

    def f_ilm():
        loss, _ = instruction_lm_loss([5], [6, 7], ctx, dec)
        return loss * LOSS_SCALE

    worst = max(worst, finite_diff_check(f_ilm, params, h=3e-4))
    return worst


SUITE = {
    "primitives": (check_primitives, PRIMITIVE_TOL),
    "vision": (check_vision_block, COMPOSITE_TOL),
    "text": (check_text_block, COMPOSITE_TOL),
    "universal": (check_universal_layer, COMPOSITE_TOL),
    "fusion": (check_fusion_block, COMPOSITE_TOL),
    "decoder": (check_decoder_block, COMPOSITE_TOL),
    "losses": (check_losses, COMPOSITE_TOL),
}

SEEDS = (0, 1, 2, 3, 4)


def run_gradcheck_suite(module: str | None = None, log=None, seeds=SEEDS) -> int:
    """Run the checks (optionally one module); returns the failure count."""
    from .errors import ContractError

    if module is not None and module not in SUITE:
        raise ContractError(f"unknown module '{module}'; choose from {', '.join(SUITE)}")
    failures = 0
    names = [module] if module else list(SUITE)
    for name in names:
        fn, tol = SUITE[name]
        worst = max(fn(seed) for seed in seeds)
        ok = worst <= tol
        failures += 0 if ok else 1
        if log:
            log(f"{name:12s} max rel err {worst:.3e} (tol {tol:g}) {'ok' if ok else 'FAIL'}")
    return failures
