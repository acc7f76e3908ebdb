import math

import numpy as np
import pytest

from multimod.blocks import EmbeddingTable, Linear
from multimod.decoder import ContextBundle, DecoderStack
from multimod.errors import ContractError
from multimod.gradcheck import finite_diff_check
from multimod.objectives import (ContrastiveHead, MomentumQueue, corrupt_tokens,
                                 derangement, instruction_lm_loss, mlm_loss,
                                 momentum_update, select_mlm_positions, vlc_loss,
                                 vlm_loss)
from multimod.optim import AdamW
from multimod.tensor import Tensor, no_grad
from multimod.text import TextEncoder


# -- momentum update ------------------------------------------------------------


def make_param_pair(seed, shape=(3, 2)):
    rng = np.random.default_rng(seed)
    online = {"w": Tensor(rng.normal(size=shape), requires_grad=True)}
    momentum = {"w": Tensor(rng.normal(size=shape))}
    return online, momentum


def test_momentum_extremes():
    online, momentum = make_param_pair(0)
    before = momentum["w"].data.copy()
    momentum_update(online, momentum, m=1.0)
    assert np.array_equal(momentum["w"].data, before)
    momentum_update(online, momentum, m=0.0)
    assert np.array_equal(momentum["w"].data, online["w"].data)


def test_momentum_closed_form_recursion():
    # frozen online parameters: theta_m(k) = theta + m^k (theta_m(0) - theta)
    online, momentum = make_param_pair(1)
    m = 0.995
    theta = online["w"].data.copy()
    start = momentum["w"].data.copy()
    for k in range(1, 11):
        momentum_update(online, momentum, m)
        expect = theta + m**k * (start - theta)
        assert np.abs(momentum["w"].data - expect).max() <= 1e-12


def test_momentum_distance_shrinks_by_m():
    online, momentum = make_param_pair(2)
    m = 0.9
    for _ in range(5):
        before = np.linalg.norm(momentum["w"].data - online["w"].data)
        momentum_update(online, momentum, m)
        after = np.linalg.norm(momentum["w"].data - online["w"].data)
        assert abs(after - m * before) <= 1e-10


def test_momentum_shape_mismatch():
    online = {"w": Tensor(np.zeros((2, 2)), requires_grad=True)}
    momentum = {"w": Tensor(np.zeros((2, 3)))}
    with pytest.raises(ContractError):
        momentum_update(online, momentum, 0.5)


# -- queue -----------------------------------------------------------------------


def one_hot(i, dim=4):
    v = np.zeros(dim)
    v[i % dim] = 1.0
    return v


def test_queue_fifo_eviction():
    q = MomentumQueue(4, 4)
    for i in range(1, 6):
        q.push(one_hot(i)[None])
    got = q.contents()
    expect = np.vstack([one_hot(i) for i in range(2, 6)])
    assert np.array_equal(got, expect)


def test_queue_replay_oracle_after_two_capacities():
    rng = np.random.default_rng(3)
    Q = 8
    q = MomentumQueue(Q, 3)
    stream = rng.normal(size=(2 * Q, 3))
    stream /= np.linalg.norm(stream, axis=1, keepdims=True)
    for i in range(2 * Q):
        q.push(stream[i][None])
    assert np.allclose(q.contents(), stream[-Q:], atol=1e-15)


def test_queue_normalizes_with_warning():
    q = MomentumQueue(2, 3)
    q.push(np.array([[3.0, 0.0, 0.0]]))
    assert q.normalize_warnings == 1
    assert np.allclose(q.contents()[0], [1.0, 0.0, 0.0])


def test_queue_width_check():
    with pytest.raises(ContractError):
        MomentumQueue(2, 3).push(np.zeros((1, 4)))


# -- contrastive loss ----------------------------------------------------------


def identity_head(dim):
    head = ContrastiveHead(np.random.default_rng(0), dim, dim, tau_init=1.0)
    head.vision_proj.weight.data[:] = np.eye(dim)
    head.text_proj.weight.data[:] = np.eye(dim)
    return head


def test_vlc_single_pair_empty_queue_is_zero():
    head = identity_head(3)
    v = Tensor(np.array([[2.0, 0.0, 0.0]]))
    t = Tensor(np.array([[0.0, 5.0, 0.0]]))
    vm = np.array([[1.0, 0.0, 0.0]])
    tm = np.array([[0.0, 1.0, 0.0]])
    loss = vlc_loss(v, t, head, vm, tm, MomentumQueue(4, 3), MomentumQueue(4, 3))
    assert loss.item() == 0.0


def test_vlc_orthogonal_two_pair_value():
    head = identity_head(2)
    e = np.eye(2)
    loss = vlc_loss(Tensor(e), Tensor(e), head, e.copy(), e.copy(),
                    MomentumQueue(4, 2), MomentumQueue(4, 2))
    expect = -math.log(math.e / (math.e + 1.0))
    assert abs(loss.item() - expect) <= 1e-5
    assert abs(loss.item() - 0.31326) <= 1e-5


def test_vlc_scale_invariance_of_raw_embeddings():
    rng = np.random.default_rng(4)
    head = ContrastiveHead(rng, 4, 3, tau_init=0.5)
    v = rng.normal(size=(3, 4))
    t = rng.normal(size=(3, 4))
    with no_grad():
        vm = head.embed_vision(Tensor(v)).data
        tm = head.embed_text(Tensor(t)).data
    q1, q2 = MomentumQueue(4, 3), MomentumQueue(4, 3)
    a = vlc_loss(Tensor(v), Tensor(t), head, vm, tm, q1, q2).item()
    v2 = v.copy()
    v2[1] *= 7.3
    t2 = t.copy()
    t2[0] *= 0.02
    b = vlc_loss(Tensor(v2), Tensor(t2), head, vm, tm, q1, q2).item()
    assert abs(a - b) <= 1e-12


def test_vlc_queue_changes_loss():
    rng = np.random.default_rng(5)
    head = identity_head(3)
    v = rng.normal(size=(2, 3))
    t = rng.normal(size=(2, 3))
    vm = v / np.linalg.norm(v, axis=1, keepdims=True)
    tm = t / np.linalg.norm(t, axis=1, keepdims=True)
    empty_v, empty_t = MomentumQueue(8, 3), MomentumQueue(8, 3)
    a = vlc_loss(Tensor(v), Tensor(t), head, vm, tm, empty_v, empty_t).item()
    full_v, full_t = MomentumQueue(8, 3), MomentumQueue(8, 3)
    extra = rng.normal(size=(4, 3))
    full_v.push(extra)
    full_t.push(extra)
    b = vlc_loss(Tensor(v), Tensor(t), head, vm, tm, full_v, full_t).item()
    assert b > a


def test_vlc_empty_batch_rejected():
    head = identity_head(2)
    with pytest.raises(ContractError):
        vlc_loss(Tensor(np.zeros((0, 2))), Tensor(np.zeros((0, 2))), head,
                 np.zeros((0, 2)), np.zeros((0, 2)),
                 MomentumQueue(2, 2), MomentumQueue(2, 2))


def test_vlc_decreases_under_gradient_descent():
    rng = np.random.default_rng(6)
    head = ContrastiveHead(rng, 6, 4, tau_init=0.2)
    v_cls = Tensor(rng.normal(size=(4, 6)))
    t_cls = Tensor(rng.normal(size=(4, 6)))
    params = dict(head.params("head"))
    opt = AdamW(params, lr=5e-3, weight_decay=0.0)
    q1, q2 = MomentumQueue(8, 4), MomentumQueue(8, 4)

    def current_loss():
        with no_grad():
            vm = head.embed_vision(v_cls).data
            tm = head.embed_text(t_cls).data
        return vlc_loss(v_cls, t_cls, head, vm, tm, q1, q2)

    start = current_loss().item()
    for _ in range(100):
        for p in params.values():
            p.grad = None
        loss = current_loss()
        loss.backward()
        opt.step()
    assert current_loss().item() < start


def test_tau_floor():
    head = ContrastiveHead(np.random.default_rng(7), 3, 2)
    head.log_tau.data = np.asarray(math.log(1e-9))
    assert head.tau().item() == pytest.approx(1e-3)


# -- match loss -------------------------------------------------------------------


def test_vlm_uniform_logits_give_ln2():
    head = Linear(np.random.default_rng(8), 4, 2)
    head.weight.data[:] = 0.0
    head.bias.data[:] = 0.0
    rng = np.random.default_rng(9)
    loss = vlm_loss(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4))), head)
    assert abs(loss.item() - math.log(2.0)) <= 1e-10


def test_vlm_fixed_inputs_vs_direct_oracle():
    rng = np.random.default_rng(10)
    head = Linear(rng, 4, 2)
    pos = rng.normal(size=(3, 4))
    neg = rng.normal(size=(3, 4))
    loss = vlm_loss(Tensor(pos), Tensor(neg), head)
    logits = np.vstack([pos, neg]) @ head.weight.data + head.bias.data
    labels = [1, 1, 1, 0, 0, 0]
    total = 0.0
    for row, lab in zip(logits, labels):
        e = np.exp(row - row.max())
        total += -math.log(e[lab] / e.sum())
    assert abs(loss.item() - total / 6.0) <= 1e-12


def test_vlm_single_pair_rejected():
    head = Linear(np.random.default_rng(11), 4, 2)
    with pytest.raises(ContractError):
        vlm_loss(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))), head)


def test_derangement_has_no_fixed_points():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        perm = derangement(rng, n)
        assert sorted(perm) == list(range(n))
        assert not np.any(perm == np.arange(n))
    with pytest.raises(ContractError):
        derangement(np.random.default_rng(0), 1)


# -- masked-token loss ------------------------------------------------------------


def make_text_encoder(seed=0, vocab=11, dim=8, depth=1, max_len=16):
    return TextEncoder(np.random.default_rng(seed), vocab, dim, depth, max_len, heads=2)


def test_mlm_rate_zero():
    enc = make_text_encoder()
    loss, positions = mlm_loss([5, 6, 7], 0.0, enc, np.random.default_rng(0), mask_id=4)
    assert loss.item() == 0.0
    assert positions == []


def test_mlm_uniform_logits_give_log_vocab():
    enc = make_text_encoder()
    enc.table.tokens.data[:] = 0.0
    enc.mlm_bias.data[:] = 0.0
    loss, positions = mlm_loss([7], 1.0, enc, np.random.default_rng(1), mask_id=4)
    assert positions == [0]
    assert abs(loss.item() - math.log(11)) <= 1e-10


def test_mlm_special_tokens_never_selected():
    rng = np.random.default_rng(2)
    tokens = [0, 1, 5, 6, 0, 7]
    for _ in range(50):
        sel = select_mlm_positions(tokens, 1.0, rng, special_ids={0, 1})
        assert sel == [2, 3, 5]


def test_mlm_masked_fraction_binomial_band():
    rng = np.random.default_rng(3)
    tokens = list(range(5, 105))
    selected = 0
    trials = 0
    while trials < 10_000:
        sel = select_mlm_positions(tokens, 0.15, rng)
        selected += len(sel)
        trials += len(tokens)
    frac = selected / trials
    assert 0.13 <= frac <= 0.17


def test_mlm_corruption_mix():
    rng = np.random.default_rng(4)
    n = 10_000
    tokens = [7] * n
    positions = list(range(n))
    out = corrupt_tokens(tokens, positions, rng, mask_id=4, vocab_size=11)
    masked = sum(1 for t in out if t == 4)
    kept = sum(1 for t in out if t == 7)
    assert 0.77 <= masked / n <= 0.83
    # kept = explicit keeps plus random draws that hit the original id
    assert 0.08 <= kept / n <= 0.14


def test_mlm_loss_positions_reproducible():
    enc = make_text_encoder(seed=5)
    a, pos_a = mlm_loss([5, 6, 7, 8, 9], 0.5, enc, np.random.default_rng(42), mask_id=4)
    b, pos_b = mlm_loss([5, 6, 7, 8, 9], 0.5, enc, np.random.default_rng(42), mask_id=4)
    assert pos_a == pos_b
    assert a.item() == b.item()


def test_mlm_gradients():
    enc = make_text_encoder(seed=6, vocab=9, dim=8, depth=1)
    params = [p for _, p in enc.params("text")]

    def f():
        loss, _ = mlm_loss([5, 6, 7, 8], 0.9, enc, np.random.default_rng(7), mask_id=4)
        return loss

    assert finite_diff_check(f, params, h=3e-4) <= 1e-4


# -- instruction LM loss -----------------------------------------------------------


def make_decoder(seed=0, vocab=12, dim=8, depth=1, max_len=24):
    rng = np.random.default_rng(seed)
    table = EmbeddingTable(rng, vocab, dim, max_len, cls_id=1)
    return DecoderStack(rng, table, depth=depth, heads=2, bos_id=2, eos_id=3)


def test_ilm_scores_only_target_rows():
    dec = make_decoder()
    ctx = ContextBundle([("vision", Tensor(np.random.default_rng(1).normal(size=(4, 8))))])
    prefix = [5, 6, 7]
    target = [8, 9]
    _, rows = instruction_lm_loss(prefix, target, ctx, dec)
    assert rows == [3, 4]  # rows predicting the two target tokens only


def test_ilm_uniform_logits_give_log_vocab():
    dec = make_decoder(seed=2)
    dec.table.tokens.data[:] = 0.0
    dec.out_bias.data[:] = 0.0
    loss, _ = instruction_lm_loss([5], [6, 7, 8], None, dec)
    assert abs(loss.item() - math.log(12)) <= 1e-10


def test_ilm_fixed_logits_vs_position_loop_oracle():
    dec = make_decoder(seed=3)
    rng = np.random.default_rng(4)
    ctx = ContextBundle([("fused", Tensor(rng.normal(size=(5, 8))))])
    prefix = [5]
    target = [6, 7, 8]
    loss, rows = instruction_lm_loss(prefix, target, ctx, dec)
    logits = dec.forward([dec.bos_id] + prefix + target, ctx).data
    total = 0.0
    for row, tok in zip(rows, target):
        x = logits[row]
        e = np.exp(x - x.max())
        total += -math.log(e[tok] / e.sum())
    assert abs(loss.item() - total / len(target)) <= 1e-12


def test_ilm_empty_target_rejected():
    dec = make_decoder(seed=5)
    with pytest.raises(ContractError):
        instruction_lm_loss([5], [], None, dec)


def test_ilm_gradients():
    dec = make_decoder(seed=7, vocab=9, dim=8, depth=1)
    rng = np.random.default_rng(8)
    ctx_seq = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
    ctx = ContextBundle([("fused", ctx_seq)])
    params = [ctx_seq] + [p for _, p in dec.params("dec")]

    def f():
        loss, _ = instruction_lm_loss([5], [6, 7], ctx, dec)
        return loss

    assert finite_diff_check(f, params, h=3e-4) <= 1e-4
