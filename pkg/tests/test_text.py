import numpy as np
import pytest

from multimod.errors import ContractError
from multimod.gradcheck import finite_diff_check
from multimod.text import TextEncoder


def make_encoder(seed=0, vocab=11, dim=16, depth=2, max_len=12):
    return TextEncoder(np.random.default_rng(seed), vocab, dim, depth, max_len, heads=2)


def test_encode_shape_and_summary_position():
    enc = make_encoder()
    out = enc.encode([5, 6, 7, 8, 9])
    assert out.shape == (6, 16)


def test_identity_adapter_at_init():
    enc = make_encoder()
    assert np.array_equal(enc.adapter.weight.data, np.eye(16))


def test_padding_invariance():
    for seed in range(20):
        rng = np.random.default_rng(200 + seed)
        enc = make_encoder(seed=seed)
        tokens = list(rng.integers(0, 11, size=6))
        pad_mask = [True, True, True, True, False, False]
        base = enc.encode(tokens, pad_mask=pad_mask).data
        tokens[4] = int((tokens[4] + 3) % 11)
        tokens[5] = int((tokens[5] + 7) % 11)
        out = enc.encode(tokens, pad_mask=pad_mask).data
        assert np.abs(out[:5] - base[:5]).max() <= 1e-12


def test_determinism():
    enc = make_encoder(seed=3)
    a = enc.encode([1, 2, 3]).data
    b = enc.encode([1, 2, 3]).data
    assert np.array_equal(a, b)


def test_overlength_rejected():
    enc = make_encoder(max_len=4)
    with pytest.raises(ContractError):
        enc.encode([1, 2, 3, 4])  # +CLS exceeds max_len


def test_cls_loss_gradcheck():
    enc = TextEncoder(np.random.default_rng(7), 9, 8, 1, 8, heads=2)
    params = [p for _, p in enc.params("text")]

    def f():
        cls = enc.encode([4, 2, 7])[0]
        return (cls * cls).mean()

    assert finite_diff_check(f, params, h=1e-3) <= 1e-4


def test_mlm_logits_shape_and_tie():
    enc = make_encoder()
    hidden = enc.encode([3, 4])
    logits = enc.mlm_logits(hidden)
    assert logits.shape == (3, 11)
