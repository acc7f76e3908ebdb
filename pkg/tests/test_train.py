import os

import numpy as np
import pytest

from multimod.checkpoint import load_checkpoint, save_checkpoint
from multimod.config import TrainConfig
from multimod.corpus import corpus_from_config
from multimod.errors import NumericError
from multimod.metrics import eval_embeddings
from multimod.model import MultimodalModel
from multimod.optim import AdamW
from multimod.train import METRICS_HEADER, _batch_losses, train


def tiny_config(**kw):
    defaults = dict(seed=0, dim=8, heads=2, vision_layers=1, text_layers=1,
                    universal_layers=1, fusion_layers=1, decoder_layers=1,
                    num_queries=4, num_concepts=4, samples_per_split=16,
                    frames=2, total_steps=6, eval_interval=3, batch_size=4,
                    warmup_steps=2, queue_size=4, eval_pairs=4)
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_short_run_reduces_loss_and_logs_metrics():
    cfg = tiny_config(total_steps=30, eval_interval=10)
    res = train(cfg)
    assert [r["step"] for r in res.metrics] == [10, 20, 30]
    assert res.metrics[-1]["loss_total"] < res.metrics[0]["loss_total"]
    for key in METRICS_HEADER.split(","):
        assert key in res.metrics[0]


def test_checkpoint_save_load_save_byte_identical(tmp_path):
    cfg = tiny_config()
    res = train(cfg)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(str(p1), res.model, res.optimizer, cfg.total_steps,
                    res.rng.bit_generator.state)
    model, opt, step, rng_state = load_checkpoint(str(p1))
    assert step == cfg.total_steps
    save_checkpoint(str(p2), model, opt, step, rng_state)
    assert p1.read_bytes() == p2.read_bytes()


def test_resume_is_bit_identical_to_uninterrupted(tmp_path):
    full_cfg = tiny_config(total_steps=8)
    corpus = corpus_from_config(full_cfg)
    full = train(full_cfg, corpus)

    half = train(full_cfg, corpus, stop_after=4)
    mid = tmp_path / "mid.ckpt"
    save_checkpoint(str(mid), half.model, half.optimizer, 4,
                    half.rng.bit_generator.state)
    resumed = train(full_cfg, corpus, resume=str(mid))

    a = full.model.parameters()
    b = resumed.model.parameters()
    for name in a:
        assert np.array_equal(a[name].data, b[name].data), name
    for name in a:
        assert np.array_equal(full.optimizer.m.get(name, np.zeros(1)),
                              resumed.optimizer.m.get(name, np.zeros(1))), name
    assert full.rng.bit_generator.state == resumed.rng.bit_generator.state
    am = full.model.momentum_parameters()
    bm = resumed.model.momentum_parameters()
    for name in am:
        assert np.array_equal(am[name].data, bm[name].data), name
    assert np.array_equal(full.model.vision_queue.contents(),
                          resumed.model.vision_queue.contents())


def test_training_is_seed_deterministic():
    cfg = tiny_config(total_steps=4)
    a = train(cfg)
    b = train(cfg)
    pa, pb = a.model.parameters(), b.model.parameters()
    for name in pa:
        assert np.array_equal(pa[name].data, pb[name].data), name
    assert a.metrics == b.metrics


def test_lr_schedule_reaches_peak_and_decays():
    cfg = tiny_config(total_steps=10, warmup_steps=4, eval_interval=1)
    res = train(cfg)
    lrs = [r["lr"] for r in res.metrics]
    assert lrs[3] == pytest.approx(cfg.lr)          # step 4 = warmup end
    assert lrs[-1] == pytest.approx(0.0, abs=1e-12)  # cosine reaches zero
    assert max(lrs) == pytest.approx(cfg.lr)


def test_nan_loss_aborts_with_step_context(tmp_path):
    # poison a parameter through a checkpoint, then resume: the train loop
    # must abort with the step number in the message
    cfg = tiny_config(total_steps=4)
    corpus = corpus_from_config(cfg)
    half = train(cfg, corpus, stop_after=2)
    half.model.path.head.log_tau.data = np.asarray(float("nan"))
    mid = tmp_path / "poisoned.ckpt"
    save_checkpoint(str(mid), half.model, half.optimizer, 2,
                    half.rng.bit_generator.state)
    with pytest.raises(NumericError, match="step 3"):
        train(cfg, corpus, resume=str(mid))


def test_train_writes_outputs(tmp_path):
    cfg = tiny_config()
    out = tmp_path / "run"
    res = train(cfg, out_dir=str(out))
    assert os.path.exists(res.metrics_path)
    assert os.path.exists(res.checkpoint_path)
    assert os.path.exists(out / "losses.png")
    assert os.path.exists(out / "alignment.png")
    header = open(res.metrics_path).readline().strip()
    assert header == METRICS_HEADER


def test_momentum_path_tracks_online():
    cfg = tiny_config(total_steps=5, momentum=0.5)
    res = train(cfg)
    online = res.model.embedding_parameters()
    momentum = res.model.momentum_parameters()
    gaps = [np.abs(online[n].data - momentum[n].data).max() for n in online]
    assert max(gaps) > 0.0  # lags behind
    # momentum stays a convex trail of past online values, same shapes
    assert set(online) == set(momentum)


def test_queues_fill_during_training():
    cfg = tiny_config(total_steps=3)
    res = train(cfg)
    assert res.model.vision_queue.fill == cfg.queue_size
    assert res.model.text_queue.fill == cfg.queue_size
    norms = np.linalg.norm(res.model.text_queue.contents(), axis=1)
    assert np.allclose(norms, 1.0, atol=1e-10)


def test_total_loss_differentiable_end_to_end():
    # finite differences across a parameter slice spanning every module
    from multimod.gradcheck import finite_diff_check

    cfg = tiny_config(batch_size=2)
    corpus = corpus_from_config(cfg)
    model = MultimodalModel(cfg, corpus.vocab)
    video = next(s for s in corpus.train if s.is_video)
    image = next(s for s in corpus.train if not s.is_video)
    batch = [video, image]

    params = model.pretrain_parameters()
    probe_names = [
        "path.vision.block0.temporal.kernels",
        "path.vision.block0.ln_sa.gamma",
        "path.vision.cls",
        "path.text.block0.ln_ffn.beta",
        "path.universal.queries",
        "path.universal.layer0.ln_ca.gamma",
        "path.head.log_tau",
        "fusion.block0.ln_ca.beta",
        "decoder.block0.ln_sa.gamma",
        "decoder.out_bias",
        "match_head.bias",
    ]
    probes = [params[n] for n in probe_names]

    def f():
        total, _, _ = _batch_losses(model, batch, cfg, np.random.default_rng(5))
        return total * 0.0625

    # smaller step: the summary token parameter rides high-curvature paths
    assert finite_diff_check(f, probes, h=1e-4) <= 1e-4


def test_all_temporal_variants_train_and_report_same_metrics():
    keys = None
    for variant in ("localTemporal", "temporalConvolution", "temporalSelfAttention"):
        cfg = tiny_config(total_steps=3, eval_interval=3, temporal_variant=variant)
        res = train(cfg)
        row_keys = tuple(sorted(res.metrics[0]))
        if keys is None:
            keys = row_keys
        assert row_keys == keys, variant
        assert np.isfinite(res.metrics[0]["loss_total"])
