"""Seeded pretraining loop: joint objective, AdamW with warmup/cosine decay,
momentum updates, queue maintenance, periodic metrics, and checkpointing."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .corpus import EOS, SyntheticCorpus, corpus_from_config
from .decoder import ContextBundle
from .errors import NumericError
from .metrics import eval_retrieval
from .model import MultimodalModel
from .objectives import (derangement, instruction_lm_loss, mlm_loss,
                         momentum_update, vlc_loss, vlm_loss)
from .optim import AdamW, lr_at
from .tasks import instruction_for
from .tensor import Tensor, no_grad, zero_grad

METRICS_HEADER = "step,loss_total,loss_mlm,loss_vlc,loss_vlm,loss_ilm,lr,gap,r1_i2t,r1_t2i"


@dataclass
class TrainResult:
    model: MultimodalModel
    optimizer: AdamW
    rng: np.random.Generator
    metrics: list = field(default_factory=list)
    checkpoint_path: str | None = None
    metrics_path: str | None = None


def _batch_losses(model: MultimodalModel, samples, cfg: TrainConfig,
                  rng: np.random.Generator):
    """One joint objective evaluation over a batch. Returns (total, parts,
    momentum rows to enqueue afterwards).

    Universal-stack outputs are computed once per distinct sequence and
    shared across the fusion passes that need them."""
    vocab = model.vocab
    path = model.path
    uni = path.universal

    # shared per-step text encodings (the same tokens for every sample)
    question_tokens = samples[0].question
    wm_q = path.text.encode(question_tokens)
    _, ws_q = uni.run(wm=wm_q)
    instr, wm_instr, ws_instr = {}, {}, {}
    for modality, cap_task in (("video", "videoCaptioning"), ("image", "imageCaptioning")):
        instr[modality] = instruction_for(cap_task, cfg.instructions_enabled, vocab)
        wm_instr[modality] = path.text.encode(instr[modality])
        _, ws_instr[modality] = uni.run(wm=wm_instr[modality])

    v_summaries, t_summaries = [], []
    vm_rows, tm_rows = [], []
    mlm_terms, ilm_terms = [], []
    views = []
    pos_cls = []

    def fused(vn, wm, vs, ws):
        tav, vat = uni.combine(vn, wm, vs, ws)
        return model.fusion.fuse(vat, tav), tav

    for s in samples:
        modality = "video" if s.is_video else "image"
        vn = path.vision(s.frames, video_mode=s.is_video)
        vs, _ = uni.run(vn=vn)
        wm = path.text.encode(s.caption)
        _, ws = uni.run(wm=wm)
        views.append((vn, vs, wm, ws))
        v_summaries.append(vs.mean(axis=0, keepdims=True))
        t_summaries.append(ws[0].reshape(1, -1))
        vm, tm = model.momentum_embed_pair(s)
        vm_rows.append(vm[0])
        tm_rows.append(tm[0])

        loss_m, _ = mlm_loss(s.caption, cfg.mask_rate, path.text, rng,
                             mask_id=4, special_ids=vocab.special_ids)
        mlm_terms.append(loss_m)

        # matched-pair fusion summary feeds the match loss
        mm_pos, _ = fused(vn, wm, vs, ws)
        pos_cls.append(mm_pos[0].reshape(1, -1))

        # captioning objective: the context text is the instruction; with
        # instructions disabled it falls back to the question text, so the
        # prefix is then the only signal telling the two tasks apart
        if cfg.instructions_enabled:
            wm_c, ws_c = wm_instr[modality], ws_instr[modality]
        else:
            wm_c, ws_c = wm_q, ws_q
        mm_cap, tav_cap = fused(vn, wm_c, vs, ws_c)
        cap_ctx = ContextBundle([("fused", mm_cap), ("vision", tav_cap)])
        loss_cap, _ = instruction_lm_loss(instr[modality], s.caption + [EOS],
                                          cap_ctx, model.decoder)

        # answer objective: context carries the (fixed) question
        qa_task = "videoQuestionAnswering" if s.is_video else "imageQuestionAnswering"
        prefix_qa = instruction_for(qa_task, cfg.instructions_enabled, vocab)
        mm_qa, tav_qa = fused(vn, wm_q, vs, ws_q)
        qa_ctx = ContextBundle([("fused", mm_qa), ("vision", tav_qa)])
        loss_qa, _ = instruction_lm_loss(prefix_qa, s.answer + [EOS], qa_ctx, model.decoder)
        # captions dominate the generation mix two-to-one
        ilm_terms.append((loss_cap * 2.0 + loss_qa) * (1.0 / 3.0))

    vision_cls = T.concat(v_summaries, axis=0)
    text_cls = T.concat(t_summaries, axis=0)
    vm_batch = np.asarray(vm_rows)
    tm_batch = np.asarray(tm_rows)
    loss_vlc = vlc_loss(vision_cls, text_cls, path.head, vm_batch, tm_batch,
                        model.vision_queue, model.text_queue)

    perm = derangement(rng, len(samples))
    neg_cls = []
    for i in range(len(samples)):
        vn_n, vs_n, _, _ = views[perm[i]]
        _, _, wm_i, ws_i = views[i]
        mm_neg, _ = fused(vn_n, wm_i, vs_n, ws_i)
        neg_cls.append(mm_neg[0].reshape(1, -1))
    loss_vlm = vlm_loss(T.concat(pos_cls, axis=0), T.concat(neg_cls, axis=0),
                        model.match_head)

    loss_mlm = _mean(mlm_terms)
    loss_ilm = _mean(ilm_terms)
    w1, w2, w3 = cfg.loss_weights
    total = loss_mlm * w1 + (loss_vlc + loss_vlm) * w2 + loss_ilm * w3
    parts = {"loss_mlm": loss_mlm.item(), "loss_vlc": loss_vlc.item(),
             "loss_vlm": loss_vlm.item(), "loss_ilm": loss_ilm.item()}
    return total, parts, (vm_batch, tm_batch)


def _draw_batch(corpus, cfg, rng, video_idx, image_idx):
    """Modality-stratified batch: both encoders train every step."""
    n_video = min(cfg.batch_size // 2, len(video_idx))
    n_image = min(cfg.batch_size - n_video, len(image_idx))
    chosen_v = rng.choice(len(video_idx), size=n_video, replace=False)
    chosen_i = rng.choice(len(image_idx), size=n_image, replace=False)
    batch = [corpus.train[video_idx[int(i)]] for i in chosen_v]
    batch += [corpus.train[image_idx[int(i)]] for i in chosen_i]
    return batch


def _mean(terms):
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def _metrics_row(model, corpus, cfg, step, lr, total, parts) -> dict:
    eval_samples = corpus.eval[: cfg.eval_pairs]
    scores = eval_retrieval(model, eval_samples)
    return {
        "step": step,
        "loss_total": total,
        "loss_mlm": parts["loss_mlm"],
        "loss_vlc": parts["loss_vlc"],
        "loss_vlm": parts["loss_vlm"],
        "loss_ilm": parts["loss_ilm"],
        "lr": lr,
        "gap": scores["gap"],
        "r1_i2t": scores["r1_i2t"],
        "r1_t2i": scores["r1_t2i"],
    }


def format_metrics(rows) -> str:
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(",".join(_fmt(r[k]) for k in METRICS_HEADER.split(",")))
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def train(cfg: TrainConfig, corpus: SyntheticCorpus | None = None,
          out_dir: str | None = None, resume: str | None = None,
          stop_after: int | None = None, log=None) -> TrainResult:
    """Run (or resume) a training; deterministic given config.

    The LR schedule always spans cfg.total_steps; stop_after pauses the run
    early so it can be resumed bit-identically from its checkpoint. With
    out_dir set, writes metrics.csv, checkpoint.bin, and report figures.
    """
    if resume:
        model, optimizer, start_step, rng_state = load_checkpoint(resume)
        cfg = model.cfg
        rng = np.random.default_rng(0)
        rng.bit_generator.state = rng_state
    else:
        from .corpus import Vocabulary
        model = MultimodalModel(cfg, Vocabulary(cfg.num_concepts))
        optimizer = AdamW(model.pretrain_parameters(), lr=cfg.lr, beta1=cfg.beta1,
                          beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay)
        start_step = 0
        rng = np.random.default_rng(cfg.seed)
    corpus = corpus or corpus_from_config(cfg)

    params = optimizer.params
    online_embed = model.embedding_parameters()
    momentum_embed = model.momentum_parameters()
    metrics_rows = []
    video_idx = [i for i, s in enumerate(corpus.train) if s.is_video]
    image_idx = [i for i, s in enumerate(corpus.train) if not s.is_video]
    last_step = cfg.total_steps if stop_after is None else min(stop_after, cfg.total_steps)

    for step in range(start_step + 1, last_step + 1):
        lr = lr_at(step, cfg.lr, cfg.warmup_steps, cfg.total_steps)
        batch = _draw_batch(corpus, cfg, rng, video_idx, image_idx)
        zero_grad(params)
        try:
            total, parts, (vm_batch, tm_batch) = _batch_losses(model, batch, cfg, rng)
            total.backward()
        except NumericError as exc:
            raise NumericError(f"training aborted at step {step} (lr {lr:.3g}): {exc}") from exc
        # a parameter the step's loss never touched has gradient exactly zero
        for p in params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        optimizer.step(lr)
        momentum_update(online_embed, momentum_embed, cfg.momentum)
        model.vision_queue.push(vm_batch)
        model.text_queue.push(tm_batch)

        if step % cfg.eval_interval == 0 or step == last_step:
            row = _metrics_row(model, corpus, cfg, step, lr, total.item(), parts)
            metrics_rows.append(row)
            if log:
                log(f"step {step}: total {row['loss_total']:.4f} "
                    f"gap {row['gap']:.3f} r1 {row['r1_i2t']:.3f}/{row['r1_t2i']:.3f}")

    result = TrainResult(model, optimizer, rng, metrics_rows)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        result.metrics_path = os.path.join(out_dir, "metrics.csv")
        with open(result.metrics_path, "w", encoding="utf-8") as fh:
            fh.write(format_metrics(metrics_rows))
        result.checkpoint_path = os.path.join(out_dir, "checkpoint.bin")
        save_checkpoint(result.checkpoint_path, model, optimizer, last_step,
                        rng.bit_generator.state)
        from .report import render_training_report
        render_training_report(result.metrics_path, out_dir)
    return result
