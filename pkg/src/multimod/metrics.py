"""Evaluation metrics: centroid modality gap, recall@K retrieval, synthetic
QA accuracy, and cross-attention map export."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import no_grad

RECALL_KS = (1, 5, 10)


def modality_gap(vision_embeds: np.ndarray, text_embeds: np.ndarray) -> float:
    """Euclidean norm of (mean vision embedding - mean text embedding)."""
    vision_embeds = np.atleast_2d(np.asarray(vision_embeds, dtype=np.float64))
    text_embeds = np.atleast_2d(np.asarray(text_embeds, dtype=np.float64))
    if vision_embeds.shape[0] == 0 or text_embeds.shape[0] == 0:
        raise ContractError("modality gap needs non-empty embedding sets")
    delta = vision_embeds.mean(axis=0) - text_embeds.mean(axis=0)
    return float(np.linalg.norm(delta))


def _rank_of_match(scores: np.ndarray, match: int) -> int:
    """1-based rank of `match` under descending score, ties broken by index."""
    order = np.lexsort((np.arange(scores.size), -scores))
    return int(np.nonzero(order == match)[0][0]) + 1


def retrieval_recall(similarity: np.ndarray) -> dict:
    """R@1/5/10 in both directions for a square matched-pair matrix
    (rows: vision items, columns: text items, pair i on the diagonal)."""
    sim = np.asarray(similarity, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1] or sim.shape[0] == 0:
        raise ContractError(f"similarity must be square and non-empty, got {sim.shape}")
    n = sim.shape[0]
    i2t = np.array([_rank_of_match(sim[i], i) for i in range(n)])
    t2i = np.array([_rank_of_match(sim[:, j], j) for j in range(n)])
    out = {}
    for k in RECALL_KS:
        out[f"r{k}_i2t"] = float((i2t <= k).mean())
        out[f"r{k}_t2i"] = float((t2i <= k).mean())
    return out


def eval_embeddings(model, samples):
    """Online unit-norm embeddings for matched pairs: (vision (N,P), text (N,P))."""
    v_rows, t_rows = [], []
    with no_grad():
        for s in samples:
            v, t = model.embed_pair(s)
            v_rows.append(v.data[0])
            t_rows.append(t.data[0])
    return np.asarray(v_rows), np.asarray(t_rows)


def eval_retrieval(model, samples) -> dict:
    v, t = eval_embeddings(model, samples)
    out = retrieval_recall(v @ t.T)
    out["gap"] = modality_gap(v, t)
    return out


def qa_accuracy(model, samples, instructions_enabled: bool) -> float:
    """Fraction of samples whose first generated token is the answer token."""
    from .decoder import ContextBundle
    from .tasks import instruction_for

    if not samples:
        raise ContractError("qa accuracy needs at least one sample")
    hits = 0
    with no_grad():
        for s in samples:
            task = "videoQuestionAnswering" if s.is_video else "imageQuestionAnswering"
            prefix = instruction_for(task, instructions_enabled, model.vocab)
            vn = model.encode_vision(s.frames, s.is_video)
            wm = model.encode_text(s.question)
            mm, tav = model.fused_features(vn, wm)
            context = ContextBundle([("fused", mm), ("vision", tav)])
            tokens = model.generate(context, prefix, "videoDecoder" if s.is_video else "imageDecoder",
                                    max_len=2, beam_size=2)
            if tokens and tokens[0] == s.answer[0]:
                hits += 1
    return hits / len(samples)


def export_attention(model, sample, layer_index: int, path: str, task: str = "pretraining"):
    """Write the head-averaged cross-attention map of one shared layer's
    vision path: k rows over T*L original positions, each summing to 1."""
    depth = len(model.path.universal.layers)
    if not 0 <= layer_index < depth:
        raise ContractError(f"layer index {layer_index} outside [0, {depth})")
    captured = []
    with no_grad():
        vn = model.path.vision(sample.frames, video_mode=sample.is_video)
        model.path.universal.run(vn=vn, capture_ca=captured)
    weights = captured[layer_index]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# task: {task}\n")
        fh.write(f"# layer: {layer_index}\n")
        fh.write(f"# rows: {weights.shape[0]} (compressed visual tokens)\n")
        fh.write(f"# cols: {weights.shape[1]} (frames x positions)\n")
        for row in weights:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")
    return weights


def read_attention(path: str) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            rows.append([float(x) for x in line.split()])
    return np.asarray(rows, dtype=np.float64)
