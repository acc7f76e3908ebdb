"""The full modular model: one embedding path shared by both modalities, a
momentum copy of that path, fusion, the shared decoder, and task heads.

Module-level call counters track which components a forward pass exercised;
the task composer's conformance tests read them.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from . import tensor as T
from .blocks import Linear
from .config import TrainConfig
from .corpus import BOS, CLS, EOS, Vocabulary
from .decoder import ContextBundle, DecoderStack
from .fusion import FusionStack
from .objectives import ContrastiveHead, MomentumQueue
from .tensor import Tensor, no_grad
from .text import TextEncoder
from .universal import UniversalStack
from .vision import VisionEncoder


class EmbeddingPath:
    """Vision encoder, text encoder, universal stack, and the contrastive
    head: everything needed to produce the paired retrieval embeddings."""

    def __init__(self, rng: np.random.Generator, cfg: TrainConfig, vocab_size: int):
        self.vision = VisionEncoder(
            rng, dim=cfg.dim, depth=cfg.vision_layers, patch_size=cfg.patch_size,
            image_size=cfg.image_size, channels=cfg.channels, heads=cfg.heads,
            temporal_variant=cfg.temporal_variant, groups=cfg.effective_groups,
            kernel_size=cfg.kernel_size)
        self.text = TextEncoder(rng, vocab_size, cfg.dim, cfg.text_layers,
                                cfg.max_text_len, cfg.heads, cls_id=CLS)
        self.universal = UniversalStack(rng, cfg.dim, cfg.universal_layers,
                                        cfg.num_queries, cfg.heads)
        self.head = ContrastiveHead(rng, cfg.dim, cfg.proj_dim, cfg.tau_init)

    def params(self, prefix: str):
        yield from self.vision.params(f"{prefix}.vision")
        yield from self.text.params(f"{prefix}.text")
        yield from self.universal.params(f"{prefix}.universal")
        yield from self.head.params(f"{prefix}.head")


class MultimodalModel:
    def __init__(self, cfg: TrainConfig, vocab: Vocabulary):
        self.cfg = cfg
        self.vocab = vocab
        rng = np.random.default_rng(cfg.seed)
        self.path = EmbeddingPath(rng, cfg, vocab.size)
        self.fusion = FusionStack(rng, cfg.dim, cfg.fusion_layers, cfg.heads)
        self.decoder = DecoderStack(rng, self.path.text.table, cfg.decoder_layers,
                                    cfg.heads, bos_id=BOS, eos_id=EOS)
        self.match_head = Linear(rng, cfg.dim, 2)
        self.cls_head = Linear(rng, cfg.dim, cfg.num_concepts)
        self.patch_head = Linear(rng, cfg.dim, cfg.num_concepts)
        # identical construction order and seed reproduces the online init
        self.momentum_path = EmbeddingPath(np.random.default_rng(cfg.seed), cfg, vocab.size)
        for _, p in self.momentum_path.params("m"):
            p.requires_grad = False
        self.vision_queue = MomentumQueue(cfg.queue_size, cfg.proj_dim)
        self.text_queue = MomentumQueue(cfg.queue_size, cfg.proj_dim)
        self.counters = defaultdict(int)

    # -- counted module entry points ------------------------------------------

    def reset_counters(self):
        self.counters.clear()

    def encode_image(self, frames) -> Tensor:
        self.counters["imageEncoder"] += 1
        return self.path.vision(frames, video_mode=False)

    def encode_video(self, frames) -> Tensor:
        self.counters["videoEncoder"] += 1
        return self.path.vision(frames, video_mode=True)

    def encode_vision(self, frames, is_video: bool) -> Tensor:
        return self.encode_video(frames) if is_video else self.encode_image(frames)

    def encode_text(self, tokens, pad_mask=None) -> Tensor:
        self.counters["textEncoder"] += 1
        return self.path.text.encode(tokens, pad_mask=pad_mask)

    def run_universal(self, vn=None, wm=None, capture_ca=None):
        self.counters["universalLayers"] += 1
        return self.path.universal.run(vn=vn, wm=wm, capture_ca=capture_ca)

    def combine(self, vn, wm, vs, ws):
        return self.path.universal.combine(vn, wm, vs, ws)

    def fuse(self, vision_aware_text, text_aware_vision, capture_ca=None) -> Tensor:
        self.counters["fusion"] += 1
        return self.fusion.fuse(vision_aware_text, text_aware_vision, capture_ca=capture_ca)

    def generate(self, context: ContextBundle | None, prefix, decoder_tag: str,
                 max_len=None, beam_size=None, allowed_tokens=None):
        self.counters[decoder_tag] += 1
        return self.decoder.generate(
            context, prefix,
            max_len=self.cfg.max_gen_len if max_len is None else max_len,
            beam_size=self.cfg.beam_size if beam_size is None else beam_size,
            allowed_tokens=allowed_tokens)

    # -- embedding route -----------------------------------------------------------

    def vision_summary(self, vn: Tensor, path: EmbeddingPath | None = None,
                       counted: bool = True, capture_ca=None) -> Tensor:
        """Mean of the shared-space visual tokens, (1, C)."""
        path = path or self.path
        if counted and path is self.path:
            vs, _ = self.run_universal(vn=vn, capture_ca=capture_ca)
        else:
            vs, _ = path.universal.run(vn=vn, capture_ca=capture_ca)
        return vs.mean(axis=0, keepdims=True)

    def text_summary(self, wm: Tensor, path: EmbeddingPath | None = None,
                     counted: bool = True) -> Tensor:
        """Shared-space text summary token, (1, C)."""
        path = path or self.path
        if counted and path is self.path:
            _, ws = self.run_universal(wm=wm)
        else:
            _, ws = path.universal.run(wm=wm)
        return ws[0].reshape(1, -1)

    def embed_pair(self, sample):
        """Online embeddings of a sample's two sides: unit rows (1, proj_dim)."""
        vn = self.encode_vision(sample.frames, sample.is_video)
        v_emb = self.path.head.embed_vision(self.vision_summary(vn))
        wm = self.encode_text(sample.caption)
        t_emb = self.path.head.embed_text(self.text_summary(wm))
        return v_emb, t_emb

    def momentum_embed_pair(self, sample):
        """Momentum-path embeddings as plain arrays (no tape)."""
        mp = self.momentum_path
        with no_grad():
            vn = mp.vision(sample.frames, video_mode=sample.is_video)
            v = mp.head.embed_vision(self.vision_summary(vn, path=mp, counted=False))
            wm = mp.text.encode(sample.caption)
            t = mp.head.embed_text(self.text_summary(wm, path=mp, counted=False))
        return v.data.copy(), t.data.copy()

    def fused_features(self, vn: Tensor, wm: Tensor, capture_universal=None,
                       capture_fusion=None):
        """Universal layers, combination, and fusion for one vision/text pair.

        Returns (multimodal sequence, text-aware vision)."""
        vs, ws = self.run_universal(vn=vn, wm=wm, capture_ca=capture_universal)
        tav, vat = self.combine(vn, wm, vs, ws)
        mm = self.fuse(vat, tav, capture_ca=capture_fusion)
        return mm, tav

    # -- parameter registry -----------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        """Every learnable tensor (momentum copies and queues excluded)."""
        out = {}
        out.update(self.path.params("path"))
        out.update(self.fusion.params("fusion"))
        out.update(self.decoder.params("decoder"))
        out.update(self.match_head.params("match_head"))
        out.update(self.cls_head.params("cls_head"))
        out.update(self.patch_head.params("patch_head"))
        return out

    def pretrain_parameters(self) -> dict[str, Tensor]:
        """Parameters the pretraining objectives reach; the task-specific
        heads stay at their seeded init."""
        out = {}
        out.update(self.path.params("path"))
        out.update(self.fusion.params("fusion"))
        out.update(self.decoder.params("decoder"))
        out.update(self.match_head.params("match_head"))
        return out

    def embedding_parameters(self) -> dict[str, Tensor]:
        return dict(self.path.params("path"))

    def momentum_parameters(self) -> dict[str, Tensor]:
        return dict(self.momentum_path.params("path"))
