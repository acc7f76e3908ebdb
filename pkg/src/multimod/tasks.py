"""Task composition: which modules serve which task, the per-task instruction
prefixes, and the composed forward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import EOS, Vocabulary
from .decoder import ContextBundle
from .errors import ContractError
from .model import MultimodalModel
from .tensor import Tensor, no_grad

MODULE_NAMES = ("textEncoder", "imageEncoder", "videoEncoder", "universalLayers",
                "fusion", "textDecoder", "imageDecoder", "videoDecoder")

SIMILARITY, GENERATED, LOGITS = "similarityMatrix", "generatedText", "classLogits"


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    inputs: tuple
    modules: frozenset
    output: str
    decoder_tag: str | None = None


def _spec(task_id, inputs, modules, output, decoder_tag=None):
    return TaskSpec(task_id, tuple(inputs), frozenset(modules), output, decoder_tag)


TASK_TABLE = {spec.task_id: spec for spec in [
    _spec("videoRetrieval", ("text", "video"),
          {"textEncoder", "videoEncoder", "universalLayers", "fusion"}, SIMILARITY),
    _spec("videoQuestionAnswering", ("text", "video"),
          {"textEncoder", "videoEncoder", "universalLayers", "fusion", "videoDecoder"},
          GENERATED, "videoDecoder"),
    _spec("videoCaptioning", ("text", "video"),
          {"textEncoder", "videoEncoder", "universalLayers", "fusion", "videoDecoder"},
          GENERATED, "videoDecoder"),
    _spec("imageRetrieval", ("text", "image"),
          {"textEncoder", "imageEncoder", "universalLayers", "fusion"}, SIMILARITY),
    _spec("imageQuestionAnswering", ("text", "image"),
          {"textEncoder", "imageEncoder", "universalLayers", "fusion", "imageDecoder"},
          GENERATED, "imageDecoder"),
    _spec("imageCaptioning", ("text", "image"),
          {"textEncoder", "imageEncoder", "universalLayers", "fusion", "imageDecoder"},
          GENERATED, "imageDecoder"),
    _spec("visualGrounding", ("text", "image"),
          {"textEncoder", "imageEncoder", "universalLayers", "fusion", "imageDecoder"},
          GENERATED, "imageDecoder"),
    _spec("videoClassification", ("video",),
          {"videoEncoder", "universalLayers"}, LOGITS),
    _spec("imageClassification", ("image",),
          {"imageEncoder", "universalLayers"}, LOGITS),
    _spec("imageDetection", ("image",),
          {"imageEncoder", "universalLayers"}, LOGITS),
    _spec("imageSegmentation", ("image",),
          {"imageEncoder", "universalLayers"}, LOGITS),
    _spec("textClassification", ("text",),
          {"textEncoder", "universalLayers"}, LOGITS),
    _spec("textQuestionAnswering", ("text",),
          {"textEncoder", "universalLayers"}, LOGITS),
    _spec("textSummarization", ("text",),
          {"textEncoder", "universalLayers", "textDecoder"}, GENERATED, "textDecoder"),
]}

INSTRUCTION_TEXT = {
    "videoCaptioning": "what does the video describe ?",
    "imageCaptioning": "what does the image describe ?",
    "videoQuestionAnswering": "answer the question about the video :",
    "imageQuestionAnswering": "answer the question about the image :",
    "textSummarization": "summarize the text :",
    "visualGrounding": "locate the phrase :",
}


@dataclass
class ModuleGraph:
    task: TaskSpec
    wiring: list = field(default_factory=list)
    head: str = ""

    @property
    def modules(self) -> frozenset:
        return self.task.modules

    def render(self) -> str:
        """Stable line-oriented text form (golden-file target)."""
        lines = [f"task: {self.task.task_id}",
                 f"inputs: {', '.join(self.task.inputs)}",
                 f"modules: {', '.join(m for m in MODULE_NAMES if m in self.task.modules)}",
                 "wiring:"]
        lines += [f"  {w}" for w in self.wiring]
        lines.append(f"head: {self.head}")
        return "\n".join(lines) + "\n"


def compose_task(task_id: str) -> ModuleGraph:
    """The module graph realizing one task row."""
    if task_id not in TASK_TABLE:
        raise ContractError(
            f"unknown task '{task_id}'; valid tasks: {', '.join(sorted(TASK_TABLE))}")
    spec = TASK_TABLE[task_id]
    wiring = []
    vis_enc = "videoEncoder" if "video" in spec.inputs else "imageEncoder"
    has_vision = "image" in spec.inputs or "video" in spec.inputs
    has_text = "text" in spec.inputs
    if has_vision:
        wiring.append(f"{vis_enc}(frames) -> VN")
    if has_text:
        wiring.append("textEncoder(tokens) -> WM")
    uni_args = ", ".join(p for p, ok in (("VN", has_vision), ("WM", has_text)) if ok)
    uni_outs = ", ".join(p for p, ok in (("VS", has_vision), ("WS", has_text)) if ok)
    wiring.append(f"universalLayers({uni_args}) -> {uni_outs}")
    if "fusion" in spec.modules:
        wiring.append("combine(VN, WM, VS, WS) -> TAV, VAT")
        wiring.append("fusion(VAT, TAV) -> MM")
    if spec.output == SIMILARITY:
        wiring.append("similarity(project(VS), project(WS)) -> scores")
        head = "retrieval(projected summaries, match re-score on pairs)"
    elif spec.output == GENERATED:
        if spec.task_id == "textSummarization":
            wiring.append(f"{spec.decoder_tag}(context=[WS]) -> tokens")
        else:
            wiring.append(f"{spec.decoder_tag}(context=[MM, TAV]) -> tokens")
        head = "generator(beam search over vocabulary)"
        if spec.task_id == "visualGrounding":
            head = "generator(beam search over coordinate tokens)"
    else:
        if spec.task_id in ("imageDetection", "imageSegmentation"):
            wiring.append("patchHead(combine(VN, VS)) -> logits per patch")
            head = "patch classifier (stand-in)"
        elif has_vision:
            wiring.append("classifier(mean(VS)) -> logits")
            head = "class logits over concepts"
        else:
            wiring.append("classifier(WS[0]) -> logits")
            head = "class logits over concepts"
    return ModuleGraph(spec, wiring, head)


def instruction_for(task_id: str, instructions_enabled: bool, vocab: Vocabulary) -> list[int]:
    """Per-task instruction prefix token ids; empty when disabled or when the
    task has no generation surface."""
    if task_id not in TASK_TABLE:
        raise ContractError(
            f"unknown task '{task_id}'; valid tasks: {', '.join(sorted(TASK_TABLE))}")
    if not instructions_enabled:
        return []
    text = INSTRUCTION_TEXT.get(task_id)
    return vocab.encode(text) if text else []


@dataclass
class TaskOutput:
    kind: str
    similarity: np.ndarray | None = None
    match_scores: np.ndarray | None = None
    tokens: list | None = None
    logits: np.ndarray | None = None


def _require(condition: bool, message: str):
    if not condition:
        raise ContractError(message)


def forward_task(model: MultimodalModel, graph: ModuleGraph, batch,
                 instructions_enabled: bool | None = None) -> TaskOutput:
    """Run one composed forward pass.

    batch: for retrieval, a list of samples; for everything else one sample.
    Deterministic given parameters (generation is beam search, no sampling).
    """
    spec = graph.task
    enabled = model.cfg.instructions_enabled if instructions_enabled is None else instructions_enabled
    vocab = model.vocab
    prefix = instruction_for(spec.task_id, enabled, vocab)
    is_video = "video" in spec.inputs

    with no_grad():
        if spec.output == SIMILARITY:
            _require(isinstance(batch, (list, tuple)) and len(batch) >= 1,
                     f"{spec.task_id} needs a list of samples")
            for s in batch:
                _require(s.is_video == is_video,
                         f"{spec.task_id} expects {'video' if is_video else 'image'} samples")
            v_rows, t_rows, match = [], [], []
            pairs = []
            for s in batch:
                vn = model.encode_vision(s.frames, s.is_video)
                wm = model.encode_text(s.caption)
                v_rows.append(model.path.head.embed_vision(model.vision_summary(vn)).data[0])
                t_rows.append(model.path.head.embed_text(model.text_summary(wm)).data[0])
                pairs.append((vn, wm))
            # match re-scoring of the aligned pairs exercises the fusion route
            for vn, wm in pairs:
                mm, _ = model.fused_features(vn, wm)
                logits = model.match_head(mm[0].reshape(1, -1))
                probs = T.softmax_lastdim(logits).data[0]
                match.append(probs[1])
            sim = np.asarray(v_rows) @ np.asarray(t_rows).T
            return TaskOutput(SIMILARITY, similarity=sim, match_scores=np.asarray(match))

        sample = batch
        _require(not isinstance(sample, (list, tuple)),
                 f"{spec.task_id} takes a single sample")

        if spec.output == GENERATED:
            if spec.task_id == "textSummarization":
                wm = model.encode_text(sample.caption)
                _, ws = model.run_universal(wm=wm)
                context = ContextBundle([("text", ws)])
                tokens = model.generate(context, prefix, spec.decoder_tag)
                return TaskOutput(GENERATED, tokens=tokens)
            _require(sample.is_video == is_video,
                     f"{spec.task_id} expects {'video' if is_video else 'image'} input")
            if spec.task_id in ("videoQuestionAnswering", "imageQuestionAnswering"):
                text_in = sample.question
            elif spec.task_id == "visualGrounding":
                text_in = sample.caption
            else:
                text_in = prefix  # captioning: the instruction is the only text
            vn = model.encode_vision(sample.frames, sample.is_video)
            wm = model.encode_text(text_in)
            mm, tav = model.fused_features(vn, wm)
            context = ContextBundle([("fused", mm), ("vision", tav)])
            allowed = vocab.coord_tokens() if spec.task_id == "visualGrounding" else None
            tokens = model.generate(context, prefix, spec.decoder_tag, allowed_tokens=allowed)
            return TaskOutput(GENERATED, tokens=tokens)

        # class-logit tasks
        if spec.task_id in ("imageClassification", "videoClassification"):
            _require(sample.is_video == is_video,
                     f"{spec.task_id} expects {'video' if is_video else 'image'} input")
            vn = model.encode_vision(sample.frames, sample.is_video)
            pooled = model.vision_summary(vn)
            return TaskOutput(LOGITS, logits=model.cls_head(pooled).data[0])
        if spec.task_id in ("imageDetection", "imageSegmentation"):
            _require(not sample.is_video, f"{spec.task_id} expects an image sample")
            vn = model.encode_vision(sample.frames, is_video=False)
            vs, _ = model.run_universal(vn=vn)
            patch_features, _ = model.combine(vn, None, vs, None)
            logits = model.patch_head(patch_features)
            # drop the per-frame summary rows: patch-level output only
            L = (model.cfg.image_size // model.cfg.patch_size) ** 2 + 1
            rows = [t * L + p for t in range(sample.frames.shape[0]) for p in range(1, L)]
            return TaskOutput(LOGITS, logits=logits.data[rows])
        # text-only classification / QA
        wm = model.encode_text(sample.caption)
        summary = model.text_summary(wm)
        return TaskOutput(LOGITS, logits=model.cls_head(summary).data[0])
