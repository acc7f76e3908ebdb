"""Synthetic vision-language corpus.

Each sample carries a latent concept id. Frames encode the concept through
per-patch pixel means (plus Gaussian noise), the caption mentions the
concept's word exactly once, and the question/answer pair asks for that
word. Generation is fully determined by the seed; per-sample RNG streams are
derived from (seed, split, index) so ordering and sharding cannot change the
output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

PAD, CLS, BOS, EOS, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = {"[PAD]": PAD, "[CLS]": CLS, "[BOS]": BOS, "[EOS]": EOS, "[MASK]": MASK}

_BASE_WORDS = [
    "a", "picture", "of", "the", "is", "shown", "here", "clip", "shows",
    "appears", "what", "does", "video", "image", "describe", "?", "answer",
    "question", "about", ":", "summarize", "text", "locate", "phrase", "thing",
]

# every template opens with the same word so caption-mode and answer-mode
# first tokens are disjoint and task ambiguity is real when instruction
# prefixes are disabled
CAPTION_TEMPLATES = [
    "the {c} is shown here",
    "the {c} appears here",
    "the picture shows a {c}",
    "the clip shows a {c}",
]

QUESTION_TEXT = "what thing is shown ?"

NUM_COORD_BINS = 100


class Vocabulary:
    """Word-level vocabulary: specials, template words, concept words, and
    coordinate-bin tokens for grounding output."""

    def __init__(self, num_concepts: int):
        self.num_concepts = num_concepts
        self.id_to_word = ["[PAD]", "[CLS]", "[BOS]", "[EOS]", "[MASK]"]
        self.id_to_word += _BASE_WORDS
        self.concept_offset = len(self.id_to_word)
        self.id_to_word += [f"obj{i}" for i in range(num_concepts)]
        self.coord_offset = len(self.id_to_word)
        self.id_to_word += [f"loc{i}" for i in range(NUM_COORD_BINS)]
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        self.special_ids = frozenset(SPECIAL_TOKENS.values())

    @property
    def size(self) -> int:
        return len(self.id_to_word)

    def encode(self, text: str) -> list[int]:
        ids = []
        for word in text.split():
            if word not in self.word_to_id:
                raise ContractError(f"word '{word}' not in vocabulary")
            ids.append(self.word_to_id[word])
        return ids

    def decode(self, ids) -> str:
        return " ".join(self.id_to_word[i] for i in ids)

    def concept_token(self, concept: int) -> int:
        return self.concept_offset + concept

    def coord_tokens(self) -> list[int]:
        return list(range(self.coord_offset, self.coord_offset + NUM_COORD_BINS))


@dataclass
class Sample:
    concept: int
    is_video: bool
    frames: np.ndarray          # (T, H, W, ch); T == 1 for images
    caption: list[int]
    question: list[int]
    answer: list[int]           # single concept token
    split: str
    index: int


@dataclass
class SyntheticCorpus:
    seed: int
    num_concepts: int
    noise_sigma: float
    vocab: Vocabulary
    train: list[Sample]
    eval: list[Sample]


def _concept_signature(seed: int, concept: int, image_size: int, max_frames: int):
    """Per-pixel pattern plus a temporal amplitude profile; both fully
    determined by (seed, concept), so patch statistics encode the concept."""
    rng = np.random.default_rng([seed, 7919, concept])
    base = rng.normal(0.0, 1.0, size=(image_size, image_size))
    temporal = rng.uniform(0.5, 1.5, size=max_frames)
    temporal[0] = 1.0
    return base, temporal


def _render_frames(base, temporal, frames, image_size, channels, sigma, rng):
    out = np.zeros((frames, image_size, image_size, channels))
    for t in range(frames):
        noise = rng.normal(0.0, sigma, size=(image_size, image_size, channels)) if sigma > 0 else 0.0
        out[t] = (base * temporal[t])[:, :, None] + noise
    return out


def generate_corpus(seed: int, num_concepts: int, samples_per_split: int,
                    noise_sigma: float, image_size: int = 16, patch_size: int = 8,
                    channels: int = 1, frames: int = 4) -> SyntheticCorpus:
    """Balanced, seeded corpus with both image-text and video-text samples."""
    if num_concepts < 2:
        raise ConfigError(f"need at least 2 concepts, got {num_concepts}")
    vocab = Vocabulary(num_concepts)
    signatures = [_concept_signature(seed, z, image_size, frames) for z in range(num_concepts)]
    question = vocab.encode(QUESTION_TEXT)

    def build_split(split: str, split_idx: int) -> list[Sample]:
        samples = []
        for i in range(samples_per_split):
            rng = np.random.default_rng([seed, split_idx, i])
            concept = i % num_concepts
            is_video = i % 2 == 1
            base, temporal = signatures[concept]
            t = frames if is_video else 1
            pixels = _render_frames(base, temporal, t, image_size, channels,
                                    noise_sigma, rng)
            template = CAPTION_TEMPLATES[int(rng.integers(0, len(CAPTION_TEMPLATES)))]
            caption = vocab.encode(template.format(c=f"obj{concept}"))
            samples.append(Sample(
                concept=concept,
                is_video=is_video,
                frames=pixels,
                caption=caption,
                question=list(question),
                answer=[vocab.concept_token(concept)],
                split=split,
                index=i,
            ))
        return samples

    return SyntheticCorpus(
        seed=seed,
        num_concepts=num_concepts,
        noise_sigma=noise_sigma,
        vocab=vocab,
        train=build_split("train", 0),
        eval=build_split("eval", 1),
    )


def corpus_from_config(cfg) -> SyntheticCorpus:
    return generate_corpus(cfg.corpus_seed, cfg.num_concepts, cfg.samples_per_split,
                           cfg.noise_sigma, cfg.image_size, cfg.patch_size,
                           cfg.channels, cfg.frames)


def save_corpus(corpus: SyntheticCorpus, path: str):
    """Single JSON file; float lists round-trip exactly via repr."""
    def sample_dict(s: Sample) -> dict:
        return {
            "concept": s.concept,
            "is_video": s.is_video,
            "frames": s.frames.tolist(),
            "caption": s.caption,
            "question": s.question,
            "answer": s.answer,
            "split": s.split,
            "index": s.index,
        }

    doc = {
        "seed": corpus.seed,
        "num_concepts": corpus.num_concepts,
        "noise_sigma": corpus.noise_sigma,
        "train": [sample_dict(s) for s in corpus.train],
        "eval": [sample_dict(s) for s in corpus.eval],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_corpus(path: str) -> SyntheticCorpus:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    vocab = Vocabulary(doc["num_concepts"])

    def to_sample(d: dict) -> Sample:
        return Sample(
            concept=d["concept"],
            is_video=d["is_video"],
            frames=np.asarray(d["frames"], dtype=np.float64),
            caption=list(d["caption"]),
            question=list(d["question"]),
            answer=list(d["answer"]),
            split=d["split"],
            index=d["index"],
        )

    return SyntheticCorpus(
        seed=doc["seed"],
        num_concepts=doc["num_concepts"],
        noise_sigma=doc["noise_sigma"],
        vocab=vocab,
        train=[to_sample(d) for d in doc["train"]],
        eval=[to_sample(d) for d in doc["eval"]],
    )
