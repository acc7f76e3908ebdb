"""Training/model configuration: JSON in, validated dataclass out.

Unknown keys are rejected rather than ignored so typos cannot silently
change a run. Reference-scale values from the original recipe (queue 65536,
momentum 0.995, 224px/16px patches, 12 decoder layers, ...) stay expressible
through the same fields; the defaults here are desk-scale.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError

TEMPORAL_VARIANTS = ("localTemporal", "temporalConvolution", "temporalSelfAttention")


@dataclass
class TrainConfig:
    seed: int = 0
    # model dims
    dim: int = 16                   # shared channel width C
    heads: int = 2
    vision_layers: int = 2          # dual-vision encoder depth (reference: 12/24)
    text_layers: int = 2            # text encoder depth (reference: 12/24)
    universal_layers: int = 2       # shared layers S (reference: 2)
    fusion_layers: int = 2          # reference: 3 base / 6 large
    decoder_layers: int = 2         # reference: 12
    num_queries: int = 8            # compressed visual token count k
    groups: int | None = None       # temporal groups G; None means one per channel
    kernel_size: int = 3            # temporal kernel length K
    frames: int = 4                 # video frame count T (reference: 4)
    patch_size: int = 8             # reference: 16
    image_size: int = 16            # reference: 224
    channels: int = 1
    proj_dim: int = 16              # contrastive projection width
    max_text_len: int = 32
    temporal_variant: str = "localTemporal"
    # synthetic corpus
    corpus_seed: int = 0
    num_concepts: int = 32
    samples_per_split: int = 192
    noise_sigma: float = 0.1
    # objectives
    mask_rate: float = 0.15         # reference: 0.15
    queue_size: int = 8             # reference: 65536
    momentum: float = 0.9           # reference: 0.995
    tau_init: float = 0.5           # reference: 0.07 at high embedding dim
    loss_weights: tuple = (1.0, 1.0, 1.0)  # (mlm, vlc+vlm, instruction LM)
    # optimizer and schedule
    lr: float = 3e-3
    beta1: float = 0.9              # reference: 0.9
    beta2: float = 0.98             # reference: 0.98
    eps: float = 1e-8
    weight_decay: float = 0.02      # reference: 0.02
    warmup_steps: int = 20          # reference: 5000
    total_steps: int = 200
    batch_size: int = 8
    instructions_enabled: bool = True
    # evaluation and generation
    eval_interval: int = 50
    eval_pairs: int = 32
    beam_size: int = 5              # reference: 5
    max_gen_len: int = 25           # reference: 25

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} must be divisible by heads {self.heads}")
        groups = self.dim if self.groups is None else self.groups
        if self.dim % groups != 0:
            raise ConfigError(f"groups {groups} must divide dim {self.dim}")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.universal_layers < 0:
            raise ConfigError("universal_layers must be >= 0")
        for name in ("vision_layers", "text_layers", "fusion_layers", "decoder_layers",
                     "num_queries", "frames", "batch_size", "total_steps", "queue_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.temporal_variant not in TEMPORAL_VARIANTS:
            raise ConfigError(f"temporal_variant must be one of {TEMPORAL_VARIANTS}")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ConfigError(f"mask_rate must be in [0, 1], got {self.mask_rate}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError(f"momentum must be in [0, 1], got {self.momentum}")
        if self.num_concepts < 2:
            raise ConfigError("num_concepts must be >= 2")
        if len(tuple(self.loss_weights)) != 3:
            raise ConfigError("loss_weights must have exactly 3 entries")
        self.loss_weights = tuple(float(w) for w in self.loss_weights)

    @property
    def effective_groups(self) -> int:
        return self.dim if self.groups is None else self.groups

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "loss_weights" in data:
            data = dict(data)
            data["loss_weights"] = tuple(data["loss_weights"])
        return cls(**data)

    @classmethod
    def from_json(cls, path: str, overrides: dict | None = None) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if overrides:
            data.update(overrides)
        return cls.from_dict(data)

    def to_json(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
