"""Flat ``key = value`` configuration covering every tunable default."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .association import AssociationMode
from .dense_net import TrainConfig
from .tracker import TrackerConfig


@dataclass
class EngineConfig:
    score_threshold: float = 0.25
    min_box_area: float = 900.0
    association_mode: str = AssociationMode.TRAPEZIUM.value
    euclidean_max_distance: float = 0.0  # 0 disables the distance cut-off
    rect_instance_source: str = "trapezium"  # or "candidates": moto plus every intersecting rider
    headgear_iou_gate: float = 0.02
    roi_pad: float = 0.10
    amodal_iou_threshold: float = 0.1
    match_iou_threshold: float = 0.5
    # tracker
    min_hits: int = 3
    max_age: int = 30
    iou_gate: float = 0.3
    violation_min_frames: int = 3
    # regressor training
    train_learning_rate: float = 0.001
    train_epochs: int = 200
    train_batch_size: int = 32
    train_lr_decay_factor: float = 10.0
    train_decay_every: int = 0
    train_augment_copies: int = 0
    seed: int = 0

    def __post_init__(self):
        AssociationMode(self.association_mode)
        if self.rect_instance_source not in ("trapezium", "candidates"):
            raise ValueError("rect_instance_source must be 'trapezium' or 'candidates'")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must lie in [0, 1]")
        self.tracker_config()
        self.train_config()

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(self.min_hits, self.max_age, self.iou_gate, self.violation_min_frames)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.train_learning_rate, self.train_epochs, self.train_batch_size, self.seed,
                           self.train_lr_decay_factor, self.train_decay_every)

    def regressor_params(self) -> dict:
        return {"learning_rate": self.train_learning_rate, "epochs": self.train_epochs,
                "batch_size": self.train_batch_size, "lr_decay_factor": self.train_lr_decay_factor,
                "decay_every": self.train_decay_every, "seed": self.seed}

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(raw: str, typ):
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw


def parse_config(text: str, base: EngineConfig | None = None) -> EngineConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    known = {f.name: f.type for f in fields(EngineConfig)}
    values = (base or EngineConfig()).as_dict()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(raw, known[key])
        except ValueError:
            raise ValueError(f"config line {lineno}: bad value {raw!r} for {key}") from None
    return EngineConfig(**values)


def load_config(path=None, **overrides) -> EngineConfig:
    cfg = parse_config(Path(path).read_text()) if path else EngineConfig()
    if overrides:
        cfg = EngineConfig(**{**cfg.as_dict(), **overrides})
    return cfg


def dump_config(cfg: EngineConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.as_dict().items())
