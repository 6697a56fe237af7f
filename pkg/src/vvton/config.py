"""Pipeline configuration: one human-editable YAML file drives every stage.

Every artifact a run produces embeds the config hash (sha256 over the
canonical JSON form of the config) so stages and evaluations can refuse to
mix artifacts from different configurations.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import codec
from .engine import DEFAULT_TASK_PROBABILITIES, TASKS


@dataclass
class PathsConfig:
    frames_dir: str = ""
    skeletons: str = ""
    bboxes: str = ""
    garment: str = ""
    garment_mask: str = ""
    garment_description: str = ""
    caption: str = ""
    anchor: str = ""  # empty -> packaged frontal A-pose fixture
    run_dir: str = "run"


@dataclass
class VideoConfig:
    frames: int = 16
    # Expected crop resolution; 0 derives it from the tracking windows.
    height: int = 0
    width: int = 0


@dataclass
class KeyframeConfig:
    k: int = 2
    lam: float = 0.3
    alpha: float = 0.2


@dataclass
class PoseConfig:
    confidence_threshold: float = 0.3
    dilation_radius: float = 12.0
    garment_scope: str = "full"
    padding_ratio: float = 0.1
    agnostic_fill: int = 128
    garment_resolution: list[int] = field(default_factory=lambda: [256, 256])
    skeleton_map_radius: float = 2.0


@dataclass
class PoseGuiderConfig:
    channels: int = 4
    window: int = 2


@dataclass
class TextConfig:
    max_tokens: int = 32
    channels: int = 32


@dataclass
class CodecConfig:
    keep_channels: int = 0  # 0 = no truncation (exact bijection)


@dataclass
class StageModelConfig:
    dim: int = 64
    heads: int = 4
    blocks: int = 2
    ff_mult: int = 4
    lora_rank: int = 4
    lora_alpha: float = 64.0
    proj_gain: float = 64.0
    time_dim: int = 32


@dataclass
class Stage1Config:
    model: StageModelConfig = field(default_factory=StageModelConfig)
    steps: int = 50
    cfg_scale: float = 2.5
    seed: int = 42
    best_of: int = 3


@dataclass
class TrainSection:
    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    grad_clip_norm: float = 1.0
    task_probabilities: dict = field(
        default_factory=lambda: dict(DEFAULT_TASK_PROBABILITIES)
    )
    steps: int = 500
    seed: int = 0


@dataclass
class SampleSection:
    steps: int = 50
    cfg_scale: float = 2.5
    seed: int = 42


@dataclass
class Stage2Config:
    model: StageModelConfig = field(default_factory=StageModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    sample: SampleSection = field(default_factory=SampleSection)
    segment_frames: int = 16
    checkpoint: str = ""  # optional; empty -> seeded init


@dataclass
class FusionConfig:
    levels: int = 4


@dataclass
class EvalConfig:
    feature_plugin: str = "builtin"
    mode: str = "paired"


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    video: VideoConfig = field(default_factory=VideoConfig)
    keyframes: KeyframeConfig = field(default_factory=KeyframeConfig)
    pose: PoseConfig = field(default_factory=PoseConfig)
    pose_guider: PoseGuiderConfig = field(default_factory=PoseGuiderConfig)
    text: TextConfig = field(default_factory=TextConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def latent_channels(self) -> int:
        keep = self.codec.keep_channels
        return keep if keep else codec.VIDEO_CHANNELS

    @property
    def video_in_channels(self) -> int:
        return 2 * self.latent_channels + 1 + self.pose_guider.channels


def _build(cls, doc):
    """Recursively construct a dataclass from a plain dict, keeping defaults
    for absent keys and rejecting unknown ones."""
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ValueError(f"expected a mapping for {cls.__name__}, got {type(doc).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys in {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in doc:
            continue
        value = doc[name]
        if dataclasses.is_dataclass(f.type) or (
            isinstance(f.type, str) and f.type[0].isupper()
        ):
            inner = f.type if dataclasses.is_dataclass(f.type) else globals()[f.type]
            kwargs[name] = _build(inner, value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(doc: dict) -> PipelineConfig:
    return _build(PipelineConfig, doc)


def config_to_dict(config: PipelineConfig) -> dict:
    return dataclasses.asdict(config)


def load_config(path: str | Path) -> PipelineConfig:
    doc = yaml.safe_load(Path(path).read_text())
    return config_from_dict(doc or {})


def save_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(config), sort_keys=False))


def config_hash(config: PipelineConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _check_model(prefix: str, model: StageModelConfig, violations: list[str]) -> None:
    if model.dim < 1 or model.heads < 1 or model.blocks < 1:
        violations.append(f"{prefix}: dim/heads/blocks must be positive")
        return
    if model.dim % model.heads:
        violations.append(f"{prefix}: dim={model.dim} not divisible by heads={model.heads}")
    if model.lora_rank < 0:
        violations.append(f"{prefix}: lora_rank must be >= 0")


def validate_config(config: PipelineConfig) -> list[str]:
    """Cross-module constraint checks; returns violations, never raises."""
    v: list[str] = []
    if config.video.frames < 4 or config.video.frames % codec.TEMPORAL_FACTOR:
        v.append(f"T={config.video.frames} not divisible by {codec.TEMPORAL_FACTOR}")
    if config.video.height and config.video.height % codec.SPATIAL_FACTOR:
        v.append(f"H={config.video.height} not divisible by {codec.SPATIAL_FACTOR}")
    if config.video.width and config.video.width % codec.SPATIAL_FACTOR:
        v.append(f"W={config.video.width} not divisible by {codec.SPATIAL_FACTOR}")

    if config.keyframes.k < 1:
        v.append("keyframes.k must be >= 1")
    if config.keyframes.lam < 0 or config.keyframes.alpha < 0:
        v.append("keyframes.lam and keyframes.alpha must be >= 0")

    if config.pose.dilation_radius <= 0:
        v.append("pose.dilation_radius must be > 0")
    if config.pose.garment_scope not in ("upper", "lower", "full"):
        v.append(f"pose.garment_scope {config.pose.garment_scope!r} unknown")
    if config.pose.padding_ratio < 0:
        v.append("pose.padding_ratio must be >= 0")
    if not 0 <= config.pose.agnostic_fill <= 255:
        v.append("pose.agnostic_fill must be an 8-bit value")
    for dim in config.pose.garment_resolution:
        if dim % codec.SPATIAL_FACTOR:
            v.append(f"garment resolution {dim} not divisible by {codec.SPATIAL_FACTOR}")

    if config.pose_guider.channels < 1:
        v.append("pose_guider.channels must be >= 1")
    if config.pose_guider.window < 0:
        v.append("pose_guider.window must be >= 0")
    if config.text.max_tokens < 1 or config.text.channels < 1:
        v.append("text.max_tokens and text.channels must be >= 1")
    if config.codec.keep_channels < 0 or config.codec.keep_channels > codec.VIDEO_CHANNELS:
        v.append(f"codec.keep_channels outside 0..{codec.VIDEO_CHANNELS}")

    _check_model("stage1.model", config.stage1.model, v)
    _check_model("stage2.model", config.stage2.model, v)
    if config.stage1.best_of < 1:
        v.append("stage1.best_of must be >= 1")
    if config.stage1.steps < 1 or config.stage2.sample.steps < 1:
        v.append("sampling steps must be >= 1")
    if config.stage1.cfg_scale < 0 or config.stage2.sample.cfg_scale < 0:
        v.append("cfg_scale must be >= 0")

    train = config.stage2.train
    for name in ("learning_rate", "weight_decay", "grad_clip_norm"):
        if getattr(train, name) <= 0:
            v.append(f"stage2.train.{name} must be positive")
    total = sum(train.task_probabilities.values())
    if abs(total - 1.0) > 1e-9:
        v.append(f"schedule sums to {total:g}")
    for task, p in train.task_probabilities.items():
        if task not in TASKS:
            v.append(f"unknown training task {task!r}")
        elif not 0.0 <= p <= 1.0:
            v.append(f"task probability {task}={p} outside [0, 1]")

    if config.stage2.segment_frames % codec.TEMPORAL_FACTOR:
        v.append(
            f"segment_frames={config.stage2.segment_frames} not divisible by {codec.TEMPORAL_FACTOR}"
        )
    if config.stage2.segment_frames < 2 * codec.TEMPORAL_FACTOR:
        v.append("segment_frames must cover at least 2 latent slices")

    if config.fusion.levels < 1:
        v.append("fusion.levels must be >= 1")
    if config.eval.mode not in ("paired", "unpaired"):
        v.append(f"eval.mode {config.eval.mode!r} unknown")

    # Channel arithmetic: conditioning concat must be 2c + 1 + c_p wide.
    expected = 2 * config.latent_channels + 1 + config.pose_guider.channels
    if config.video_in_channels != expected:
        v.append("conditioning channel arithmetic broken (2c + 1 + c_p)")
    return v
