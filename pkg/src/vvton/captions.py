"""Caption schema handling, deterministic toy text encoding, pose latents and
the channel-concatenated conditioning latent.

Captions are three-field JSON documents. The wire keys are ENVIRONMENT /
APPERANCE / MOTION; the second key keeps its original spelling for
compatibility with existing caption files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .codec import LatentVideo, TEMPORAL_FACTOR, SPATIAL_FACTOR

CAPTION_KEYS = ("ENVIRONMENT", "APPERANCE", "MOTION")

DEFAULT_MAX_TEXT_TOKENS = 128
DEFAULT_TEXT_CHANNELS = 64
DEFAULT_POSE_CHANNELS = 4
DEFAULT_POSE_WINDOW = 2
DEFAULT_DROP_PROBABILITY = 0.3


@dataclass(frozen=True)
class CaptionRecord:
    environment: str
    appearance: str
    motion: str


class CaptionParseError(ValueError):
    pass


def parse_caption(json_text: str) -> CaptionRecord:
    """Parse a Listing-style caption document; unknown keys are rejected."""
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise CaptionParseError(f"malformed caption JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaptionParseError("caption document must be a JSON object")
    for key in CAPTION_KEYS:
        if key not in doc:
            raise CaptionParseError(f"caption missing key {key!r}")
    unknown = set(doc) - set(CAPTION_KEYS)
    if unknown:
        raise CaptionParseError(f"caption has unknown keys {sorted(unknown)}")
    return CaptionRecord(
        environment=str(doc["ENVIRONMENT"]),
        appearance=str(doc["APPERANCE"]),
        motion=str(doc["MOTION"]),
    )


def serialize_caption(record: CaptionRecord) -> str:
    return json.dumps(
        {
            "ENVIRONMENT": record.environment,
            "APPERANCE": record.appearance,
            "MOTION": record.motion,
        },
        ensure_ascii=False,
    )


def load_caption(path: str | Path) -> CaptionRecord:
    return parse_caption(Path(path).read_text(encoding="utf-8"))


def save_caption(record: CaptionRecord, path: str | Path) -> None:
    Path(path).write_text(serialize_caption(record), encoding="utf-8")


def swap_appearance(caption: CaptionRecord, garment_description: str) -> CaptionRecord:
    """Replace the appearance field; environment and motion pass through."""
    return CaptionRecord(
        environment=caption.environment,
        appearance=garment_description,
        motion=caption.motion,
    )


def drop_conditions(
    caption: CaptionRecord,
    rng_seed: int,
    p_drop_appearance: float = DEFAULT_DROP_PROBABILITY,
    p_drop_environment: float = DEFAULT_DROP_PROBABILITY,
) -> CaptionRecord:
    """Independently blank appearance/environment with the given
    probabilities; motion is never dropped. Pure function of the seed."""
    for name, p in (("appearance", p_drop_appearance), ("environment", p_drop_environment)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p_drop_{name} must lie in [0, 1], got {p}")
    drop_app = rng.stream("caption-drop", rng_seed, "appearance").random() < p_drop_appearance
    drop_env = rng.stream("caption-drop", rng_seed, "environment").random() < p_drop_environment
    return CaptionRecord(
        environment="" if drop_env else caption.environment,
        appearance="" if drop_app else caption.appearance,
        motion=caption.motion,
    )


@dataclass(frozen=True)
class TextTokens:
    tokens: np.ndarray  # (l_t, c_t) float64

    def __post_init__(self) -> None:
        tokens = np.asarray(self.tokens, dtype=np.float64)
        if tokens.ndim != 2:
            raise ValueError("text tokens must be (l, c)")
        object.__setattr__(self, "tokens", tokens)

    def __len__(self) -> int:
        return self.tokens.shape[0]


def caption_text(caption: CaptionRecord) -> str:
    return " ".join(
        part for part in (caption.environment, caption.appearance, caption.motion) if part
    )


def token_vector(word: str, channels: int) -> np.ndarray:
    """Stable pseudo-random embedding of one word (hash-seeded projection)."""
    gen = rng.stream("text-token", rng.stable_hash64(word))
    return gen.standard_normal(channels) / math.sqrt(channels)


def encode_text(
    caption: CaptionRecord,
    *,
    max_tokens: int = DEFAULT_MAX_TEXT_TOKENS,
    channels: int = DEFAULT_TEXT_CHANNELS,
) -> TextTokens:
    """Whitespace tokenization, hash-seeded projections, pad/truncate to the
    fixed block length. Padding positions carry the all-zero null vector."""
    words = caption_text(caption).split()[:max_tokens]
    block = np.zeros((max_tokens, channels), dtype=np.float64)
    for i, word in enumerate(words):
        block[i] = token_vector(word, channels)
    return TextTokens(block)


def encode_pose_maps(
    skeleton_maps: np.ndarray,
    *,
    channels: int = DEFAULT_POSE_CHANNELS,
    seed: int = 0,
) -> np.ndarray:
    """Per-frame spatial encoder: 16x space-to-depth then a fixed projection.

    (T, H, W) rasters -> (T, h, w, channels) features, no temporal mixing.
    """
    maps = np.asarray(skeleton_maps, dtype=np.float64)
    if maps.ndim != 3:
        raise ValueError(f"skeleton maps must be (T, H, W), got {maps.shape}")
    frames, height, width = maps.shape
    if height % SPATIAL_FACTOR or width % SPATIAL_FACTOR:
        raise ValueError("skeleton map dims must be divisible by 16")
    h = height // SPATIAL_FACTOR
    w = width // SPATIAL_FACTOR
    depth = SPATIAL_FACTOR * SPATIAL_FACTOR
    cells = maps.reshape(frames, h, SPATIAL_FACTOR, w, SPATIAL_FACTOR)
    cells = cells.transpose(0, 1, 3, 2, 4).reshape(frames, h, w, depth)
    proj = rng.stream("pose-guider-proj", seed, channels).standard_normal(
        (depth, channels)
    ) / math.sqrt(depth)
    return cells @ proj


def pose_guider(
    skeleton_maps: np.ndarray,
    window: int = DEFAULT_POSE_WINDOW,
    *,
    channels: int = DEFAULT_POSE_CHANNELS,
    seed: int = 0,
) -> np.ndarray:
    """Frame-wise skeleton maps -> temporally smoothed pose latent (t,h,w,c_p).

    Smoothing is a similarity-weighted average (softmax over feature dot
    products) across a +-window frame neighborhood, followed by 4x temporal
    mean pooling onto the latent grid.
    """
    if window < 0:
        raise ValueError("smoothing window must be >= 0")
    features = encode_pose_maps(skeleton_maps, channels=channels, seed=seed)
    frames = features.shape[0]
    if frames % TEMPORAL_FACTOR:
        raise ValueError(f"T={frames} not divisible by {TEMPORAL_FACTOR}")

    flat = features.reshape(frames, -1)
    dim = flat.shape[1]
    smoothed = np.empty_like(features)
    for i in range(frames):
        lo = max(0, i - window)
        hi = min(frames, i + window + 1)
        logits = flat[lo:hi] @ flat[i] / math.sqrt(dim)
        logits -= logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
        smoothed[i] = np.tensordot(weights, features[lo:hi], axes=(0, 0))

    t = frames // TEMPORAL_FACTOR
    return smoothed.reshape(t, TEMPORAL_FACTOR, *smoothed.shape[1:]).mean(axis=1)


@dataclass(frozen=True)
class ConditioningLatent:
    """Channel concat of agnostic latent, mask, noise latent and pose latent."""

    data: np.ndarray  # (t, h, w, 2c + 1 + c_p)
    latent_channels: int
    pose_channels: int

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    def split(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        c = self.latent_channels
        agnostic = self.data[..., :c]
        mask = self.data[..., c]
        noise = self.data[..., c + 1 : 2 * c + 1]
        pose = self.data[..., 2 * c + 1 :]
        return agnostic, mask, noise, pose


def _as_array(part, name: str) -> np.ndarray:
    if isinstance(part, LatentVideo):
        return part.data
    return np.asarray(part, dtype=np.float64)


def assemble_conditioning(
    agnostic_latent,
    latent_mask,
    noise_latent,
    pose_latent,
) -> ConditioningLatent:
    """Fixed channel order [agnostic | mask | noise | pose]; all parts must
    share the (t, h, w) grid. Channel count is 2c + 1 + c_p."""
    agnostic = _as_array(agnostic_latent, "agnostic_latent")
    noise = _as_array(noise_latent, "noise_latent")
    pose = _as_array(pose_latent, "pose_latent")
    mask = np.asarray(latent_mask, dtype=np.float64)

    grid = agnostic.shape[:3]
    for name, part, ndim in (
        ("latent_mask", mask, 3),
        ("noise_latent", noise, 4),
        ("pose_latent", pose, 4),
    ):
        if part.ndim != ndim:
            raise ValueError(f"{name} must be {ndim}-D, got shape {part.shape}")
        if part.shape[:3] != grid:
            raise ValueError(
                f"{name} grid {part.shape[:3]} does not match agnostic grid {grid}"
            )
    if agnostic.shape[3] != noise.shape[3]:
        raise ValueError(
            f"agnostic channels {agnostic.shape[3]} != noise channels {noise.shape[3]}"
        )
    data = np.concatenate([agnostic, mask[..., None], noise, pose], axis=3)
    return ConditioningLatent(
        data=data,
        latent_channels=agnostic.shape[3],
        pose_channels=pose.shape[3],
    )
