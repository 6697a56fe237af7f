"""Deterministic, exactly invertible toy video codec.

Geometry: a (T, H, W, 3) clip maps to a (T/4, H/16, W/16, 3072) latent via
4x temporal and 16x spatial space-to-depth followed by a fixed orthogonal
channel mixing (sign flips, a permutation and a stack of Householder
reflections, all derived from a fixed seed). Single images use the
spatial-only variant with 768 channels. The transform is linear and
volume-preserving, so encode/decode round-trips are exact up to float64
accumulation.

Latent files are raw little-endian float32 with a 32-byte header:
    bytes 0..3   magic b"VVTL"
    bytes 4..27  six little-endian uint32: version, t, h, w, c, stream id
    bytes 28..31 zero padding
followed by the (t, h, w, c) array in C order. Stream ids: video=0, image=1,
pose=2, mask=3.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng

TEMPORAL_FACTOR = 4
SPATIAL_FACTOR = 16
VIDEO_CHANNELS = 3 * TEMPORAL_FACTOR * SPATIAL_FACTOR * SPATIAL_FACTOR  # 3072
IMAGE_CHANNELS = 3 * SPATIAL_FACTOR * SPATIAL_FACTOR  # 768

_MIXING_SEED = 0xC0DEC
_NUM_REFLECTIONS = 16

_MAGIC = b"VVTL"
_HEADER = struct.Struct("<4sIIIIII")
_VERSION = 1
STREAM_IDS = {"video": 0, "image": 1, "pose": 2, "mask": 3}
_STREAM_NAMES = {v: k for k, v in STREAM_IDS.items()}


@dataclass(frozen=True)
class LatentVideo:
    """Latent grid (t, h, w, c), float64."""

    data: np.ndarray
    stream: str = "video"

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4:
            raise ValueError(f"latent must be (t, h, w, c), got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("latent contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def channels(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class TokenSequence:
    """Flat token list with its stream tag and grid coordinates per token."""

    tokens: np.ndarray  # (l, c)
    stream: str
    index_map: np.ndarray = field(default=None)  # (l, 3) int64

    def __post_init__(self) -> None:
        tokens = np.asarray(self.tokens, dtype=np.float64)
        if tokens.ndim != 2:
            raise ValueError(f"tokens must be (l, c), got shape {tokens.shape}")
        index_map = self.index_map
        if index_map is None:
            index_map = np.zeros((tokens.shape[0], 3), dtype=np.int64)
        index_map = np.asarray(index_map, dtype=np.int64)
        if index_map.shape != (tokens.shape[0], 3):
            raise ValueError("index_map must be (l, 3)")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "index_map", index_map)

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]


def cache_dir() -> Path:
    """VVTON_CACHE_DIR is the only environment variable the package reads."""
    import os

    return Path(os.environ.get("VVTON_CACHE_DIR", Path.home() / ".cache" / "vvton"))


class _OrthogonalMixer:
    """Fixed orthogonal channel map: signs, permutation, Householder stack."""

    def __init__(self, channels: int, seed: int = _MIXING_SEED):
        self.channels = channels
        cached = cache_dir() / f"mixer-{seed}-{channels}-{_NUM_REFLECTIONS}.npz"
        if cached.exists():
            data = np.load(cached)
            self.perm = data["perm"]
            self.signs = data["signs"]
            self.vectors = data["vectors"]
        else:
            gen = rng.stream("codec-mixing", seed, channels)
            self.perm = gen.permutation(channels)
            self.signs = np.where(gen.random(channels) < 0.5, -1.0, 1.0)
            vecs = gen.standard_normal((_NUM_REFLECTIONS, channels))
            self.vectors = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
            try:
                cached.parent.mkdir(parents=True, exist_ok=True)
                np.savez(cached, perm=self.perm, signs=self.signs, vectors=self.vectors)
            except OSError:
                pass  # cache is best effort
        self.inv_perm = np.argsort(self.perm)

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = x[:, self.perm] * self.signs
        for v in self.vectors:
            y = y - 2.0 * np.outer(y @ v, v)
        return y

    def invert(self, y: np.ndarray) -> np.ndarray:
        x = y.copy()
        for v in self.vectors[::-1]:
            x = x - 2.0 * np.outer(x @ v, v)
        return (x * self.signs)[:, self.inv_perm]


@lru_cache(maxsize=8)
def _mixer(channels: int) -> _OrthogonalMixer:
    return _OrthogonalMixer(channels)


def _check_divisible(name: str, value: int, factor: int) -> None:
    if value % factor != 0:
        raise ValueError(f"{name}={value} not divisible by {factor}")


def encode_video(video: np.ndarray, *, keep_channels: int = 0) -> LatentVideo:
    """Compress a (T, H, W, 3) clip to its (T/4, H/16, W/16, c) latent.

    `keep_channels` > 0 truncates the mixed channels (lossy); the default 0
    keeps the codec an exact bijection.
    """
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4 or video.shape[3] != 3:
        raise ValueError(f"video must be (T, H, W, 3), got shape {video.shape}")
    frames, height, width = video.shape[:3]
    _check_divisible("T", frames, TEMPORAL_FACTOR)
    _check_divisible("H", height, SPATIAL_FACTOR)
    _check_divisible("W", width, SPATIAL_FACTOR)
    t = frames // TEMPORAL_FACTOR
    h = height // SPATIAL_FACTOR
    w = width // SPATIAL_FACTOR

    cells = video.reshape(t, TEMPORAL_FACTOR, h, SPATIAL_FACTOR, w, SPATIAL_FACTOR, 3)
    cells = cells.transpose(0, 2, 4, 1, 3, 5, 6).reshape(t * h * w, VIDEO_CHANNELS)
    mixed = _mixer(VIDEO_CHANNELS).apply(cells)
    if keep_channels:
        mixed = mixed[:, :keep_channels]
    return LatentVideo(mixed.reshape(t, h, w, mixed.shape[1]), stream="video")


def decode_video(latent: LatentVideo) -> np.ndarray:
    """Exact inverse of encode_video (zero-padding truncated channels)."""
    t, h, w = latent.grid
    c = latent.channels
    flat = latent.data.reshape(t * h * w, c)
    if c < VIDEO_CHANNELS:
        flat = np.concatenate(
            [flat, np.zeros((flat.shape[0], VIDEO_CHANNELS - c))], axis=1
        )
    elif c != VIDEO_CHANNELS:
        raise ValueError(f"latent has {c} channels, expected <= {VIDEO_CHANNELS}")
    cells = _mixer(VIDEO_CHANNELS).invert(flat)
    cells = cells.reshape(t, h, w, TEMPORAL_FACTOR, SPATIAL_FACTOR, SPATIAL_FACTOR, 3)
    return cells.transpose(0, 3, 1, 4, 2, 5, 6).reshape(
        t * TEMPORAL_FACTOR, h * SPATIAL_FACTOR, w * SPATIAL_FACTOR, 3
    )


def encode_image(image: np.ndarray) -> LatentVideo:
    """Single-frame spatial-only encode: (H, W, 3) -> (1, h, w, 768)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got shape {image.shape}")
    height, width = image.shape[:2]
    _check_divisible("H", height, SPATIAL_FACTOR)
    _check_divisible("W", width, SPATIAL_FACTOR)
    h = height // SPATIAL_FACTOR
    w = width // SPATIAL_FACTOR
    cells = image.reshape(h, SPATIAL_FACTOR, w, SPATIAL_FACTOR, 3)
    cells = cells.transpose(0, 2, 1, 3, 4).reshape(h * w, IMAGE_CHANNELS)
    mixed = _mixer(IMAGE_CHANNELS).apply(cells)
    return LatentVideo(mixed.reshape(1, h, w, IMAGE_CHANNELS), stream="image")


def decode_image(latent: LatentVideo) -> np.ndarray:
    t, h, w = latent.grid
    if t != 1 or latent.channels != IMAGE_CHANNELS:
        raise ValueError("expected a (1, h, w, 768) image latent")
    flat = latent.data.reshape(h * w, IMAGE_CHANNELS)
    cells = _mixer(IMAGE_CHANNELS).invert(flat)
    cells = cells.reshape(h, w, SPATIAL_FACTOR, SPATIAL_FACTOR, 3)
    return cells.transpose(0, 2, 1, 3, 4).reshape(
        h * SPATIAL_FACTOR, w * SPATIAL_FACTOR, 3
    )


def patchify(latent: LatentVideo) -> TokenSequence:
    """Row-major (t, then h, then w) flattening into l = t*h*w tokens."""
    t, h, w = latent.grid
    tokens = latent.data.reshape(t * h * w, latent.channels)
    ti, hi, wi = np.unravel_index(np.arange(t * h * w), (t, h, w))
    index_map = np.stack([ti, hi, wi], axis=1).astype(np.int64)
    return TokenSequence(tokens=tokens, stream=latent.stream, index_map=index_map)


def unpatchify(tokens: TokenSequence) -> LatentVideo:
    """Exact inverse of patchify; validates the canonical token order."""
    if len(tokens) == 0:
        raise ValueError("cannot unpatchify an empty token sequence")
    grid = tuple(int(v) + 1 for v in tokens.index_map.max(axis=0))
    t, h, w = grid
    if t * h * w != len(tokens):
        raise ValueError("index_map is not a bijection onto a full grid")
    ti, hi, wi = np.unravel_index(np.arange(t * h * w), grid)
    expected = np.stack([ti, hi, wi], axis=1)
    if not np.array_equal(tokens.index_map, expected):
        raise ValueError("tokens are not in canonical row-major order")
    return LatentVideo(
        tokens.tokens.reshape(t, h, w, tokens.channels), stream=tokens.stream
    )


def encode_keyframes(images: Sequence[np.ndarray]) -> TokenSequence:
    """Encode k keyframes frame by frame into an image-stream token sequence.

    l_i = k * h * w; the index map stores (keyframe, h, w). k = 0 yields an
    empty sequence (text/pose-only conditioning).
    """
    if len(images) == 0:
        return TokenSequence(
            tokens=np.zeros((0, IMAGE_CHANNELS)),
            stream="image",
            index_map=np.zeros((0, 3), dtype=np.int64),
        )
    shapes = {np.asarray(img).shape for img in images}
    if len(shapes) != 1:
        raise ValueError(f"keyframes have mixed resolutions: {sorted(shapes)}")
    token_blocks = []
    map_blocks = []
    for k, img in enumerate(images):
        latent = encode_image(img)
        seq = patchify(latent)
        index_map = seq.index_map.copy()
        index_map[:, 0] = k
        token_blocks.append(seq.tokens)
        map_blocks.append(index_map)
    return TokenSequence(
        tokens=np.concatenate(token_blocks, axis=0),
        stream="image",
        index_map=np.concatenate(map_blocks, axis=0),
    )


def resize_mask_to_latent(mask: np.ndarray) -> np.ndarray:
    """Any-reduction of a (T, H, W) binary mask onto the (t, h, w) grid.

    A latent cell is masked if any pixel of its 4x16x16 block is masked.
    """
    mask = np.asarray(mask)
    if mask.ndim != 3:
        raise ValueError(f"mask must be (T, H, W), got shape {mask.shape}")
    frames, height, width = mask.shape
    _check_divisible("T", frames, TEMPORAL_FACTOR)
    _check_divisible("H", height, SPATIAL_FACTOR)
    _check_divisible("W", width, SPATIAL_FACTOR)
    t = frames // TEMPORAL_FACTOR
    h = height // SPATIAL_FACTOR
    w = width // SPATIAL_FACTOR
    blocks = mask.reshape(t, TEMPORAL_FACTOR, h, SPATIAL_FACTOR, w, SPATIAL_FACTOR)
    return (blocks.max(axis=(1, 3, 5)) > 0).astype(np.uint8)


def normalize_frames(frames: np.ndarray) -> np.ndarray:
    """uint8 frames -> float64 in [-1, 1]."""
    return np.asarray(frames, dtype=np.float64) / 127.5 - 1.0


def denormalize_frames(video: np.ndarray) -> np.ndarray:
    """[-1, 1] float -> uint8 with clipping."""
    return np.clip((np.asarray(video) + 1.0) * 127.5, 0, 255).round().astype(np.uint8)


def save_latent(latent: LatentVideo, path: str | Path) -> None:
    t, h, w = latent.grid
    header = _HEADER.pack(
        _MAGIC, _VERSION, t, h, w, latent.channels, STREAM_IDS[latent.stream]
    )
    payload = latent.data.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header + b"\x00" * (32 - _HEADER.size) + payload)


def load_latent(path: str | Path) -> LatentVideo:
    raw = Path(path).read_bytes()
    magic, version, t, h, w, c, stream_id = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a latent file (magic {magic!r})")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported latent version {version}")
    data = np.frombuffer(raw, dtype="<f4", offset=32).reshape(t, h, w, c)
    return LatentVideo(data.astype(np.float64), stream=_STREAM_NAMES[stream_id])
