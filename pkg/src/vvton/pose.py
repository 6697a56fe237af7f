"""Pose-driven conditioning inputs: skeletons, tracking crops, agnostic masks,
agnostic images and garment normalization.

Coordinate conventions: joints are (x, y, confidence) in pixel units with the
origin at the top-left corner; a pixel's center sits at its integer
coordinates. Rasters are numpy arrays indexed [row, col] = [y, x].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image

from .geometry import Rect, clamp, round_up_multiple

DEFAULT_CONFIDENCE_THRESHOLD = 0.3
DEFAULT_BONE_EPSILON = 1e-6

GARMENT_SCOPES = ("upper", "lower", "full")


@dataclass(frozen=True)
class Skeleton:
    """Single-frame 2-D pose: (J, 3) array of x, y, confidence."""

    joints: np.ndarray
    frame_width: int
    frame_height: int

    def __post_init__(self) -> None:
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.ndim != 2 or joints.shape[1] != 3:
            raise ValueError(f"joints must be (J, 3), got {joints.shape}")
        conf = joints[:, 2]
        if np.any(conf < 0.0) or np.any(conf > 1.0):
            raise ValueError("joint confidence must lie in [0, 1]")
        object.__setattr__(self, "joints", joints)

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]

    def missing(self, threshold: float = DEFAULT_CONFIDENCE_THRESHOLD) -> np.ndarray:
        """Boolean array, True where a joint is below the confidence cutoff."""
        return self.joints[:, 2] < threshold

    def translate(self, dx: float, dy: float) -> "Skeleton":
        joints = self.joints.copy()
        joints[:, 0] += dx
        joints[:, 1] += dy
        return Skeleton(joints, self.frame_width, self.frame_height)

    def with_frame(self, width: int, height: int) -> "Skeleton":
        return Skeleton(self.joints.copy(), width, height)


@dataclass(frozen=True)
class BoneGraph:
    """Directed bone list (parent joint index, child joint index)."""

    bones: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        for parent, child in self.bones:
            if parent == child:
                raise ValueError(f"self-loop bone ({parent}, {child})")

    def __len__(self) -> int:
        return len(self.bones)

    def validate_for(self, joint_count: int) -> None:
        for parent, child in self.bones:
            if not (0 <= parent < joint_count and 0 <= child < joint_count):
                raise ValueError(
                    f"bone ({parent}, {child}) outside joint range 0..{joint_count - 1}"
                )


# 17-joint COCO-style topology used as the default fixture.
COCO_JOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

_FACE_BONES = ((0, 1), (0, 2), (1, 3), (2, 4), (0, 5), (0, 6))
_UPPER_BONES = ((5, 7), (7, 9), (6, 8), (8, 10), (5, 6), (5, 11), (6, 12), (11, 12))
_LOWER_BONES = ((11, 12), (11, 13), (13, 15), (12, 14), (14, 16))

COCO_BONES = BoneGraph(_FACE_BONES + _UPPER_BONES + _LOWER_BONES[1:])

SCOPE_BONES: dict[str, tuple[tuple[int, int], ...]] = {
    "upper": _UPPER_BONES,
    "lower": _LOWER_BONES,
    "full": _UPPER_BONES + _LOWER_BONES[1:],
}

# Fraction of the subject box height covered by the torso sub-box per scope.
SCOPE_BOX_ROWS = {"upper": (0.0, 0.65), "lower": (0.35, 1.0), "full": (0.0, 1.0)}


@dataclass
class SkeletonSequence:
    frames: list[Skeleton]
    fps: float = 24.0

    def __post_init__(self) -> None:
        if not self.frames:
            raise ValueError("skeleton sequence must contain at least one frame")
        first = self.frames[0]
        for frame in self.frames:
            if frame.joint_count != first.joint_count:
                raise ValueError("all frames must share joint count")
            if (frame.frame_width, frame.frame_height) != (
                first.frame_width,
                first.frame_height,
            ):
                raise ValueError("all frames must share frame dimensions")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_size(self) -> tuple[int, int]:
        return (self.frames[0].frame_width, self.frames[0].frame_height)


def skeleton_sequence_to_json(seq: SkeletonSequence) -> dict:
    width, height = seq.frame_size
    return {
        "fps": seq.fps,
        "width": width,
        "height": height,
        "frames": [{"joints": frame.joints.tolist()} for frame in seq.frames],
    }


def skeleton_sequence_from_json(doc: dict) -> SkeletonSequence:
    width = int(doc["width"])
    height = int(doc["height"])
    frames = [
        Skeleton(np.asarray(entry["joints"], dtype=np.float64), width, height)
        for entry in doc["frames"]
    ]
    return SkeletonSequence(frames, fps=float(doc.get("fps", 24.0)))


def load_skeleton_sequence(path: str | Path) -> SkeletonSequence:
    return skeleton_sequence_from_json(json.loads(Path(path).read_text()))


def save_skeleton_sequence(seq: SkeletonSequence, path: str | Path) -> None:
    Path(path).write_text(json.dumps(skeleton_sequence_to_json(seq)))


class BoneDirections(NamedTuple):
    """Unit direction per bone; `present[i]` False marks a missing bone."""

    vectors: np.ndarray  # (B, 2) float64, rows of missing bones are 0
    present: np.ndarray  # (B,) bool


def compute_joint_directions(
    skeleton: Skeleton,
    bones: BoneGraph,
    *,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    epsilon: float = DEFAULT_BONE_EPSILON,
) -> BoneDirections:
    """Unit vectors parent -> child for every bone of the graph.

    A bone is missing when either endpoint's confidence is below the
    threshold or its length falls under `epsilon` pixels; missing bones are
    reported rather than raised.
    """
    bones.validate_for(skeleton.joint_count)
    missing_joint = skeleton.missing(confidence_threshold)
    pairs = np.asarray(bones.bones, dtype=np.int64)
    deltas = skeleton.joints[pairs[:, 1], :2] - skeleton.joints[pairs[:, 0], :2]
    lengths = np.linalg.norm(deltas, axis=1)
    present = (
        ~missing_joint[pairs[:, 0]] & ~missing_joint[pairs[:, 1]] & (lengths >= epsilon)
    )
    vectors = np.zeros_like(deltas)
    np.divide(deltas, lengths[:, None], out=vectors, where=present[:, None])
    return BoneDirections(vectors=vectors, present=present)


@dataclass
class TrackingWindow:
    """Uniform-size crop rectangle per frame."""

    origins: list[tuple[int, int]]
    width: int
    height: int
    warnings: list[str] = field(default_factory=list)

    def rect(self, frame_index: int) -> Rect:
        x, y = self.origins[frame_index]
        return Rect(x, y, self.width, self.height)

    def __len__(self) -> int:
        return len(self.origins)


def compute_tracking_windows(
    subject_bboxes: Sequence[Rect],
    frame_size: tuple[int, int],
    padding_ratio: float = 0.0,
) -> TrackingWindow:
    """Uniform crop windows centered on the per-frame subject boxes.

    The shared window size is the maximum padded box extent over all frames,
    rounded up to a multiple of 16 so crops stay divisible for the latent
    codec. Origins are clamped into the frame.
    """
    if not subject_bboxes:
        raise ValueError("need at least one subject bbox")
    if padding_ratio < 0:
        raise ValueError("padding_ratio must be >= 0")
    frame_w, frame_h = frame_size
    warnings: list[str] = []

    pad = 1.0 + 2.0 * padding_ratio
    max_w = max(box.w for box in subject_bboxes) * pad
    max_h = max(box.h for box in subject_bboxes) * pad
    width = round_up_multiple(int(np.ceil(max_w)), 16)
    height = round_up_multiple(int(np.ceil(max_h)), 16)

    if width > frame_w:
        clamped = (frame_w // 16) * 16
        if clamped == 0:
            raise ValueError(f"frame width {frame_w} cannot hold a 16px-aligned window")
        warnings.append(f"window width {width} exceeds frame, clamped to {clamped}")
        width = clamped
    if height > frame_h:
        clamped = (frame_h // 16) * 16
        if clamped == 0:
            raise ValueError(f"frame height {frame_h} cannot hold a 16px-aligned window")
        warnings.append(f"window height {height} exceeds frame, clamped to {clamped}")
        height = clamped

    origins = []
    for box in subject_bboxes:
        cx, cy = box.center
        ox = clamp(int(round(cx - width / 2.0)), 0, frame_w - width)
        oy = clamp(int(round(cy - height / 2.0)), 0, frame_h - height)
        origins.append((ox, oy))
    return TrackingWindow(origins=origins, width=width, height=height, warnings=warnings)


@dataclass(frozen=True)
class AgnosticMask:
    """Binary raster, 1 marks the region the model must regenerate."""

    mask: np.ndarray  # (H, W) uint8 in {0, 1}

    def __post_init__(self) -> None:
        mask = np.asarray(self.mask)
        if mask.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "mask", mask.astype(np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def _segment_distance_mask(
    shape: tuple[int, int], a: np.ndarray, b: np.ndarray, radius: float
) -> np.ndarray:
    """Pixels whose center lies within `radius` of segment a-b (vectorized)."""
    height, width = shape
    lo_x = clamp(int(np.floor(min(a[0], b[0]) - radius)), 0, width - 1)
    hi_x = clamp(int(np.ceil(max(a[0], b[0]) + radius)), 0, width - 1)
    lo_y = clamp(int(np.floor(min(a[1], b[1]) - radius)), 0, height - 1)
    hi_y = clamp(int(np.ceil(max(a[1], b[1]) + radius)), 0, height - 1)
    ys, xs = np.mgrid[lo_y : hi_y + 1, lo_x : hi_x + 1]
    px = np.stack([xs, ys], axis=-1).astype(np.float64)

    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        dist = np.linalg.norm(px - a, axis=-1)
    else:
        t = np.clip(((px - a) @ ab) / denom, 0.0, 1.0)
        nearest = a[None, None, :] + t[..., None] * ab[None, None, :]
        dist = np.linalg.norm(px - nearest, axis=-1)

    out = np.zeros(shape, dtype=bool)
    out[lo_y : hi_y + 1, lo_x : hi_x + 1] = dist <= radius
    return out


def rasterize_skeleton(
    skeleton: Skeleton,
    radius: float,
    scope: str = "full",
    *,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> np.ndarray:
    """Dilated limb raster: union of radius-`radius` sweeps of scope bones.

    Bones with a missing endpoint are skipped; zero-length bones render as
    discs. Returns a (H, W) uint8 {0,1} raster at the skeleton's frame size.
    """
    if scope not in GARMENT_SCOPES:
        raise ValueError(f"unknown garment scope {scope!r}")
    shape = (skeleton.frame_height, skeleton.frame_width)
    missing = skeleton.missing(confidence_threshold)
    out = np.zeros(shape, dtype=bool)
    for parent, child in SCOPE_BONES[scope]:
        if missing[parent] or missing[child]:
            continue
        a = skeleton.joints[parent, :2]
        b = skeleton.joints[child, :2]
        out |= _segment_distance_mask(shape, a, b, radius)
    return out.astype(np.uint8)


def make_agnostic_mask(
    skeleton: Skeleton,
    subject_bbox: Rect,
    dilation_radius: float,
    garment_scope: str = "full",
    *,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> AgnosticMask:
    """Clothing-agnostic mask from the dilated pose skeleton plus a torso box.

    The dilated limb raster is clipped to the subject box (so large radii
    saturate the box instead of leaking into the background), then unioned
    with the scope's torso sub-box of the subject bbox.
    """
    if dilation_radius <= 0:
        raise ValueError("dilation_radius must be > 0")
    if garment_scope not in GARMENT_SCOPES:
        raise ValueError(f"unknown garment scope {garment_scope!r}")
    missing = skeleton.missing(confidence_threshold)
    scope_joints = {j for bone in SCOPE_BONES[garment_scope] for j in bone}
    if all(missing[j] for j in scope_joints):
        raise ValueError("insufficient pose for mask")

    limbs = rasterize_skeleton(
        skeleton,
        dilation_radius,
        garment_scope,
        confidence_threshold=confidence_threshold,
    ).astype(bool)

    height, width = skeleton.frame_height, skeleton.frame_width
    box_clip = np.zeros((height, width), dtype=bool)
    x0 = clamp(subject_bbox.x, 0, width)
    x1 = clamp(subject_bbox.x1, 0, width)
    y0 = clamp(subject_bbox.y, 0, height)
    y1 = clamp(subject_bbox.y1, 0, height)
    box_clip[y0:y1, x0:x1] = True

    row_lo, row_hi = SCOPE_BOX_ROWS[garment_scope]
    torso = np.zeros((height, width), dtype=bool)
    ty0 = clamp(y0 + int(np.floor(row_lo * (y1 - y0))), 0, height)
    ty1 = clamp(y0 + int(np.ceil(row_hi * (y1 - y0))), 0, height)
    torso[ty0:ty1, x0:x1] = True

    return AgnosticMask(((limbs & box_clip) | torso).astype(np.uint8))


def make_agnostic_image(frame: np.ndarray, mask: AgnosticMask, fill: int = 128) -> np.ndarray:
    """Replace masked pixels with a constant fill; everything else untouched."""
    frame = np.asarray(frame)
    if frame.shape[:2] != mask.shape:
        raise ValueError(
            f"frame resolution {frame.shape[:2]} does not match mask {mask.shape}"
        )
    out = frame.copy()
    out[mask.mask.astype(bool)] = fill
    return out


@dataclass
class GarmentImage:
    """Normalized garment: white background, tight crop, letterboxed resize."""

    rgb: np.ndarray  # (H, W, 3) uint8
    foreground_mask: np.ndarray  # (H, W) uint8 in {0, 1}


def tight_bbox(mask: np.ndarray) -> Rect:
    """Smallest rect covering all nonzero mask pixels."""
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("no garment foreground")
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return Rect(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def preprocess_garment(
    rgb: np.ndarray,
    foreground_mask: np.ndarray,
    target_resolution: tuple[int, int] = (256, 256),
) -> GarmentImage:
    """White out the background, crop to the tight foreground box and resize
    (aspect preserving, white letterbox) to the target resolution."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    mask = (np.asarray(foreground_mask) > 0).astype(np.uint8)
    if rgb.shape[:2] != mask.shape:
        raise ValueError("garment image and mask resolution mismatch")
    box = tight_bbox(mask)  # raises on empty foreground

    whited = rgb.copy()
    whited[mask == 0] = 255
    crop = whited[box.y : box.y1, box.x : box.x1]
    crop_mask = mask[box.y : box.y1, box.x : box.x1]

    target_w, target_h = target_resolution
    scale = min(target_w / box.w, target_h / box.h)
    new_w = max(1, int(round(box.w * scale)))
    new_h = max(1, int(round(box.h * scale)))

    resized = np.asarray(
        Image.fromarray(crop).resize((new_w, new_h), Image.BILINEAR), dtype=np.uint8
    )
    resized_mask = np.asarray(
        Image.fromarray(crop_mask * 255).resize((new_w, new_h), Image.NEAREST)
    )
    resized_mask = (resized_mask > 127).astype(np.uint8)

    canvas = np.full((target_h, target_w, 3), 255, dtype=np.uint8)
    canvas_mask = np.zeros((target_h, target_w), dtype=np.uint8)
    off_x = (target_w - new_w) // 2
    off_y = (target_h - new_h) // 2
    canvas[off_y : off_y + new_h, off_x : off_x + new_w] = resized
    canvas_mask[off_y : off_y + new_h, off_x : off_x + new_w] = resized_mask
    # Resampling can bleed garment color past the nearest-resized mask edge;
    # the output contract is white everywhere outside the foreground.
    canvas[canvas_mask == 0] = 255
    return GarmentImage(rgb=canvas, foreground_mask=canvas_mask)


def crop_skeleton(skeleton: Skeleton, window: Rect) -> Skeleton:
    """Express a skeleton in a crop window's coordinate frame."""
    moved = skeleton.translate(-window.x, -window.y)
    return moved.with_frame(window.w, window.h)


def crop_frame(frame: np.ndarray, window: Rect) -> np.ndarray:
    return frame[window.y : window.y1, window.x : window.x1].copy()
