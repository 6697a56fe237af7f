"""Synthetic demo bundle: a procedural stick-figure clip with skeletons,
subject boxes, a garment product shot and a caption file. Everything is a
deterministic function of the seed, so pipeline runs on the bundle are
reproducible end to end.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import imgio
from .captions import CaptionRecord, save_caption
from .config import PipelineConfig, save_config
from .geometry import Rect
from .pose import Skeleton, SkeletonSequence, _segment_distance_mask, save_skeleton_sequence

_SKIN = np.array([205, 170, 140], dtype=np.uint8)
_GARMENT = np.array([180, 40, 50], dtype=np.uint8)
_TROUSERS = np.array([60, 70, 120], dtype=np.uint8)

_LIMB_BONES = ((5, 7), (7, 9), (6, 8), (8, 10))
_LEG_BONES = ((11, 13), (13, 15), (12, 14), (14, 16))


def demo_skeleton(i: int, total: int, width: int, height: int) -> Skeleton:
    """Frontal figure with swinging arms/legs and a slight horizontal sway."""
    phase = 2.0 * math.pi * i / max(total, 1)
    bh = 0.78 * height
    top = 0.08 * height
    cx = width / 2.0 + 0.04 * width * math.sin(phase)

    def seg(y_frac: float) -> float:
        return top + y_frac * bh

    shoulder_y = seg(0.22)
    hip_y = seg(0.52)
    half_shoulder = 0.14 * bh
    half_hip = 0.09 * bh

    arm_swing = 0.45 * math.sin(phase)
    leg_swing = 0.30 * math.sin(phase)
    upper_arm = 0.16 * bh
    forearm = 0.15 * bh
    thigh = 0.20 * bh
    shin = 0.20 * bh

    def arm(side: float, swing: float) -> tuple[tuple[float, float], tuple[float, float]]:
        sx = cx + side * half_shoulder
        angle = side * (0.55 + swing)  # from vertical, outward positive
        ex = sx + upper_arm * math.sin(angle)
        ey = shoulder_y + upper_arm * math.cos(angle)
        wx = ex + forearm * math.sin(angle * 0.8)
        wy = ey + forearm * math.cos(angle * 0.8)
        return (ex, ey), (wx, wy)

    def leg(side: float, swing: float) -> tuple[tuple[float, float], tuple[float, float]]:
        hx = cx + side * half_hip
        kx = hx + thigh * math.sin(swing)
        ky = hip_y + thigh * math.cos(swing)
        ax = kx + shin * math.sin(swing * 0.5)
        ay = ky + shin * math.cos(swing * 0.5)
        return (kx, ky), (ax, ay)

    l_elbow, l_wrist = arm(+1.0, arm_swing)
    r_elbow, r_wrist = arm(-1.0, -arm_swing)
    l_knee, l_ankle = leg(+1.0, leg_swing)
    r_knee, r_ankle = leg(-1.0, -leg_swing)

    nose = (cx, seg(0.06))
    joints = [
        nose,
        (cx + 0.02 * bh, seg(0.045)),
        (cx - 0.02 * bh, seg(0.045)),
        (cx + 0.045 * bh, seg(0.055)),
        (cx - 0.045 * bh, seg(0.055)),
        (cx + half_shoulder, shoulder_y),
        (cx - half_shoulder, shoulder_y),
        l_elbow,
        r_elbow,
        l_wrist,
        r_wrist,
        (cx + half_hip, hip_y),
        (cx - half_hip, hip_y),
        l_knee,
        r_knee,
        l_ankle,
        r_ankle,
    ]
    data = np.array([[x, y, 1.0] for x, y in joints], dtype=np.float64)
    return Skeleton(data, width, height)


def _paint_bones(canvas: np.ndarray, skeleton: Skeleton, bones, radius: float, color) -> None:
    shape = canvas.shape[:2]
    for a, b in bones:
        mask = _segment_distance_mask(
            shape, skeleton.joints[a, :2], skeleton.joints[b, :2], radius
        )
        canvas[mask] = color


def render_demo_frame(skeleton: Skeleton, width: int, height: int) -> np.ndarray:
    rows = np.linspace(70, 150, height, dtype=np.float64)[:, None]
    cols = np.linspace(0, 25, width, dtype=np.float64)[None, :]
    gray = (rows + cols).astype(np.uint8)
    canvas = np.stack([gray, gray, np.clip(gray + 20, 0, 255).astype(np.uint8)], axis=-1)

    _paint_bones(canvas, skeleton, _LEG_BONES, 3.0, _TROUSERS)
    _paint_bones(canvas, skeleton, _LIMB_BONES, 2.5, _SKIN)

    # Torso quad between the shoulder and hip lines wears the garment.
    xs = skeleton.joints[[5, 6, 11, 12], 0]
    ys = skeleton.joints[[5, 6, 11, 12], 1]
    x0, x1 = int(np.floor(xs.min())) - 2, int(np.ceil(xs.max())) + 2
    y0, y1 = int(np.floor(ys.min())), int(np.ceil(ys.max()))
    canvas[max(0, y0) : min(height, y1), max(0, x0) : min(width, x1)] = _GARMENT

    nose = skeleton.joints[0, :2]
    head = _segment_distance_mask(canvas.shape[:2], nose, nose, 5.0)
    canvas[head] = _SKIN
    return canvas


def demo_subject_bbox(skeleton: Skeleton, margin: int = 6) -> Rect:
    xs = skeleton.joints[:, 0]
    ys = skeleton.joints[:, 1]
    x0 = max(0, int(np.floor(xs.min())) - margin)
    y0 = max(0, int(np.floor(ys.min())) - margin)
    x1 = min(skeleton.frame_width - 1, int(np.ceil(xs.max())) + margin)
    y1 = min(skeleton.frame_height - 1, int(np.ceil(ys.max())) + margin)
    return Rect(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def demo_garment(size: int = 128) -> tuple[np.ndarray, np.ndarray]:
    rgb = np.full((size, size, 3), 255, dtype=np.uint8)
    mask = np.zeros((size, size), dtype=np.uint8)
    x0, x1 = size // 5, size - size // 5
    y0, y1 = size // 4, size - size // 4
    stripe_a = np.array([40, 90, 180], dtype=np.uint8)
    stripe_b = np.array([230, 225, 210], dtype=np.uint8)
    for row in range(y0, y1):
        color = stripe_a if (row // 6) % 2 == 0 else stripe_b
        rgb[row, x0:x1] = color
    mask[y0:y1, x0:x1] = 1
    return rgb, mask


def write_demo_bundle(
    out_dir: str | Path,
    frames: int = 16,
    width: int = 112,
    height: int = 144,
    fps: float = 8.0,
) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    skeletons = [demo_skeleton(i, frames, width, height) for i in range(frames)]
    seq = SkeletonSequence(skeletons, fps=fps)
    clip = np.stack([render_demo_frame(s, width, height) for s in skeletons])
    bboxes = [demo_subject_bbox(s) for s in skeletons]

    paths = {"frames_dir": out_dir / "frames"}
    imgio.save_frames(clip, paths["frames_dir"])
    paths["skeletons"] = out_dir / "skeletons.json"
    save_skeleton_sequence(seq, paths["skeletons"])
    paths["bboxes"] = out_dir / "bboxes.json"
    paths["bboxes"].write_text(json.dumps({"bboxes": [b.as_list() for b in bboxes]}))

    garment_rgb, garment_mask = demo_garment()
    paths["garment"] = out_dir / "garment.png"
    imgio.save_image(garment_rgb, paths["garment"])
    paths["garment_mask"] = out_dir / "garment_mask.png"
    imgio.save_mask_png(garment_mask, paths["garment_mask"])
    paths["garment_description"] = out_dir / "garment.txt"
    paths["garment_description"].write_text("blue and cream striped top")

    caption = CaptionRecord(
        environment="plain indoor backdrop with soft lighting",
        appearance="person wearing a red top and dark trousers",
        motion="walks in place swinging both arms",
    )
    paths["caption"] = out_dir / "caption.json"
    save_caption(caption, paths["caption"])
    return paths


def demo_config(bundle: dict[str, Path], run_dir: str | Path, frames: int = 16) -> PipelineConfig:
    config = PipelineConfig()
    config.paths.frames_dir = str(bundle["frames_dir"])
    config.paths.skeletons = str(bundle["skeletons"])
    config.paths.bboxes = str(bundle["bboxes"])
    config.paths.garment = str(bundle["garment"])
    config.paths.garment_mask = str(bundle["garment_mask"])
    config.paths.garment_description = str(bundle["garment_description"])
    config.paths.caption = str(bundle["caption"])
    config.paths.run_dir = str(run_dir)
    config.video.frames = frames
    return config


def write_demo(out_dir: str | Path, frames: int = 16) -> Path:
    """Bundle plus a ready-to-run config; returns the config path."""
    out_dir = Path(out_dir)
    bundle = write_demo_bundle(out_dir / "bundle", frames=frames)
    config = demo_config(bundle, out_dir / "run", frames=frames)
    config_path = out_dir / "config.yaml"
    save_config(config, config_path)
    return config_path
