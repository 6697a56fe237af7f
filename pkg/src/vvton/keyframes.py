"""Keyframe sampling: score frames against a frontal A-pose anchor and pick
maximally informative frames under a minimum score-interval constraint.

Per-frame score = motion similarity to the anchor (sum of bone-direction dot
products) + lambda * subject-area ratio. Selection sorts frames by score
descending, seeds the set with the top frame, then walks the sorted list from
its low-score end appending every frame whose score differs from all selected
scores by at least the interval threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Rect
from .pose import (
    COCO_BONES,
    DEFAULT_CONFIDENCE_THRESHOLD,
    BoneDirections,
    BoneGraph,
    Skeleton,
    SkeletonSequence,
    compute_joint_directions,
)

DEFAULT_K = 2
DEFAULT_LAMBDA = 0.3
DEFAULT_ALPHA = 0.2


@dataclass(frozen=True)
class FrameScore:
    index: int
    motion_similarity: float
    area_ratio: float
    final: float


@dataclass
class KeyframeSet:
    indices: list[int]
    padded: list[bool]
    scores: list[FrameScore]
    threshold: float

    def __post_init__(self) -> None:
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("selected keyframe indices must be distinct")


@dataclass(frozen=True)
class AnchorPose:
    """Frontal A-pose reference skeleton; every bone must be present."""

    skeleton: Skeleton

    def directions(
        self,
        bones: BoneGraph = COCO_BONES,
        *,
        confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    ) -> BoneDirections:
        dirs = compute_joint_directions(
            self.skeleton, bones, confidence_threshold=confidence_threshold
        )
        if not dirs.present.all():
            raise ValueError("anchor pose has missing bones")
        return dirs


def load_anchor(path: str | Path) -> AnchorPose:
    doc = json.loads(Path(path).read_text())
    skeleton = Skeleton(
        np.asarray(doc["joints"], dtype=np.float64),
        int(doc["width"]),
        int(doc["height"]),
    )
    return AnchorPose(skeleton)


def default_anchor() -> AnchorPose:
    return load_anchor(Path(__file__).parent / "data" / "anchor_apose.json")


def motion_similarity(dirs_a: BoneDirections, dirs_b: BoneDirections) -> float:
    """Sum of direction dot products over bones present in both skeletons."""
    if dirs_a.vectors.shape != dirs_b.vectors.shape:
        raise ValueError("direction sets come from different bone graphs")
    both = dirs_a.present & dirs_b.present
    return float(np.sum(dirs_a.vectors[both] * dirs_b.vectors[both]))


def score_frames(
    seq: SkeletonSequence,
    anchor: AnchorPose,
    subject_bboxes: Sequence[Rect],
    lam: float = DEFAULT_LAMBDA,
    *,
    bones: BoneGraph = COCO_BONES,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> list[FrameScore]:
    if len(seq) == 0:
        raise ValueError("empty skeleton sequence")
    if len(subject_bboxes) != len(seq):
        raise ValueError("need exactly one subject bbox per frame")
    anchor_dirs = anchor.directions(bones, confidence_threshold=confidence_threshold)
    frame_w, frame_h = seq.frame_size
    frame_area = float(frame_w * frame_h)

    scores = []
    for index, (skeleton, bbox) in enumerate(zip(seq.frames, subject_bboxes)):
        dirs = compute_joint_directions(
            skeleton, bones, confidence_threshold=confidence_threshold
        )
        s_m = motion_similarity(anchor_dirs, dirs)
        s_r = float(bbox.area) / frame_area
        scores.append(
            FrameScore(
                index=index,
                motion_similarity=s_m,
                area_ratio=s_r,
                final=s_m + lam * s_r,
            )
        )
    return scores


def select_keyframes(
    scores: Sequence[FrameScore],
    k: int = DEFAULT_K,
    alpha: float = DEFAULT_ALPHA,
) -> KeyframeSet:
    """Reverse-order search over the descending score ranking.

    The interval threshold is alpha * mean(final scores), clamped at 0 since
    a negative interval is vacuous. Ties in the descending sort break toward
    the smaller frame index. If the interval constraint exhausts candidates
    before k frames are found, the set is padded with the frames farthest
    (max-min temporal distance) from the already-selected ones; padded
    entries are flagged.
    """
    if not scores:
        raise ValueError("no frame scores to select from")
    n = len(scores)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds frame count {n}")

    finals = np.array([s.final for s in scores], dtype=np.float64)
    threshold = max(0.0, alpha * float(finals.mean()))

    order = sorted(range(n), key=lambda i: (-finals[i], scores[i].index))
    selected = [order[0]]
    for pos in range(n - 1, -1, -1):
        candidate = order[pos]
        if candidate in selected:
            continue
        if all(abs(finals[candidate] - finals[s]) >= threshold for s in selected):
            selected.append(candidate)
    selected = selected[:k]
    padded = [False] * len(selected)

    while len(selected) < k:
        remaining = [i for i in range(n) if i not in selected]
        best = max(
            remaining,
            key=lambda i: (min(abs(scores[i].index - scores[s].index) for s in selected), -i),
        )
        selected.append(best)
        padded.append(True)

    return KeyframeSet(
        indices=[scores[i].index for i in selected],
        padded=padded,
        scores=[scores[i] for i in selected],
        threshold=threshold,
    )


def keyframe_set_to_json(ks: KeyframeSet, all_scores: Sequence[FrameScore]) -> dict:
    return {
        "indices": ks.indices,
        "padded": ks.padded,
        "t_s_min": ks.threshold,
        "scores": [
            {
                "index": s.index,
                "motion_similarity": s.motion_similarity,
                "area_ratio": s.area_ratio,
                "final": s.final,
            }
            for s in all_scores
        ],
    }
