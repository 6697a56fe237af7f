from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vvton import rng
from vvton.codec import TokenSequence
from vvton.captions import TextTokens
from vvton.engine import ConditionedSample
from vvton.geometry import Rect
from vvton.model import ModelConfig, MultiStreamDiT
from vvton.pose import COCO_BONES, Skeleton, SkeletonSequence


def random_skeleton(
    gen: np.random.Generator,
    width: int = 128,
    height: int = 128,
    joints: int = 17,
    min_confidence: float = 1.0,
) -> Skeleton:
    data = np.zeros((joints, 3))
    data[:, 0] = gen.uniform(5, width - 5, joints)
    data[:, 1] = gen.uniform(5, height - 5, joints)
    data[:, 2] = gen.uniform(min_confidence, 1.0, joints)
    return Skeleton(data, width, height)


def random_sequence(
    gen: np.random.Generator, n_frames: int, width: int = 128, height: int = 128
) -> tuple[SkeletonSequence, list[Rect]]:
    frames = [random_skeleton(gen, width, height) for _ in range(n_frames)]
    boxes = []
    for _ in range(n_frames):
        w = int(gen.integers(20, width // 2))
        h = int(gen.integers(20, height // 2))
        x = int(gen.integers(0, width - w))
        y = int(gen.integers(0, height - h))
        boxes.append(Rect(x, y, w, h))
    return SkeletonSequence(frames), boxes


def grid_index_map(k: int, h: int, w: int) -> np.ndarray:
    ki, hi, wi = np.unravel_index(np.arange(k * h * w), (k, h, w))
    return np.stack([ki, hi, wi], axis=1).astype(np.int64)


def toy_sample(
    gen: np.random.Generator,
    grid=(2, 2, 2),
    channels: int = 8,
    pose_channels: int = 4,
    text_tokens: int = 8,
    text_channels: int = 16,
    keyframe_grid=(1, 2, 2),
    with_target: bool = True,
) -> ConditionedSample:
    t, h, w = grid
    k, kh, kw = keyframe_grid
    return ConditionedSample(
        agnostic=gen.normal(size=(t, h, w, channels)),
        mask=gen.integers(0, 2, (t, h, w)).astype(np.float64),
        pose=gen.normal(size=(t, h, w, pose_channels)),
        text=TextTokens(gen.normal(size=(text_tokens, text_channels))),
        null_text=TextTokens(np.zeros((text_tokens, text_channels))),
        keyframes=TokenSequence(
            gen.normal(size=(k * kh * kw, channels)),
            "image",
            grid_index_map(k, kh, kw),
        ),
        x0=gen.normal(size=(t, h, w, channels)) if with_target else None,
    )


def toy_model_config(**overrides) -> ModelConfig:
    base = dict(
        dim=32,
        heads=2,
        blocks=2,
        ff_mult=2,
        lora_rank=4,
        video_in_channels=2 * 8 + 1 + 4,
        image_in_channels=8,
        text_channels=16,
        out_channels=8,
        seed=0,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture()
def gen() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_model() -> MultiStreamDiT:
    return MultiStreamDiT(toy_model_config())


@pytest.fixture(scope="session")
def demo_dir(tmp_path_factory) -> Path:
    """Shared synthetic input bundle + completed preprocess stage."""
    from vvton.fixtures import write_demo

    root = tmp_path_factory.mktemp("demo")
    write_demo(root, frames=16)
    return root
