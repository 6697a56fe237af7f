"""PNG / frame-directory helpers. Frames are numbered %06d.png files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin


def save_image(array: np.ndarray, path: str | Path, config_hash: str | None = None) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("images are written as 8-bit PNG, pass uint8 data")
    info = None
    if config_hash is not None:
        info = PngImagePlugin.PngInfo()
        info.add_text("config_hash", config_hash)
    Image.fromarray(array).save(Path(path), format="PNG", pnginfo=info)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(Path(path)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def load_mask_png(path: str | Path) -> np.ndarray:
    """8-bit {0,255} mask PNG -> {0,1} uint8 array."""
    with Image.open(Path(path)) as img:
        return (np.asarray(img.convert("L")) > 127).astype(np.uint8)


def save_mask_png(mask: np.ndarray, path: str | Path, config_hash: str | None = None) -> None:
    save_image((np.asarray(mask) > 0).astype(np.uint8) * 255, path, config_hash)


def frame_name(index: int) -> str:
    return f"{index:06d}.png"


def list_frames(directory: str | Path) -> list[Path]:
    return sorted(Path(directory).glob("*.png"))


def load_frames(directory: str | Path) -> np.ndarray:
    paths = list_frames(directory)
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    return np.stack([load_image(p) for p in paths])


def save_frames(frames: np.ndarray, directory: str | Path, config_hash: str | None = None) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(np.asarray(frames)):
        path = directory / frame_name(i)
        save_image(frame, path, config_hash)
        paths.append(path)
    return paths
