"""Laplacian-pyramid compositing and the evaluation harness.

Pyramids use the 5-tap binomial kernel [1,4,6,4,1]/16 with reflect borders;
band images are level - upsample(next level), so reconstruction by iterative
upsample-and-add inverts the analysis exactly up to float64 accumulation.
Fusion blends each band as o + m*(g - o) with a Gaussian-pyramid (soft) mask,
then pastes the reconstructed crop back into the source frame.

Metrics: reference SSIM (11x11 Gaussian window, sigma 1.5, K1=.01, K2=.03)
and the Frechet distance between feature Gaussians with the matrix square
root computed through a symmetric eigendecomposition. Feature extractors are
pluggable; the built-in one is a deterministic hand-crafted spatiotemporal
descriptor so the harness runs without pretrained networks. A perceptual
(LPIPS-style) metric is only ever reported when a plugin provides it.
"""

from __future__ import annotations

import importlib.util
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import Rect
from .imgio import list_frames, load_image

_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _filter_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    pad = len(kernel) // 2
    pad_spec = [(0, 0)] * arr.ndim
    pad_spec[axis] = (pad, pad)
    padded = np.pad(arr, pad_spec, mode="reflect")
    out = np.zeros_like(arr, dtype=np.float64)
    length = arr.shape[axis]
    for i, coeff in enumerate(kernel):
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(i, i + length)
        out += coeff * padded[tuple(sl)]
    return out


def _blur(img: np.ndarray, kernel: np.ndarray = _KERNEL) -> np.ndarray:
    return _filter_axis(_filter_axis(img, kernel, 0), kernel, 1)


def _downsample(img: np.ndarray) -> np.ndarray:
    return _blur(img)[::2, ::2]


def _upsample(img: np.ndarray, target_shape: tuple[int, ...]) -> np.ndarray:
    up = np.zeros(target_shape, dtype=np.float64)
    up[::2, ::2] = img
    # Doubled kernel compensates for the inserted zeros.
    return _filter_axis(_filter_axis(up, 2.0 * _KERNEL, 0), 2.0 * _KERNEL, 1)


@dataclass
class LaplacianPyramid:
    """Band-pass levels fine-to-coarse; the last entry is the low-pass residual."""

    levels: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.levels)


def _check_pyramid_dims(shape: tuple[int, ...], levels: int) -> None:
    if levels < 1:
        raise ValueError("pyramid needs at least one level")
    divisor = 2 ** (levels - 1)
    if shape[0] % divisor or shape[1] % divisor:
        raise ValueError(
            f"image dims {shape[:2]} not divisible by 2^(L-1) = {divisor}"
        )


def build_pyramid(image: np.ndarray, levels: int) -> LaplacianPyramid:
    image = np.asarray(image, dtype=np.float64)
    _check_pyramid_dims(image.shape, levels)
    bands = []
    current = image
    for _ in range(levels - 1):
        down = _downsample(current)
        bands.append(current - _upsample(down, current.shape))
        current = down
    bands.append(current)
    return LaplacianPyramid(bands)


def reconstruct(pyramid: LaplacianPyramid) -> np.ndarray:
    current = pyramid.levels[-1]
    for band in pyramid.levels[-2::-1]:
        current = band + _upsample(current, band.shape)
    return current


def pyramid_fuse(
    original_frame: np.ndarray,
    generated_crop: np.ndarray,
    mask: np.ndarray,
    crop_window: Rect,
    levels: int = 4,
) -> np.ndarray:
    """Blend the generated crop into the frame at the window, band by band.

    The mask (1 = take generated) is softened per level via a Gaussian
    pyramid so band transitions carry no seam. Pixels outside the window are
    returned untouched; an all-zero mask short-circuits to the original
    frame so the "nothing to blend" case is exact, not just within float
    tolerance.
    """
    frame = np.asarray(original_frame)
    generated = np.asarray(generated_crop)
    mask = np.asarray(mask).astype(np.float64)
    if crop_window.x < 0 or crop_window.y < 0 or crop_window.x1 > frame.shape[1] or crop_window.y1 > frame.shape[0]:
        raise ValueError(f"crop window {crop_window} outside frame {frame.shape[:2]}")
    if generated.shape[:2] != (crop_window.h, crop_window.w):
        raise ValueError("generated crop does not match the crop window size")
    if mask.shape != generated.shape[:2]:
        raise ValueError("mask does not match crop resolution")
    if not mask.any():
        return frame.copy()

    original_crop = frame[crop_window.y : crop_window.y1, crop_window.x : crop_window.x1]
    gen_pyr = build_pyramid(generated.astype(np.float64), levels)
    orig_pyr = build_pyramid(original_crop.astype(np.float64), levels)

    mask_levels = [mask]
    for _ in range(levels - 1):
        mask_levels.append(_downsample(mask_levels[-1]))

    fused_bands = []
    for g, o, m in zip(gen_pyr.levels, orig_pyr.levels, mask_levels):
        if g.ndim == 3:
            m = m[..., None]
        fused_bands.append(o + m * (g - o))
    blended = reconstruct(LaplacianPyramid(fused_bands))

    out = frame.copy()
    if np.issubdtype(frame.dtype, np.integer):
        info = np.iinfo(frame.dtype)
        blended = np.clip(blended, info.min, info.max).round().astype(frame.dtype)
    else:
        blended = blended.astype(frame.dtype)
    out[crop_window.y : crop_window.y1, crop_window.x : crop_window.x1] = blended
    return out


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    window = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return window / window.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    size = len(window)
    h = img.shape[0] - size + 1
    w = img.shape[1] - size + 1
    rows = np.zeros((h, img.shape[1]), dtype=np.float64)
    for i, coeff in enumerate(window):
        rows += coeff * img[i : i + h, :]
    out = np.zeros((h, w), dtype=np.float64)
    for j, coeff in enumerate(window):
        out += coeff * rows[:, j : j + w]
    return out


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity with the standard 11x11 sigma=1.5 window.

    Dynamic range comes from the dtype: 255 for integer images, 1.0 for
    floats. Multi-channel inputs are averaged over channels.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ValueError("images must be at least 11x11 for SSIM")
    data_range = 255.0 if np.issubdtype(a.dtype, np.integer) else 1.0
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    window = _gaussian_window()

    values = []
    for ch in range(a.shape[2]):
        x = a[..., ch].astype(np.float64)
        y = b[..., ch].astype(np.float64)
        mu_x = _filter_valid(x, window)
        mu_y = _filter_valid(y, window)
        sigma_x = _filter_valid(x * x, window) - mu_x * mu_x
        sigma_y = _filter_valid(y * y, window) - mu_y * mu_y
        sigma_xy = _filter_valid(x * y, window) - mu_x * mu_y
        ssim_map = ((2.0 * mu_x * mu_y + c1) * (2.0 * sigma_xy + c2)) / (
            (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2)
        )
        values.append(ssim_map.mean())
    return float(np.mean(values))


@dataclass
class FeatureGaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match dim {d}")
        cov = 0.5 * (cov + cov.T)
        eigenvalues = np.linalg.eigvalsh(cov)
        if eigenvalues.min(initial=0.0) < -1e-8:
            raise ValueError(f"covariance not PSD (min eigenvalue {eigenvalues.min()})")
        self.cov = cov

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_features(cls, features: np.ndarray) -> "FeatureGaussian":
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        mean = features.mean(axis=0)
        if features.shape[0] < 2:
            cov = np.zeros((features.shape[1], features.shape[1]))
        else:
            cov = np.atleast_2d(np.cov(features, rowvar=False))
        return cls(mean=mean, cov=cov)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    values = np.clip(values, 0.0, None)
    root = (vectors * np.sqrt(values)) @ vectors.T
    return 0.5 * (root + root.T)


def frechet_distance(g1: FeatureGaussian, g2: FeatureGaussian) -> float:
    """||mu1-mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}).

    The product square root is computed as sqrt(S2^{1/2} S1 S2^{1/2}), which
    is symmetric PSD, via eigendecomposition with negative eigenvalues
    clamped at zero.
    """
    if g1.dim != g2.dim:
        raise ValueError(f"feature dims differ: {g1.dim} vs {g2.dim}")
    diff = g1.mean - g2.mean
    s2h = _psd_sqrt(g2.cov)
    inner = s2h @ g1.cov @ s2h
    eigenvalues = np.clip(np.linalg.eigvalsh(0.5 * (inner + inner.T)), 0.0, None)
    trace_sqrt = float(np.sqrt(eigenvalues).sum())
    return float(diff @ diff + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * trace_sqrt)


def builtin_clip_features(frames: np.ndarray) -> np.ndarray:
    """Hand-crafted spatiotemporal descriptor: frame-difference energy plus
    per-channel color histograms and moments. 32 dims, deterministic."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValueError("clip must be (T, H, W, 3)")
    if frames.max(initial=0.0) > 1.5:
        frames = frames / 255.0
    if frames.shape[0] > 1:
        diffs = np.abs(np.diff(frames, axis=0))
        motion = [diffs.mean(), diffs.std()]
    else:
        motion = [0.0, 0.0]
    means = frames.mean(axis=(0, 1, 2))
    stds = frames.std(axis=(0, 1, 2))
    hists = []
    for ch in range(3):
        hist, _ = np.histogram(frames[..., ch], bins=8, range=(0.0, 1.0))
        hists.append(hist / frames[..., ch].size)
    return np.concatenate([motion, means, stds, *hists])


def load_feature_plugin(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    if spec == "builtin":
        return builtin_clip_features
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"feature plugin {spec} not found")
    module_spec = importlib.util.spec_from_file_location("vvton_feature_plugin", path)
    module = importlib.util.module_from_spec(module_spec)
    module_spec.loader.exec_module(module)
    if not hasattr(module, "extract_features"):
        raise AttributeError(f"plugin {spec} must define extract_features(clip)")
    return module.extract_features


@dataclass
class MetricsReport:
    values: dict
    generated: str
    reference: str
    mode: str
    feature_plugin: str
    config_hash: str | None = None
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "values": self.values,
            "generated": self.generated,
            "reference": self.reference,
            "mode": self.mode,
            "feature_plugin": self.feature_plugin,
            "config_hash": self.config_hash,
            "notes": self.notes,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        return cls(
            values=doc["values"],
            generated=doc["generated"],
            reference=doc["reference"],
            mode=doc["mode"],
            feature_plugin=doc["feature_plugin"],
            config_hash=doc.get("config_hash"),
            notes=doc.get("notes", []),
        )


def _clip_dirs(root: Path) -> list[Path]:
    subdirs = sorted(d for d in root.iterdir() if d.is_dir() and list_frames(d))
    return subdirs if subdirs else [root]


def _load_clip(directory: Path) -> tuple[list[Path], np.ndarray]:
    paths = list_frames(directory)
    if not paths:
        raise FileNotFoundError(f"no frames in {directory}")
    return paths, np.stack([load_image(p) for p in paths]).astype(np.float64) / 255.0


def evaluate_run(
    generated_dir: str | Path,
    reference_dir: str | Path,
    feature_plugin: str = "builtin",
    mode: str = "paired",
    config_hash: str | None = None,
) -> MetricsReport:
    """SSIM (paired mode) plus Frechet distance over per-clip plugin features.

    A directory is one clip unless it contains clip subdirectories. Paired
    mode requires matching frame filenames between generated and reference.
    """
    if mode not in ("paired", "unpaired"):
        raise ValueError("mode must be 'paired' or 'unpaired'")
    generated_dir = Path(generated_dir)
    reference_dir = Path(reference_dir)
    extractor = load_feature_plugin(feature_plugin)

    gen_clips = _clip_dirs(generated_dir)
    ref_clips = _clip_dirs(reference_dir)

    values: dict = {}
    notes: list[str] = []

    if mode == "paired":
        if len(gen_clips) != len(ref_clips):
            raise ValueError(
                f"paired mode: {len(gen_clips)} generated clips vs {len(ref_clips)} reference"
            )
        ssim_values = []
        for g_dir, r_dir in zip(gen_clips, ref_clips):
            g_paths, g_frames = _load_clip(g_dir)
            r_paths = {p.name: p for p in list_frames(r_dir)}
            for path, frame in zip(g_paths, g_frames):
                if path.name not in r_paths:
                    raise FileNotFoundError(
                        f"missing reference frame {path.name} in {r_dir}"
                    )
                ref_frame = load_image(r_paths[path.name]).astype(np.float64) / 255.0
                ssim_values.append(ssim(frame, ref_frame))
        values["ssim"] = float(np.mean(ssim_values))

    gen_features = np.stack([extractor(_load_clip(d)[1]) for d in gen_clips])
    ref_features = np.stack([extractor(_load_clip(d)[1]) for d in ref_clips])
    values["frechet"] = frechet_distance(
        FeatureGaussian.from_features(gen_features),
        FeatureGaussian.from_features(ref_features),
    )
    values["lpips"] = None
    notes.append("perceptual plugin not installed; lpips reported as absent")
    values["generated_clips"] = len(gen_clips)
    values["reference_clips"] = len(ref_clips)

    return MetricsReport(
        values=values,
        generated=str(generated_dir),
        reference=str(reference_dir),
        mode=mode,
        feature_plugin=feature_plugin,
        config_hash=config_hash,
        notes=notes,
    )
