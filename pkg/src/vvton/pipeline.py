"""Stage orchestration: preprocessing, keyframe try-on, video generation,
fusion and evaluation, with a per-run manifest and config-hash stamping.

Stage boundaries are file-level (images and latents on disk), so each stage
is independently runnable and testable. A stage is skipped when the manifest
already records a completed run with the same config hash and its outputs
still verify.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, captions, codec, engine, imgio, keyframes, model as model_lib, pose
from .config import PipelineConfig, config_hash, validate_config
from .fusion_metrics import evaluate_run, pyramid_fuse
from .geometry import Rect, clamp


class ConfigViolation(Exception):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


ARTIFACT_META = "_artifact.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_artifact_meta(directory: Path, stage: str, cfg_hash: str) -> None:
    directory = Path(directory)
    files = {
        str(p.relative_to(directory)): _sha256(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != ARTIFACT_META
    }
    meta = {"stage": stage, "config_hash": cfg_hash, "files": files}
    (directory / ARTIFACT_META).write_text(json.dumps(meta, indent=1, sort_keys=True))


def read_artifact_meta(directory: Path) -> dict | None:
    path = Path(directory) / ARTIFACT_META
    if not path.exists():
        return None
    return json.loads(path.read_text())


def verify_artifact(directory: Path, cfg_hash: str) -> bool:
    meta = read_artifact_meta(directory)
    if meta is None or meta["config_hash"] != cfg_hash:
        return False
    directory = Path(directory)
    for rel, digest in meta["files"].items():
        path = directory / rel
        if not path.exists() or _sha256(path) != digest:
            return False
    return True


def manifest_path(run_dir: Path) -> Path:
    return Path(run_dir) / "manifest.jsonl"


def append_manifest(run_dir: Path, entry: dict) -> None:
    for out in entry.get("outputs", []):
        if not Path(out).exists():
            raise FileNotFoundError(f"manifest references missing file {out}")
    path = manifest_path(run_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def read_manifest(run_dir: Path) -> list[dict]:
    path = manifest_path(run_dir)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def stage_completed(run_dir: Path, stage: str, cfg_hash: str) -> bool:
    for entry in read_manifest(run_dir):
        if entry["stage"] == stage and entry["config_hash"] == cfg_hash:
            stage_dir = Path(run_dir) / stage
            if verify_artifact(stage_dir, cfg_hash):
                return True
    return False


@contextmanager
def run_lock(run_dir: Path):
    """One CLI process per run directory."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"run directory {run_dir} is locked by another process (remove {lock} if stale)"
        )
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _require_valid(config: PipelineConfig) -> str:
    violations = validate_config(config)
    if violations:
        raise ConfigViolation(violations)
    return config_hash(config)


def _finish_stage(run_dir: Path, stage: str, cfg_hash: str, outputs: list[Path], started: float) -> dict:
    write_artifact_meta(Path(run_dir) / stage, stage, cfg_hash)
    entry = {
        "stage": stage,
        "config_hash": cfg_hash,
        "outputs": [str(p) for p in outputs],
        "duration_s": round(time.time() - started, 3),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "version": __version__,
    }
    append_manifest(run_dir, entry)
    return entry


@dataclass
class PreprocessOutputs:
    windows: pose.TrackingWindow
    crop_skeletons: pose.SkeletonSequence
    crop_bboxes: list[Rect]
    crops: np.ndarray  # (T, Hc, Wc, 3) uint8
    agnostic: np.ndarray  # (T, Hc, Wc, 3) uint8
    masks: np.ndarray  # (T, Hc, Wc) uint8 {0,1}
    pose_maps: np.ndarray  # (T, Hc, Wc) uint8 {0,1}
    garment: pose.GarmentImage


def load_bboxes(path: str | Path) -> list[Rect]:
    doc = json.loads(Path(path).read_text())
    return [Rect.from_list(item) for item in doc["bboxes"]]


def save_windows(window: pose.TrackingWindow, path: Path) -> None:
    doc = {
        "origins": [list(o) for o in window.origins],
        "width": window.width,
        "height": window.height,
        "warnings": window.warnings,
    }
    path.write_text(json.dumps(doc, indent=1))


def load_windows(path: str | Path) -> pose.TrackingWindow:
    doc = json.loads(Path(path).read_text())
    return pose.TrackingWindow(
        origins=[tuple(o) for o in doc["origins"]],
        width=int(doc["width"]),
        height=int(doc["height"]),
        warnings=list(doc.get("warnings", [])),
    )


def compute_preprocess(config: PipelineConfig) -> PreprocessOutputs:
    frames = imgio.load_frames(config.paths.frames_dir)
    seq = pose.load_skeleton_sequence(config.paths.skeletons)
    bboxes = load_bboxes(config.paths.bboxes)
    if not (len(frames) == len(seq) == len(bboxes)):
        raise ValueError(
            f"frame/skeleton/bbox counts differ: {len(frames)}/{len(seq)}/{len(bboxes)}"
        )
    if config.video.frames and config.video.frames != len(frames):
        raise ValueError(
            f"config declares {config.video.frames} frames, inputs have {len(frames)}"
        )
    if len(frames) % codec.TEMPORAL_FACTOR:
        raise ValueError(f"T={len(frames)} not divisible by {codec.TEMPORAL_FACTOR}")

    frame_h, frame_w = frames.shape[1:3]
    windows = pose.compute_tracking_windows(
        bboxes, (frame_w, frame_h), config.pose.padding_ratio
    )
    if config.video.height and windows.height != config.video.height:
        raise ValueError(
            f"config declares crop height {config.video.height}, computed {windows.height}"
        )
    if config.video.width and windows.width != config.video.width:
        raise ValueError(
            f"config declares crop width {config.video.width}, computed {windows.width}"
        )

    crops, agnostic, masks, pose_maps, crop_skeletons, crop_bboxes = [], [], [], [], [], []
    for i in range(len(frames)):
        window = windows.rect(i)
        crop = pose.crop_frame(frames[i], window)
        skeleton = pose.crop_skeleton(seq.frames[i], window)
        bbox = bboxes[i]
        local = Rect(
            clamp(bbox.x - window.x, 0, window.w - 1),
            clamp(bbox.y - window.y, 0, window.h - 1),
            min(bbox.w, window.w),
            min(bbox.h, window.h),
        )
        mask = pose.make_agnostic_mask(
            skeleton,
            local,
            config.pose.dilation_radius,
            config.pose.garment_scope,
            confidence_threshold=config.pose.confidence_threshold,
        )
        crops.append(crop)
        masks.append(mask.mask)
        agnostic.append(pose.make_agnostic_image(crop, mask, config.pose.agnostic_fill))
        pose_maps.append(
            pose.rasterize_skeleton(
                skeleton,
                config.pose.skeleton_map_radius,
                "full",
                confidence_threshold=config.pose.confidence_threshold,
            )
        )
        crop_skeletons.append(skeleton)
        crop_bboxes.append(local)

    garment_rgb = imgio.load_image(config.paths.garment)
    garment_mask = imgio.load_mask_png(config.paths.garment_mask)
    garment = pose.preprocess_garment(
        garment_rgb, garment_mask, tuple(config.pose.garment_resolution)
    )
    return PreprocessOutputs(
        windows=windows,
        crop_skeletons=pose.SkeletonSequence(crop_skeletons, fps=seq.fps),
        crop_bboxes=crop_bboxes,
        crops=np.stack(crops),
        agnostic=np.stack(agnostic),
        masks=np.stack(masks),
        pose_maps=np.stack(pose_maps),
        garment=garment,
    )


def run_preprocess(config: PipelineConfig) -> dict:
    cfg_hash = _require_valid(config)
    run_dir = Path(config.paths.run_dir)
    if stage_completed(run_dir, "preprocess", cfg_hash):
        return {"stage": "preprocess", "skipped": True, "config_hash": cfg_hash}
    started = time.time()
    try:
        out = compute_preprocess(config)
        stage_dir = run_dir / "preprocess"
        outputs: list[Path] = []
        outputs += imgio.save_frames(out.crops, stage_dir / "crops", cfg_hash)
        outputs += imgio.save_frames(out.agnostic, stage_dir / "agnostic", cfg_hash)
        mask_dir = stage_dir / "masks"
        mask_dir.mkdir(parents=True, exist_ok=True)
        for i, mask in enumerate(out.masks):
            path = mask_dir / imgio.frame_name(i)
            imgio.save_mask_png(mask, path, cfg_hash)
            outputs.append(path)
        pose_dir = stage_dir / "posemaps"
        pose_dir.mkdir(parents=True, exist_ok=True)
        for i, raster in enumerate(out.pose_maps):
            path = pose_dir / imgio.frame_name(i)
            imgio.save_mask_png(raster, path, cfg_hash)
            outputs.append(path)
        windows_path = stage_dir / "windows.json"
        save_windows(out.windows, windows_path)
        outputs.append(windows_path)
        skel_path = stage_dir / "skeleton_crop.json"
        pose.save_skeleton_sequence(out.crop_skeletons, skel_path)
        outputs.append(skel_path)
        bbox_path = stage_dir / "crop_bboxes.json"
        bbox_path.write_text(
            json.dumps({"bboxes": [r.as_list() for r in out.crop_bboxes]})
        )
        outputs.append(bbox_path)
        imgio.save_image(out.garment.rgb, stage_dir / "garment.png", cfg_hash)
        imgio.save_mask_png(out.garment.foreground_mask, stage_dir / "garment_mask.png", cfg_hash)
        outputs += [stage_dir / "garment.png", stage_dir / "garment_mask.png"]
        return _finish_stage(run_dir, "preprocess", cfg_hash, outputs, started)
    except (ConfigViolation, StageError):
        raise
    except Exception as exc:
        raise StageError("preprocess", exc) from exc


def _load_preprocess(config: PipelineConfig) -> PreprocessOutputs:
    stage_dir = Path(config.paths.run_dir) / "preprocess"
    if not stage_dir.exists():
        raise FileNotFoundError("preprocess outputs missing; run the preprocess stage first")
    masks = np.stack([imgio.load_mask_png(p) for p in imgio.list_frames(stage_dir / "masks")])
    pose_maps = np.stack(
        [imgio.load_mask_png(p) for p in imgio.list_frames(stage_dir / "posemaps")]
    )
    bbox_doc = json.loads((stage_dir / "crop_bboxes.json").read_text())
    return PreprocessOutputs(
        windows=load_windows(stage_dir / "windows.json"),
        crop_skeletons=pose.load_skeleton_sequence(stage_dir / "skeleton_crop.json"),
        crop_bboxes=[Rect.from_list(x) for x in bbox_doc["bboxes"]],
        crops=imgio.load_frames(stage_dir / "crops"),
        agnostic=imgio.load_frames(stage_dir / "agnostic"),
        masks=masks,
        pose_maps=pose_maps,
        garment=pose.GarmentImage(
            rgb=imgio.load_image(stage_dir / "garment.png"),
            foreground_mask=imgio.load_mask_png(stage_dir / "garment_mask.png"),
        ),
    )


def _select_keyframes(config: PipelineConfig) -> tuple[keyframes.KeyframeSet, list[keyframes.FrameScore]]:
    seq = pose.load_skeleton_sequence(config.paths.skeletons)
    bboxes = load_bboxes(config.paths.bboxes)
    anchor = (
        keyframes.load_anchor(config.paths.anchor)
        if config.paths.anchor
        else keyframes.default_anchor()
    )
    scores = keyframes.score_frames(
        seq,
        anchor,
        bboxes,
        config.keyframes.lam,
        confidence_threshold=config.pose.confidence_threshold,
    )
    selection = keyframes.select_keyframes(scores, config.keyframes.k, config.keyframes.alpha)
    return selection, scores


def build_stage1_model(config: PipelineConfig) -> model_lib.ReferenceTryonModel:
    m = config.stage1.model
    cfg = model_lib.ReferenceModelConfig(
        dim=m.dim,
        heads=m.heads,
        blocks=m.blocks,
        ff_mult=m.ff_mult,
        lora_rank=m.lora_rank,
        lora_alpha=m.lora_alpha,
        keyframe_in_channels=2 * codec.IMAGE_CHANNELS + 1,
        context_in_channels=codec.IMAGE_CHANNELS,
        text_channels=config.text.channels,
        out_channels=codec.IMAGE_CHANNELS,
        time_dim=m.time_dim,
        proj_gain=m.proj_gain,
        seed=config.seed + 1,
    )
    return model_lib.ReferenceTryonModel(cfg)


def build_stage2_model(config: PipelineConfig) -> model_lib.MultiStreamDiT:
    m = config.stage2.model
    cfg = model_lib.ModelConfig(
        dim=m.dim,
        heads=m.heads,
        blocks=m.blocks,
        ff_mult=m.ff_mult,
        lora_rank=m.lora_rank,
        lora_alpha=m.lora_alpha,
        video_in_channels=config.video_in_channels,
        image_in_channels=codec.IMAGE_CHANNELS,
        text_channels=config.text.channels,
        out_channels=config.latent_channels,
        time_dim=m.time_dim,
        proj_gain=m.proj_gain,
        seed=config.seed,
    )
    model = model_lib.MultiStreamDiT(cfg)
    if config.stage2.checkpoint:
        model_lib.load_checkpoint(model, config.stage2.checkpoint)
    return model


def _image_latent_mask(mask: np.ndarray) -> np.ndarray:
    """Spatial-only any-pooling of a single-frame mask onto the image grid."""
    height, width = mask.shape
    h = height // codec.SPATIAL_FACTOR
    w = width // codec.SPATIAL_FACTOR
    blocks = mask.reshape(h, codec.SPATIAL_FACTOR, w, codec.SPATIAL_FACTOR)
    return (blocks.max(axis=(1, 3)) > 0).astype(np.float64)


def _stage1_caption(config: PipelineConfig) -> captions.CaptionRecord:
    record = captions.load_caption(config.paths.caption)
    description = Path(config.paths.garment_description).read_text(encoding="utf-8").strip()
    return captions.swap_appearance(record, description)


def run_stage1(config: PipelineConfig) -> dict:
    cfg_hash = _require_valid(config)
    run_dir = Path(config.paths.run_dir)
    if stage_completed(run_dir, "stage1", cfg_hash):
        return {"stage": "stage1", "skipped": True, "config_hash": cfg_hash}
    started = time.time()
    try:
        pre = _load_preprocess(config)
        selection, all_scores = _select_keyframes(config)
        model = build_stage1_model(config)

        caption = _stage1_caption(config)
        text = captions.encode_text(
            caption, max_tokens=config.text.max_tokens, channels=config.text.channels
        )
        null_text = captions.encode_text(
            captions.CaptionRecord("", "", ""),
            max_tokens=config.text.max_tokens,
            channels=config.text.channels,
        )
        garment_seq = codec.patchify(
            codec.encode_image(codec.normalize_frames(pre.garment.rgb))
        )

        agnostic_latents = []
        latent_masks = []
        for idx in selection.indices:
            agnostic_latents.append(
                codec.encode_image(codec.normalize_frames(pre.agnostic[idx])).data[0]
            )
            latent_masks.append(_image_latent_mask(pre.masks[idx]))
        conditions = engine.KeyframeConditions(
            agnostic=np.stack(agnostic_latents),
            mask=np.stack(latent_masks),
            garment=garment_seq,
            text=text,
            null_text=null_text,
        )

        def generate(seed: int) -> np.ndarray:
            cfg = engine.SampleConfig(
                steps=config.stage1.steps, cfg_scale=config.stage1.cfg_scale, seed=seed
            )
            latents = engine.euler_sample_keyframes(model, conditions, cfg)
            frames = [
                codec.denormalize_frames(
                    codec.decode_image(codec.LatentVideo(lat[None], stream="image"))
                )
                for lat in latents
            ]
            return np.stack(frames)

        def selector(frames: np.ndarray) -> float:
            # Deterministic best-of-N proxy: agreement with the untouched
            # (unmasked) region of the agnostic crops.
            scores = []
            for frame, idx in zip(frames, selection.indices):
                keep = pre.masks[idx] == 0
                if not keep.any():
                    scores.append(0.0)
                    continue
                diff = np.abs(
                    frame.astype(np.float64) - pre.agnostic[idx].astype(np.float64)
                )
                scores.append(-float(diff[keep].mean()))
            return float(np.mean(scores))

        best_frames, best_seed, best_score = engine.best_of_n(
            generate, config.stage1.best_of, selector, base_seed=config.stage1.seed
        )

        stage_dir = run_dir / "stage1"
        stage_dir.mkdir(parents=True, exist_ok=True)
        outputs = []
        for frame, idx in zip(best_frames, selection.indices):
            path = stage_dir / f"tryon_{idx:06d}.png"
            imgio.save_image(frame, path, cfg_hash)
            outputs.append(path)
        report = keyframes.keyframe_set_to_json(selection, all_scores)
        report["best_of"] = {
            "n": config.stage1.best_of,
            "selected_seed": best_seed,
            "selector_score": best_score,
        }
        report_path = stage_dir / "keyframes.json"
        report_path.write_text(json.dumps(report, indent=1))
        outputs.append(report_path)
        return _finish_stage(run_dir, "stage1", cfg_hash, outputs, started)
    except (ConfigViolation, StageError):
        raise
    except Exception as exc:
        raise StageError("stage1", exc) from exc


def build_stage2_sample(
    config: PipelineConfig,
    pre: PreprocessOutputs,
    keyframe_images: np.ndarray,
    *,
    with_target: bool,
) -> engine.ConditionedSample:
    keep = config.codec.keep_channels
    agnostic = codec.encode_video(
        codec.normalize_frames(pre.agnostic), keep_channels=keep
    ).data
    latent_mask = codec.resize_mask_to_latent(pre.masks).astype(np.float64)
    pose_latent = captions.pose_guider(
        pre.pose_maps.astype(np.float64),
        config.pose_guider.window,
        channels=config.pose_guider.channels,
        seed=config.seed,
    )
    caption = _stage1_caption(config)
    text = captions.encode_text(
        caption, max_tokens=config.text.max_tokens, channels=config.text.channels
    )
    null_text = captions.encode_text(
        captions.CaptionRecord("", "", ""),
        max_tokens=config.text.max_tokens,
        channels=config.text.channels,
    )
    keyframe_tokens = codec.encode_keyframes(
        [codec.normalize_frames(img) for img in keyframe_images]
    )
    x0 = None
    if with_target:
        x0 = codec.encode_video(codec.normalize_frames(pre.crops), keep_channels=keep).data
    return engine.ConditionedSample(
        agnostic=agnostic,
        mask=latent_mask,
        pose=pose_latent,
        text=text,
        null_text=null_text,
        keyframes=keyframe_tokens,
        x0=x0,
    )


def _load_stage1_images(run_dir: Path) -> np.ndarray:
    stage_dir = run_dir / "stage1"
    paths = sorted(stage_dir.glob("tryon_*.png"))
    if not paths:
        raise FileNotFoundError("stage1 outputs missing; run stage1 first")
    return np.stack([imgio.load_image(p) for p in paths])


def run_stage2(config: PipelineConfig) -> dict:
    cfg_hash = _require_valid(config)
    run_dir = Path(config.paths.run_dir)
    if stage_completed(run_dir, "stage2", cfg_hash):
        return {"stage": "stage2", "skipped": True, "config_hash": cfg_hash}
    started = time.time()
    try:
        pre = _load_preprocess(config)
        keyframe_images = _load_stage1_images(run_dir)
        sample = build_stage2_sample(config, pre, keyframe_images, with_target=False)
        model = build_stage2_model(config)

        sample_cfg = engine.SampleConfig(
            steps=config.stage2.sample.steps,
            cfg_scale=config.stage2.sample.cfg_scale,
            seed=config.stage2.sample.seed,
        )
        segment_slices = config.stage2.segment_frames // codec.TEMPORAL_FACTOR
        latent, plan = engine.generate_long_video(
            model, sample, sample_cfg, segment_slices=segment_slices
        )
        generated = codec.denormalize_frames(
            codec.decode_video(codec.LatentVideo(latent))
        )

        originals = imgio.load_frames(config.paths.frames_dir)
        fused = []
        for i in range(len(originals)):
            fused.append(
                pyramid_fuse(
                    originals[i],
                    generated[i],
                    pre.masks[i],
                    pre.windows.rect(i),
                    config.fusion.levels,
                )
            )

        stage_dir = run_dir / "stage2"
        outputs = []
        latent_path = stage_dir / "video.latent"
        stage_dir.mkdir(parents=True, exist_ok=True)
        codec.save_latent(codec.LatentVideo(latent), latent_path)
        outputs.append(latent_path)
        outputs += imgio.save_frames(generated, stage_dir / "generated", cfg_hash)
        outputs += imgio.save_frames(np.stack(fused), stage_dir / "frames", cfg_hash)
        plan_path = stage_dir / "segments.json"
        plan_path.write_text(json.dumps({"plan": plan}))
        outputs.append(plan_path)
        return _finish_stage(run_dir, "stage2", cfg_hash, outputs, started)
    except (ConfigViolation, StageError):
        raise
    except Exception as exc:
        raise StageError("stage2", exc) from exc


def run_train(config: PipelineConfig) -> dict:
    """Self-reconstruction training on the fixture clip: the target video is
    the source crop sequence and the keyframe images are its own selected
    frames, mirroring how unpaired clips supervise the try-on task."""
    cfg_hash = _require_valid(config)
    run_dir = Path(config.paths.run_dir)
    started = time.time()
    try:
        pre = _load_preprocess(config)
        selection, _ = _select_keyframes(config)
        keyframe_images = pre.crops[selection.indices]
        sample = build_stage2_sample(config, pre, keyframe_images, with_target=True)
        model = build_stage2_model(config)

        train_cfg = engine.TrainConfig(
            learning_rate=config.stage2.train.learning_rate,
            weight_decay=config.stage2.train.weight_decay,
            grad_clip_norm=config.stage2.train.grad_clip_norm,
            task_probabilities=dict(config.stage2.train.task_probabilities),
            seed=config.stage2.train.seed,
        )
        trainer = engine.Trainer(model, train_cfg)
        stage_dir = run_dir / "train"
        stage_dir.mkdir(parents=True, exist_ok=True)
        log_path = stage_dir / "metrics.jsonl"
        with log_path.open("w") as fh:
            for _ in range(config.stage2.train.steps):
                record = trainer.training_step(sample)
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        ckpt_base = stage_dir / "checkpoint"
        model_lib.save_checkpoint(model, ckpt_base)
        outputs = [log_path, ckpt_base.with_suffix(".bin"), ckpt_base.with_suffix(".json")]
        return _finish_stage(run_dir, "train", cfg_hash, outputs, started)
    except (ConfigViolation, StageError):
        raise
    except Exception as exc:
        raise StageError("train", exc) from exc


def run_blend(
    original_dir: str | Path,
    generated_dir: str | Path,
    mask_dir: str | Path,
    windows_path: str | Path,
    out_dir: str | Path,
    levels: int = 4,
) -> list[Path]:
    originals = imgio.load_frames(original_dir)
    generated = imgio.load_frames(generated_dir)
    masks = np.stack([imgio.load_mask_png(p) for p in imgio.list_frames(mask_dir)])
    windows = load_windows(windows_path)
    if not (len(originals) == len(generated) == len(masks) == len(windows)):
        raise ValueError("frame counts differ between blend inputs")
    fused = [
        pyramid_fuse(originals[i], generated[i], masks[i], windows.rect(i), levels)
        for i in range(len(originals))
    ]
    return imgio.save_frames(np.stack(fused), out_dir)


def run_eval(
    config: PipelineConfig,
    generated_dir: str | Path | None = None,
    reference_dir: str | Path | None = None,
    force: bool = False,
) -> dict:
    cfg_hash = _require_valid(config)
    run_dir = Path(config.paths.run_dir)
    started = time.time()
    try:
        generated_dir = Path(generated_dir or run_dir / "stage2" / "frames")
        reference_dir = Path(reference_dir or config.paths.frames_dir)
        gen_meta = read_artifact_meta(generated_dir.parent)
        ref_meta = read_artifact_meta(reference_dir.parent)
        if not force and gen_meta and ref_meta:
            if gen_meta["config_hash"] != ref_meta["config_hash"]:
                raise ValueError(
                    "artifact config hashes differ "
                    f"({gen_meta['config_hash']} vs {ref_meta['config_hash']}); "
                    "pass force to compare anyway"
                )
        report = evaluate_run(
            generated_dir,
            reference_dir,
            feature_plugin=config.eval.feature_plugin,
            mode=config.eval.mode,
            config_hash=cfg_hash,
        )
        stage_dir = run_dir / "eval"
        stage_dir.mkdir(parents=True, exist_ok=True)
        report_path = stage_dir / "report.json"
        report_path.write_text(report.to_json())
        return _finish_stage(run_dir, "eval", cfg_hash, [report_path], started)
    except (ConfigViolation, StageError):
        raise
    except Exception as exc:
        raise StageError("eval", exc) from exc


def run_generate(
    config: PipelineConfig,
    out_dir: str | Path,
    keyframe_paths: list[str] | None = None,
    segments: int | None = None,
) -> dict:
    """One-shot stage-2 generation from explicit inputs (no run manifest).

    Keyframe try-on images come either from explicit paths or from a prior
    stage1 run. `segments` forces the clip to be generated in that many
    latent-continued segments."""
    cfg_hash = _require_valid(config)
    try:
        pre = compute_preprocess(config)
        if keyframe_paths:
            keyframe_images = np.stack([imgio.load_image(p) for p in keyframe_paths])
        else:
            keyframe_images = _load_stage1_images(Path(config.paths.run_dir))
        sample = build_stage2_sample(config, pre, keyframe_images, with_target=False)
        model = build_stage2_model(config)

        total_slices = sample.grid[0]
        if segments is not None and segments > 0:
            if segments == 1:
                segment_slices = total_slices
            else:
                segment_slices = max(2, -(-(total_slices + segments - 1) // segments))
        else:
            segment_slices = config.stage2.segment_frames // codec.TEMPORAL_FACTOR

        sample_cfg = engine.SampleConfig(
            steps=config.stage2.sample.steps,
            cfg_scale=config.stage2.sample.cfg_scale,
            seed=config.stage2.sample.seed,
        )
        latent, plan = engine.generate_long_video(
            model, sample, sample_cfg, segment_slices=segment_slices
        )
        generated = codec.denormalize_frames(codec.decode_video(codec.LatentVideo(latent)))
        originals = imgio.load_frames(config.paths.frames_dir)
        fused = np.stack(
            [
                pyramid_fuse(
                    originals[i], generated[i], pre.masks[i], pre.windows.rect(i),
                    config.fusion.levels,
                )
                for i in range(len(originals))
            ]
        )
        out_dir = Path(out_dir)
        latent_path = out_dir / "video.latent"
        out_dir.mkdir(parents=True, exist_ok=True)
        codec.save_latent(codec.LatentVideo(latent), latent_path)
        imgio.save_frames(generated, out_dir / "generated", cfg_hash)
        frame_paths = imgio.save_frames(fused, out_dir / "frames", cfg_hash)
        write_artifact_meta(out_dir, "generate", cfg_hash)
        return {
            "stage": "generate",
            "config_hash": cfg_hash,
            "outputs": [str(latent_path)] + [str(p) for p in frame_paths],
            "segments": plan,
        }
    except (ConfigViolation, StageError):
        raise
    except Exception as exc:
        raise StageError("generate", exc) from exc


def run_all(config: PipelineConfig) -> list[dict]:
    with run_lock(Path(config.paths.run_dir)):
        entries = [run_preprocess(config), run_stage1(config), run_stage2(config), run_eval(config)]
    return entries
