"""Command line interface.

Exit codes: 0 success, 2 config violation, 3 stage failure. Everything flows
through the config file; the only environment variable consulted anywhere is
VVTON_CACHE_DIR (codec mixing-basis memo cache).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import captions, keyframes, pose
from .config import load_config, validate_config
from .fixtures import write_demo
from .pipeline import (
    ConfigViolation,
    StageError,
    load_bboxes,
    run_all,
    run_blend,
    run_eval,
    run_generate,
    run_lock,
    run_preprocess,
    run_stage1,
    run_stage2,
    run_train,
)


def _cmd_make_demo(args) -> int:
    config_path = write_demo(args.out, frames=args.frames)
    print(f"demo bundle written; config at {config_path}")
    return 0


def _cmd_validate_config(args) -> int:
    violations = validate_config(load_config(args.config))
    if violations:
        for v in violations:
            print(f"config violation: {v}", file=sys.stderr)
        return 2
    print("config ok")
    return 0


def _stage_cmd(runner):
    def handler(args) -> int:
        config = load_config(args.config)
        with run_lock(Path(config.paths.run_dir)):
            entry = runner(config)
        print(json.dumps(entry, sort_keys=True))
        return 0

    return handler


def _cmd_run_all(args) -> int:
    config = load_config(args.config)
    entries = run_all(config)
    for entry in entries:
        print(json.dumps(entry, sort_keys=True))
    return 0


def _cmd_sample_keyframes(args) -> int:
    seq = pose.load_skeleton_sequence(args.skeletons)
    anchor = keyframes.load_anchor(args.anchor) if args.anchor else keyframes.default_anchor()
    bboxes = load_bboxes(args.bboxes)
    scores = keyframes.score_frames(seq, anchor, bboxes, args.lam)
    selection = keyframes.select_keyframes(scores, args.k, args.alpha)
    doc = keyframes.keyframe_set_to_json(selection, scores)
    Path(args.out).write_text(json.dumps(doc, indent=1))
    print(f"selected frames {selection.indices} (T_s_min={selection.threshold:.6g})")
    return 0


def _cmd_caption_swap(args) -> int:
    record = captions.load_caption(args.caption)
    description = Path(args.garment_description).read_text(encoding="utf-8").strip()
    captions.save_caption(captions.swap_appearance(record, description), args.out)
    return 0


def _cmd_caption_drop(args) -> int:
    record = captions.load_caption(args.caption)
    dropped = captions.drop_conditions(
        record, args.seed, args.p_appearance, args.p_environment
    )
    captions.save_caption(dropped, args.out)
    return 0


def _cmd_blend(args) -> int:
    paths = run_blend(
        args.original, args.generated, args.mask, args.window, args.out, args.levels
    )
    print(f"blended {len(paths)} frames into {args.out}")
    return 0


def _cmd_eval(args) -> int:
    config = load_config(args.config)
    if args.mode:
        config.eval.mode = args.mode
    if args.features:
        config.eval.feature_plugin = args.features
    entry = run_eval(config, args.generated, args.reference, force=args.force)
    if args.out:
        report = Path(entry["outputs"][0]).read_text()
        Path(args.out).write_text(report)
    print(json.dumps(entry, sort_keys=True))
    return 0


def _cmd_generate(args) -> int:
    config = load_config(args.config)
    if args.checkpoint:
        config.stage2.checkpoint = str(Path(args.checkpoint).with_suffix(""))
    if args.skeletons:
        config.paths.skeletons = args.skeletons
    if args.caption:
        config.paths.caption = args.caption
    if args.frames:
        config.paths.frames_dir = args.frames
    if args.bboxes:
        config.paths.bboxes = args.bboxes
    config.stage2.sample.steps = args.steps
    config.stage2.sample.cfg_scale = args.cfg
    config.stage2.sample.seed = args.seed
    keyframe_paths = args.keyframes.split(",") if args.keyframes else None
    out_dir = args.out or str(Path(config.paths.run_dir) / "generate")
    entry = run_generate(config, out_dir, keyframe_paths, args.segments)
    print(json.dumps({k: v for k, v in entry.items() if k != "outputs"}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vvton", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-demo", help="write a synthetic input bundle and config")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=16)
    p.set_defaults(func=_cmd_make_demo)

    p = sub.add_parser("validate-config", help="check a config file, exit 2 on violations")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_validate_config)

    for name, runner in (
        ("preprocess", run_preprocess),
        ("stage1", run_stage1),
        ("stage2", run_stage2),
        ("train", run_train),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.set_defaults(func=_stage_cmd(runner))

    p = sub.add_parser("run-all", help="preprocess + stage1 + stage2 + eval")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run_all)

    p = sub.add_parser("sample-keyframes")
    p.add_argument("--skeletons", required=True)
    p.add_argument("--anchor", default="")
    p.add_argument("--bboxes", required=True)
    p.add_argument("--k", type=int, default=keyframes.DEFAULT_K)
    p.add_argument("--lambda", dest="lam", type=float, default=keyframes.DEFAULT_LAMBDA)
    p.add_argument("--alpha", type=float, default=keyframes.DEFAULT_ALPHA)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample_keyframes)

    p = sub.add_parser("caption")
    caption_sub = p.add_subparsers(dest="caption_command", required=True)
    q = caption_sub.add_parser("swap")
    q.add_argument("--caption", required=True)
    q.add_argument("--garment-description", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=_cmd_caption_swap)
    q = caption_sub.add_parser("drop")
    q.add_argument("--caption", required=True)
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--p-appearance", type=float, default=captions.DEFAULT_DROP_PROBABILITY)
    q.add_argument("--p-environment", type=float, default=captions.DEFAULT_DROP_PROBABILITY)
    q.add_argument("--out", required=True)
    q.set_defaults(func=_cmd_caption_drop)

    p = sub.add_parser("blend")
    p.add_argument("--original", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--window", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--levels", type=int, default=4)
    p.set_defaults(func=_cmd_blend)

    p = sub.add_parser("eval")
    p.add_argument("--config", required=True)
    p.add_argument("--generated", default=None)
    p.add_argument("--reference", default=None)
    p.add_argument("--mode", choices=["paired", "unpaired"], default=None)
    p.add_argument("--features", default=None, help="builtin or a plugin .py path")
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("generate")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default="")
    p.add_argument("--skeletons", default="")
    p.add_argument("--keyframes", default="", help="comma-separated try-on image paths")
    p.add_argument("--caption", default="")
    p.add_argument("--frames", default="")
    p.add_argument("--bboxes", default="")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--cfg", type=float, default=2.5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--segments", type=int, default=None)
    p.add_argument("--out", default="")
    p.set_defaults(func=_cmd_generate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigViolation as exc:
        for violation in exc.violations:
            print(f"config violation: {violation}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    except (RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
