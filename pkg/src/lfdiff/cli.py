"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data or format error
(including an empty evaluation dataset), 3 checkpoint error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import TrainState, load_checkpoint
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    FormatError,
    GenerationError,
    ShapeError,
)
from .evaluate import ablate_sampling_steps, emit_report, evaluate_dataset, write_ablation
from .fileio import list_scene_dirs, load_scene, save_scene, write_hdr_raw
from .images import SceneSpec
from .model import LFDiffConfig, build_model, infer
from .scenes import generate_scene
from .training import TrainConfig, load_train_config, run_training

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECKPOINT = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) == 1:
        parts = parts * 2
    try:
        h, w = (int(p) for p in parts)
    except ValueError as exc:
        raise _UsageError(f"bad --size {text!r}, expected e.g. 64 or 64x96") from exc
    return h, w


def _parse_steps_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p]
    except ValueError as exc:
        raise _UsageError(f"bad --steps list {text!r}") from exc


def build_parser() -> _Parser:
    parser = _Parser(prog="lfdiff", description="Low-frequency latent diffusion HDR toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic scene directories")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=str, default="64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--motion", type=float, default=4.0)
    p.add_argument("--saturation", type=float, default=0.1)
    p.add_argument("--exposures", type=str, default="-2,0,2")

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--config", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--resume", type=str, default="")

    p = sub.add_parser("infer", help="reconstruct one scene")
    p.add_argument("--ckpt", type=str, required=True)
    p.add_argument("--scene", type=str, required=True)
    p.add_argument("--steps", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, required=True)

    p = sub.add_parser("eval", help="evaluate a dataset directory")
    p.add_argument("--ckpt", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--steps", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, required=True)

    p = sub.add_parser("ablate-steps", help="sweep the sampling step count")
    p.add_argument("--ckpt", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--steps", type=str, required=True, help="comma list, e.g. 5,10,20,50")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, required=True)

    return parser


def _cmd_gen_data(args) -> int:
    evs = tuple(float(v) for v in args.exposures.split(","))
    size = _parse_size(args.size)
    out = Path(args.out)
    for i in range(args.count):
        spec = SceneSpec(
            seed=args.seed + i,
            size=size,
            motion_magnitude=args.motion,
            saturation_fraction=args.saturation,
            exposure_set=evs,
        )
        scene_dir = save_scene(generate_scene(spec), out, spec.seed)
        print(f"wrote {scene_dir}")
    return EXIT_OK


def _load_scenes(data_dir):
    dirs = list_scene_dirs(data_dir)
    if not dirs:
        raise DataError(f"no scenes under {data_dir}")
    return [load_scene(d) for d in dirs]


def _cmd_train(args) -> int:
    train_cfg, model_kv = load_train_config(args.config)
    if train_cfg.stage != args.stage:
        train_cfg = TrainConfig(**{**train_cfg.__dict__, "stage": args.stage})
    scenes = _load_scenes(args.data)

    state: TrainState | None = None
    if args.resume:
        model, state = load_checkpoint(args.resume)
    elif args.stage == 2:
        model, _ = load_checkpoint(train_cfg.stage1_ckpt)
    else:
        model = build_model(LFDiffConfig.from_dict(model_kv), seed=train_cfg.seed)
    run_training(model, scenes, train_cfg, args.out, state=state)
    print(f"wrote {Path(args.out) / 'checkpoint.lfck'}")
    return EXIT_OK


def _cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    stack = load_scene(args.scene)
    steps = args.steps or model.config.S
    hdr = infer(model, stack, S=steps, seed=args.seed)
    write_hdr_raw(hdr, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    steps = args.steps or model.config.S
    report = evaluate_dataset(model, args.data, steps, args.seed)
    emit_report(report, args.out)
    if report.empty:
        print("no scenes with ground truth; empty report written", file=sys.stderr)
        return EXIT_DATA
    print(f"mean PSNR-mu {report.mean('psnr_mu'):.3f} dB over {len(report.scenes)} scenes")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    steps = _parse_steps_list(args.steps)
    results = ablate_sampling_steps(model, args.data, steps, args.seed)
    write_ablation(results, args.out)
    if all(report.empty for _, report in results):
        print("no scenes with ground truth; empty ablation written", file=sys.stderr)
        return EXIT_DATA
    print(f"wrote {Path(args.out) / 'ablation.csv'}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "ablate-steps": _cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (_UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DataError, GenerationError, DomainError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
