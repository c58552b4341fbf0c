"""Command-line entry point.

Subcommands: gen-data (synthetic clips), shape-audit (published-shape
verification), train, rollout, eval. Exit codes: 0 success, 2 usage error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, synth
from .config import ConfigError, RunConfig, load_config, write_resolved
from .embeddings import (
    PROFILES,
    hand_stack_output_shape,
    motion_downsampler_output_shape,
    motion_token_grid,
    object_latent_shape,
    reference_pyramid_output_shape,
)
from .worldmodel import (
    ActionScript,
    TrainParams,
    TrainState,
    WorldModel,
    load_checkpoint,
    sample_rollout,
    save_checkpoint,
    save_loss_csv,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class DataError(RuntimeError):
    pass


def worker_count() -> int:
    value = os.environ.get("EGOWM_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def _map_jobs(fn, items):
    threads = worker_count()
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc}", file=sys.stderr)
        return EXIT_DATA

    def build(index: int):
        clip_seed = args.seed + index
        clip = synth.generate_clip(clip_seed, args.frames, args.size)
        synth.save_clip(clip, out / synth.clip_name(index), window=args.window)
        return clip_seed

    seeds = _map_jobs(build, list(range(args.clips)))
    cfg = RunConfig(seed=args.seed, frames=args.frames, size=args.size, out=str(out))
    write_resolved(cfg, out)
    print(f"wrote {len(seeds)} clips to {out}")
    return EXIT_OK


def _audit_rows(profile):
    grid = motion_token_grid(profile)
    n_tokens = grid[0] * grid[1] * grid[2]
    ref_c, ref_h, ref_w = reference_pyramid_output_shape(profile)
    return {
        "hand stack": hand_stack_output_shape(profile),
        "reference pyramid": (ref_h, ref_w, ref_c),
        "motion downsampler": motion_downsampler_output_shape(profile),
        "motion tokens": (profile.token_width,) + grid,
        "motion token count": n_tokens,
        "object latent": object_latent_shape(profile),
        "object token count": profile.token_count(),
    }


PAPER_EXPECTED = {
    "hand stack": (5120, 21, 30, 30),
    "reference pyramid": (60, 60, 20),
    "motion downsampler": (64, 21, 60, 60),
    "motion tokens": (5120, 21, 30, 30),
    "motion token count": 18900,
    "object latent": (16, 21, 60, 60),
    "object token count": 18900,
}


def cmd_shape_audit(args) -> int:
    profile = PROFILES[args.scale]
    rows = _audit_rows(profile)
    failed = False
    if args.scale == "paper":
        expected = PAPER_EXPECTED
    else:
        expected = dict(rows)
        executed = _execute_desk_shapes(profile)
        for key, value in executed.items():
            expected[key] = value
    for key, value in rows.items():
        want = expected[key]
        ok = value == want
        failed |= not ok
        status = "ok" if ok else f"MISMATCH (expected {want})"
        print(f"{key:22s} {str(value):22s} {status}")
    if failed:
        print("shape audit failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _execute_desk_shapes(profile):
    """Run the desk-scale encoders and report their executed shapes."""
    from .embeddings import EgoMotionEncoder, HandStreamEncoder, ReferenceHandEncoder
    from .tensor import Tensor, no_grad

    rng = np.random.default_rng(0)
    s, frames = profile.image_size, profile.frames
    with no_grad():
        hand = HandStreamEncoder(profile, rng)(
            Tensor(rng.random((3, frames, s, s), dtype=np.float32))
        )
        ref = ReferenceHandEncoder(profile, rng)(
            Tensor(rng.random((3, s, s), dtype=np.float32))
        )
        motion_enc = EgoMotionEncoder(profile, rng)
        volume = Tensor(rng.standard_normal((6, frames, s, s)).astype(np.float32))
        down = motion_enc.downsample(volume)
        motion = motion_enc(volume)
    return {
        "hand stack": (hand.width,) + hand.grid,
        "reference pyramid": (ref.shape[1], ref.shape[2], ref.shape[0]),
        "motion downsampler": down.shape,
        "motion tokens": (motion.width,) + motion.grid,
        "motion token count": motion.count,
        "object latent": object_latent_shape(profile),
        "object token count": profile.token_count(),
    }


def _load_dataset(path) -> list[synth.Clip]:
    root = Path(path)
    if not root.exists():
        raise DataError(f"dataset directory {root} does not exist")
    try:
        dirs = synth.list_clip_dirs(root)
    except synth.SynthError as exc:
        raise DataError(str(exc)) from exc
    return [synth.load_clip(d) for d in dirs]


def cmd_train(args) -> int:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    if args.data:
        cfg.data = args.data
    if args.out:
        cfg.out = args.out
    if not cfg.data or not cfg.out:
        print("error: --data and --out are required", file=sys.stderr)
        return EXIT_USAGE

    clips = _load_dataset(cfg.data)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)

    model = WorldModel(cfg.model_config(), seed=cfg.seed)
    params = cfg.train_params()
    state = None
    if args.resume:
        state = load_checkpoint(args.resume, model, params)
        print(f"resumed from {args.resume} at denoise step {state.denoise_step}")

    def log(msg):
        print(msg, flush=True)

    state = train(model, clips, params, log=log, state=state)
    ckpt = out / "checkpoint"
    save_checkpoint(ckpt, state, config_text=cfg.resolved_text())
    (ckpt / "config.resolved").write_text(cfg.resolved_text())
    save_loss_csv(out / "codec_loss.csv", state.codec_losses)
    save_loss_csv(out / "denoise_loss.csv", state.denoise_losses)
    print(f"checkpoint written to {ckpt}")
    return EXIT_OK


def _model_from_checkpoint(path) -> tuple[WorldModel, TrainState, RunConfig]:
    ckpt = Path(path)
    cfg_file = ckpt / "config.resolved"
    if not ckpt.exists() or not cfg_file.exists():
        raise DataError(f"{ckpt} is not a checkpoint directory")
    cfg = load_config(cfg_file)
    model = WorldModel(cfg.model_config(), seed=cfg.seed)
    state = load_checkpoint(ckpt, model)
    return model, state, cfg


def cmd_rollout(args) -> int:
    model, _, cfg = _model_from_checkpoint(args.checkpoint)
    clip_dir = Path(args.clip)
    if not clip_dir.exists():
        raise DataError(f"clip directory {clip_dir} does not exist")
    clip = synth.load_clip(clip_dir)
    actions = ActionScript.from_clip(clip)
    steps = args.steps if args.steps is not None else cfg.steps
    seed = args.seed if args.seed is not None else cfg.seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    schedule = cfg.train_params().schedule()
    frames = sample_rollout(
        model, clip.rgb[0], actions, clip.object_masks[0], steps, rng, schedule
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .tensor import write_tns

    write_tns(out / "rgb.tns", frames)
    cfg.steps, cfg.seed = steps, seed
    write_resolved(cfg, out)
    if args.png:
        _export_png(frames, out)
    print(f"rollout of {frames.shape[0]} frames written to {out}")
    return EXIT_OK


def _export_png(frames: np.ndarray, out: Path) -> None:
    from PIL import Image

    png_dir = out / "png"
    png_dir.mkdir(exist_ok=True)
    for t in range(frames.shape[0]):
        img = (frames[t].transpose(1, 2, 0) * 255).round().astype(np.uint8)
        Image.fromarray(img).save(png_dir / f"frame_{t:04d}.png")


def cmd_eval(args) -> int:
    gt_root, pred_root = Path(args.gt), Path(args.pred)
    try:
        gt_dirs = synth.list_clip_dirs(gt_root)
    except synth.SynthError as exc:
        raise DataError(str(exc)) from exc

    jobs = []
    for gt_dir in gt_dirs:
        pred_dir = pred_root / gt_dir.name
        pred_file = pred_dir / "rgb.tns"
        if not pred_file.exists():
            raise DataError(f"prediction {pred_file} is missing")
        jobs.append((gt_dir, pred_file))

    from .tensor import read_tns

    def evaluate(job):
        gt_dir, pred_file = job
        gt_clip = synth.load_clip(gt_dir)
        pred = read_tns(pred_file)
        if pred.shape != gt_clip.rgb.shape:
            raise DataError(
                f"{pred_file}: shape {pred.shape} does not match {gt_clip.rgb.shape}"
            )
        return evaluation.evaluate_clip_pair(gt_dir.name, gt_clip, pred)

    results = _map_jobs(evaluate, jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_report_csv(out / "report.csv", results)
    evaluation.write_summary(out / "summary.txt", results)
    (out / "eval.config").write_text(f"gt={gt_root}\npred={pred_root}\n")
    macro = evaluation.macro_average(results)
    shown = {k: v for k, v in macro.values.items() if v is not None}
    print("macro: " + " ".join(f"{k}={v:.4f}" for k, v in shown.items()))
    print(f"report written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egowm",
        description="desk-scale egocentric world model: data, training, rollout, metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic clip directories")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--clips", type=int, default=2)
    g.add_argument("--frames", type=int, default=9)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--out", required=True)
    g.add_argument("--window", type=int, default=None, help="enumerate sliding windows of this length in meta")
    g.set_defaults(fn=cmd_gen_data)

    a = sub.add_parser("shape-audit", help="verify encoder output shapes")
    a.add_argument("--scale", choices=("paper", "desk"), default="paper")
    a.set_defaults(fn=cmd_shape_audit)

    t = sub.add_parser("train", help="train codec and denoiser on a clip dataset")
    t.add_argument("--data")
    t.add_argument("--config")
    t.add_argument("--out")
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("rollout", help="sample frames from a checkpoint and a clip's actions")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--clip", required=True)
    r.add_argument("--steps", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--png", action="store_true", help="also export lossless PNG frames")
    r.set_defaults(fn=cmd_rollout)

    e = sub.add_parser("eval", help="metric report for generated rollouts")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    from .tensor.ops import ShapeError
    from .worldmodel import RolloutError, ScheduleError, TrainingError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        DataError,
        synth.SynthError,
        TrainingError,
        RolloutError,
        FileNotFoundError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (evaluation.MetricError, ShapeError, ScheduleError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
