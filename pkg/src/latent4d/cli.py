"""CLI commands for latent4d."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections.abc import Callable, Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any, NoReturn

import numpy as np

from .config import (
    THREADS_ENV,
    RunConfig,
    dump_config,
    load_config,
    load_run_config,
    resolve_threads,
    with_overrides,
)
from .errors import ConfigError, FormatError, Latent4DError, NonFinite
from .formats import (
    Checkpoint,
    TrainingLog,
    read_ppm,
    read_training_log,
    write_csv,
    write_keypoints,
    write_ppm,
    write_tensor,
)
from .losses import LOG_COLUMNS
from .metrics import evaluate_dataset, psnr, ssim, write_report
from .render import render_image
from .seeding import rng_for
from .state import RunStateManager
from .synth import (
    ClipDataset,
    StaticDataset,
    SyntheticScene,
    intrinsics_for,
    load_scene,
    make_clip,
    make_clip_dataset,
    make_static_dataset,
    oracle_render,
)
from .train import (
    AdamState,
    DynamicModel,
    FitResult,
    FreezeFlags,
    ObjectiveTerms,
    StaticModel,
    StepCallback,
    VideoModel,
    fit_dynamic,
    fit_static,
    fit_vae,
    gradient_check,
    load_checkpoint,
    restore_dynamic,
    restore_static,
    restore_video,
    sample_future,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERIC = 2


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with the validation-error code."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


# ---------------------------------------------------------------------------------------------
# Shared helpers


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < user defaults file < --config FILE < command-line flags."""
    config = with_overrides(RunConfig(), load_config())
    if args.config:
        config = load_run_config(args.config, config)
    flags: dict[str, Any] = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        flags[key.strip()] = value.strip()
    if args.seed is not None:
        flags["seed"] = args.seed
    if getattr(args, "scene", None):
        flags["scene"] = args.scene
    if args.threads is not None or os.environ.get(THREADS_ENV):
        flags["threads"] = resolve_threads(args.threads)
    return with_overrides(config, flags)


def _progress(args: argparse.Namespace) -> bool:
    return not args.quiet and sys.stderr.isatty()


def _scene(config: RunConfig) -> SyntheticScene:
    return load_scene(config.data.scene)


def _model_config(config: RunConfig, scene: SyntheticScene) -> RunConfig:
    """Match the component count and camera model to the scene."""
    cam = "vehicle" if scene.camera_motion.kind == "vehicle" else config.model.camera_model
    model = replace(config.model, component_count=scene.num_components, camera_model=cam)
    return replace(config, model=model)


def _static_dataset(config: RunConfig, scene: SyntheticScene) -> StaticDataset:
    return make_static_dataset(
        scene, config.model, config.data.num_views, config.data.oracle_samples, config.threads
    )


def _clip_dataset(config: RunConfig, scene: SyntheticScene) -> ClipDataset:
    return make_clip_dataset(
        scene,
        config.model,
        config.data.num_clips,
        config.seed,
        keypoints=config.data.keypoints_per_clip,
        samples=config.data.oracle_samples,
        threads=config.threads,
    )


def _frame_name(t: int, ext: str, prefix: str = "frame") -> str:
    return f"{prefix}{t:02d}.{ext}"


# ---------------------------------------------------------------------------------------------
# synth / render


def cmd_synth(args: argparse.Namespace) -> int:
    """Render a ground-truth dataset of the scene."""
    config = resolve_config(args)
    scene = _scene(config)
    config = _model_config(config, scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if scene.num_components == 1 and not args.clips:
        data = _static_dataset(config, scene)
        for v in range(data.num_views):
            write_ppm(out / _frame_name(v, "ppm", "view"), data.frames[v])
            write_tensor(out / _frame_name(v, "l4dt", "depth"), data.depths[v])
        write_ppm(out / "heldout.ppm", data.heldout_frame)
        write_tensor(out / "heldout_depth.l4dt", data.heldout_depth)
        print(f"Wrote {data.num_views} views of {scene.name} to {out}")
        return EXIT_OK

    clips = _clip_dataset(config, scene)
    for n, clip in enumerate(clips.clips):
        clip_dir = out / f"clip{n:03d}"
        clip_dir.mkdir(exist_ok=True)
        for t in range(clip.num_frames):
            write_ppm(clip_dir / _frame_name(t, "ppm"), clip.frames[t])
            write_tensor(clip_dir / _frame_name(t, "l4dt", "depth"), clip.depths[t])
            write_tensor(clip_dir / _frame_name(t, "l4dt", "flow"), clip.flows[t])
            write_tensor(clip_dir / _frame_name(t, "l4dt", "seg"), clip.segmentation[t])
        write_tensor(clip_dir / "camera.l4dt", clip.camera.params.value)
        write_tensor(clip_dir / "motion.l4dt", clip.motion.params.value)
        write_keypoints(clip_dir / "keypoints.csv", clip.tracks)
    print(f"Wrote {len(clips)} clips of {scene.name} to {out}")
    return EXIT_OK


def _render_oracle(args: argparse.Namespace, config: RunConfig, out: Path) -> int:
    scene = _scene(config)
    config = _model_config(config, scene)
    intr = intrinsics_for(config.model)
    camera = scene.camera_track(config.model.num_future_frames)
    motion = scene.motion_track(config.model.num_future_frames)
    frames = list(range(camera.num_frames)) if args.frame is None else [args.frame]
    for t in frames:
        buf = oracle_render(
            scene, camera, motion, t, intr, config.data.oracle_samples, config.threads
        )
        write_ppm(out / _frame_name(t, "ppm"), buf.rgb)
        write_tensor(out / _frame_name(t, "l4dt", "depth"), buf.depth)
        if t > 0:
            write_tensor(out / _frame_name(t, "l4dt", "flow"), buf.flow)
    print(f"Rendered {len(frames)} oracle frame(s) of {scene.name} to {out}")
    return EXIT_OK


def _render_static(
    args: argparse.Namespace, ckpt: Checkpoint, config: RunConfig, out: Path
) -> int:
    scene = _scene(config)
    data = _static_dataset(config, scene)
    model = restore_static(ckpt, data.intr)
    if args.frame is None:
        pose, depth, target = data.heldout_pose, data.heldout_depth, data.heldout_frame
    else:
        v = args.frame
        pose, depth, target = data.poses[v], data.depths[v], data.frames[v]
    buf = model.render_view(pose, config, depth, config.threads)
    write_ppm(out / "render.ppm", buf.rgb)
    write_tensor(out / "render_depth.l4dt", buf.depth)
    print(f"PSNR {psnr(buf.rgb, target):.3f} dB, SSIM {ssim(buf.rgb, target):.4f}")
    return EXIT_OK


def _render_dynamic(
    args: argparse.Namespace, ckpt: Checkpoint, config: RunConfig, out: Path
) -> int:
    scene = _scene(config)
    intr = intrinsics_for(config.model)
    oracle = scene if ckpt.meta.get("oracle_field") else None
    model = restore_dynamic(ckpt, intr, oracle)
    camera, motion = model.tracks()
    frames = list(range(camera.num_frames)) if args.frame is None else [args.frame]
    for t in frames:
        buf = render_image(
            model.field(),
            camera,
            motion,
            t,
            intr,
            config.render,
            depth_prior=model.depth0,
            threads=config.threads,
        )
        write_ppm(out / _frame_name(t, "ppm"), buf.rgb)
        write_tensor(out / _frame_name(t, "l4dt", "depth"), buf.depth)
    print(f"Rendered {len(frames)} frame(s) to {out}")
    return EXIT_OK


def _render_samples(
    args: argparse.Namespace, ckpt: Checkpoint, config: RunConfig, out: Path
) -> int:
    """Write ``--samples`` prior samples for every clip of the dataset."""
    scene = _scene(config)
    intr = intrinsics_for(config.model)
    model = restore_video(ckpt, intr)
    clips = _clip_dataset(config, scene)
    for n, clip in enumerate(clips.clips):
        for s in range(args.samples):
            sample_dir = out / f"clip{n:03d}" / f"sample{s:02d}"
            sample_dir.mkdir(parents=True, exist_ok=True)
            gen = sample_future(
                model,
                clip.frames[0],
                config,
                config.seed,
                stream=n * args.samples + s,
                depth0=clip.depths[0],
                threads=config.threads,
            )
            for t, buf in enumerate(gen.frames):
                write_ppm(sample_dir / _frame_name(t, "ppm"), buf.rgb)
    print(f"Wrote {args.samples} sample(s) for each of {len(clips)} clips to {out}")
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    """Render images from the oracle scene or a checkpoint."""
    config = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.oracle:
        return _render_oracle(args, config, out)
    if not args.checkpoint:
        raise ConfigError("render needs --oracle or --checkpoint PATH")
    ckpt = load_checkpoint(args.checkpoint)
    ckpt_config = replace(ckpt.config, threads=config.threads)
    renderers = {"static": _render_static, "dynamic": _render_dynamic, "vae": _render_samples}
    kind = ckpt.meta.get("kind")
    if kind not in renderers:
        raise ConfigError(f"checkpoint {args.checkpoint} has unknown kind {kind!r}")
    return renderers[kind](args, ckpt, ckpt_config, out)


# ---------------------------------------------------------------------------------------------
# Fitting


class _RunRecorder:
    """Training log and checkpoints for one named run."""

    def __init__(
        self, args: argparse.Namespace, config: RunConfig, command: str, meta: dict[str, Any]
    ) -> None:
        self.mgr = RunStateManager()
        self.run = args.run or command
        self.config = config
        self.meta = meta
        state = self.mgr.load(self.run, command)
        state.command, state.seed = command, config.seed
        self.mgr.save(self.run, state)
        self.log: TrainingLog | None = None

    def latest(self) -> Checkpoint | None:
        record = self.mgr.load(self.run).latest_checkpoint()
        if record is None:
            return None
        ckpt = load_checkpoint(record.path)
        if ckpt.meta.get("kind") != self.meta["kind"]:
            raise ConfigError(f"run {self.run} holds a {ckpt.meta.get('kind')} checkpoint")
        return ckpt

    def open_log(self, start: int) -> TrainingLog:
        path = self.mgr.log_path(self.run)
        if start > 0 and path.exists():
            # Drop rows an interrupted run wrote past the resumed checkpoint.
            kept = [r for r in read_training_log(path) if r["step"] < start]
            write_csv(path, LOG_COLUMNS, kept)
            self.log = TrainingLog(path, append=True)
        else:
            self.log = TrainingLog(path)
        return self.log

    def write(
        self, step: int, arrays: dict[str, np.ndarray], optimizer: AdamState, total: float
    ) -> Path:
        path = self.mgr.checkpoint_path(self.run, step)
        save_checkpoint(path, self.config, arrays, optimizer, {**self.meta, "steps_done": step})
        self.mgr.record_checkpoint(self.run, step, path, total)
        return path


def _run_fit(
    args: argparse.Namespace,
    recorder: _RunRecorder,
    fit: Callable[..., FitResult[Any]],
    model: StaticModel | DynamicModel | VideoModel,
    optimizer: AdamState | None,
) -> FitResult[Any]:
    """Run ``fit`` up to ``--steps`` total steps with logging and checkpoints."""
    config = recorder.config
    start = optimizer.step if optimizer else 0
    total_steps = args.steps if args.steps is not None else config.optim.max_steps
    if total_steps < start:
        raise ConfigError(f"run {recorder.run} is already at step {start}, past --steps")
    log = recorder.open_log(start)
    every = config.optim.checkpoint_every

    def callback(step: int, row: dict[str, float], opt: AdamState) -> None:
        log.append(row)
        if every > 0 and step % every == 0 and step < total_steps:
            recorder.write(step, model.arrays(), opt, row["total"])

    step_callback: StepCallback = callback
    result = fit(
        steps=total_steps - start,
        model=model,
        optimizer=optimizer,
        progress=_progress(args),
        callback=step_callback,
    )
    last = result.history[-1]["total"] if result.history else float("nan")
    path = recorder.write(result.steps_done, model.arrays(), result.optimizer, last)
    print(f"Finished {result.steps_done} steps, final total loss {last:.6g}")
    print(f"Checkpoint: {path}")
    return result


def cmd_fit_static(args: argparse.Namespace) -> int:
    """Fit a scene function to static views."""
    config = resolve_config(args)
    scene = _scene(config)
    config = _model_config(config, scene)
    data = _static_dataset(config, scene)
    recorder = _RunRecorder(args, config, "fit-static", {"kind": "static", "scene": scene.name})
    model = StaticModel.init(config, data.intr, data.depths[0])
    optimizer = None
    ckpt = recorder.latest() if args.resume else None
    if ckpt is not None:
        model = restore_static(ckpt, data.intr)
        optimizer = AdamState.from_snapshot(ckpt.optimizer)
    _run_fit(args, recorder, lambda **kw: fit_static(data, config, **kw), model, optimizer)
    buf = model.render_view(data.heldout_pose, config, data.heldout_depth, config.threads)
    print(f"Held-out view PSNR {psnr(buf.rgb, data.heldout_frame):.3f} dB")
    return EXIT_OK


def _freeze_flags(text: str | None) -> FreezeFlags:
    names = {n.strip() for n in (text or "").split(",") if n.strip()}
    unknown = names - {"field", "motion", "camera"}
    if unknown:
        raise ConfigError(f"unknown --freeze entries: {', '.join(sorted(unknown))}")
    return FreezeFlags(field="field" in names, motion="motion" in names, camera="camera" in names)


def cmd_fit_dynamic(args: argparse.Namespace) -> int:
    """Recover camera and component motion of one clip."""
    config = resolve_config(args)
    scene = _scene(config)
    config = _model_config(config, scene)
    data = replace(config.data, num_clips=max(config.data.num_clips, args.clip + 1))
    clips = _clip_dataset(replace(config, data=data), scene)
    clip = clips.clips[args.clip]
    meta = {
        "kind": "dynamic",
        "scene": scene.name,
        "clip": args.clip,
        "oracle_field": bool(args.oracle_field),
    }
    recorder = _RunRecorder(args, config, "fit-dynamic", meta)
    oracle = scene if args.oracle_field else None
    model = DynamicModel.init(
        config,
        clips.intr,
        scene.num_components,
        depth0=clip.depths[0],
        oracle=oracle,
        truth=(clip.camera, clip.motion) if args.init == "truth" else None,
    )
    optimizer = None
    ckpt = recorder.latest() if args.resume else None
    if ckpt is not None:
        model = restore_dynamic(ckpt, clips.intr, oracle)
        optimizer = AdamState.from_snapshot(ckpt.optimizer)
    terms = ObjectiveTerms.keypoints_only() if args.keypoints_only else ObjectiveTerms()
    freeze = _freeze_flags(args.freeze)

    def fit(**kw: Any) -> FitResult[DynamicModel]:
        return fit_dynamic(
            clips, config, clip_index=args.clip, freeze=freeze, terms=terms, **kw
        )

    _run_fit(args, recorder, fit, model, optimizer)
    camera, motion = model.tracks()
    cam_err = np.abs(camera.translations.value - clip.camera.translations.value).max()
    mot_err = np.abs(motion.translations.value - clip.motion.translations.value).max()
    print(f"Max camera translation error {cam_err:.4g}, component translation error {mot_err:.4g}")
    return EXIT_OK


def cmd_fit_vae(args: argparse.Namespace) -> int:
    """Train the conditional video model."""
    config = resolve_config(args)
    scene = _scene(config)
    config = _model_config(config, scene)
    clips = _clip_dataset(config, scene)
    meta = {"kind": "vae", "scene": scene.name, "num_components": scene.num_components}
    recorder = _RunRecorder(args, config, "fit-vae", meta)
    model = VideoModel.init(config, clips.intr, scene.num_components)
    optimizer = None
    ckpt = recorder.latest() if args.resume else None
    if ckpt is not None:
        model = restore_video(ckpt, clips.intr)
        optimizer = AdamState.from_snapshot(ckpt.optimizer)
    augment = not args.no_augment
    _run_fit(
        args,
        recorder,
        lambda **kw: fit_vae(clips, config, augment=augment, **kw),
        model,
        optimizer,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------------------------
# Verification and evaluation


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Compare analytic and finite-difference gradients of the full objective."""
    config = resolve_config(args)
    scene = _scene(config)
    config = _model_config(config, scene)
    clip = make_clip(
        scene,
        config.model,
        config.data.keypoints_per_clip,
        rng_for(config.seed, "gradcheck", "clip"),
        config.data.oracle_samples,
        config.threads,
    )
    report = gradient_check(
        config, clip, intrinsics_for(config.model), args.picks, config.seed, args.step
    )
    if args.verbose:
        for name, index, analytic, numeric in report.rows:
            print(f"  {name}[{index}]: analytic {analytic:.8g}, numeric {numeric:.8g}")
    print(f"Checked {len(report.rows)} entries, max relative error {report.max_error:.3e}")
    print(f"  with loss-scaled floor: {report.max_floored_error:.3e}")
    if report.max_error > args.tol:
        print(f"Gradient check failed: tolerance {args.tol:.1e}")
        return EXIT_NUMERIC
    return EXIT_OK


def _read_frames(directory: Path) -> np.ndarray:
    frames = sorted(directory.glob("frame*.ppm"))
    if not frames:
        raise FormatError(f"no frame*.ppm files in {directory}")
    return np.stack([read_ppm(f) for f in frames])


def cmd_eval(args: argparse.Namespace) -> int:
    """Best-of-N PSNR and SSIM of sampled clips against ground truth."""
    pred, gt = Path(args.pred), Path(args.gt)
    clip_dirs = sorted(d for d in gt.glob("clip*") if d.is_dir())
    if not clip_dirs:
        raise FormatError(f"no clip directories in {gt}")
    predictions, truths = [], []
    for clip_dir in clip_dirs:
        sample_dirs = sorted(d for d in (pred / clip_dir.name).glob("sample*") if d.is_dir())
        if args.samples is not None:
            sample_dirs = sample_dirs[: args.samples]
        if not sample_dirs:
            raise FormatError(f"no samples for {clip_dir.name} in {pred}")
        predictions.append([_read_frames(d) for d in sample_dirs])
        truths.append(_read_frames(clip_dir))
    report = evaluate_dataset(predictions, truths)
    out = Path(args.out) if args.out else pred / "report.csv"
    write_report(out, report)
    print(report.summary())
    print(f"Report: {out}")
    return EXIT_OK


def cmd_status(args: argparse.Namespace) -> int:
    """Show recorded runs."""
    mgr = RunStateManager()
    runs = [args.run] if args.run else mgr.list_runs()
    if not runs:
        print("No runs recorded yet.")
        return EXIT_OK
    for run in runs:
        stats = mgr.get_stats(run)
        print(f"Run: {run}")
        print(f"  Command: {stats['command']}")
        print(f"  Steps done: {stats['steps_done']}")
        print(f"  Checkpoints: {stats['checkpoints']}")
        print(f"  Latest: {stats['latest']}")
        print(f"  Last total loss: {stats['last_total']}")
        print()
    return EXIT_OK


# ---------------------------------------------------------------------------------------------
# Entry point


def _common_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="Run configuration file (key = value lines)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override one key")
    common.add_argument("--seed", type=int, help="Random seed")
    common.add_argument("--threads", type=int, help="Worker threads (default: $L4D_THREADS or 1)")
    common.add_argument("--scene", help="Scene name or path to a scene file")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    common.add_argument("--quiet", "-q", action="store_true", help="No progress bars")
    common.add_argument(
        "--dump-config", action="store_true", help="Print the resolved configuration and exit"
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = _Parser(
        prog="latent4d",
        description="Latent-conditioned dynamic scene functions for stochastic video prediction",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    synth_parser = subparsers.add_parser("synth", parents=[common], help="Render a dataset")
    synth_parser.add_argument("--out", "-o", required=True, help="Output directory")
    synth_parser.add_argument(
        "--clips", action="store_true", help="Render clips even for a one-component scene"
    )
    synth_parser.set_defaults(func=cmd_synth)

    render_parser = subparsers.add_parser("render", parents=[common], help="Render images")
    render_parser.add_argument("--oracle", action="store_true", help="Render the analytic scene")
    render_parser.add_argument("--checkpoint", help="Checkpoint to render from")
    render_parser.add_argument("--frame", type=int, help="Frame or view index (default: all)")
    render_parser.add_argument("--samples", type=int, default=1, help="Prior samples per clip")
    render_parser.add_argument("--out", "-o", default=".", help="Output directory")
    render_parser.set_defaults(func=cmd_render)

    for name, func, help_text in (
        ("fit-static", cmd_fit_static, "Fit a static scene"),
        ("fit-dynamic", cmd_fit_dynamic, "Fit the motion of one clip"),
        ("fit-vae", cmd_fit_vae, "Train the conditional video model"),
    ):
        fit_parser = subparsers.add_parser(name, parents=[common], help=help_text)
        fit_parser.add_argument("--run", help=f"Run name (default: {name})")
        fit_parser.add_argument("--steps", type=int, help="Total optimization steps")
        fit_parser.add_argument(
            "--resume", action="store_true", help="Continue from the run's latest checkpoint"
        )
        if name == "fit-dynamic":
            fit_parser.add_argument("--clip", type=int, default=0, help="Clip index")
            fit_parser.add_argument(
                "--oracle-field", action="store_true", help="Use the frozen analytic field"
            )
            fit_parser.add_argument(
                "--keypoints-only", action="store_true", help="Only the keypoint losses"
            )
            fit_parser.add_argument("--freeze", help="Comma list of field, motion, camera")
            fit_parser.add_argument("--init", choices=("identity", "truth"), default="identity")
        if name == "fit-vae":
            fit_parser.add_argument(
                "--no-augment", action="store_true", help="Disable flip and color augmentation"
            )
        fit_parser.set_defaults(func=func)

    grad_parser = subparsers.add_parser("gradcheck", parents=[common], help="Check gradients")
    grad_parser.add_argument("--tol", type=float, default=1e-4, help="Max relative error")
    grad_parser.add_argument("--picks", type=int, default=200, help="Entries to check")
    grad_parser.add_argument("--step", type=float, default=1e-5, help="Finite-difference step")
    grad_parser.set_defaults(func=cmd_gradcheck)

    eval_parser = subparsers.add_parser("eval", parents=[common], help="Best-of-N evaluation")
    eval_parser.add_argument("--pred", required=True, help="Directory of sampled clips")
    eval_parser.add_argument("--gt", required=True, help="Directory of ground-truth clips")
    eval_parser.add_argument("--samples", type=int, help="Use the first N samples per clip")
    eval_parser.add_argument("--out", help="Report CSV (default: <pred>/report.csv)")
    eval_parser.set_defaults(func=cmd_eval)

    status_parser = subparsers.add_parser("status", parents=[common], help="Show runs")
    status_parser.add_argument("--run", help="Run to show (default: all)")
    status_parser.set_defaults(func=cmd_status)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Main CLI entry point."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if args.dump_config:
            print(dump_config(resolve_config(args)), end="")
            return EXIT_OK
        code: int = args.func(args)
        return code
    except NonFinite as e:
        print(f"Numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (Latent4DError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
