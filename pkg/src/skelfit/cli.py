"""Command-line interface.

Subcommands: render, fit, eval, synth, gradcheck. All behavior is a pure
function of flags, config file, and seeds; flags win over the config file;
no environment variables are consulted.

Exit codes: 0 success, 1 I/O error, 2 validation/config error,
3 divergence during fitting, 4 gradient-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .camera import PerspectiveCamera, forward_kinematics, project
from .config import load_cli_config
from .datasets import generate, rest_offsets, write_dataset
from .exceptions import (
    ConfigError,
    DivergenceError,
    FormatError,
    GenerationError,
    ProjectionError,
    SkelfitError,
    TopologyError,
)
from .fitting import FitProblem, fit
from .gradcheck import run_all
from .metrics import POLICIES, aggregate, frame_error, report_csv
from .optim import ADAM_PRESETS, AdamConfig
from .poseio import PoseRecord, read_pose_file, write_pose_file
from .render import RenderParams, render
from .rng import SplitMix64
from .skim import SKIM_VERSION, read_skim, write_png_channels, write_png_composite, write_skim
from .topology import default_human_topology, load_topology

_POSE_SCHEMA_VERSION = 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="JSON", help="config file (flags win over it)")
    p.add_argument("--topology", metavar="JSON", help="topology file (default: built-in human)")


def _add_raster(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", type=float, help="render sharpness")
    p.add_argument("--width", type=int, help="raster width")
    p.add_argument("--height", type=int, help="raster height")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelfit",
        description="Skeleton-image rendering, pose fitting, and evaluation.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"skelfit {__version__} (skim format {SKIM_VERSION}, pose schema {_POSE_SCHEMA_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a pose record to a skeleton image")
    p.add_argument("poses", help="pose JSONL file")
    p.add_argument("--out", metavar="SKIM", help="output .skim path")
    p.add_argument("--png-dir", metavar="DIR", help="also write per-channel PNGs + composite")
    p.add_argument("--frame", type=int, default=None, help="frame id (default: first record)")
    p.add_argument("--layout", default="1ch", help="channel layout name (default: 1ch)")
    _add_raster(p)
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("fit", help="recover a pose from a target skeleton image")
    p.add_argument("target", help="target .skim file")
    p.add_argument("--mode", choices=("fit2d", "fit3d"), default="fit2d")
    p.add_argument("--layout", default="5ch", help="channel layout name (default: 5ch)")
    p.add_argument("--init", metavar="JSONL", help="pose file providing the init")
    p.add_argument("--init-frame", type=int, default=None, help="frame id within --init")
    p.add_argument("--init-noise", type=float, default=0.0, metavar="SIGMA",
                   help="Gaussian noise added to the init (normalized units for "
                        "fit2d, meters for fit3d)")
    p.add_argument("--seed", type=int, default=0, help="seed for --init-noise")
    p.add_argument("--preset", choices=sorted(ADAM_PRESETS),
                   help="optimizer preset (default: pretrain, unless the config file sets adam)")
    p.add_argument("--lr", type=float, help="override learning rate")
    p.add_argument("--max-steps", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-10, help="loss-plateau tolerance")
    p.add_argument("--bone-weight", type=float, default=10.0,
                   help="fit3d bone-length prior weight (0 disables)")
    p.add_argument("--fov", type=float, help="fit3d camera field of view (degrees)")
    p.add_argument("--out", metavar="JSON", help="write the FitResult JSON here (default: stdout)")
    p.add_argument("--out-pose", metavar="JSONL", help="write the fitted pose as a pose file")
    p.add_argument("--loss-csv", metavar="CSV", help="write the loss curve as step,loss")
    _add_raster(p)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("pred", help="predicted pose JSONL")
    p.add_argument("gt", help="ground-truth pose JSONL")
    p.add_argument("--policy", choices=POLICIES, default="both")
    p.add_argument("--rmse", action="store_true", help="append root-mean (pixel) columns")
    p.add_argument("--out", metavar="CSV", help="output path (default: stdout)")
    p.add_argument("--width", type=int, help="pixel scale (default: config render width)")
    p.add_argument("--height", type=int, help="pixel scale (default: config render height)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("--out-dir", required=True, metavar="DIR")
    p.add_argument("--count", type=int, help="number of samples")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--layout", default="5ch", help="target channel layout (default: 5ch)")
    p.add_argument("--no-targets", action="store_true", help="skip target images")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads (results are identical at any count)")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--render-probes", type=int, default=200,
                   help="coordinate probes for the render gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true",
                   help="negative control: corrupt gradients; the check must fail")
    p.add_argument("--topology", metavar="JSON", help="topology file (default: built-in human)")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def _topology(args):
    if getattr(args, "topology", None):
        return load_topology(args.topology)
    return default_human_topology()


def _render_params(cfg, args) -> RenderParams:
    return RenderParams(
        gamma=args.gamma if args.gamma is not None else cfg.render.gamma,
        width=args.width if args.width is not None else cfg.render.width,
        height=args.height if args.height is not None else cfg.render.height,
    )


def _pick_record(records: list[PoseRecord], frame: int | None, what: str) -> PoseRecord:
    if frame is None:
        return records[0]
    for rec in records:
        if rec.frame == frame:
            return rec
    raise ValueError(f"{what}: no record with frame id {frame}")


def cmd_render(args) -> int:
    if not args.out and not args.png_dir:
        raise ValueError("nothing to do: pass --out and/or --png-dir")
    cfg = load_cli_config(args.config)
    topo = _topology(args)
    params = _render_params(cfg, args)
    rec = _pick_record(read_pose_file(args.poses, topo.n_joints), args.frame, args.poses)
    image = render(rec.kp2d, topo, args.layout, params)
    if args.out:
        write_skim(image, args.out)
        print(f"wrote {args.out}: {image.shape[0]}ch {params.width}x{params.height}")
    if args.png_dir:
        paths = write_png_channels(image, args.png_dir)
        composite = write_png_composite(image, Path(args.png_dir) / "composite.png")
        print(f"wrote {len(paths)} channel PNGs + {composite}")
    return 0


def _default_init_3d(topo) -> np.ndarray:
    offsets = rest_offsets(topo)
    rots = np.zeros((topo.n_joints, 6))
    rots[:, 0] = 1.0
    rots[:, 4] = 1.0
    pos, _ = forward_kinematics(offsets, rots, topo, (0.0, 0.0, 3.5))
    mid = (pos.min(axis=0) + pos.max(axis=0)) / 2.0
    return pos - [mid[0], mid[1], 0.0]


def _noisy(x: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    if sigma == 0.0:
        return x
    rng = SplitMix64(seed)
    noise = np.array([rng.normal(0.0, sigma) for _ in range(x.size)])
    return x + noise.reshape(x.shape)


def cmd_fit(args) -> int:
    cfg = load_cli_config(args.config)
    topo = _topology(args)
    params = _render_params(cfg, args)
    target = read_skim(args.target).astype(np.float64)

    camera = PerspectiveCamera(
        fov_deg=args.fov if args.fov is not None else cfg.camera.fov_deg,
        width=params.width,
        height=params.height,
    )
    init_orient = None
    if args.init:
        rec = _pick_record(read_pose_file(args.init, topo.n_joints), args.init_frame, args.init)
        if args.mode == "fit2d":
            init = rec.kp2d
        else:
            if rec.pos3d is None:
                raise ValueError(f"{args.init}: fit3d init record has no pos3d")
            init = rec.pos3d
            init_orient = rec.rot6d
    elif args.mode == "fit2d":
        init = project(_default_init_3d(topo), camera, topo)
    else:
        init = _default_init_3d(topo)
    init = _noisy(np.asarray(init, dtype=np.float64), args.init_noise, args.seed)

    if args.preset:
        adam = ADAM_PRESETS[args.preset]
    elif "adam" in cfg.sections:
        adam = cfg.adam
    else:
        adam = ADAM_PRESETS["pretrain"]
    if args.lr is not None:
        adam = dataclasses.replace(adam, lr=args.lr)

    problem = FitProblem(
        target=target,
        topology=topo,
        init=init,
        mode=args.mode,
        layout=args.layout,
        params=params,
        camera=camera if args.mode == "fit3d" else None,
        init_orientations=init_orient,
        weights=cfg.loss_weights,
        bone_weight=args.bone_weight if args.mode == "fit3d" else 0.0,
        max_steps=args.max_steps,
        tol=args.tol,
    )
    result = fit(problem, adam)

    payload = json.dumps(result.to_dict(), indent=2, allow_nan=False)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    if args.out_pose:
        if result.mode == "fit2d":
            rec = PoseRecord(frame=0, kp2d=result.pose)
        else:
            rec = PoseRecord(
                frame=0,
                kp2d=project(result.pose, camera, topo),
                pos3d=result.pose,
                rot6d=result.orientations,
            )
        write_pose_file([rec], args.out_pose)
    if args.loss_csv:
        lines = ["step,loss"] + [
            f"{i},{v!r}" for i, v in enumerate(result.loss_curve)
        ]
        Path(args.loss_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(
        f"{result.mode}: {result.termination} after {result.n_steps} steps, "
        f"final loss {result.final_loss:.6g}",
        file=sys.stderr,
    )
    return 3 if result.termination == "diverged" else 0


def cmd_eval(args) -> int:
    cfg = load_cli_config(args.config)
    topo = _topology(args)
    width = args.width if args.width is not None else cfg.render.width
    height = args.height if args.height is not None else cfg.render.height
    pred = read_pose_file(args.pred, topo.n_joints)
    gt = read_pose_file(args.gt, topo.n_joints)
    by_frame = {}
    for rec in pred:
        if rec.frame in by_frame:
            raise ValueError(f"{args.pred}: duplicate frame id {rec.frame}")
        by_frame[rec.frame] = rec
    frames = []
    for rec in gt:
        if rec.frame not in by_frame:
            raise ValueError(f"{args.pred}: no prediction for frame id {rec.frame}")
        frames.append(
            frame_error(
                by_frame[rec.frame].kp2d, rec.kp2d, topo, width, height,
                frame=rec.frame, activity=rec.activity,
            )
        )
    extra = set(by_frame) - {rec.frame for rec in gt}
    if extra:
        raise ValueError(f"{args.pred}: predictions for unknown frame ids {sorted(extra)}")
    text = report_csv(aggregate(frames, args.policy), rmse=args.rmse)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    cfg = load_cli_config(args.config)
    topo = _topology(args)
    gen = cfg.generator
    if args.count is not None:
        gen = dataclasses.replace(gen, count=args.count)
    if args.seed is not None:
        gen = dataclasses.replace(gen, seed=args.seed)
    layout = None if args.no_targets else args.layout
    params = None
    if layout is not None:
        topo.layout_rows(layout)
        params = RenderParams(
            gamma=cfg.render.gamma, width=gen.camera.width, height=gen.camera.height
        )
    samples = generate(gen, topo, layout=layout, params=params, threads=max(1, args.threads))
    write_dataset(samples, args.out_dir, gen, layout=layout, params=params)
    print(f"wrote {len(samples)} samples to {args.out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    topo = load_topology(args.topology) if args.topology else None
    results = run_all(args.render_probes, seed=args.seed, corrupt=args.corrupt, topology=topo)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(
            f"{r.name}: max rel err {r.max_rel_err:.3e} "
            f"(threshold {r.threshold:g}, {r.n_probes} probes, {r.n_excluded} excluded) {status}"
        )
        ok = ok and r.passed
    return 0 if ok else 4


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, FormatError, TopologyError, ProjectionError, GenerationError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SkelfitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
