"""Procedural paired datasets: randomized 3D poses, projections, targets.

Each sample is generated from its own RNG substream (``stream_seed(seed, i)``)
so datasets are reproducible byte-for-byte regardless of generation order or
thread count. The per-sample draw order is a compatibility contract:

    1. per joint, ascending index: rotation axis (3 Gaussians), then the
       angle ~ U(0, limit);
    2. bone scales, ascending canonical child index (mirror pairs share);
    3. per placement attempt: root depth ~ U(depth_range).

Joints that the flip map sends to themselves lie on the body's symmetry
axis and get the tighter core rotation limit; all others count as limbs.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, draw_bone_scales
from .camera import (
    PerspectiveCamera,
    axis_angle_to_matrix,
    forward_kinematics,
    matrix_to_rot6d,
    project,
)
from .exceptions import GenerationError, ProjectionError
from .poseio import PoseRecord, read_pose_file, write_pose_file
from .render import RenderParams, render
from .rng import SplitMix64, stream_seed
from .skim import write_skim
from .topology import SkeletonTopology, default_human_topology
from .validation import check_positions

__all__ = [
    "GeneratorConfig",
    "Sample",
    "rest_offsets",
    "generate",
    "write_dataset",
]

_FRAME_MARGIN = 0.05

# T-pose bone offsets (meters, camera frame: X right, Y down) keyed by joint
# name. The subject faces the camera, so their left side is at +X.
_REST_OFFSETS = {
    "pelvis": (0.0, 0.0, 0.0),
    "spine": (0.0, -0.12, 0.0),
    "chest": (0.0, -0.15, 0.0),
    "neck": (0.0, -0.14, 0.0),
    "head": (0.0, -0.12, 0.0),
    "left_hip": (0.10, 0.05, 0.0),
    "left_knee": (0.0, 0.42, 0.0),
    "left_ankle": (0.0, 0.40, 0.0),
    "right_hip": (-0.10, 0.05, 0.0),
    "right_knee": (0.0, 0.42, 0.0),
    "right_ankle": (0.0, 0.40, 0.0),
    "left_shoulder": (0.17, -0.02, 0.0),
    "left_elbow": (0.26, 0.0, 0.0),
    "left_wrist": (0.25, 0.0, 0.0),
    "right_shoulder": (-0.17, -0.02, 0.0),
    "right_elbow": (-0.26, 0.0, 0.0),
    "right_wrist": (-0.25, 0.0, 0.0),
}


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    count: int = 1
    rest_pose: str | None = None          # pose file path; None = built-in T-pose
    limb_limit_deg: float = 60.0
    core_limit_deg: float = 20.0
    depth_range: tuple[float, float] = (2.5, 4.5)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    camera: PerspectiveCamera = field(default_factory=PerspectiveCamera)

    def __post_init__(self):
        object.__setattr__(self, "depth_range", tuple(self.depth_range))
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.limb_limit_deg < 0 or self.core_limit_deg < 0:
            raise ValueError("rotation limits must be >= 0 degrees")
        lo, hi = self.depth_range
        if not (0 < lo <= hi):
            raise ValueError(f"depth_range must satisfy 0 < lo <= hi, got ({lo}, {hi})")


@dataclass(frozen=True)
class Sample:
    record: PoseRecord
    target: np.ndarray | None = None


def rest_offsets(topology: SkeletonTopology, rest_pose_path: str | None = None) -> np.ndarray:
    """(J, 3) bone offsets for the generator's rest skeleton.

    With no path, every joint name must appear in the built-in T-pose table.
    With a path, the first record's pos3d is read as a neutral pose whose
    joint frames all align with the world frame, so offsets are position
    differences along the tree.
    """
    if rest_pose_path is None:
        try:
            return np.asarray([_REST_OFFSETS[j] for j in topology.joints], dtype=np.float64)
        except KeyError as exc:
            raise ValueError(
                f"no built-in rest offset for joint {exc.args[0]!r}; "
                "pass a rest-pose file for custom topologies"
            ) from None
    rec = read_pose_file(rest_pose_path, n_joints=topology.n_joints)[0]
    if rec.pos3d is None:
        raise ValueError(f"{rest_pose_path}: rest pose record has no pos3d")
    pos = check_positions(rec.pos3d, topology.n_joints, name="rest pos3d")
    off = np.zeros_like(pos)
    for k, p in enumerate(topology.parents):
        if p is not None:
            off[k] = pos[k] - pos[p]
    return off


def _rotation_limits(topology: SkeletonTopology, cfg: GeneratorConfig) -> np.ndarray:
    limits = np.empty(topology.n_joints, dtype=np.float64)
    for k in range(topology.n_joints):
        core = topology.flip_map[k] == k
        limits[k] = cfg.core_limit_deg if core else cfg.limb_limit_deg
    return np.radians(limits)


def _draw_rotations(rng: SplitMix64, limits: np.ndarray) -> np.ndarray:
    rots = np.empty((limits.shape[0], 6), dtype=np.float64)
    for k, limit in enumerate(limits):
        axis = np.array([rng.normal(), rng.normal(), rng.normal()])
        while np.linalg.norm(axis) < 1e-12:
            axis = np.array([rng.normal(), rng.normal(), rng.normal()])
        angle = rng.uniform(0.0, limit)
        rots[k] = matrix_to_rot6d(axis_angle_to_matrix(axis, angle))
    return rots


def _center_at_depth(offsets, rotations, topology, camera, depth):
    """FK at the given root depth, then shift X/Y until the projected
    bounding-box center sits on the image center."""
    pos, orient = forward_kinematics(offsets, rotations, topology, (0.0, 0.0, depth))
    f = camera.focal
    fy = f * camera.aspect
    for _ in range(8):
        kp = project(pos, camera, topology)
        dx = 0.5 - (kp[:, 0].min() + kp[:, 0].max()) / 2.0
        dy = 0.5 - (kp[:, 1].min() + kp[:, 1].max()) / 2.0
        if abs(dx) < 1e-12 and abs(dy) < 1e-12:
            break
        pos = pos + np.array([dx * depth / f, dy * depth / fy, 0.0])
    return pos, orient, project(pos, camera, topology)


def _in_frame(kp: np.ndarray) -> bool:
    return bool(
        np.all(kp >= _FRAME_MARGIN) and np.all(kp <= 1.0 - _FRAME_MARGIN)
    )


def _generate_one(
    index: int,
    cfg: GeneratorConfig,
    topology: SkeletonTopology,
    offsets: np.ndarray,
    limits: np.ndarray,
    layout: str | None,
    params: RenderParams | None,
) -> Sample:
    rng = SplitMix64(stream_seed(cfg.seed, index))
    rotations = _draw_rotations(rng, limits)
    scales = draw_bone_scales(topology, rng, *cfg.augment.limb_scale_range)
    scaled = offsets * scales[:, None]

    placed = None
    last_depth = None
    for _ in range(100):
        depth = rng.uniform(*cfg.depth_range)
        last_depth = depth
        try:
            pos, orient, kp = _center_at_depth(scaled, rotations, topology, cfg.camera, depth)
        except ProjectionError:
            continue
        if _in_frame(kp):
            placed = (pos, orient, kp)
            break
    if placed is None:
        # Deterministic fallback: push the subject away from the camera
        # until it fits; each step recenters laterally.
        depth = last_depth if last_depth is not None else cfg.depth_range[1]
        for _ in range(200):
            depth += 0.5
            try:
                pos, orient, kp = _center_at_depth(scaled, rotations, topology, cfg.camera, depth)
            except ProjectionError:
                continue
            if _in_frame(kp):
                placed = (pos, orient, kp)
                break
        if placed is None:
            raise GenerationError(
                f"sample {index}: could not frame pose inside "
                f"[{_FRAME_MARGIN}, {1 - _FRAME_MARGIN}]^2 after fallback"
            )
    pos, orient, kp = placed
    record = PoseRecord(frame=index, activity=None, kp2d=kp, pos3d=pos, rot6d=orient)
    target = None
    if layout is not None:
        target = render(kp, topology, layout, params)
    return Sample(record=record, target=target)


def generate(
    cfg: GeneratorConfig,
    topology: SkeletonTopology | None = None,
    layout: str | None = "5ch",
    params: RenderParams | None = None,
    threads: int = 1,
) -> list[Sample]:
    """Generate ``cfg.count`` samples. ``layout=None`` skips target images.

    The render raster defaults to the camera's raster. Thread count does not
    affect the result, only wall time.
    """
    topology = topology or default_human_topology()
    offsets = rest_offsets(topology, cfg.rest_pose)
    limits = _rotation_limits(topology, cfg)
    if layout is not None:
        topology.layout_rows(layout)  # fail fast on unknown layout
        if params is None:
            params = RenderParams(width=cfg.camera.width, height=cfg.camera.height)

    def make(i: int) -> Sample:
        return _generate_one(i, cfg, topology, offsets, limits, layout, params)

    if threads > 1 and cfg.count > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(make, range(cfg.count)))
    return [make(i) for i in range(cfg.count)]


def write_dataset(
    samples: list[Sample],
    out_dir,
    cfg: GeneratorConfig,
    layout: str | None = "5ch",
    params: RenderParams | None = None,
) -> None:
    """Write poses.jsonl, targets/NNNNNN.skim (when present), manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pose_file([s.record for s in samples], out / "poses.jsonl")
    if any(s.target is not None for s in samples):
        targets = out / "targets"
        targets.mkdir(exist_ok=True)
        for s in samples:
            if s.target is not None:
                write_skim(s.target, targets / f"{s.record.frame:06d}.skim")
    config = dataclasses.asdict(cfg)
    if layout is not None:
        config["layout"] = layout
        if params is None:
            params = RenderParams(width=cfg.camera.width, height=cfg.camera.height)
        config["render"] = dataclasses.asdict(params)
    manifest = {"seed": cfg.seed, "count": cfg.count, "config": config}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
