"""Pixel-space pose error metrics with flip-aware aggregation.

A frame's score is the mean over keypoints of the squared Euclidean pixel
distance between prediction and ground truth, at a stated raster size.
Because left/right relabeling is unobservable in single-channel skeleton
images, every frame also gets a flipped score (prediction relabeled); the
"ignore_flip" policy takes the smaller of the two, "consider_flip" takes
the score as-is.

Medians are over frame scores, not individual keypoints; an even-length
list's median is the mean of the two central values.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .topology import SkeletonTopology, flip_pose
from .validation import check_keypoints

__all__ = [
    "FrameError",
    "EvalRow",
    "EvalReport",
    "POLICIES",
    "frame_error",
    "aggregate",
    "report_csv",
]

POLICIES = ("ignore_flip", "consider_flip", "both")


@dataclass(frozen=True)
class FrameError:
    """Per-frame squared pixel errors, both with labels as given and with
    the prediction's left/right labels swapped."""

    frame: int
    activity: str | None
    kp_sq_px: np.ndarray   # (J,) per-keypoint squared pixel error, labels as given
    score: float           # mean of kp_sq_px over scored keypoints
    flipped_score: float   # same, for flip_pose(pred)


def _score(pred, gt, width, height, mask):
    d = (pred - gt) * np.array([width, height], dtype=np.float64)
    per_kp = d[:, 0] ** 2 + d[:, 1] ** 2
    return per_kp, float(np.mean(per_kp[mask]))


def frame_error(
    pred,
    gt,
    topology: SkeletonTopology,
    width: int,
    height: int,
    frame: int = 0,
    activity: str | None = None,
    mask=None,
) -> FrameError:
    """Score one frame. ``mask``, if given, marks which ground-truth
    keypoints count toward the means (default: all)."""
    if width < 1 or height < 1:
        raise ValueError(f"raster size must be positive, got {width}x{height}")
    p = check_keypoints(pred, topology.n_joints, name="pred")
    g = check_keypoints(gt, topology.n_joints, name="gt")
    if mask is None:
        m = np.ones(topology.n_joints, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool).reshape(-1)
        if m.shape[0] != topology.n_joints:
            raise ValueError(
                f"mask: expected {topology.n_joints} entries, got {m.shape[0]}"
            )
        if not m.any():
            raise ValueError("mask: no keypoints left to score")
    per_kp, score = _score(p, g, width, height, m)
    _, flipped = _score(flip_pose(p, topology), g, width, height, m)
    return FrameError(
        frame=int(frame),
        activity=None if activity is None else str(activity),
        kp_sq_px=per_kp,
        score=score,
        flipped_score=flipped,
    )


@dataclass(frozen=True)
class EvalRow:
    activity: str
    n_frames: int
    mean_ignore: float | None
    median_ignore: float | None
    mean_consider: float | None
    median_consider: float | None


@dataclass(frozen=True)
class EvalReport:
    policy: str
    rows: tuple[EvalRow, ...]   # sorted activities, then "all" last

    def row(self, activity: str) -> EvalRow:
        for r in self.rows:
            if r.activity == activity:
                return r
        raise KeyError(activity)


def _make_row(activity, frames, policy) -> EvalRow:
    consider = np.asarray([fe.score for fe in frames], dtype=np.float64)
    ignore = np.asarray(
        [min(fe.score, fe.flipped_score) for fe in frames], dtype=np.float64
    )
    want_ignore = policy in ("ignore_flip", "both")
    want_consider = policy in ("consider_flip", "both")
    return EvalRow(
        activity=activity,
        n_frames=len(frames),
        mean_ignore=float(np.mean(ignore)) if want_ignore else None,
        median_ignore=float(np.median(ignore)) if want_ignore else None,
        mean_consider=float(np.mean(consider)) if want_consider else None,
        median_consider=float(np.median(consider)) if want_consider else None,
    )


def aggregate(frames, policy: str = "both") -> EvalReport:
    """Group frame errors by activity and reduce to mean/median tables.

    Frames with a null activity contribute only to the overall "all" row.
    The label "all" is reserved for that row.
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}, got {policy!r}")
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to aggregate")
    groups: dict[str, list[FrameError]] = {}
    for fe in frames:
        if fe.activity == "all":
            raise ValueError("activity label 'all' is reserved for the overall row")
        if fe.activity is not None:
            groups.setdefault(fe.activity, []).append(fe)
    rows = [_make_row(act, groups[act], policy) for act in sorted(groups)]
    rows.append(_make_row("all", frames, policy))
    return EvalReport(policy=policy, rows=tuple(rows))


def report_csv(report: EvalReport, rmse: bool = False) -> str:
    """Serialize a report as deterministic CSV text.

    A both-policy report uses the canonical header
    "activity,mean_ignore,median_ignore,mean_consider,median_consider,frames";
    single-policy reports carry only their own columns. With ``rmse=True``,
    root-mean columns (sqrt of the mean squared error, i.e. pixels instead
    of pixels squared) are appended for the populated policies.
    """
    want_ignore = report.policy in ("ignore_flip", "both")
    want_consider = report.policy in ("consider_flip", "both")
    header = ["activity"]
    if want_ignore:
        header += ["mean_ignore", "median_ignore"]
    if want_consider:
        header += ["mean_consider", "median_consider"]
    header.append("frames")
    if rmse:
        if want_ignore:
            header.append("rmse_ignore")
        if want_consider:
            header.append("rmse_consider")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in report.rows:
        cells = [row.activity]
        if want_ignore:
            cells += [f"{row.mean_ignore:.2f}", f"{row.median_ignore:.2f}"]
        if want_consider:
            cells += [f"{row.mean_consider:.2f}", f"{row.median_consider:.2f}"]
        cells.append(str(row.n_frames))
        if rmse:
            if want_ignore:
                cells.append(f"{np.sqrt(row.mean_ignore):.2f}")
            if want_consider:
                cells.append(f"{np.sqrt(row.mean_consider):.2f}")
        writer.writerow(cells)
    return buf.getvalue()
