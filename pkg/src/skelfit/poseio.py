"""Pose files: JSON lines, one record per frame.

Record schema:
    {"frame": int, "activity": str|null, "kp2d": [[x, y], ...],
     "pos3d": [[X, Y, Z], ...]|null, "rot6d": [[6 floats], ...]|null}

kp2d is required; pos3d/rot6d are optional 3D annotations. Serialization is
deterministic (fixed key order, repr-exact floats), so parse -> serialize is
byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .validation import check_keypoints, check_positions, check_rot6d

__all__ = ["PoseRecord", "read_pose_file", "write_pose_file", "record_to_json", "record_from_dict"]

_KEYS = ("frame", "activity", "kp2d", "pos3d", "rot6d")


@dataclass(frozen=True)
class PoseRecord:
    frame: int
    kp2d: np.ndarray
    activity: str | None = None
    pos3d: np.ndarray | None = None
    rot6d: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "kp2d", check_keypoints(self.kp2d, name="kp2d"))
        J = self.kp2d.shape[0]
        if self.pos3d is not None:
            object.__setattr__(self, "pos3d", check_positions(self.pos3d, J, name="pos3d"))
        if self.rot6d is not None:
            object.__setattr__(self, "rot6d", check_rot6d(self.rot6d, J, name="rot6d"))

    @property
    def n_joints(self) -> int:
        return self.kp2d.shape[0]


def record_to_json(record: PoseRecord) -> str:
    obj = {
        "frame": int(record.frame),
        "activity": record.activity,
        "kp2d": record.kp2d.tolist(),
        "pos3d": None if record.pos3d is None else record.pos3d.tolist(),
        "rot6d": None if record.rot6d is None else record.rot6d.tolist(),
    }
    return json.dumps(obj, allow_nan=False, separators=(",", ":"))


def record_from_dict(obj, where: str = "record") -> PoseRecord:
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: expected a JSON object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - set(_KEYS))
    if unknown:
        raise FormatError(f"{where}: unknown keys {unknown}")
    missing = [k for k in ("frame", "kp2d") if k not in obj]
    if missing:
        raise FormatError(f"{where}: missing required keys {missing}")
    frame = obj["frame"]
    if not isinstance(frame, int) or isinstance(frame, bool):
        raise FormatError(f"{where}: frame must be an integer, got {frame!r}")
    activity = obj.get("activity")
    if activity is not None and not isinstance(activity, str):
        raise FormatError(f"{where}: activity must be a string or null, got {activity!r}")
    try:
        return PoseRecord(
            frame=frame,
            activity=activity,
            kp2d=obj["kp2d"],
            pos3d=obj.get("pos3d"),
            rot6d=obj.get("rot6d"),
        )
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from exc


def read_pose_file(path, n_joints: int | None = None) -> list[PoseRecord]:
    """Parse a pose JSONL file. All records must agree on the joint count
    (and with ``n_joints`` when given)."""
    records: list[PoseRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{where}: not valid JSON: {exc}") from exc
            rec = record_from_dict(obj, where)
            expect = n_joints if n_joints is not None else (
                records[0].n_joints if records else None
            )
            if expect is not None and rec.n_joints != expect:
                raise FormatError(
                    f"{where}: {rec.n_joints} joints, expected {expect}"
                )
            records.append(rec)
    if not records:
        raise FormatError(f"{path}: no pose records")
    return records


def write_pose_file(records, path) -> None:
    text = "".join(record_to_json(r) + "\n" for r in records)
    Path(path).write_text(text, encoding="utf-8")
