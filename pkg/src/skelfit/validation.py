"""Input validation helpers.

Every public entry point funnels array inputs through these so shape and
finiteness errors carry the caller's argument name instead of a numpy
broadcast traceback.
"""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str) -> np.ndarray:
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name}: not convertible to a float array: {exc}") from exc
    return arr


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_keypoints(x, n_joints: int | None = None, name: str = "keypoints") -> np.ndarray:
    """Validate a (J, 2) float array of normalized image coordinates."""
    kp = as_float_array(x, name)
    if kp.ndim != 2 or kp.shape[1] != 2:
        raise ValueError(f"{name}: expected shape (J, 2), got {kp.shape}")
    if n_joints is not None and kp.shape[0] != n_joints:
        raise ValueError(f"{name}: expected {n_joints} joints, got {kp.shape[0]}")
    return check_finite(np.ascontiguousarray(kp), name)


def check_positions(x, n_joints: int | None = None, name: str = "positions") -> np.ndarray:
    """Validate a (J, 3) float array of camera-space positions."""
    pos = as_float_array(x, name)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError(f"{name}: expected shape (J, 3), got {pos.shape}")
    if n_joints is not None and pos.shape[0] != n_joints:
        raise ValueError(f"{name}: expected {n_joints} joints, got {pos.shape[0]}")
    return check_finite(np.ascontiguousarray(pos), name)


def check_rot6d(x, n_joints: int | None = None, name: str = "rotations") -> np.ndarray:
    """Validate a (..., 6) float array of 6D rotation parameters."""
    r = as_float_array(x, name)
    if r.ndim < 1 or r.shape[-1] != 6:
        raise ValueError(f"{name}: expected shape (..., 6), got {r.shape}")
    if n_joints is not None and (r.ndim != 2 or r.shape[0] != n_joints):
        raise ValueError(f"{name}: expected shape ({n_joints}, 6), got {r.shape}")
    return check_finite(np.ascontiguousarray(r), name)


def check_image(x, channels: int | None = None, name: str = "image") -> np.ndarray:
    """Validate a (C, H, W) float image."""
    img = as_float_array(x, name)
    if img.ndim != 3:
        raise ValueError(f"{name}: expected shape (C, H, W), got {img.shape}")
    if channels is not None and img.shape[0] != channels:
        raise ValueError(f"{name}: expected {channels} channels, got {img.shape[0]}")
    return check_finite(np.ascontiguousarray(img), name)
