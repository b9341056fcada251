"""Perspective projection, 6D rotation parametrization, forward kinematics.

Camera frame: X right, Y down, Z forward (into the scene); units are meters.
Projection lands in the same normalized image coordinates the renderer uses
(origin top-left, y down). The focal length in normalized-width units is
f = 0.5 / tan(fov/2) for a horizontal field of view; vertically it is scaled
by W/H so pixels stay square on non-square rasters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ProjectionError
from .topology import SkeletonTopology
from .validation import as_float_array, check_finite, check_positions, check_rot6d

__all__ = [
    "PerspectiveCamera",
    "project",
    "project_jacobian",
    "rot6d_to_matrix",
    "matrix_to_rot6d",
    "axis_angle_to_matrix",
    "forward_kinematics",
    "IDENTITY_ROT6D",
]

_MIN_DEPTH = 1e-6

# r = (first column | second column) of the identity matrix.
IDENTITY_ROT6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
IDENTITY_ROT6D.setflags(write=False)


@dataclass(frozen=True)
class PerspectiveCamera:
    """Pinhole camera with a horizontal field of view in degrees."""

    fov_deg: float = 62.0
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"fov_deg must be in (0, 180), got {self.fov_deg}")
        if self.width < 1 or self.height < 1:
            raise ValueError(
                f"camera raster must be positive, got {self.width}x{self.height}"
            )

    @property
    def focal(self) -> float:
        """Focal length in normalized-width units."""
        return 0.5 / math.tan(math.radians(self.fov_deg) / 2.0)

    @property
    def aspect(self) -> float:
        return self.width / self.height


def project(positions, camera: PerspectiveCamera, joints: SkeletonTopology | None = None):
    """Project (J, 3) camera-space points to (J, 2) normalized image coords.

    Raises ProjectionError naming the first offending joint if any point has
    Z <= 1e-6.
    """
    pos = check_positions(positions)
    z = pos[:, 2]
    bad = np.flatnonzero(z <= _MIN_DEPTH)
    if bad.size:
        k = int(bad[0])
        name = joints.joints[k] if joints is not None and k < joints.n_joints else f"#{k}"
        raise ProjectionError(
            f"joint {name} has depth {z[k]:.3g} <= {_MIN_DEPTH}; cannot project"
        )
    f = camera.focal
    out = np.empty((pos.shape[0], 2), dtype=np.float64)
    out[:, 0] = 0.5 + f * pos[:, 0] / z
    out[:, 1] = 0.5 + f * camera.aspect * pos[:, 1] / z
    return out


def project_jacobian(positions, camera: PerspectiveCamera) -> np.ndarray:
    """(J, 2, 3) Jacobian of `project` w.r.t. each 3D point."""
    pos = check_positions(positions)
    z = pos[:, 2]
    if np.any(z <= _MIN_DEPTH):
        raise ProjectionError("cannot differentiate projection at depth <= 1e-6")
    f = camera.focal
    fy = f * camera.aspect
    jac = np.zeros((pos.shape[0], 2, 3), dtype=np.float64)
    jac[:, 0, 0] = f / z
    jac[:, 0, 2] = -f * pos[:, 0] / (z * z)
    jac[:, 1, 1] = fy / z
    jac[:, 1, 2] = -fy * pos[:, 1] / (z * z)
    return jac


# --- rotations --------------------------------------------------------------

def rot6d_to_matrix(r) -> np.ndarray:
    """Decode (..., 6) parameters to (..., 3, 3) rotation matrices.

    The six numbers are the first two columns of a matrix; Gram-Schmidt
    makes them orthonormal and the third column is their cross product.
    Raises ValueError when a column norm or the orthogonalized second
    column falls below 1e-9.
    """
    r = check_rot6d(r)
    a1 = r[..., 0:3]
    a2 = r[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1)
    if np.any(n1 < 1e-9):
        raise ValueError("rot6d: first column is degenerate (norm < 1e-9)")
    b1 = a1 / n1[..., None]
    w2 = a2 - np.einsum("...i,...i->...", b1, a2)[..., None] * b1
    n2 = np.linalg.norm(w2, axis=-1)
    if np.any(n2 < 1e-9):
        raise ValueError("rot6d: columns are parallel within 1e-9")
    b2 = w2 / n2[..., None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(matrix) -> np.ndarray:
    """Encode (..., 3, 3) rotation matrices as their first two columns."""
    m = as_float_array(matrix, "matrix")
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"matrix: expected shape (..., 3, 3), got {m.shape}")
    check_finite(m, "matrix")
    ident = np.eye(3)
    gram = np.einsum("...ji,...jk->...ik", m, m)
    if np.max(np.abs(gram - ident)) > 1e-6:
        raise ValueError("matrix: not orthonormal within 1e-6")
    if np.any(np.abs(np.linalg.det(m) - 1.0) > 1e-6):
        raise ValueError("matrix: determinant is not +1 within 1e-6")
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def axis_angle_to_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a (3,) axis (not necessarily unit length)."""
    a = as_float_array(axis, "axis").reshape(3)
    n = np.linalg.norm(a)
    if n < 1e-12:
        raise ValueError("axis: zero vector")
    x, y, z = a / n
    c = math.cos(angle)
    s = math.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


# --- forward kinematics ------------------------------------------------------

def forward_kinematics(
    offsets,
    rotations,
    topology: SkeletonTopology,
    root_position=(0.0, 0.0, 0.0),
):
    """Compose local joint rotations down the kinematic tree.

    offsets: (J, 3) rest bone vectors, offsets[k] pointing parent->k in the
    parent's frame (the root's row is ignored). rotations: (J, 6) local
    rotations. Returns (positions, orientations): (J, 3) camera-space joint
    positions and (J, 6) accumulated global rotations.

    positions[k] = positions[parent] + R_global[parent] @ offsets[k]
    R_global[k] = R_global[parent] @ R_local[k]

    Requires a topology whose parents form a single-root tree.
    """
    J = topology.n_joints
    off = check_positions(offsets, J, name="offsets")
    rot = check_rot6d(rotations, J, name="rotations")
    n_roots = sum(1 for p in topology.parents if p is None)
    if n_roots != 1:
        raise ValueError(f"forward kinematics needs a single-root tree, got {n_roots} roots")
    root = as_float_array(root_position, "root_position").reshape(3)
    check_finite(root, "root_position")

    local = rot6d_to_matrix(rot)  # (J, 3, 3)
    glob = np.empty_like(local)
    pos = np.empty((J, 3), dtype=np.float64)
    for k in topology.topological_order():
        p = topology.parents[k]
        if p is None:
            glob[k] = local[k]
            pos[k] = root
        else:
            glob[k] = glob[p] @ local[k]
            pos[k] = pos[p] + glob[p] @ off[k]
    return pos, matrix_to_rot6d(glob)
