"""Estimator-style API: a transformer for rendering, fitters for recovery.

These wrap the functional core in scikit-learn conventions: constructor
arguments are stored verbatim (so get_params/set_params/clone work), all
validation happens at fit/transform time, and fitted state lands in
trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .camera import PerspectiveCamera, forward_kinematics, project
from .datasets import rest_offsets
from .fitting import FitProblem, LossWeights, bone_lengths, fit
from .render import RenderParams, render, render_backward
from .topology import SkeletonTopology, default_human_topology
from .validation import as_float_array, check_image, check_keypoints, check_positions

__all__ = ["SkeletonRenderer", "Pose2DFitter", "Pose3DFitter"]

_REST_DEPTH = 3.5


def _identity_rot6d(n: int) -> np.ndarray:
    out = np.zeros((n, 6), dtype=np.float64)
    out[:, 0] = 1.0
    out[:, 4] = 1.0
    return out


def _rest_pose_3d(topology: SkeletonTopology) -> np.ndarray:
    """Neutral pose centered on the optical axis at a mid-range depth."""
    offsets = rest_offsets(topology)
    pos, _ = forward_kinematics(
        offsets, _identity_rot6d(topology.n_joints), topology, (0.0, 0.0, _REST_DEPTH)
    )
    mid = (pos.min(axis=0) + pos.max(axis=0)) / 2.0
    pos = pos - [mid[0], mid[1], 0.0]
    return pos


class SkeletonRenderer(TransformerMixin, BaseEstimator):
    """Stateless transformer: normalized keypoints -> skeleton images.

    transform accepts (n_samples, n_joints, 2), flattened
    (n_samples, 2 * n_joints), or a single (n_joints, 2) pose, and returns
    (n_samples, channels, height, width).
    """

    def __init__(self, topology=None, layout="1ch", gamma=250.0, width=128, height=128):
        self.topology = topology
        self.layout = layout
        self.gamma = gamma
        self.width = width
        self.height = height

    def _resolved(self):
        topo = self.topology if self.topology is not None else default_human_topology()
        params = RenderParams(gamma=self.gamma, width=self.width, height=self.height)
        return topo, params

    def fit(self, X=None, y=None):
        self._resolved()  # validate hyperparameters
        return self

    def _as_batch(self, X, topo) -> np.ndarray:
        arr = as_float_array(X, "X")
        J = topo.n_joints
        if arr.ndim == 2 and arr.shape == (J, 2):
            return arr[None, :, :]
        if arr.ndim == 2 and arr.shape[1] == 2 * J:
            return arr.reshape(arr.shape[0], J, 2)
        if arr.ndim == 3 and arr.shape[1:] == (J, 2):
            return arr
        raise ValueError(
            f"X: expected ({J}, 2), (n, {J}, 2) or (n, {2 * J}), got {arr.shape}"
        )

    def transform(self, X) -> np.ndarray:
        topo, params = self._resolved()
        batch = self._as_batch(X, topo)
        out = np.empty(
            (batch.shape[0], topo.layout_channels(self.layout), params.height, params.width)
        )
        for i, kp in enumerate(batch):
            out[i] = render(kp, topo, self.layout, params)
        return out

    def render(self, keypoints) -> np.ndarray:
        """Single pose -> (C, H, W)."""
        topo, params = self._resolved()
        return render(keypoints, topo, self.layout, params)

    def backward(self, keypoints, upstream) -> np.ndarray:
        """Gradient of sum(upstream * rendered image) w.r.t. the keypoints."""
        topo, params = self._resolved()
        return render_backward(keypoints, upstream, topo, self.layout, params)


class _FitterBase(BaseEstimator):
    def __init__(self, topology=None, layout="5ch", gamma=250.0, width=128, height=128,
                 optimizer="pretrain", loss_weights=None, max_steps=2000, tol=1e-10):
        self.topology = topology
        self.layout = layout
        self.gamma = gamma
        self.width = width
        self.height = height
        self.optimizer = optimizer
        self.loss_weights = loss_weights
        self.max_steps = max_steps
        self.tol = tol

    def _resolved(self):
        topo = self.topology if self.topology is not None else default_human_topology()
        params = RenderParams(gamma=self.gamma, width=self.width, height=self.height)
        weights = self.loss_weights if self.loss_weights is not None else LossWeights()
        return topo, params, weights

    def _store(self, result):
        self.result_ = result
        self.pose_ = result.pose
        self.loss_curve_ = result.loss_curve
        self.n_steps_ = result.n_steps
        self.termination_ = result.termination
        return self


class Pose2DFitter(_FitterBase):
    """Recover 2D keypoints from a target skeleton image.

    fit(X) treats X as the (C, H, W) target. The optimized keypoints land
    in ``pose_``; ``loss_curve_``, ``n_steps_`` and ``termination_`` record
    the trajectory. ``init`` defaults to a projected neutral pose, which is
    only a sensible start for targets of roughly centered subjects.
    """

    def fit(self, X, y=None, init=None):
        topo, params, weights = self._resolved()
        target = check_image(X, channels=topo.layout_channels(self.layout), name="X")
        if init is None:
            camera = PerspectiveCamera(width=params.width, height=params.height)
            init = project(_rest_pose_3d(topo), camera, topo)
        problem = FitProblem(
            target=target,
            topology=topo,
            init=check_keypoints(init, topo.n_joints, name="init"),
            mode="fit2d",
            layout=self.layout,
            params=params,
            weights=weights,
            max_steps=self.max_steps,
            tol=self.tol,
        )
        return self._store(fit(problem, self.optimizer))

    def predict(self, X=None) -> np.ndarray:
        """Fitted keypoints; X is ignored (one fit explains one target)."""
        if not hasattr(self, "pose_"):
            raise ValueError("not fitted yet; call fit(target) first")
        return self.pose_

    def fit_predict(self, X, y=None, init=None) -> np.ndarray:
        return self.fit(X, y=y, init=init).pose_


class Pose3DFitter(_FitterBase):
    """Recover 3D joint positions whose projection explains the target.

    Monocular depth is ambiguous, so this asserts nothing about true 3D;
    the bone-length prior (weight ``bone_weight``, reference lengths from
    ``bone_ref_lengths`` or the init pose) keeps the skeleton's scale from
    drifting. Reprojected keypoints are stored in ``kp2d_``.
    """

    def __init__(self, topology=None, layout="5ch", gamma=250.0, width=128, height=128,
                 optimizer="pretrain", loss_weights=None, max_steps=2000, tol=1e-10,
                 camera=None, bone_weight=10.0, bone_ref_lengths=None):
        super().__init__(topology=topology, layout=layout, gamma=gamma, width=width,
                         height=height, optimizer=optimizer, loss_weights=loss_weights,
                         max_steps=max_steps, tol=tol)
        self.camera = camera
        self.bone_weight = bone_weight
        self.bone_ref_lengths = bone_ref_lengths

    def fit(self, X, y=None, init=None, init_orientations=None):
        topo, params, weights = self._resolved()
        target = check_image(X, channels=topo.layout_channels(self.layout), name="X")
        camera = self.camera if self.camera is not None else PerspectiveCamera(
            width=params.width, height=params.height
        )
        if init is None:
            init = _rest_pose_3d(topo)
        init = check_positions(init, topo.n_joints, name="init")
        ref = self.bone_ref_lengths
        if ref is None and self.bone_weight > 0:
            ref = bone_lengths(init, topo)
        problem = FitProblem(
            target=target,
            topology=topo,
            init=init,
            mode="fit3d",
            layout=self.layout,
            params=params,
            camera=camera,
            init_orientations=init_orientations,
            weights=weights,
            bone_ref_lengths=ref,
            bone_weight=self.bone_weight,
            max_steps=self.max_steps,
            tol=self.tol,
        )
        self._store(fit(problem, self.optimizer))
        self.orientations_ = self.result_.orientations
        self.kp2d_ = project(self.pose_, camera, topo)
        return self

    def predict(self, X=None) -> np.ndarray:
        """Fitted 3D positions; X is ignored."""
        if not hasattr(self, "pose_"):
            raise ValueError("not fitted yet; call fit(target) first")
        return self.pose_

    def fit_predict(self, X, y=None, init=None) -> np.ndarray:
        return self.fit(X, y=y, init=init).pose_
