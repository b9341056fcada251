import numpy as np
import pytest
from sklearn.base import clone

from skelfit.camera import PerspectiveCamera, project
from skelfit.estimators import Pose2DFitter, Pose3DFitter, SkeletonRenderer
from skelfit.fitting import bone_lengths
from skelfit.render import RenderParams, render


def random_pose(rng, lo=0.2, hi=0.8):
    return lo + (hi - lo) * rng.random((17, 2))


class TestSkeletonRenderer:
    def test_transform_matches_functional_render(self, topo, rng):
        est = SkeletonRenderer(layout="5ch", width=32, height=32)
        kp = random_pose(rng)
        out = est.fit().transform(kp[None])
        assert out.shape == (1, 5, 32, 32)
        want = render(kp, topo, "5ch", RenderParams(width=32, height=32))
        np.testing.assert_array_equal(out[0], want)

    def test_transform_accepts_three_input_shapes(self, rng):
        est = SkeletonRenderer(width=16, height=16)
        kp = random_pose(rng)
        single = est.transform(kp)
        batched = est.transform(kp[None])
        flat = est.transform(kp.reshape(1, 34))
        np.testing.assert_array_equal(single, batched)
        np.testing.assert_array_equal(flat, batched)
        assert batched.shape == (1, 1, 16, 16)

    def test_transform_rejects_bad_shape(self, rng):
        est = SkeletonRenderer(width=16, height=16)
        with pytest.raises(ValueError, match="expected"):
            est.transform(np.zeros((17, 3)))

    def test_render_and_backward_passthrough(self, topo, rng):
        est = SkeletonRenderer(layout="3ch", width=24, height=24)
        kp = random_pose(rng)
        img = est.render(kp)
        assert img.shape == (3, 24, 24)
        up = rng.standard_normal(img.shape)
        g = est.backward(kp, up)
        assert g.shape == (17, 2)
        assert np.all(np.isfinite(g))

    def test_get_params_round_trip(self):
        est = SkeletonRenderer(layout="3ch", gamma=100.0, width=20, height=10)
        params = est.get_params()
        assert params["layout"] == "3ch" and params["gamma"] == 100.0
        twin = SkeletonRenderer(**params)
        kp = np.full((17, 2), 0.5)
        np.testing.assert_array_equal(twin.render(kp), est.render(kp))

    def test_clone_preserves_hyperparameters(self):
        est = SkeletonRenderer(layout="5ch", gamma=80.0)
        dup = clone(est)
        assert dup.get_params() == est.get_params()

    def test_set_params_takes_effect(self):
        est = SkeletonRenderer(width=16, height=16)
        est.set_params(layout="5ch")
        out = est.transform(np.full((17, 2), 0.5))
        assert out.shape[1] == 5

    def test_invalid_gamma_caught_at_fit(self):
        est = SkeletonRenderer(gamma=-1.0)
        with pytest.raises(ValueError):
            est.fit()


class TestPose2DFitter:
    def test_recovers_near_exact_init(self, topo, rng):
        kp = random_pose(rng)
        target = render(kp, topo, "5ch", RenderParams(width=64, height=64))
        est = Pose2DFitter(width=64, height=64, max_steps=400)
        est.fit(target, init=kp + 0.01 * rng.standard_normal((17, 2)))
        assert est.pose_.shape == (17, 2)
        err = np.linalg.norm(est.pose_ - kp, axis=1).max() * 64
        assert err < 1.0
        assert est.n_steps_ <= 400
        assert est.termination_ in ("converged", "max_steps")
        assert len(est.loss_curve_) >= est.n_steps_ + 1

    def test_predict_requires_fit(self):
        with pytest.raises(ValueError, match="not fitted"):
            Pose2DFitter().predict()

    def test_fit_predict_returns_pose(self, topo, rng):
        kp = random_pose(rng)
        target = render(kp, topo, "5ch", RenderParams(width=32, height=32))
        est = Pose2DFitter(width=32, height=32, max_steps=5)
        out = est.fit_predict(target, init=kp)
        np.testing.assert_array_equal(out, est.pose_)
        np.testing.assert_array_equal(out, est.predict())

    def test_default_init_is_projected_rest_pose(self, topo):
        # Fitting a rendered rest pose from the default init starts at
        # zero loss, so the pose should not move.
        est = Pose2DFitter(width=48, height=48, max_steps=50)
        camera = PerspectiveCamera(width=48, height=48)
        from skelfit.estimators import _rest_pose_3d

        kp = project(_rest_pose_3d(topo), camera, topo)
        target = render(kp, topo, "5ch", RenderParams(width=48, height=48))
        est.fit(target)
        np.testing.assert_allclose(est.pose_, kp, atol=1e-9)
        assert est.termination_ == "converged"

    def test_channel_count_mismatch_rejected(self, topo, rng):
        target = render(random_pose(rng), topo, "3ch", RenderParams(width=16, height=16))
        with pytest.raises(ValueError):
            Pose2DFitter(layout="5ch", width=16, height=16).fit(target)

    def test_clone_is_unfitted(self, topo, rng):
        kp = random_pose(rng)
        target = render(kp, topo, "5ch", RenderParams(width=16, height=16))
        est = Pose2DFitter(width=16, height=16, max_steps=3).fit(target, init=kp)
        dup = clone(est)
        assert not hasattr(dup, "pose_")
        assert dup.get_params()["max_steps"] == 3


class TestPose3DFitter:
    def test_recovers_reprojection(self, topo, rng):
        camera = PerspectiveCamera(width=64, height=64)
        z = 1.0 + 0.05 * rng.standard_normal(17)
        kp = random_pose(rng, 0.3, 0.7)
        pos = np.empty((17, 3))
        pos[:, 0] = (kp[:, 0] - 0.5) * z / camera.focal
        pos[:, 1] = (kp[:, 1] - 0.5) * z / (camera.focal * camera.aspect)
        pos[:, 2] = z
        target = render(kp, topo, "5ch", RenderParams(width=64, height=64))
        est = Pose3DFitter(width=64, height=64, camera=camera, max_steps=800)
        est.fit(target, init=pos + 0.01 * rng.standard_normal((17, 3)))
        assert est.pose_.shape == (17, 3)
        assert est.kp2d_.shape == (17, 2)
        np.testing.assert_allclose(est.kp2d_, project(est.pose_, camera, topo), atol=1e-15)
        err = np.linalg.norm(est.kp2d_ - kp, axis=1).max() * 64
        assert err < 1.0

    def test_bone_ref_defaults_to_init_lengths(self, topo, rng):
        camera = PerspectiveCamera(width=32, height=32)
        pos = np.zeros((17, 3))
        pos[:, 2] = 3.0
        for k in topo.topological_order():
            p = topo.parents[k]
            if p is not None:
                pos[k, :2] = pos[p, :2] + 0.05 * rng.standard_normal(2)
        kp = project(pos, camera, topo)
        target = render(kp, topo, "5ch", RenderParams(width=32, height=32))
        est = Pose3DFitter(width=32, height=32, camera=camera, max_steps=1)
        est.fit(target, init=pos)
        # one step from the exact optimum should leave lengths intact
        np.testing.assert_allclose(
            bone_lengths(est.pose_, topo), bone_lengths(pos, topo), atol=1e-4
        )

    def test_predict_requires_fit(self):
        with pytest.raises(ValueError, match="not fitted"):
            Pose3DFitter().predict()

    def test_params_include_camera_fields(self):
        camera = PerspectiveCamera(width=64, height=64)
        est = Pose3DFitter(camera=camera, bone_weight=3.0)
        params = est.get_params()
        assert params["camera"] is camera
        assert params["bone_weight"] == 3.0
        dup = clone(est)
        assert dup.get_params()["bone_weight"] == 3.0
