import numpy as np
import pytest

from skelfit.exceptions import DivergenceError
from skelfit.optim import (
    ADAM_PRESETS,
    Adam,
    AdamConfig,
    clip_global_norm,
    resolve_adam_config,
)


def test_config_defaults_and_presets():
    cfg = AdamConfig()
    assert (cfg.lr, cfg.beta1, cfg.beta2) == (2e-5, 0.5, 0.999)
    assert cfg.clip_norm == 1.0 and cfg.lr_decay == 0.95
    assert ADAM_PRESETS["pretrain"].lr == 2e-4
    assert ADAM_PRESETS["pretrain"].beta1 == 0.9
    assert ADAM_PRESETS["e2e"].lr == 2e-5
    assert ADAM_PRESETS["e2e"].beta1 == 0.5
    assert ADAM_PRESETS["uplift"].lr == 5e-4


def test_config_validation():
    for bad in (
        dict(lr=0.0),
        dict(beta1=1.0),
        dict(beta2=-0.1),
        dict(eps=0.0),
        dict(clip_norm=0.0),
        dict(lr_decay=0.0),
        dict(steps_per_epoch=0),
        dict(batch_size=0),
    ):
        with pytest.raises(ValueError):
            AdamConfig(**bad)


def test_resolve_accepts_name_config_none():
    assert resolve_adam_config("e2e") == ADAM_PRESETS["e2e"]
    cfg = AdamConfig(lr=1e-3)
    assert resolve_adam_config(cfg) is cfg
    assert resolve_adam_config(None) == AdamConfig()
    with pytest.raises(ValueError, match="pretrain"):
        resolve_adam_config("sgd")


def test_clip_inactive_below_bound():
    g = np.array([0.3, 0.4])  # norm 0.5
    assert clip_global_norm(g, 1.0) is g
    assert clip_global_norm(g, None) is g


def test_clip_norm_five_gives_exactly_one():
    g = np.array([3.0, 4.0])  # norm 5
    out = clip_global_norm(g, 1.0)
    assert float(np.sqrt(np.sum(out * out))) <= 1.0
    assert float(np.sqrt(np.sum(out * out))) == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(out, [0.6, 0.8], rtol=1e-15)


def test_clip_never_exceeds_bound(rng):
    for _ in range(200):
        g = rng.standard_normal(rng.integers(1, 40)) * 10.0 ** rng.integers(-3, 4)
        out = clip_global_norm(g, 1.0)
        assert float(np.sqrt(np.sum(out * out))) <= 1.0 + 1e-12


def test_zero_gradient_leaves_params_unchanged():
    opt = Adam(AdamConfig(lr=0.1))
    p = np.array([1.0, -2.0, 3.0])
    q = opt.step(p, np.zeros(3))
    np.testing.assert_array_equal(q, p)
    assert opt.steps == 1


def test_first_step_magnitude_is_lr():
    """Bias-corrected first step is lr * g/(|g|+eps), so |delta| ~ lr.

    The eps in the denominator costs a relative eps/|g|, so the 1e-6
    bound needs |g| comfortably above eps * 1e6 = 0.01.
    """
    for g0 in (0.37, -12.0, 0.05):
        opt = Adam(AdamConfig(lr=2e-4, clip_norm=None))
        q = opt.step(np.array([0.0]), np.array([g0]))
        assert abs(abs(float(q[0])) - 2e-4) < 1e-6 * 2e-4


def test_first_step_closed_form():
    cfg = AdamConfig(lr=1e-2, clip_norm=None)
    opt = Adam(cfg)
    g = np.array([0.5, -2.0])
    q = opt.step(np.zeros(2), g)
    want = -cfg.lr * g / (np.abs(g) + cfg.eps)
    np.testing.assert_allclose(q, want, rtol=1e-12)


def test_lr_schedule_exact():
    cfg = AdamConfig(lr=2e-4, steps_per_epoch=10)
    opt = Adam(cfg)
    p = np.zeros(1)
    for step in range(35):
        assert opt.learning_rate == 2e-4 * 0.95 ** (step // 10)  # bit-exact
        p = opt.step(p, np.ones(1))
    assert opt.steps == 35


def test_decay_slows_late_steps():
    opt = Adam(AdamConfig(lr=1e-3, steps_per_epoch=5, lr_decay=0.5))
    p = np.zeros(1)
    deltas = []
    for _ in range(10):
        q = opt.step(p, np.ones(1))
        deltas.append(abs(float(q[0] - p[0])))
        p = q
    assert deltas[5] < 0.6 * deltas[4]  # epoch boundary halves the rate


def test_loss_scale_invariance_under_clipping():
    """With the clip active, scaling the loss by a power of two leaves the
    iterates bit-identical; Adam is scale-free once moments settle."""
    scale = 8.0
    rng = np.random.default_rng(0)
    grads = [rng.standard_normal(6) * 3.0 for _ in range(50)]
    a = Adam(AdamConfig(lr=1e-3))
    b = Adam(AdamConfig(lr=1e-3))
    pa = np.zeros(6)
    pb = np.zeros(6)
    for g in grads:
        pa = a.step(pa, g)
        pb = b.step(pb, g * scale)
        np.testing.assert_allclose(pa, pb, atol=1e-9)


def test_rejects_non_finite_gradient():
    opt = Adam()
    with pytest.raises(DivergenceError):
        opt.step(np.zeros(2), np.array([1.0, np.nan]))


def test_rejects_shape_changes():
    opt = Adam()
    opt.step(np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        opt.step(np.zeros(4), np.ones(4))
    with pytest.raises(ValueError):
        opt.step(np.zeros(3), np.ones(2))


def test_step_does_not_mutate_inputs():
    opt = Adam(AdamConfig(lr=0.1))
    p = np.ones(3)
    g = np.full(3, 2.0)
    opt.step(p, g)
    np.testing.assert_array_equal(p, np.ones(3))
    np.testing.assert_array_equal(g, np.full(3, 2.0))


def test_reset_and_with_config():
    opt = Adam(AdamConfig(lr=0.1, steps_per_epoch=1, lr_decay=0.5))
    p = opt.step(np.zeros(2), np.ones(2))
    assert opt.learning_rate == 0.05
    opt.reset()
    assert opt.steps == 0 and opt.m is None
    faster = opt.with_config(lr=0.2)
    assert faster.config.lr == 0.2
    assert faster.config.lr_decay == 0.5
    assert faster.steps == 0
    assert opt.config.lr == 0.1  # original untouched


def test_determinism_bit_identical():
    def run():
        opt = Adam("pretrain")
        p = np.linspace(-1, 1, 8)
        rng = np.random.default_rng(7)
        out = []
        for _ in range(100):
            p = opt.step(p, rng.standard_normal(8))
            out.append(p.copy())
        return np.stack(out)

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()


def test_matches_reference_adam_without_clipping(rng):
    """Textbook Adam recurrence, written out separately, step for step."""
    cfg = AdamConfig(lr=3e-3, beta1=0.8, beta2=0.95, clip_norm=None,
                     steps_per_epoch=7, lr_decay=0.9)
    opt = Adam(cfg)
    p = rng.standard_normal(5)
    q = p.copy()
    m = np.zeros(5)
    v = np.zeros(5)
    for t in range(1, 30):
        g = rng.standard_normal(5)
        p = opt.step(p, g)
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mh = m / (1 - cfg.beta1**t)
        vh = v / (1 - cfg.beta2**t)
        q = q - cfg.lr * 0.9 ** ((t - 1) // 7) * mh / (np.sqrt(vh) + cfg.eps)
        np.testing.assert_allclose(p, q, rtol=1e-12, atol=1e-15)
