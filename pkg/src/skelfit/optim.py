"""Adam with global-norm gradient clipping and stepwise learning-rate decay.

Written out rather than pulled from a framework because the update must be
bit-reproducible and the exact order of operations (clip, then moments, then
bias correction, then decayed step) is part of the package contract.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DivergenceError

__all__ = ["AdamConfig", "Adam", "ADAM_PRESETS", "resolve_adam_config", "clip_global_norm"]


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 2e-5
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    lr_decay: float = 0.95
    steps_per_epoch: int = 100
    batch_size: int = 8  # bookkeeping only; single-pose fits ignore it

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError(f"beta1 must be in [0, 1), got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"beta2 must be in [0, 1), got {self.beta2}")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be > 0 or None, got {self.clip_norm}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.steps_per_epoch < 1:
            raise ValueError(f"steps_per_epoch must be >= 1, got {self.steps_per_epoch}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


ADAM_PRESETS: dict[str, AdamConfig] = {
    # Module pretraining: higher rate, conventional beta1.
    "pretrain": AdamConfig(lr=2e-4, beta1=0.9, batch_size=16),
    # 2D-to-3D uplift training.
    "uplift": AdamConfig(lr=5e-4, beta1=0.9, batch_size=100),
    # End-to-end refinement: low rate, beta1 = 0.5.
    "e2e": AdamConfig(lr=2e-5, beta1=0.5, batch_size=8),
}


def resolve_adam_config(config) -> AdamConfig:
    """Accept an AdamConfig, a preset name, or None (-> 'e2e' defaults)."""
    if config is None:
        return AdamConfig()
    if isinstance(config, AdamConfig):
        return config
    if isinstance(config, str):
        try:
            return ADAM_PRESETS[config]
        except KeyError:
            known = ", ".join(sorted(ADAM_PRESETS))
            raise ValueError(f"unknown optimizer preset {config!r} (have: {known})") from None
    raise TypeError(f"config must be AdamConfig, preset name, or None, got {type(config)}")


def _l2(x: np.ndarray) -> float:
    # np.sum and np.linalg.norm round differently and can disagree by an
    # ulp; the clip bound must hold under either evaluation.
    return max(float(np.sqrt(np.sum(x * x))), float(np.linalg.norm(x.ravel())))


def clip_global_norm(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    """Rescale so the L2 norm over all entries is <= max_norm.

    The rescale is reapplied if rounding leaves the norm a hair above the
    bound, so the postcondition holds exactly, not just approximately.
    """
    if max_norm is None:
        return grad
    norm = _l2(grad)
    if norm <= max_norm:
        return grad
    out = grad * (max_norm / norm)
    while _l2(out) > max_norm:
        out = out * (max_norm / _l2(out))
    return out


class Adam:
    """Stateful Adam for one parameter array of any shape.

    Per call: clip the gradient (global norm), update biased first/second
    moments, bias-correct, and apply
        params - lr * decay^epoch * m_hat / (sqrt(v_hat) + eps)
    where epoch = steps_so_far // steps_per_epoch counts completed steps
    before this one. Returns a new array; never mutates its input.
    """

    def __init__(self, config: AdamConfig | str | None = None):
        self.config = resolve_adam_config(config)
        self.reset()

    def reset(self) -> None:
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.steps = 0

    @property
    def learning_rate(self) -> float:
        """Effective rate the next step will use."""
        cfg = self.config
        return cfg.lr * cfg.lr_decay ** (self.steps // cfg.steps_per_epoch)

    def step(self, params, grad) -> np.ndarray:
        cfg = self.config
        p = np.asarray(params, dtype=np.float64)
        g = np.asarray(grad, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"grad shape {g.shape} != params shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
        if self.m is None:
            self.m = np.zeros_like(p)
            self.v = np.zeros_like(p)
        elif self.m.shape != p.shape:
            raise ValueError(
                f"params shape changed mid-run: {self.m.shape} -> {p.shape}"
            )
        g = clip_global_norm(g, cfg.clip_norm)
        lr_eff = self.learning_rate
        self.steps += 1
        t = self.steps
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * g
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * (g * g)
        m_hat = self.m / (1.0 - cfg.beta1**t)
        v_hat = self.v / (1.0 - cfg.beta2**t)
        return p - lr_eff * m_hat / (np.sqrt(v_hat) + cfg.eps)

    def with_config(self, **changes) -> "Adam":
        """Fresh optimizer with updated config fields."""
        return Adam(replace(self.config, **changes))
