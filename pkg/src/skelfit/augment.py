"""Geometric data augmentation: 2D crop jitter and 3D limb-length scaling.

Both take an explicit SplitMix64 so results are a pure function of the seed.
Draw order is part of the contract (documented per operation); changing it
would silently break dataset reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64
from .topology import SkeletonTopology
from .validation import check_keypoints, check_positions

__all__ = [
    "AugmentConfig",
    "CropTransform",
    "random_crop_transform",
    "draw_bone_scales",
    "randomize_limb_lengths",
]


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale_range: tuple[float, float] = (0.7, 1.3)
    crop_offset_range: float = 0.15
    limb_scale_range: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        object.__setattr__(self, "crop_scale_range", tuple(self.crop_scale_range))
        object.__setattr__(self, "limb_scale_range", tuple(self.limb_scale_range))
        for name in ("crop_scale_range", "limb_scale_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if self.crop_offset_range < 0:
            raise ValueError(
                f"crop_offset_range must be >= 0, got {self.crop_offset_range}"
            )


@dataclass(frozen=True)
class CropTransform:
    """Record of one crop draw: p' = scale * (p - center) + center + offset,
    with center fixed at (0.5, 0.5). Invertible."""

    scale: float
    offset: tuple[float, float]

    def apply(self, keypoints) -> np.ndarray:
        kp = check_keypoints(keypoints)
        return self.scale * (kp - 0.5) + 0.5 + np.asarray(self.offset)

    def invert(self, keypoints) -> np.ndarray:
        kp = check_keypoints(keypoints)
        return (kp - 0.5 - np.asarray(self.offset)) / self.scale + 0.5


def random_crop_transform(keypoints, cfg: AugmentConfig, rng: SplitMix64):
    """Jitter scale and offset about the image center.

    Draw order: scale, offset_x, offset_y. Returns (transformed keypoints,
    CropTransform) so the exact transform can be stored or inverted.
    """
    kp = check_keypoints(keypoints)
    s = rng.uniform(*cfg.crop_scale_range)
    ox = rng.uniform(-cfg.crop_offset_range, cfg.crop_offset_range)
    oy = rng.uniform(-cfg.crop_offset_range, cfg.crop_offset_range)
    transform = CropTransform(scale=s, offset=(ox, oy))
    return transform.apply(kp), transform


def draw_bone_scales(topology: SkeletonTopology, rng: SplitMix64, low: float, high: float) -> np.ndarray:
    """Per-joint bone scale factors in [low, high]; roots get 1.0.

    Mirrored bones share one draw so limbs stay left/right symmetric: the
    canonical bone of a mirror pair is the one with the smaller child index.
    Draws happen in ascending canonical child index order.
    """
    J = topology.n_joints
    scales = np.ones(J, dtype=np.float64)
    for k in range(J):
        if topology.parents[k] is None:
            continue
        mirror = topology.flip_map[k]
        if mirror < k and topology.parents[mirror] is not None:
            scales[k] = scales[mirror]
        else:
            scales[k] = rng.uniform(low, high)
    return scales


def randomize_limb_lengths(positions, topology: SkeletonTopology, cfg: AugmentConfig, rng: SplitMix64) -> np.ndarray:
    """Rescale bone vectors of a 3D pose, preserving directions and the tree.

    Each bone (parent -> joint) keeps its direction; its length is
    multiplied by a factor from limb_scale_range. Descendants move rigidly
    with their parents, so the result is again a valid pose for the same
    topology. Root positions are untouched.
    """
    pos = check_positions(positions, topology.n_joints)
    scales = draw_bone_scales(topology, rng, *cfg.limb_scale_range)
    out = np.empty_like(pos)
    for k in topology.topological_order():
        p = topology.parents[k]
        if p is None:
            out[k] = pos[k]
        else:
            out[k] = out[p] + scales[k] * (pos[k] - pos[p])
    return out
