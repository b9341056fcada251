"""Differentiable multi-channel skeleton-image rendering.

A pose is rendered by taking, at every pixel, the squared distance to the
nearest skeleton edge (as line segments between keypoints) and mapping it
through exp(-gamma * d^2). Channels partition the edge set, so each channel
sees only its own edges; a channel with no edges renders to zeros.

Coordinates are normalized to [0, 1]^2 with the origin at the top-left and
y growing downward. Pixel (row, col) samples the continuous field at its
center ((col + 0.5) / W, (row + 0.5) / H). Images are (C, H, W) row-major.

The backward pass differentiates through the hard min with the envelope
rule: the minimizing edge and its clamped projection parameter t* are held
fixed, and the distance gradient flows to that edge's endpoints weighted
(1 - t*) and t*. Ties go to the lowest edge index within the channel.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .topology import SkeletonTopology
from .validation import check_image, check_keypoints

__all__ = [
    "RenderParams",
    "pixel_grid",
    "point_segment_sq_distance",
    "render",
    "render_backward",
    "render_loss_and_grad",
]


@dataclass(frozen=True)
class RenderParams:
    """Rendering controls: sharpness and raster size."""

    gamma: float = 250.0
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if int(self.width) != self.width or self.width < 1:
            raise ValueError(f"width must be a positive integer, got {self.width}")
        if int(self.height) != self.height or self.height < 1:
            raise ValueError(f"height must be a positive integer, got {self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))


@lru_cache(maxsize=8)
def _grid_parts(width: int, height: int):
    xs = (np.arange(width, dtype=np.float64) + 0.5) / width
    ys = (np.arange(height, dtype=np.float64) + 0.5) / height
    gx, gy = np.meshgrid(xs, ys)
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)  # index p = row * W + col
    ux = np.ascontiguousarray(grid[:, 0])
    uy = np.ascontiguousarray(grid[:, 1])
    for arr in (grid, ux, uy):
        arr.setflags(write=False)
    return grid, ux, uy


def pixel_grid(width: int, height: int) -> np.ndarray:
    """(W*H, 2) array of normalized pixel-center coordinates, row-major."""
    if width < 1 or height < 1:
        raise ValueError(f"raster size must be positive, got {width}x{height}")
    return _grid_parts(int(width), int(height))[0]


def point_segment_sq_distance(points, seg_start, seg_end):
    """Squared distance from points (..., 2) to the segment [seg_start, seg_end].

    Returns ``(d2, t)`` where ``t`` in [0, 1] parametrizes the closest point
    ``(1 - t) * seg_start + t * seg_end``. A degenerate segment (coincident
    endpoints) is treated as a point, with t = 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    a = np.asarray(seg_start, dtype=np.float64).reshape(2)
    b = np.asarray(seg_end, dtype=np.float64).reshape(2)
    ab = b - a
    l2 = float(ab @ ab)
    diff = pts - a
    if l2 == 0.0:
        t = np.zeros(pts.shape[:-1], dtype=np.float64)
    else:
        t = np.clip((diff @ ab) / l2, 0.0, 1.0)
    r = diff - t[..., None] * ab
    return np.einsum("...i,...i->...", r, r), t


_TLS = threading.local()


def _workspace(n_edges: int, n_pixels: int) -> dict:
    """Reusable per-thread scratch for the (edge, pixel) field sweep.

    Contents are overwritten by every render call on the same thread, so
    callers must consume them before the next call.
    """
    cache = getattr(_TLS, "cache", None)
    if cache is None:
        cache = _TLS.cache = {}
    key = (n_edges, n_pixels)
    ws = cache.get(key)
    if ws is None:
        shape = (n_edges, n_pixels)
        ws = {
            "d2": np.empty(shape),
            "t": np.empty(shape),
            "rx": np.empty(shape),
            "ry": np.empty(shape),
            "tmp": np.empty(shape),
            "dmin": np.empty(n_pixels),
            "y": np.empty(n_pixels),
            "taken": np.empty(n_pixels, dtype=bool),
            "mask": np.empty(n_pixels, dtype=bool),
        }
        cache[key] = ws
    return ws


def _edge_fields(kp: np.ndarray, edges: np.ndarray, ux: np.ndarray, uy: np.ndarray):
    """Per (edge, pixel) squared distance, clamp parameter, and residual
    vector, written into thread scratch buffers."""
    ws = _workspace(edges.shape[0], ux.shape[0])
    a = kp[edges[:, 0]]
    ab = kp[edges[:, 1]] - a
    l2 = ab[:, 0] ** 2 + ab[:, 1] ** 2
    inv = np.zeros_like(l2)
    nz = l2 > 0.0
    inv[nz] = 1.0 / l2[nz]  # degenerate edges keep inv = 0, forcing t = 0
    abx, aby = ab[:, 0:1], ab[:, 1:2]
    d2, t, rx, ry, tmp = ws["d2"], ws["t"], ws["rx"], ws["ry"], ws["tmp"]
    np.subtract(ux, a[:, 0:1], out=rx)
    np.subtract(uy, a[:, 1:2], out=ry)
    np.multiply(rx, abx, out=t)
    np.multiply(ry, aby, out=tmp)
    t += tmp
    t *= inv[:, None]
    np.clip(t, 0.0, 1.0, out=t)
    np.multiply(t, abx, out=tmp)
    rx -= tmp
    np.multiply(t, aby, out=tmp)
    ry -= tmp
    np.multiply(rx, rx, out=d2)
    np.multiply(ry, ry, out=tmp)
    d2 += tmp
    return ws


def _channel_min(d2: np.ndarray, rows: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Minimum squared distance across one channel's edge rows."""
    np.copyto(out, d2[rows[0]])
    for r in rows[1:]:
        np.minimum(out, d2[r], out=out)
    return out


def _scatter(grad, common, rows, edges, ws):
    """Add sum_p common[p] * (1-t, t) * residual[p] into the endpoint rows of
    grad, per pixel through the channel's minimizing edge (ties: lowest edge
    index)."""
    d2, t, rx, ry = ws["d2"], ws["t"], ws["rx"], ws["ry"]
    dmin, taken, mask = ws["dmin"], ws["taken"], ws["mask"]
    taken[:] = False
    last = rows.shape[0] - 1
    for k, e in enumerate(rows):
        np.equal(d2[e], dmin, out=mask)
        if k:
            mask &= ~taken
        sel = np.flatnonzero(mask)
        if k != last:
            taken |= mask
        if sel.size == 0:
            continue
        w = common[sel]
        te = t[e, sel]
        vx = rx[e, sel]
        vy = ry[e, sel]
        wj = w * te
        wi = w - wj
        i, j = edges[e]
        grad[i, 0] += wi @ vx
        grad[i, 1] += wi @ vy
        grad[j, 0] += wj @ vx
        grad[j, 1] += wj @ vy


def render(
    keypoints,
    topology: SkeletonTopology,
    layout: str = "1ch",
    params: RenderParams | None = None,
) -> np.ndarray:
    """Render a (C, H, W) skeleton image from (J, 2) normalized keypoints."""
    params = params or RenderParams()
    kp = check_keypoints(keypoints, topology.n_joints)
    rows = topology.layout_rows(layout)
    _, ux, uy = _grid_parts(params.width, params.height)
    ws = _edge_fields(kp, topology.edge_array, ux, uy)
    out = np.zeros((len(rows), ux.shape[0]), dtype=np.float64)
    for c, r in enumerate(rows):
        if r.size:
            _channel_min(ws["d2"], r, out[c])
            out[c] *= -params.gamma
            np.exp(out[c], out=out[c])
    return out.reshape(len(rows), params.height, params.width)


def render_backward(
    keypoints,
    upstream,
    topology: SkeletonTopology,
    layout: str = "1ch",
    params: RenderParams | None = None,
) -> np.ndarray:
    """Gradient of sum(upstream * render(keypoints)) w.r.t. the keypoints.

    ``upstream`` is a (C, H, W) array of d(loss)/d(pixel value).
    """
    params = params or RenderParams()
    kp = check_keypoints(keypoints, topology.n_joints)
    rows = topology.layout_rows(layout)
    up = check_image(upstream, channels=len(rows), name="upstream")
    if up.shape[1:] != (params.height, params.width):
        raise ValueError(
            f"upstream: expected ({len(rows)}, {params.height}, {params.width}), "
            f"got {up.shape}"
        )
    _, ux, uy = _grid_parts(params.width, params.height)
    edges = topology.edge_array
    ws = _edge_fields(kp, edges, ux, uy)
    grad = np.zeros_like(kp)
    flat = up.reshape(len(rows), -1)
    for c, r in enumerate(rows):
        if r.size and np.any(flat[c]):
            dmin = _channel_min(ws["d2"], r, ws["dmin"])
            y = np.multiply(dmin, -params.gamma, out=ws["y"])
            np.exp(y, out=y)
            common = (2.0 * params.gamma) * y * flat[c]
            _scatter(grad, common, r, edges, ws)
    return grad


def render_loss_and_grad(
    keypoints,
    target,
    topology: SkeletonTopology,
    layout: str = "1ch",
    params: RenderParams | None = None,
    weight: float = 1.0,
):
    """Weighted mean-squared rendering loss and its keypoint gradient.

    loss = weight * mean((render(kp) - target)^2) over all C*H*W entries.
    Shares one distance-field evaluation between the forward value and the
    backward pass, which matters inside optimization loops.
    """
    params = params or RenderParams()
    kp = check_keypoints(keypoints, topology.n_joints)
    rows = topology.layout_rows(layout)
    tgt = check_image(target, channels=len(rows), name="target")
    if tgt.shape[1:] != (params.height, params.width):
        raise ValueError(
            f"target: expected ({len(rows)}, {params.height}, {params.width}), "
            f"got {tgt.shape}"
        )
    _, ux, uy = _grid_parts(params.width, params.height)
    edges = topology.edge_array
    ws = _edge_fields(kp, edges, ux, uy)
    n = tgt.size
    tgt_flat = tgt.reshape(len(rows), -1)
    grad = np.zeros_like(kp)
    sq_sum = 0.0
    for c, r in enumerate(rows):
        if not r.size:
            resid = tgt_flat[c]
            sq_sum += float(resid @ resid)
            continue
        dmin = _channel_min(ws["d2"], r, ws["dmin"])
        y = np.multiply(dmin, -params.gamma, out=ws["y"])
        np.exp(y, out=y)
        resid = y - tgt_flat[c]
        sq_sum += float(resid @ resid)
        common = (4.0 * weight * params.gamma / n) * y * resid
        _scatter(grad, common, r, edges, ws)
    return weight * sq_sum / n, grad
