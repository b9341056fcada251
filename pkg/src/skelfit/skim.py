"""SKIM: a minimal binary container for multi-channel float skeleton images.

Layout: magic b"SKIM", one u8 format version (currently 1), little-endian
u32 C, W, H, then C*W*H little-endian IEEE-754 float32 values, planar,
row-major within each plane. Total size is therefore exactly
17 + 4*C*W*H bytes; anything else is malformed.

PNG export is lossy and for inspection only: per-channel 8-bit grayscale
at round(255 * y), plus a false-color composite summing fixed per-channel
colors.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import FormatError
from .validation import check_image

__all__ = [
    "SKIM_MAGIC",
    "SKIM_VERSION",
    "skim_bytes",
    "parse_skim",
    "write_skim",
    "read_skim",
    "write_png_channels",
    "write_png_composite",
    "CHANNEL_COLORS",
]

SKIM_MAGIC = b"SKIM"
SKIM_VERSION = 1
_HEADER = struct.Struct("<4sBIII")

# One fixed color per channel index (cycled past 8); composite only.
CHANNEL_COLORS = (
    (230, 230, 230),  # torso-ish: light gray
    (228, 26, 28),    # red
    (55, 126, 184),   # blue
    (77, 175, 74),    # green
    (152, 78, 163),   # purple
    (255, 127, 0),    # orange
    (255, 255, 51),   # yellow
    (166, 86, 40),    # brown
)


def skim_bytes(image) -> bytes:
    """Encode a (C, H, W) image; values are stored as float32."""
    img = check_image(image)
    c, h, w = img.shape
    header = _HEADER.pack(SKIM_MAGIC, SKIM_VERSION, c, w, h)
    return header + np.ascontiguousarray(img, dtype="<f4").tobytes()


def parse_skim(data: bytes) -> np.ndarray:
    """Decode SKIM bytes to a (C, H, W) float32 array."""
    if len(data) < _HEADER.size:
        raise FormatError(
            f"SKIM data truncated: {len(data)} bytes, header needs {_HEADER.size}"
        )
    magic, version, c, w, h = _HEADER.unpack_from(data)
    if magic != SKIM_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SKIM_MAGIC!r}")
    if version != SKIM_VERSION:
        raise FormatError(f"unsupported SKIM version {version}, expected {SKIM_VERSION}")
    if c == 0 or w == 0 or h == 0:
        raise FormatError(f"zero dimension in SKIM header: C={c}, W={w}, H={h}")
    expected = _HEADER.size + 4 * c * w * h
    if len(data) != expected:
        raise FormatError(
            f"SKIM payload size mismatch: {len(data)} bytes, expected {expected} "
            f"for C={c}, W={w}, H={h}"
        )
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return flat.reshape(c, h, w).copy()


def write_skim(image, path) -> None:
    Path(path).write_bytes(skim_bytes(image))


def read_skim(path) -> np.ndarray:
    return parse_skim(Path(path).read_bytes())


def _to_u8(plane: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(255.0 * plane), 0, 255).astype(np.uint8)


def write_png_channels(image, out_dir, stem: str = "channel") -> list[Path]:
    """One grayscale PNG per channel: <out_dir>/<stem>_<c>.png."""
    img = check_image(image)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in range(img.shape[0]):
        p = out / f"{stem}_{c}.png"
        Image.fromarray(_to_u8(img[c]), mode="L").save(p)
        paths.append(p)
    return paths


def write_png_composite(image, path) -> Path:
    """False-color overlay of all channels; for humans, not round-trippable."""
    img = check_image(image)
    c, h, w = img.shape
    rgb = np.zeros((h, w, 3), dtype=np.float64)
    for ch in range(c):
        color = CHANNEL_COLORS[ch % len(CHANNEL_COLORS)]
        rgb += img[ch][:, :, None] * np.asarray(color, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.clip(np.rint(rgb), 0, 255).astype(np.uint8), mode="RGB").save(path)
    return path
