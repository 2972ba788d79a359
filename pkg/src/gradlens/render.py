"""Overlay rendering and PPM output.

The colormap is a fixed 5-stop piecewise-linear ramp; blending happens
in float and is rounded half-up to 8 bits exactly once, so rendering is
pure: same inputs, byte-identical files.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import as_pixels

COLORMAP_STOPS = (
    (0.00, (0.0, 0.0, 128.0)),  # dark blue
    (0.25, (0.0, 255.0, 255.0)),  # cyan
    (0.50, (0.0, 255.0, 0.0)),  # green
    (0.75, (255.0, 255.0, 0.0)),  # yellow
    (1.00, (255.0, 0.0, 0.0)),  # red
)


@dataclass
class OverlayImage:
    pixels: np.ndarray  # (rows, cols, 3) uint8
    provenance: dict = field(default_factory=dict)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def colormap(values):
    """Map values in [0, 1] to float RGB on the 0..255 scale."""
    v = np.asarray(values, dtype=np.float64)
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise ValueError("colormap input must lie in [0, 1]; normalize the map first")
    positions = np.array([p for p, _ in COLORMAP_STOPS])
    colors = np.array([c for _, c in COLORMAP_STOPS])
    idx = np.clip(np.searchsorted(positions, v, side="right") - 1, 0, len(positions) - 2)
    span = positions[idx + 1] - positions[idx]
    t = (v - positions[idx]) / span
    out = colors[idx] * (1.0 - t[..., None]) + colors[idx + 1] * t[..., None]
    return out


def _round_half_up(x):
    return np.floor(x + 0.5).astype(np.uint8)


def render_overlay(image, amap, alpha=0.5):
    """Blend a finalized attention map over its image.

    pixel = (1 - alpha) * base + alpha * colormap(map); grayscale bases
    are replicated to RGB. The map must already be at image dims with
    values in [0, 1].
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    base = as_pixels(image, dtype=np.float64)
    if base.ndim != 3 or base.shape[2] not in (1, 3):
        raise ShapeError(f"expected an (H, W, 1|3) image, got shape {base.shape}")
    grid = np.asarray(amap.grid if hasattr(amap, "grid") else amap, dtype=np.float64)
    if grid.shape != base.shape[:2]:
        raise ShapeError(
            f"map dims {grid.shape} do not match image dims {base.shape[:2]}"
        )
    if base.shape[2] == 1:
        base = np.repeat(base, 3, axis=2)
    blended = (1.0 - alpha) * base * 255.0 + alpha * colormap(grid)
    provenance = {"alpha": alpha}
    if hasattr(amap, "kind"):
        provenance.update(kind=amap.kind, label=amap.label, source=amap.source)
    return OverlayImage(pixels=_round_half_up(blended), provenance=provenance)


def image_to_rgb(image):
    """Quantize a [0, 1] image to an 8-bit RGB OverlayImage (no map)."""
    base = as_pixels(image, dtype=np.float64)
    if base.ndim != 3 or base.shape[2] not in (1, 3):
        raise ShapeError(f"expected an (H, W, 1|3) image, got shape {base.shape}")
    if base.shape[2] == 1:
        base = np.repeat(base, 3, axis=2)
    return OverlayImage(pixels=_round_half_up(base * 255.0), provenance={"alpha": 0.0})


def write_image(img, path):
    """Emit binary PPM (P6, maxval 255)."""
    pixels = img.pixels if isinstance(img, OverlayImage) else np.asarray(img)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError("write_image needs (rows, cols, 3) uint8 pixels")
    rows, cols = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def read_ppm(path):
    """Parse a P6 file written by :func:`write_image` (round-trip checks)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise ValueError("not a P6 PPM file")
    cols, rows = (int(tok) for tok in parts[1].split())
    if parts[2] != b"255":
        raise ValueError("unsupported maxval")
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=rows * cols * 3)
    return pixels.reshape(rows, cols, 3).copy()
