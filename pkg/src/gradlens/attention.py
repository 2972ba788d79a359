"""Saliency maps and gradient-weighted class activation maps.

A saliency map is the input gradient of one class output, reduced over
color channels by a (signed) max. A Grad-CAM map weights a conv layer's
activation channels by the spatial mean of that layer's class gradient.
Both work for any (image, class) pair, so original and adversarial maps
share one code path.
"""

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError
from .network import backward_feature_grad, backward_input_grad, forward, trace
from .ops import BackpropMode, coerce_mode
from .tensor import as_pixels

MAP_MAGIC = b"AFMP"
_KIND_CODE = {"saliency": 0, "gradcam": 1}
_MODE_CODE = {"standard": 0, "deconv": 1, "guided": 2}


@dataclass
class AttentionMap:
    """A 2-D attention grid tagged with how it was produced.

    ``grid`` is at image resolution once finalized; ``native_grid`` keeps
    the pre-upsample values (identical for saliency) so metrics never
    depend on interpolation. ``norm_bounds`` records the (min, max) that
    normalization mapped onto [0, 1], or None while raw.
    """

    kind: str
    grid: np.ndarray
    label: int
    source: str  # "original" | "adversarial"
    mode: str
    native_grid: np.ndarray
    layer_node: int | None = None
    norm_bounds: tuple | None = None

    @property
    def native_shape(self):
        return self.native_grid.shape


def saliency_map(net, image, label, mode=BackpropMode.GUIDED, reduce="signed_max",
                 from_logits=False, source="original"):
    """Channel-reduced input gradient of the selected class output.

    The reduction is a signed max over channels by default; pass
    ``reduce="abs_max"`` for the magnitude convention. ``mode`` selects
    the ReLU backward rule (guided by default).
    """
    if reduce not in ("signed_max", "abs_max"):
        raise ValueError(f"unknown channel reduction {reduce!r}")
    arr = as_pixels(image, dtype=net.dtype)
    if arr.ndim != 3:
        raise ShapeError(f"saliency needs an (H, W, C) image, got shape {arr.shape}")
    mode = coerce_mode(mode)
    grad = np.asarray(backward_input_grad(net, arr, label, mode, from_logits=from_logits))
    if reduce == "abs_max":
        grid = np.abs(grad).max(axis=2)
    else:
        grid = grad.max(axis=2)
    return AttentionMap(
        kind="saliency",
        grid=grid,
        label=int(label),
        source=source,
        mode=mode.value,
        native_grid=grid,
    )


def grad_cam(net, image, label, node=None, relu_clamp=True, from_logits=False,
             source="original"):
    """Class activation map of a convolutional node.

    Channel weights are the spatial mean of the class gradient at that
    node; the native map is the weighted sum of the node's forward
    activations, optionally clamped at zero (on by default), then
    bilinearly upsampled to image resolution.
    """
    arr = as_pixels(image, dtype=net.dtype)
    if arr.ndim != 3:
        raise ShapeError(f"grad_cam needs an (H, W, C) image, got shape {arr.shape}")
    node = net.cam_node if node is None else int(node)
    if node is None or not (0 < node <= len(net.layers)) or net.layers[node - 1].kind != "conv":
        raise ValueError(f"node {node!r} is not a convolutional node")
    record = trace(net, arr)
    grad = np.asarray(
        backward_feature_grad(net, arr, node, label, record=record,
                              from_logits=from_logits)
    )
    acts = record.nodes[node][0]
    weights = grad.mean(axis=(0, 1))  # spatial mean per channel
    native = np.tensordot(acts, weights, axes=([2], [0]))
    if relu_clamp:
        native = np.maximum(native, 0.0)
    grid = _bilinear(native, arr.shape[:2])
    return AttentionMap(
        kind="gradcam",
        grid=grid,
        label=int(label),
        source=source,
        mode=BackpropMode.STANDARD.value,
        native_grid=native,
        layer_node=node,
    )


def _bilinear(grid, target):
    """Corner-aligned bilinear interpolation onto a (rows, cols) target."""
    th, tw = int(target[0]), int(target[1])
    h, w = grid.shape
    if th == h and tw == w:
        return grid.copy()
    ri = np.linspace(0.0, h - 1.0, th) if th > 1 else np.zeros(1)
    ci = np.linspace(0.0, w - 1.0, tw) if tw > 1 else np.zeros(1)
    r0 = np.floor(ri).astype(int)
    c0 = np.floor(ci).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (ri - r0)[:, None]
    fc = (ci - c0)[None, :]
    top = grid[np.ix_(r0, c0)] * (1 - fc) + grid[np.ix_(r0, c1)] * fc
    bot = grid[np.ix_(r1, c0)] * (1 - fc) + grid[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def upsample(amap, target):
    """Bilinearly enlarge a map; target dims must not shrink the grid."""
    th, tw = int(target[0]), int(target[1])
    h, w = amap.grid.shape
    if th < h or tw < w:
        raise ShapeError(f"cannot upsample {amap.grid.shape} down to {(th, tw)}")
    return replace(amap, grid=_bilinear(amap.grid, (th, tw)))


def normalize(amap):
    """Min-max rescale the grid to [0, 1]; a constant grid becomes zeros.

    Records the (min, max) that was applied. Idempotent.
    """
    g = amap.grid
    lo, hi = float(g.min()), float(g.max())
    if hi > lo:
        grid = (g - lo) / (hi - lo)
    else:
        grid = np.zeros_like(g)
    return replace(amap, grid=grid, norm_bounds=(lo, hi))


def map_quadruple(net, x, xhat, original_class, adversarial_class, kind,
                  mode=BackpropMode.GUIDED, **kwargs):
    """The four maps an adversarial pair generates.

    Returns a dict over (source, class) with keys "orig_true",
    "orig_adv", "adv_true", "adv_adv", computed by the single-map
    routines. The pair must really be adversarial (differing argmaxes
    matching the given classes).
    """
    if kind not in ("saliency", "gradcam"):
        raise ValueError(f"unknown map kind {kind!r}")
    c, chat = int(original_class), int(adversarial_class)
    if int(np.argmax(forward(net, x))) != c:
        raise ValueError("original_class is not the model's prediction for x")
    if int(np.argmax(forward(net, xhat))) != chat:
        raise ValueError("adversarial_class is not the model's prediction for xhat")
    if c == chat:
        raise ValueError("not an adversarial pair: predictions coincide")
    if kind == "saliency":
        make = lambda img, lbl, src: saliency_map(net, img, lbl, mode=mode,
                                                  source=src, **kwargs)
    else:
        make = lambda img, lbl, src: grad_cam(net, img, lbl, source=src, **kwargs)
    return {
        "orig_true": make(x, c, "original"),
        "orig_adv": make(x, chat, "original"),
        "adv_true": make(xhat, c, "adversarial"),
        "adv_adv": make(xhat, chat, "adversarial"),
    }


def save_map(amap, path):
    """Binary grid file: magic, kind, class, dims, mode, float64 payload."""
    rows, cols = amap.grid.shape
    header = MAP_MAGIC + struct.pack(
        "<BHIIB",
        _KIND_CODE[amap.kind],
        amap.label,
        rows,
        cols,
        _MODE_CODE[amap.mode],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(amap.grid, dtype="<f8").tobytes())


def load_map(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAP_MAGIC:
        raise ValueError("not an attention map file (bad magic)")
    kind_code, label, rows, cols, mode_code = struct.unpack("<BHIIB", blob[4:16])
    grid = np.frombuffer(blob[16:], dtype="<f8").reshape(rows, cols).copy()
    kind = {v: k for k, v in _KIND_CODE.items()}[kind_code]
    mode = {v: k for k, v in _MODE_CODE.items()}[mode_code]
    return AttentionMap(kind=kind, grid=grid, label=label, source="original",
                        mode=mode, native_grid=grid)


def save_map_csv(amap, path):
    """Plain-text grid for eyeballing; one row per line."""
    np.savetxt(path, amap.grid, delimiter=",", fmt="%.17g")
