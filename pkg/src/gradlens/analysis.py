"""Attention-distortion metrics between original and adversarial maps.

All grid metrics are invariant to positive affine rescaling of their
inputs: Pearson and top-k by construction, centroid and entropy because
they normalize first. Grad-CAM metrics run on the native-resolution
grids so interpolation cannot manufacture agreement.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .attacks import L0, verify_adversarial
from .attention import map_quadruple
from .errors import ShapeError, ZeroMassGrid

TOPK_FRACTION = 0.10


def _check_dims(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"grid shapes differ: {a.shape} vs {b.shape}")
    return a, b


def pearson(a, b):
    """Pearson correlation of flattened grids; 0 if either is constant."""
    a, b = _check_dims(a, b)
    da = a.reshape(-1) - a.mean()
    db = b.reshape(-1) - b.mean()
    na, nb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip((da * db).sum() / (na * nb), -1.0, 1.0))


def topk_overlap(a, b, fraction=TOPK_FRACTION):
    """Fraction of the top-valued cells the two grids share.

    The top set holds the ceil(fraction * size) largest values; ties
    resolve in row-major order.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    a, b = _check_dims(a, b)
    k = math.ceil(fraction * a.size)
    top_a = np.argsort(-a.reshape(-1), kind="stable")[:k]
    top_b = np.argsort(-b.reshape(-1), kind="stable")[:k]
    return len(set(top_a.tolist()) & set(top_b.tolist())) / k


def _normalized(grid):
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = g.min(), g.max()
    if hi > lo:
        return (g - lo) / (hi - lo)
    return np.zeros_like(g)


def centroid(grid):
    """Mass-weighted mean (row, col) of a non-negative grid."""
    g = np.asarray(grid, dtype=np.float64)
    total = g.sum()
    if total <= 0.0:
        raise ZeroMassGrid("grid has no positive mass")
    rows, cols = np.indices(g.shape)
    return float((rows * g).sum() / total), float((cols * g).sum() / total)


def centroid_shift(a, b):
    """Euclidean distance between the attention centroids of two grids.

    Grids are min-max normalized first so the shift is insensitive to
    positive affine rescaling.
    """
    a, b = _check_dims(a, b)
    ra, ca = centroid(_normalized(a))
    rb, cb = centroid(_normalized(b))
    return math.hypot(ra - rb, ca - cb)


def peak_to_perturbation(grid, support):
    """Min distance from the grid's argmax (row-major tie-break) to any
    perturbed pixel."""
    if not support:
        raise ValueError("support is empty")
    g = np.asarray(grid, dtype=np.float64)
    peak = np.unravel_index(int(np.argmax(g)), g.shape)
    return min(math.hypot(peak[0] - r, peak[1] - c) for r, c in support)


def shannon_entropy(grid):
    """Entropy (nats) of the grid treated as a mass distribution after
    min-max normalization; zero-mass grids have zero entropy."""
    g = _normalized(grid)
    total = g.sum()
    if total <= 0.0:
        return 0.0
    q = g.reshape(-1) / total
    q = q[q > 0]
    return float(-(q * np.log(q)).sum())


def entropy_ratio(adv_grid, orig_grid):
    """H(adversarial) / H(original); a diffusion proxy (>1 means the
    adversarial map is more spread out)."""
    h_orig = shannon_entropy(orig_grid)
    h_adv = shannon_entropy(adv_grid)
    if h_orig == 0.0:
        return 1.0 if h_adv == 0.0 else math.inf
    return h_adv / h_orig


@dataclass
class MapMetrics:
    pearson_true: float
    pearson_cross: float
    topk_overlap_true: float
    centroid_shift: float
    entropy_ratio: float
    peak_to_perturbation: float | None = None  # pixel attack only

    def in_range(self):
        ok = -1.0 <= self.pearson_true <= 1.0
        ok &= -1.0 <= self.pearson_cross <= 1.0
        ok &= 0.0 <= self.topk_overlap_true <= 1.0
        ok &= self.centroid_shift >= 0.0
        ok &= self.entropy_ratio >= 0.0
        if self.peak_to_perturbation is not None:
            ok &= self.peak_to_perturbation >= 0.0
        return bool(ok)


@dataclass
class ComparisonReport:
    """Per-image distortion metrics between the four map variants."""

    image_id: str
    attack: str
    original_class: int
    adversarial_class: int
    metrics: dict = field(default_factory=dict)  # kind -> MapMetrics


def compare(net, attack_result, cfg, kinds=("saliency", "gradcam"),
            image_id="0", topk_fraction=TOPK_FRACTION, **map_kwargs):
    """Compute the full metric set for a verified successful attack.

    Uses native-resolution grids for every metric. The perturbation
    support only feeds peak_to_perturbation, which is reported for the
    pixel attack alone.
    """
    outcome = verify_adversarial(net, attack_result, cfg)
    if not outcome:
        raise ValueError(f"attack result failed verification ({outcome.reason})")
    if not attack_result.success:
        raise ValueError("attack result is not a successful adversarial sample")

    report = ComparisonReport(
        image_id=str(image_id),
        attack=attack_result.attack,
        original_class=attack_result.original_class,
        adversarial_class=attack_result.adversarial_class,
    )
    for kind in kinds:
        quad = map_quadruple(
            net,
            attack_result.original,
            attack_result.adversarial,
            attack_result.original_class,
            attack_result.adversarial_class,
            kind,
            **map_kwargs,
        )
        orig_true = quad["orig_true"].native_grid
        adv_true = quad["adv_true"].native_grid
        adv_adv = quad["adv_adv"].native_grid
        peak = None
        if cfg.p == L0:
            support = attack_result.support()
            if support:
                peak = _peak_distance(adv_adv, support, attack_result.original.shape[:2])
        report.metrics[kind] = MapMetrics(
            pearson_true=pearson(orig_true, adv_true),
            pearson_cross=pearson(orig_true, adv_adv),
            topk_overlap_true=topk_overlap(orig_true, adv_true, topk_fraction),
            centroid_shift=centroid_shift(orig_true, adv_adv),
            entropy_ratio=entropy_ratio(adv_adv, orig_true),
            peak_to_perturbation=peak,
        )
    return report


def _peak_distance(grid, support, image_shape):
    """peak_to_perturbation in image pixel units, even when the grid is
    a coarser native Grad-CAM grid (the peak is corner-aligned into the
    image frame first)."""
    nh, nw = grid.shape
    ih, iw = image_shape
    if (nh, nw) == (ih, iw):
        return peak_to_perturbation(grid, support)
    pr, pc = np.unravel_index(int(np.argmax(np.asarray(grid))), (nh, nw))
    pr = pr * (ih - 1) / (nh - 1) if nh > 1 else (ih - 1) / 2.0
    pc = pc * (iw - 1) / (nw - 1) if nw > 1 else (iw - 1) / 2.0
    return min(math.hypot(pr - r, pc - c) for r, c in support)


REPORT_KINDS = ("saliency", "gradcam")
REPORT_METRIC_FIELDS = (
    "pearson_true",
    "pearson_cross",
    "topk_overlap_true",
    "centroid_shift",
    "peak_to_perturbation",
    "entropy_ratio",
)
REPORT_COLUMNS = ("image_id", "attack", "original_class", "adversarial_class") + tuple(
    f"{kind}_{metric}" for kind in REPORT_KINDS for metric in REPORT_METRIC_FIELDS
)


def report_row(report):
    """Flatten a report into the fixed CSV column order; absent metrics
    render as empty strings."""
    row = [
        report.image_id,
        report.attack,
        str(report.original_class),
        str(report.adversarial_class),
    ]
    for kind in REPORT_KINDS:
        mm = report.metrics.get(kind)
        for name in REPORT_METRIC_FIELDS:
            value = getattr(mm, name) if mm is not None else None
            row.append("" if value is None else repr(float(value)))
    return row


def write_report_csv(path, reports):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for rep in reports:
            fh.write(",".join(report_row(rep)) + "\n")
