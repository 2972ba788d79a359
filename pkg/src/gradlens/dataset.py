"""Dataset loading and generation.

Two sources: the CIFAR-10 binary batch format, and a deterministic
synthetic shape-vs-texture generator for desk-scale runs that need no
external data.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

CIFAR10_CLASSES = [
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
]
_RECORD = 3073  # 1 label byte + 32*32*3 pixel bytes, channel-planar


@dataclass
class LabeledDataset:
    images: np.ndarray  # (B, H, W, C) in [0, 1]
    labels: np.ndarray  # (B,) class indices
    class_names: list
    provenance: str = "synthetic"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= len(self.class_names)):
            raise ValueError("labels must index class_names")

    def __len__(self):
        return len(self.images)

    def subset(self, indices):
        return LabeledDataset(
            self.images[indices], self.labels[indices],
            self.class_names, self.provenance,
        )


def load_cifar10(directory):
    """Parse CIFAR-10 binary batches (*.bin) found under `directory`.

    Each 3073-byte record is a label byte then 1024 red, 1024 green and
    1024 blue bytes in row-major 32x32 order; bytes scale to [0, 1] by
    division with 255.
    """
    files = sorted(Path(directory).glob("*.bin"))
    if not files:
        raise FileNotFoundError(f"no CIFAR-10 .bin batches under {directory}")
    images, labels = [], []
    for f in files:
        raw = f.read_bytes()
        if len(raw) % _RECORD != 0:
            raise ValueError(
                f"{f.name}: length {len(raw)} is not a multiple of {_RECORD}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _RECORD)
        batch_labels = records[:, 0]
        if batch_labels.size and batch_labels.max() >= 10:
            raise ValueError(f"{f.name}: label byte {batch_labels.max()} out of range")
        planes = records[:, 1:].reshape(-1, 3, 32, 32)
        images.append(planes.transpose(0, 2, 3, 1).astype(np.float64) / 255.0)
        labels.append(batch_labels.astype(np.int64))
    return LabeledDataset(
        np.concatenate(images), np.concatenate(labels),
        list(CIFAR10_CLASSES), provenance="cifar10",
    )


def _paint_square(mask_size):
    return np.ones((mask_size, mask_size), dtype=bool)


def _paint_disk(mask_size):
    r = (mask_size - 1) / 2.0
    yy, xx = np.indices((mask_size, mask_size))
    return (yy - r) ** 2 + (xx - r) ** 2 <= r * r + 0.5


def _paint_cross(mask_size):
    m = np.zeros((mask_size, mask_size), dtype=bool)
    mid = mask_size // 2
    m[mid - 1 : mid + 1, :] = True
    m[:, mid - 1 : mid + 1] = True
    return m


def _paint_saltire(mask_size):
    m = np.zeros((mask_size, mask_size), dtype=bool)
    for i in range(mask_size):
        for d in (-1, 0):
            j = min(max(i + d, 0), mask_size - 1)
            m[i, j] = True
            m[i, mask_size - 1 - j] = True
    return m


def _paint_ring(mask_size):
    r = (mask_size - 1) / 2.0
    yy, xx = np.indices((mask_size, mask_size))
    d2 = (yy - r) ** 2 + (xx - r) ** 2
    return (d2 <= r * r + 0.5) & (d2 >= (r - 1.6) ** 2)


def _paint_triangle(mask_size):
    m = np.zeros((mask_size, mask_size), dtype=bool)
    for i in range(mask_size):
        width = int(round((i + 1) / mask_size * mask_size))
        lo = (mask_size - width) // 2
        m[i, lo : lo + width] = True
    return m


_PAINTERS = [_paint_square, _paint_cross, _paint_disk, _paint_saltire,
             _paint_ring, _paint_triangle]


def _class_mask(cls, mask_size):
    if cls < len(_PAINTERS):
        return _PAINTERS[cls](mask_size)
    # beyond the named shapes: a fixed random stencil per class
    rng = np.random.default_rng(7919 * (cls + 1))
    m = rng.random((mask_size, mask_size)) < 0.5
    m[mask_size // 2, mask_size // 2] = True
    return m


def gen_synthetic(classes=2, size=16, count=200, seed=0, channels=3,
                  noise=0.35, brightness=(0.75, 1.0), shape_frac=0.45):
    """Bright shapes on noise, one shape family per class.

    Deterministic for a fixed seed; labels cycle 0..classes-1 so every
    class is equally represented. The defaults keep the shapes well
    above the noise ceiling (easy to learn); shrinking the gap between
    ``noise`` and ``brightness`` makes the task harder and the trained
    model correspondingly easier to attack.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    mask_size = min(max(5, int(round(size * shape_frac))), size)
    masks = [_class_mask(c, mask_size) for c in range(classes)]
    images = rng.uniform(0.0, noise, size=(count, size, size, channels))
    labels = np.arange(count, dtype=np.int64) % classes
    b_lo, b_hi = brightness
    for i in range(count):
        mask = masks[labels[i]]
        r0 = rng.integers(0, size - mask_size + 1)
        c0 = rng.integers(0, size - mask_size + 1)
        level = rng.uniform(b_lo, b_hi)
        patch = images[i, r0 : r0 + mask_size, c0 : c0 + mask_size]
        patch[mask] = level
    names = [f"shape{c}" for c in range(classes)]
    return LabeledDataset(images, labels, names, provenance="synthetic")
