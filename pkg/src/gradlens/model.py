"""Mini residual CNN builder and deterministic SGD training."""

from dataclasses import dataclass

import numpy as np

from .errors import TrainingDiverged
from .network import (
    Add,
    Conv2D,
    Dense,
    GlobalAvgPool,
    NetworkSpec,
    ReLU,
    Softmax,
    forward_batch,
    trace_batch,
)
from .tensor import DEFAULT_DTYPE


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    val_fraction: float = 0.15

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("rates must be non-negative")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueError("val_fraction must lie in [0, 1)")


_BIAS_INIT = 0.05  # slightly positive so ReLUs start alive on [0,1] inputs
_CLIP_NORM = 2.0  # global gradient-norm clip keeps momentum from amplifying spikes


def _he_conv(rng, kh, kw, cin, cout, dtype, scale=1.0):
    std = scale * np.sqrt(2.0 / (kh * kw * cin))
    w = (rng.standard_normal((kh, kw, cin, cout)) * std).astype(dtype)
    return Conv2D(w, np.full(cout, _BIAS_INIT, dtype=dtype), stride=1, pad=1)


def build_mini_resnet(input_shape, classes, blocks, channels=16, seed=0,
                      dtype=DEFAULT_DTYPE):
    """Stem conv, `blocks` residual blocks (conv-relu-conv + identity skip,
    then relu), global average pool, dense head, softmax.

    The last convolutional node is flagged as the default Grad-CAM tap.
    Identical seeds give bit-identical initial parameters.
    """
    m, n, c = (int(d) for d in input_shape)
    if m < 8 or n < 8:
        raise ValueError(f"input must be at least 8x8, got {m}x{n}")
    if c not in (1, 3):
        raise ValueError(f"channel count must be 1 or 3, got {c}")
    if blocks < 1:
        raise ValueError("at least one residual block is required")
    if classes < 2:
        raise ValueError("need at least two classes")

    rng = np.random.default_rng(seed)
    layers = [_he_conv(rng, 3, 3, c, channels, dtype), ReLU()]
    cam_node = None
    for _ in range(blocks):
        entry = len(layers)  # node index of the block input
        layers.append(_he_conv(rng, 3, 3, channels, channels, dtype))
        layers.append(ReLU())
        # damped branch exit keeps each block near-identity at init,
        # which trains stably without batch normalization
        layers.append(_he_conv(rng, 3, 3, channels, channels, dtype, scale=0.1))
        cam_node = len(layers)
        layers.append(Add(skip_from=entry))
        layers.append(ReLU())
    layers.append(GlobalAvgPool())
    std = np.sqrt(2.0 / channels)
    layers.append(
        Dense(
            (rng.standard_normal((channels, classes)) * std).astype(dtype),
            np.zeros(classes, dtype=dtype),
        )
    )
    layers.append(Softmax())
    return NetworkSpec(
        layers=layers,
        input_shape=(m, n, c),
        num_classes=classes,
        dtype=dtype,
        cam_node=cam_node,
        meta={"seed": int(seed), "blocks": int(blocks), "channels": int(channels)},
    )


def _accuracy(net, images, labels, batch_size=256):
    correct = 0
    for lo in range(0, len(images), batch_size):
        probs = forward_batch(net, images[lo : lo + batch_size])
        correct += int(np.sum(probs.argmax(axis=1) == labels[lo : lo + batch_size]))
    return correct / max(len(images), 1)


def train(net, data, cfg, log_path=None):
    """SGD with momentum and weight decay on cross-entropy.

    Mutates `net` in place and returns (net, history) where history rows
    are dicts with epoch, train_acc, val_acc and loss. Deterministic for
    a fixed cfg.seed (data order) and builder seed (initial weights).
    Raises TrainingDiverged if the loss goes non-finite.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    labels = np.asarray(data.labels)
    if labels.max() >= net.num_classes:
        raise ValueError(
            f"dataset labels reach {labels.max()} but network has "
            f"{net.num_classes} classes"
        )
    images = np.asarray(data.images, dtype=net.dtype)

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(images))
    n_val = int(round(cfg.val_fraction * len(images)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        raise ValueError("validation split leaves no training data")

    params = net.param_arrays()
    velocity = [np.zeros_like(p) for p in params]
    eye = np.eye(net.num_classes, dtype=net.dtype)
    warmup = max(1, cfg.epochs // 10)

    history = []
    lines = ["epoch\ttrain_acc\tval_acc\tloss"]
    for epoch in range(cfg.epochs):
        # cfg.learning_rate is the peak of a warmup + cosine schedule;
        # small first steps avoid driving ReLUs dead on [0,1] inputs
        if epoch < warmup:
            lr = cfg.learning_rate * (epoch + 1) / warmup
        else:
            t = (epoch - warmup) / max(cfg.epochs - warmup, 1)
            lr = cfg.learning_rate * (0.1 + 0.9 * 0.5 * (1 + np.cos(np.pi * t)))
        order = train_idx[rng.permutation(len(train_idx))]
        losses = []
        correct = 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb, yb = images[idx], labels[idx]
            record = trace_batch(net, xb)
            logits = record.nodes[net.logits_node].reshape(len(idx), -1)
            shifted = logits - logits.max(axis=1, keepdims=True)
            logz = np.log(np.exp(shifted).sum(axis=1))
            loss = float(np.mean(logz - shifted[np.arange(len(idx)), yb]))
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            losses.append(loss)
            probs = record.output
            correct += int(np.sum(probs.argmax(axis=1) == yb))

            dlogits = (probs - eye[yb]) / len(idx)
            _, param_grads = record.backward(
                dlogits.reshape(record.nodes[net.logits_node].shape),
                seed_node=net.logits_node,
                want_param_grads=True,
            )
            flat_grads = [g for pg in param_grads if pg for g in pg]
            gnorm = float(np.sqrt(sum(float((g * g).sum()) for g in flat_grads)))
            clip = min(1.0, _CLIP_NORM / gnorm) if gnorm > _CLIP_NORM else 1.0
            pi = 0
            for li, layer in enumerate(net.layers):
                for j, p in enumerate(layer.params()):
                    g = clip * param_grads[li][j] + cfg.weight_decay * p
                    velocity[pi] = cfg.momentum * velocity[pi] - lr * g
                    p += velocity[pi]
                    pi += 1

        train_acc = correct / len(order)
        val_acc = _accuracy(net, images[val_idx], labels[val_idx]) if n_val else float("nan")
        mean_loss = float(np.mean(losses))
        history.append(
            {"epoch": epoch, "train_acc": train_acc, "val_acc": val_acc, "loss": mean_loss}
        )
        lines.append(f"{epoch}\t{train_acc:.6f}\t{val_acc:.6f}\t{mean_loss:.6f}")

    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return net, history
