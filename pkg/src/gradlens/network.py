"""Layer-chain networks and reverse-mode differentiation over them.

A network is an ordered list of layer descriptors plus residual skip
edges. Node ``i`` denotes the output of ``layers[i-1]``; node 0 is the
network input, so a ``k``-layer network has ``k + 1`` nodes. A forward
pass records every node so one record can be replayed backward under
any ReLU backprop mode.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import NonFiniteError, ShapeError
from .ops import BackpropMode, coerce_mode
from .tensor import DEFAULT_DTYPE, Tensor, as_array, as_pixels

# Counts every backward sweep; lets tests prove black-box code paths
# never touch the gradient engine.
_BACKWARD_PASSES = 0


def backward_pass_count():
    return _BACKWARD_PASSES


@dataclass
class Conv2D:
    weight: np.ndarray  # (KH, KW, CIN, COUT)
    bias: np.ndarray  # (COUT,)
    stride: int = 1
    pad: int = 0
    kind = "conv"

    def params(self):
        return [self.weight, self.bias]


@dataclass
class Dense:
    weight: np.ndarray  # (FIN, FOUT)
    bias: np.ndarray  # (FOUT,)
    kind = "dense"

    def params(self):
        return [self.weight, self.bias]


@dataclass
class ReLU:
    kind = "relu"

    def params(self):
        return []


@dataclass
class MaxPool2D:
    size: int
    stride: int = 0  # 0 means same as size
    kind = "maxpool"

    def params(self):
        return []


@dataclass
class GlobalAvgPool:
    kind = "gap"

    def params(self):
        return []


@dataclass
class Softmax:
    kind = "softmax"

    def params(self):
        return []


@dataclass
class Add:
    """Adds the output of an earlier node (residual skip edge)."""

    skip_from: int  # node index; 0 is the network input
    kind = "add"

    def params(self):
        return []


LAYER_KINDS = {"conv", "dense", "relu", "maxpool", "gap", "softmax", "add"}


@dataclass
class NetworkSpec:
    """Ordered layer chain with residual links, a fixed input shape and
    class count. Weights are plain numpy arrays owned by the layers."""

    layers: list
    input_shape: tuple
    num_classes: int
    dtype: type = DEFAULT_DTYPE
    cam_node: int | None = None  # default Grad-CAM tap (last conv node)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.validate()

    def validate(self):
        if not self.layers:
            raise ValueError("network must contain at least one layer")
        if self.layers[-1].kind != "softmax":
            raise ValueError("final layer must be softmax")
        if sum(1 for l in self.layers if l.kind == "softmax") != 1:
            raise ValueError("exactly one softmax layer is allowed")
        for i, layer in enumerate(self.layers):
            for p in layer.params():
                if not np.all(np.isfinite(p)):
                    raise NonFiniteError(f"layer {i} has non-finite parameters")
        shapes = self.node_shapes()
        if shapes[-1] != (self.num_classes,):
            raise ShapeError(
                f"network produces {shapes[-1]}, expected ({self.num_classes},)"
            )
        return shapes

    def node_shapes(self):
        """Infer the shape of every node; raises ShapeError on any mismatch."""
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            cur = shapes[-1]
            if layer.kind == "conv":
                if len(cur) != 3:
                    raise ShapeError(f"layer {i}: conv needs (H, W, C), got {cur}")
                kh, kw, cin, cout = layer.weight.shape
                if cur[2] != cin:
                    raise ShapeError(
                        f"layer {i}: conv expects {cin} channels, got {cur[2]}"
                    )
                oh = ops.conv_output_extent(cur[0], kh, layer.stride, layer.pad)
                ow = ops.conv_output_extent(cur[1], kw, layer.stride, layer.pad)
                shapes.append((oh, ow, cout))
            elif layer.kind == "maxpool":
                if len(cur) != 3:
                    raise ShapeError(f"layer {i}: maxpool needs (H, W, C), got {cur}")
                st = layer.stride or layer.size
                oh = ops.conv_output_extent(cur[0], layer.size, st, 0)
                ow = ops.conv_output_extent(cur[1], layer.size, st, 0)
                shapes.append((oh, ow, cur[2]))
            elif layer.kind == "gap":
                if len(cur) != 3:
                    raise ShapeError(f"layer {i}: gap needs (H, W, C), got {cur}")
                shapes.append((cur[2],))
            elif layer.kind == "dense":
                fin, fout = layer.weight.shape
                if int(np.prod(cur)) != fin:
                    raise ShapeError(
                        f"layer {i}: dense expects {fin} features, got {np.prod(cur)}"
                    )
                shapes.append((fout,))
            elif layer.kind == "relu":
                shapes.append(cur)
            elif layer.kind == "softmax":
                shapes.append((int(np.prod(cur)),))
            elif layer.kind == "add":
                src = layer.skip_from
                if not (0 <= src < len(shapes)):
                    raise ShapeError(f"layer {i}: skip edge from unknown node {src}")
                if shapes[src] != cur:
                    raise ShapeError(
                        f"layer {i}: skip edge shapes differ, {shapes[src]} vs {cur}"
                    )
                shapes.append(cur)
            else:
                raise ValueError(f"unknown layer kind {layer.kind!r}")
        return shapes

    @property
    def logits_node(self):
        """Node feeding the terminal softmax."""
        return len(self.layers) - 1

    def conv_nodes(self):
        return [i + 1 for i, l in enumerate(self.layers) if l.kind == "conv"]

    def param_arrays(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out


class ForwardRecord:
    """All node activations of one forward pass, replayable backward.

    ``nodes[i]`` is the batched activation of node ``i``. ``aux[i]``
    caches per-layer intermediates (im2col patches, pool argmaxes).
    """

    def __init__(self, net, nodes, aux):
        self.net = net
        self.nodes = nodes
        self.aux = aux

    @property
    def output(self):
        return self.nodes[-1]

    def backward(self, seed, seed_node=None, mode=BackpropMode.STANDARD,
                 want_param_grads=False):
        """Backpropagate ``seed`` from ``seed_node`` (default: the output).

        Returns (node_grads, param_grads): gradients for every node at or
        below the seed, and per-layer [dW, db] lists when requested.
        """
        global _BACKWARD_PASSES
        _BACKWARD_PASSES += 1

        mode = coerce_mode(mode)
        net = self.net
        k = len(net.layers)
        if seed_node is None:
            seed_node = k
        if not (0 < seed_node <= k):
            raise ValueError(f"seed node {seed_node} out of range 1..{k}")
        seed = np.asarray(seed, dtype=self.nodes[seed_node].dtype)
        if seed.shape != self.nodes[seed_node].shape:
            raise ShapeError(
                f"seed shape {seed.shape} does not match node shape "
                f"{self.nodes[seed_node].shape}"
            )

        node_grads = [None] * (k + 1)
        node_grads[seed_node] = seed
        param_grads = [None] * k if want_param_grads else None

        for i in range(seed_node - 1, -1, -1):
            g = node_grads[i + 1]
            if g is None:
                continue
            layer = net.layers[i]
            x = self.nodes[i]
            if layer.kind == "conv":
                dx, dw, db = ops.conv2d_vjp(
                    x, layer.weight, layer.stride, layer.pad, self.aux[i], g
                )
                if want_param_grads:
                    param_grads[i] = [dw, db]
            elif layer.kind == "dense":
                dx, dw, db = ops.dense_vjp(x, layer.weight, g)
                if want_param_grads:
                    param_grads[i] = [dw, db]
            elif layer.kind == "relu":
                dx = ops.relu_vjp(x, g, mode)
            elif layer.kind == "maxpool":
                dx = ops.maxpool2d_vjp(x, layer.size, layer.stride, self.aux[i], g)
            elif layer.kind == "gap":
                dx = ops.global_avg_pool_vjp(x, g)
            elif layer.kind == "softmax":
                dx = ops.softmax_vjp(self.nodes[i + 1], g).reshape(x.shape)
            elif layer.kind == "add":
                dx = g
                src = layer.skip_from
                if node_grads[src] is None:
                    node_grads[src] = np.zeros_like(self.nodes[src])
                node_grads[src] = node_grads[src] + g
            if node_grads[i] is None:
                node_grads[i] = dx
            else:
                node_grads[i] = node_grads[i] + dx
        return node_grads, param_grads


def _batched_input(net, x):
    arr = as_array(x, dtype=net.dtype)
    if arr.shape != net.input_shape:
        raise ShapeError(
            f"input shape {arr.shape} does not match network input {net.input_shape}"
        )
    return arr[None, ...]


def trace(net, x):
    """Run a single-image forward pass and keep the full record."""
    return trace_batch(net, _batched_input(net, x))


def trace_batch(net, xb):
    """Forward a (B, ...) batch, recording every node for backward."""
    xb = np.asarray(xb, dtype=net.dtype)
    nodes = [xb]
    aux = [None] * len(net.layers)
    for i, layer in enumerate(net.layers):
        cur = nodes[-1]
        if layer.kind == "conv":
            y, cols = ops.conv2d(cur, layer.weight, layer.bias, layer.stride, layer.pad)
            aux[i] = cols
        elif layer.kind == "dense":
            y = ops.dense(cur, layer.weight, layer.bias)
        elif layer.kind == "relu":
            y = ops.relu(cur)
        elif layer.kind == "maxpool":
            y, arg = ops.maxpool2d(cur, layer.size, layer.stride or layer.size)
            aux[i] = arg
        elif layer.kind == "gap":
            y = ops.global_avg_pool(cur)
        elif layer.kind == "softmax":
            y = ops.softmax(cur)
        elif layer.kind == "add":
            y = ops.residual_add(cur, nodes[layer.skip_from])
        nodes.append(y)
    return ForwardRecord(net, nodes, aux)


def forward_batch(net, xb):
    """Forward a batch without recording (cheap path for query-only use)."""
    xb = np.asarray(xb, dtype=net.dtype)
    cur = xb
    kept = {0: cur}
    skip_sources = {l.skip_from for l in net.layers if l.kind == "add"}
    for i, layer in enumerate(net.layers):
        if layer.kind == "conv":
            cur, _ = ops.conv2d(cur, layer.weight, layer.bias, layer.stride, layer.pad)
        elif layer.kind == "dense":
            cur = ops.dense(cur, layer.weight, layer.bias)
        elif layer.kind == "relu":
            cur = ops.relu(cur)
        elif layer.kind == "maxpool":
            cur, _ = ops.maxpool2d(cur, layer.size, layer.stride or layer.size)
        elif layer.kind == "gap":
            cur = ops.global_avg_pool(cur)
        elif layer.kind == "softmax":
            cur = ops.softmax(cur)
        elif layer.kind == "add":
            cur = ops.residual_add(cur, kept[layer.skip_from])
        if i + 1 in skip_sources:
            kept[i + 1] = cur
    return cur


def forward(net, x):
    """Class probabilities g(x) for one input. Sums to 1 within 1e-9."""
    return Tensor(trace(net, x).output[0], dtype=net.dtype)


def predict(net, image):
    """(argmax class, confidence vector) for an image in [0, 1].

    Ties resolve to the lowest class index.
    """
    arr = as_pixels(image)
    probs = np.asarray(forward(net, arr))
    return int(np.argmax(probs)), probs


def _check_label(net, label):
    if not (0 <= int(label) < net.num_classes):
        raise ValueError(f"label {label} out of range 0..{net.num_classes - 1}")
    return int(label)


def backward_input_grad(net, x, label, mode=BackpropMode.STANDARD, record=None,
                        from_logits=False):
    """Gradient of the selected class output w.r.t. the input.

    Differentiates the soft label g(x)_label by default; with
    ``from_logits`` the pre-softmax score is differentiated instead.
    In standard mode this is the exact analytic gradient; deconv and
    guided modes swap only the ReLU backward rule.
    """
    label = _check_label(net, label)
    if record is None:
        record = trace(net, x)
    seed_node = net.logits_node if from_logits else len(net.layers)
    node = record.nodes[seed_node]
    seed = np.zeros_like(node.reshape(node.shape[0], -1))
    seed[:, label] = 1.0
    node_grads, _ = record.backward(seed.reshape(node.shape), seed_node, mode)
    return Tensor(node_grads[0][0], dtype=net.dtype)


def backward_feature_grad(net, x, node, label, record=None, from_logits=False):
    """Gradient of the selected class output w.r.t. a conv node's activations.

    ``node`` follows record indexing: node i is the output of layer i-1
    and node 0 is the input itself (degenerate but allowed, matching
    :func:`backward_input_grad`).
    """
    label = _check_label(net, label)
    node = int(node)
    conv_ok = node == 0 or (
        0 < node <= len(net.layers) and net.layers[node - 1].kind == "conv"
    )
    if not conv_ok:
        raise ValueError(f"node {node} is not a convolutional node of this network")
    if record is None:
        record = trace(net, x)
    seed_node = net.logits_node if from_logits else len(net.layers)
    out = record.nodes[seed_node]
    seed = np.zeros_like(out.reshape(out.shape[0], -1))
    seed[:, label] = 1.0
    node_grads, _ = record.backward(
        seed.reshape(out.shape), seed_node, BackpropMode.STANDARD
    )
    return Tensor(node_grads[node][0], dtype=net.dtype)


def gradient_check(net, x, label, eps=1e-6):
    """Max relative error between analytic and central-difference input
    gradients of g(x)_label. Relative error uses
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-12) per coordinate.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    label = _check_label(net, label)
    x0 = as_array(x, dtype=np.float64)
    analytic = np.asarray(
        backward_input_grad(net, x0, label, BackpropMode.STANDARD), dtype=np.float64
    )
    worst = 0.0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + eps
        hi = np.asarray(forward(net, bumped.reshape(x0.shape)))[label]
        bumped[i] = flat[i] - eps
        lo = np.asarray(forward(net, bumped.reshape(x0.shape)))[label]
        numeric = (hi - lo) / (2.0 * eps)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        worst = max(worst, err)
    return worst
