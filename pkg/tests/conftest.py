import math

import numpy as np
import pytest

import gradlens as gl


def tiny_conv_net(seed=0, in_shape=(6, 6, 2), classes=3, channels=3):
    """Two conv layers with ReLUs, GAP head: small enough for full
    finite-difference sweeps."""
    rng = np.random.default_rng(seed)
    h, w, c = in_shape

    def conv(cin, cout):
        wgt = rng.standard_normal((3, 3, cin, cout)) * 0.5
        return gl.Conv2D(wgt, rng.standard_normal(cout) * 0.1, stride=1, pad=1)

    layers = [
        conv(c, channels),
        gl.ReLU(),
        conv(channels, channels),
        gl.ReLU(),
        gl.GlobalAvgPool(),
        gl.Dense(rng.standard_normal((channels, classes)) * 0.7,
                 rng.standard_normal(classes) * 0.1),
        gl.Softmax(),
    ]
    return gl.NetworkSpec(layers, in_shape, classes)


def gap_linear_net(seed=0, in_shape=(6, 6, 2), classes=3, channels=4,
                   antisymmetric=False):
    """conv -> GAP -> dense -> softmax: the classic CAM setup, where the
    pooled features are exactly the tapped conv activations."""
    rng = np.random.default_rng(seed)
    h, w, c = in_shape
    wconv = rng.standard_normal((3, 3, c, channels)) * 0.5
    head = rng.standard_normal((channels, classes)) * 0.8
    if antisymmetric:
        assert classes == 2
        head[:, 1] = -head[:, 0]
    layers = [
        gl.Conv2D(wconv, rng.standard_normal(channels) * 0.1, stride=1, pad=1),
        gl.GlobalAvgPool(),
        gl.Dense(head, np.zeros(classes)),
        gl.Softmax(),
    ]
    return gl.NetworkSpec(layers, in_shape, classes, cam_node=1)


def linear_softmax_net(weight, bias=None, input_shape=None):
    """dense -> softmax on a flat input vector."""
    weight = np.asarray(weight, dtype=np.float64)
    fin, fout = weight.shape
    bias = np.zeros(fout) if bias is None else np.asarray(bias, dtype=np.float64)
    layers = [gl.Dense(weight.copy(), bias.copy()), gl.Softmax()]
    return gl.NetworkSpec(layers, input_shape or (fin,), fout)


@pytest.fixture(scope="session")
def trained():
    """A quick, reliably converging model on the easy synthetic task,
    shared by the attack/attention/analysis integration tests."""
    data = gl.gen_synthetic(classes=2, size=16, count=240, seed=11)
    net = gl.build_mini_resnet((16, 16, 3), classes=2, blocks=2, channels=10, seed=7)
    net, history = gl.train(net, data, gl.TrainConfig(epochs=20, seed=5))
    assert history[-1]["val_acc"] >= 0.9, "fixture model failed to train"
    return net, data


@pytest.fixture(scope="session")
def pgd_result(trained):
    """One verified successful max-norm attack for map/metric tests."""
    net, data = trained
    cfg = gl.AttackConfig(p=math.inf, th=0.1, iterations=60, seed=3)
    for i in range(len(data)):
        res = gl.pgd_attack(net, data.images[i], cfg, true_label=int(data.labels[i]))
        if res.success:
            return net, res, cfg
    pytest.skip("no successful max-norm attack on the fixture model")
