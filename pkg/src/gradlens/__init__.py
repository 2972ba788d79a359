"""gradlens: train a small residual CNN, attack it, and measure how the
attacks distort its saliency and Grad-CAM attention."""

from .analysis import (
    REPORT_COLUMNS,
    ComparisonReport,
    MapMetrics,
    centroid_shift,
    compare,
    entropy_ratio,
    peak_to_perturbation,
    pearson,
    shannon_entropy,
    topk_overlap,
    write_report_csv,
)
from .attacks import (
    L0,
    LINF,
    AdversarialResult,
    AttackConfig,
    VerifyOutcome,
    pgd_attack,
    pixel_attack,
    verify_adversarial,
)
from .attention import (
    AttentionMap,
    grad_cam,
    load_map,
    map_quadruple,
    normalize,
    saliency_map,
    save_map,
    save_map_csv,
    upsample,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import CIFAR10_CLASSES, LabeledDataset, gen_synthetic, load_cifar10
from .errors import (
    ChecksumMismatch,
    CheckpointError,
    NonFiniteError,
    ShapeError,
    TrainingDiverged,
    TruncatedCheckpoint,
    UnsupportedVersion,
    ZeroMassGrid,
)
from .model import TrainConfig, build_mini_resnet, train
from .network import (
    Add,
    BackpropMode,
    Conv2D,
    Dense,
    GlobalAvgPool,
    MaxPool2D,
    NetworkSpec,
    ReLU,
    Softmax,
    backward_feature_grad,
    backward_input_grad,
    backward_pass_count,
    forward,
    forward_batch,
    gradient_check,
    predict,
    trace,
    trace_batch,
)
from .render import OverlayImage, colormap, image_to_rgb, read_ppm, render_overlay, write_image
from .tensor import Tensor

__version__ = "0.1.0"
