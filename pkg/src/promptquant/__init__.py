"""Codebook quantization toolkit for small tunable parameter tensors.

Core pipeline: per-tensor normalization, deterministic 1-D K-Means codebooks,
nearest-center assignment, and bit-exact packed storage, plus a
straight-through estimator, a KL-gated re-clustering scheduler, distribution
diagnostics, and a synthetic prompt-tuning harness.
"""

from .analyzer import SnapshotSeries, epoch_kld_trend, histogram, outlier_stats, variance_trend
from .errors import (
    BadConfig,
    BadMagic,
    DegenerateTensor,
    EmptyTensor,
    IndexOverflow,
    LengthMismatch,
    NonFinite,
    NonPositive,
    PromptQuantError,
    Truncated,
    UnsupportedVersion,
    ZeroNorm,
)
from .harness import (
    MethodConfig,
    TaskConfig,
    ToyTask,
    TrainReport,
    build_task,
    harmonic_mean,
    predict,
    train,
)
from .packing import (
    compression_ratio,
    deserialize,
    pack,
    serialize,
    storage_bits,
    unpack,
)
from .quantizer import (
    Assignment,
    Codebook,
    NormStats,
    WeightTensor,
    assign,
    compute_stats,
    denormalize,
    fit_codebook,
    kmeans_fit,
    kmeans_fit_detailed,
    normalize,
    normalized_quant_error,
    quant_error,
    quantize,
)
from .scheduler import (
    CACState,
    Reason,
    SchedulerDecision,
    index_distribution,
    initial_state,
    kl_divergence,
    step,
)
from .ste import LatentWeights, NoiseConfig, add_gaussian_noise, ste_backward, ste_forward

__version__ = "0.1.0"
