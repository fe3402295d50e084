"""Straight-through estimator plumbing and Gaussian-noise injection.

The forward pass consumes only the quantized reconstruction of the latent
weights; the backward pass hands the gradient w.r.t. those quantized values
to the latent weights unchanged.  Noise injection implements the additive
Gaussian baseline the quantization error is compared against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NonPositive
from .quantizer import Codebook, WeightTensor, quantize


@dataclass(frozen=True)
class NoiseConfig:
    """Additive Gaussian noise: N(0, std^2), drawn from a seeded PCG64 stream.

    ``per_step`` marks whether a training loop should redraw the noise every
    optimization step (the default) or only once at initialization.
    """

    std: float
    seed: int = 0
    per_step: bool = True

    def __post_init__(self):
        if self.std < 0:
            raise NonPositive(f"noise std must be >= 0, got {self.std}")


@dataclass
class LatentWeights:
    """Full-precision weights trained under a quantized forward view."""

    latent: WeightTensor

    def forward(self, cb: Codebook) -> WeightTensor:
        return ste_forward(self.latent, cb)

    def backward(self, grad_wrt_quantized) -> np.ndarray:
        return ste_backward(grad_wrt_quantized, self.latent.count)

    def apply_update(self, grad, lr: float) -> None:
        g = ste_backward(grad, self.latent.count)
        self.latent = WeightTensor(self.latent.values - lr * g, self.latent.shape)


def ste_forward(latent: WeightTensor, cb: Codebook) -> WeightTensor:
    """Quantized weights for downstream compute: quantize(latent).reconstruction."""
    return WeightTensor(quantize(latent, cb).reconstruction, latent.shape)


def ste_backward(grad_wrt_quantized, n: int) -> np.ndarray:
    """Identity pass-through of the gradient onto the latent weights."""
    g = np.asarray(grad_wrt_quantized, dtype=np.float64).reshape(-1)
    if g.size != n:
        raise LengthMismatch(f"gradient has {g.size} entries, latent has {n}")
    return g


def noise_generator(cfg: NoiseConfig) -> np.random.Generator:
    """The documented noise source: PCG64, fully determined by cfg.seed."""
    return np.random.Generator(np.random.PCG64(cfg.seed))


def add_gaussian_noise(
    w: WeightTensor, cfg: NoiseConfig, rng: np.random.Generator | None = None
) -> WeightTensor:
    """w + eps with eps ~ N(0, std^2) i.i.d.; std == 0 returns w unchanged.

    Pass ``rng`` (from :func:`noise_generator`) to draw successive per-step
    noise from one stream; otherwise a fresh stream is seeded from cfg.
    """
    if cfg.std == 0:
        return w
    if rng is None:
        rng = noise_generator(cfg)
    eps = rng.normal(0.0, cfg.std, size=w.count)
    return WeightTensor(w.values + eps, w.shape)
