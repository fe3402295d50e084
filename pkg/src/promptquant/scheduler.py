"""Re-clustering scheduler for quantization-aware training.

Re-fitting the codebook every step is wasteful and over-minimizes the
quantization error, so the scheduler gates re-clustering on two conditions:
a minimum step interval, and the KL divergence between the current codebook
index distribution and the one cached at the last re-cluster exceeding a
threshold.  An optional third gate additionally requires the raw-space
quantization error to have increased since the last re-cluster.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import LengthMismatch, NonPositive
from .quantizer import (
    Codebook,
    WeightTensor,
    compute_stats,
    kmeans_fit_detailed,
    normalize,
    quant_error,
    quantize,
)

KL_EPS = 1e-8

DEFAULT_INTERVAL = 50
DEFAULT_KL_THRESHOLD = 0.01


class Reason(enum.Enum):
    INTERVAL_NOT_REACHED = "IntervalNotReached"
    BELOW_THRESHOLD = "BelowThreshold"
    ERROR_GATE_BLOCKED = "ErrorGateBlocked"
    TRIGGERED = "Triggered"


@dataclass(frozen=True)
class CACState:
    """Scheduler memory for one tensor.

    ``p_old`` is the codebook index distribution cached at the last
    re-cluster; caching the distribution instead of the weight snapshot is
    O(2^b) memory and is the only quantity the KL test needs.
    """

    p_old: np.ndarray
    steps_since: int = 0
    t_min: int = DEFAULT_INTERVAL
    kl_threshold: float = DEFAULT_KL_THRESHOLD
    error_gate: bool = False
    last_error: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.p_old, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "p_old", p)
        if self.t_min < 1:
            raise NonPositive(f"t_min must be >= 1, got {self.t_min}")
        if self.kl_threshold <= 0:
            raise NonPositive(f"kl_threshold must be > 0, got {self.kl_threshold}")
        if self.steps_since < 0:
            raise NonPositive("steps_since must be >= 0")
        if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
            raise LengthMismatch("p_old must be a probability vector summing to 1")


@dataclass(frozen=True)
class SchedulerDecision:
    """Outcome of one scheduler step.

    ``kl`` and ``error_now`` are None on the interval-blocked path, where
    nothing is computed.
    """

    recluster: bool
    reason: Reason
    kl: float | None = None
    error_now: float | None = None


def index_distribution(w: WeightTensor, cb: Codebook) -> np.ndarray:
    """Empirical probability of each codebook index over the tensor."""
    a = quantize(w, cb)
    counts = np.bincount(a.indices, minlength=cb.centers.size)
    return counts / w.count


def kl_divergence(p_cur, p_old, eps: float = KL_EPS) -> float:
    """KL(p_cur || p_old) in nats over a shared index event space.

    Both vectors are smoothed by ``eps`` and renormalized before the sum, so
    zero entries in ``p_old`` stay finite; pass ``eps=0`` to evaluate the
    unsmoothed definition on strictly positive inputs.
    """
    p = np.asarray(p_cur, dtype=np.float64).reshape(-1)
    q = np.asarray(p_old, dtype=np.float64).reshape(-1)
    if p.size != q.size:
        raise LengthMismatch(f"distribution lengths differ: {p.size} vs {q.size}")
    if eps > 0:
        p = (p + eps) / (p.sum() + eps * p.size)
        q = (q + eps) / (q.sum() + eps * q.size)
    terms = np.zeros_like(p)
    nz = p > 0
    terms[nz] = p[nz] * np.log(p[nz] / q[nz])
    return max(float(terms.sum()), 0.0)


def initial_state(
    w: WeightTensor,
    cb: Codebook,
    t_min: int = DEFAULT_INTERVAL,
    kl_threshold: float = DEFAULT_KL_THRESHOLD,
    error_gate: bool = False,
) -> CACState:
    """State cached right after an initial codebook fit on ``w``."""
    return CACState(
        p_old=index_distribution(w, cb),
        steps_since=0,
        t_min=t_min,
        kl_threshold=kl_threshold,
        error_gate=error_gate,
        last_error=quant_error(w, quantize(w, cb)),
    )


def step(
    state: CACState,
    w: WeightTensor,
    cb: Codebook,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> tuple[SchedulerDecision, CACState, Codebook]:
    """Advance the scheduler by one training step.

    Within ``t_min`` steps of the last re-cluster nothing is evaluated.
    Afterwards the KL divergence between the current index distribution and
    the cached one is checked every step; a re-cluster re-fits the codebook
    on the current tensor (fresh stats, Lloyd warm-started from the current
    centers), resets the interval counter, and re-caches distribution and
    error from the refit codebook.
    """
    if state.steps_since < state.t_min:
        decision = SchedulerDecision(recluster=False, reason=Reason.INTERVAL_NOT_REACHED)
        return decision, replace(state, steps_since=state.steps_since + 1), cb

    p_cur = index_distribution(w, cb)
    kl = kl_divergence(p_cur, state.p_old)
    error_now = quant_error(w, quantize(w, cb))

    if kl <= state.kl_threshold:
        decision = SchedulerDecision(
            recluster=False, reason=Reason.BELOW_THRESHOLD, kl=kl, error_now=error_now
        )
        return decision, replace(state, steps_since=state.steps_since + 1), cb

    if state.error_gate and error_now <= state.last_error:
        decision = SchedulerDecision(
            recluster=False, reason=Reason.ERROR_GATE_BLOCKED, kl=kl, error_now=error_now
        )
        return decision, replace(state, steps_since=state.steps_since + 1), cb

    stats = compute_stats(w)
    normed = normalize(w, stats)
    fit = kmeans_fit_detailed(
        normed, cb.bits, max_iter=max_iter, tol=tol, init_centers=cb.centers
    )
    new_cb = Codebook(bits=cb.bits, centers=fit.centers, stats=stats)
    new_state = replace(
        state,
        p_old=index_distribution(w, new_cb),
        steps_since=0,
        last_error=quant_error(w, quantize(w, new_cb)),
    )
    decision = SchedulerDecision(
        recluster=True, reason=Reason.TRIGGERED, kl=kl, error_now=error_now
    )
    return decision, new_state, new_cb
