"""Per-tensor statistics, normalization, and deterministic 1-D K-Means codebooks.

The quantization pipeline is: compute mean/std -> normalize to zero mean and
unit variance -> fit 2^b sorted cluster centers with Lloyd iterations ->
assign each value to its nearest center -> reconstruct by denormalizing the
looked-up centers.  All functions here are pure and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTensor, LengthMismatch, NonFinite

SUPPORTED_BITS = (1, 2, 4, 8)

DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-6

# Cap on elements x centers per assignment chunk; keeps peak memory bounded
# without changing results (chunking is bit-identical to one shot).
_ASSIGN_CHUNK_CELLS = 1_000_000


def _as_1d_float(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    return arr


@dataclass(frozen=True)
class WeightTensor:
    """A flat tensor of real-valued weights plus its logical shape."""

    values: np.ndarray
    shape: tuple[int, ...] = ()

    def __post_init__(self):
        arr = _as_1d_float(self.values)
        object.__setattr__(self, "values", arr)
        shape = tuple(int(s) for s in self.shape) if self.shape else (arr.size,)
        object.__setattr__(self, "shape", shape)
        if arr.size < 1:
            raise DegenerateTensor("weight tensor must hold at least one value")
        if any(s <= 0 for s in shape):
            raise DegenerateTensor(f"shape {shape} has a non-positive dimension")
        if math.prod(shape) != arr.size:
            raise LengthMismatch(
                f"shape {shape} implies {math.prod(shape)} values, got {arr.size}"
            )
        if not np.all(np.isfinite(arr)):
            raise NonFinite("weight tensor contains NaN or Inf")

    @property
    def count(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class NormStats:
    """Mean and population standard deviation of a weight tensor."""

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise DegenerateTensor(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class Codebook:
    """Sorted cluster centers in normalized space plus the stats to undo it.

    Centers are ascending.  Centers produced by :func:`kmeans_fit` are strictly
    ascending; codebooks deserialized from half-precision storage may contain
    equal adjacent entries after rounding, which assignment resolves by the
    smaller-index tie rule.
    """

    bits: int
    centers: np.ndarray
    stats: NormStats

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise DegenerateTensor(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        centers = _as_1d_float(self.centers)
        object.__setattr__(self, "centers", centers)
        if centers.size != 2**self.bits:
            raise LengthMismatch(
                f"{self.bits}-bit codebook needs {2**self.bits} centers, got {centers.size}"
            )
        if not np.all(np.isfinite(centers)):
            raise NonFinite("codebook centers contain NaN or Inf")
        if np.any(np.diff(centers) < 0):
            raise DegenerateTensor("codebook centers must be ascending")


@dataclass(frozen=True)
class Assignment:
    """Per-element codebook indices and the denormalized reconstruction."""

    indices: np.ndarray
    reconstruction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(
            self, "reconstruction", _as_1d_float(self.reconstruction)
        )
        if self.indices.size != self.reconstruction.size:
            raise LengthMismatch("indices and reconstruction lengths differ")


@dataclass(frozen=True)
class KMeansFit:
    """Fit diagnostics: final centers plus the per-iteration objective trace.

    ``objective_trace[i]`` is the sum of squared distances to assigned centers
    right after the i-th assignment step.
    """

    centers: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


def compute_stats(w: WeightTensor) -> NormStats:
    """Mean and population (divide-by-N) standard deviation of the tensor."""
    v = w.values
    if not np.all(np.isfinite(v)):
        raise NonFinite("cannot compute stats over NaN or Inf")
    mu = float(np.mean(v))
    sigma = float(np.sqrt(np.mean((v - mu) ** 2)))
    return NormStats(mu=mu, sigma=sigma)


def normalize(w: WeightTensor, s: NormStats) -> WeightTensor:
    """Map the tensor to zero-mean unit-variance space: (w - mu) / sigma."""
    if s.sigma == 0:
        raise DegenerateTensor("sigma is 0: constant tensor cannot be normalized")
    return WeightTensor((w.values - s.mu) / s.sigma, w.shape)


def denormalize(values: np.ndarray, s: NormStats) -> np.ndarray:
    """Inverse of :func:`normalize`: sigma * values + mu."""
    return s.sigma * _as_1d_float(values) + s.mu


def assign(values, centers) -> np.ndarray:
    """Index of the nearest center for every value.

    Ties (a value exactly equidistant from two centers) break toward the
    smaller index.  Centers must be ascending.
    """
    v = _as_1d_float(values)
    c = _as_1d_float(centers)
    if c.size == 0:
        raise LengthMismatch("need at least one center")
    out = np.empty(v.size, dtype=np.int64)
    chunk = max(1, _ASSIGN_CHUNK_CELLS // c.size)
    for start in range(0, v.size, chunk):
        block = v[start : start + chunk]
        # argmin returns the first minimum, which is the smaller index.
        out[start : start + chunk] = np.argmin(
            np.abs(block[:, None] - c[None, :]), axis=1
        )
    return out


def _sq_objective(values: np.ndarray, centers: np.ndarray, idx: np.ndarray) -> float:
    return float(np.sum((values - centers[idx]) ** 2))


def _lloyd(
    values: np.ndarray,
    init_centers: np.ndarray,
    max_iter: int,
    tol: float,
) -> KMeansFit:
    """Lloyd iterations from the given initial centers.

    Empty clusters are re-seeded at the values farthest from their assigned
    centers (the worst-represented points, one distinct value per empty
    cluster).  This keeps all centers alive without breaking the monotone
    decrease of the objective: a re-seeded center has no assigned points, so
    moving it leaves the current partition cost unchanged.
    """
    centers = np.sort(np.asarray(init_centers, dtype=np.float64))
    k = centers.size
    trace: list[float] = []
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        idx = assign(values, centers)
        trace.append(_sq_objective(values, centers, idx))
        new_centers = centers.copy()
        counts = np.bincount(idx, minlength=k)
        sums = np.bincount(idx, weights=values, minlength=k)
        occupied = counts > 0
        new_centers[occupied] = sums[occupied] / counts[occupied]
        empty = np.flatnonzero(~occupied)
        if empty.size:
            order = np.argsort(-np.abs(values - centers[idx]), kind="stable")
            used: set[float] = set()
            pos = 0
            for j in empty:
                while pos < order.size and float(values[order[pos]]) in used:
                    pos += 1
                if pos >= order.size:
                    break
                new_centers[j] = values[order[pos]]
                used.add(float(values[order[pos]]))
                pos += 1
        movement = float(np.max(np.abs(np.sort(new_centers) - centers)))
        centers = np.sort(new_centers)
        if movement < tol:
            converged = True
            break
    idx = assign(values, centers)
    trace.append(_sq_objective(values, centers, idx))
    return KMeansFit(centers=centers, objective_trace=trace, n_iter=n_iter, converged=converged)


def _quantile_init(values: np.ndarray, k: int) -> np.ndarray:
    qs = (2 * np.arange(k) + 1) / (2 * k)
    return np.quantile(values, qs)


def _optimal_two_split_init(values: np.ndarray) -> np.ndarray:
    """Means of the globally optimal contiguous 2-partition of the values.

    Plain quantile seeding leaves Lloyd in a local optimum on a measurable
    fraction of small instances; for k=2 the optimum is found exactly by a
    prefix-sum scan over all sorted splits, and Lloyd started there stays at
    the optimum (the optimal 2-partition is a Lloyd fixed point).
    """
    v = np.sort(values)
    n = v.size
    s = np.cumsum(v)
    sq = np.cumsum(v * v)
    left_n = np.arange(1, n, dtype=np.float64)
    left_cost = sq[:-1] - s[:-1] ** 2 / left_n
    right_n = n - left_n
    right_s = s[-1] - s[:-1]
    right_cost = (sq[-1] - sq[:-1]) - right_s**2 / right_n
    i = int(np.argmin(left_cost + right_cost))
    return np.array([s[i] / (i + 1), right_s[i] / (n - i - 1)])


def kmeans_fit_detailed(
    normalized: WeightTensor,
    bits: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    jitter: float = 0.0,
    init_centers=None,
) -> KMeansFit:
    """Fit a 2^bits codebook on normalized values, returning fit diagnostics.

    Initialization is deterministic: for one bit, the exact optimal
    contiguous 2-split of the sorted values; otherwise center i starts at the
    (2i+1)/2^(bits+1) quantile of the data.  ``seed`` only matters when
    ``jitter`` > 0, which perturbs the initial centers; it is off by default.
    ``init_centers`` overrides the default init (used for warm-started
    re-clustering).
    """
    if bits not in SUPPORTED_BITS:
        raise DegenerateTensor(f"bits must be one of {SUPPORTED_BITS}, got {bits}")
    values = normalized.values
    k = 2**bits
    if np.unique(values).size < k:
        raise DegenerateTensor(
            f"{np.unique(values).size} distinct values cannot fill {k} clusters"
        )
    if init_centers is not None:
        start = _as_1d_float(init_centers)
        if start.size != k:
            raise LengthMismatch(f"warm-start needs {k} centers, got {start.size}")
    else:
        start = _optimal_two_split_init(values) if k == 2 else _quantile_init(values, k)
        if jitter > 0:
            rng = np.random.Generator(np.random.PCG64(seed))
            start = start + rng.normal(0.0, jitter, size=k)
    fit = _lloyd(values, start, max_iter=max_iter, tol=tol)
    if np.any(np.diff(fit.centers) <= 0):
        raise DegenerateTensor("K-Means could not produce distinct sorted centers")
    return fit


def kmeans_fit(
    normalized: WeightTensor,
    bits: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    jitter: float = 0.0,
) -> np.ndarray:
    """Fitted codebook centers (ascending, in normalized space)."""
    return kmeans_fit_detailed(
        normalized, bits, max_iter=max_iter, tol=tol, seed=seed, jitter=jitter
    ).centers


def fit_codebook(
    w: WeightTensor,
    bits: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    jitter: float = 0.0,
) -> Codebook:
    """Full pipeline convenience: stats -> normalize -> K-Means -> Codebook."""
    stats = compute_stats(w)
    normed = normalize(w, stats)
    centers = kmeans_fit(normed, bits, max_iter=max_iter, tol=tol, seed=seed, jitter=jitter)
    return Codebook(bits=bits, centers=centers, stats=stats)


def quantize(w: WeightTensor, cb: Codebook) -> Assignment:
    """Assign every weight to its nearest center and reconstruct.

    Reconstruction is sigma * centers[index] + mu, elementwise.
    """
    if cb.stats.sigma == 0:
        raise DegenerateTensor("codebook has sigma == 0")
    normed = (w.values - cb.stats.mu) / cb.stats.sigma
    idx = assign(normed, cb.centers)
    recon = denormalize(cb.centers[idx], cb.stats)
    return Assignment(indices=idx, reconstruction=recon)


def quant_error(w: WeightTensor, a: Assignment) -> float:
    """Sum of squared differences between reconstruction and original, in raw
    (denormalized) space."""
    if w.count != a.reconstruction.size:
        raise LengthMismatch(
            f"tensor has {w.count} values, assignment has {a.reconstruction.size}"
        )
    return float(np.sum((a.reconstruction - w.values) ** 2))


def normalized_quant_error(w: WeightTensor, a: Assignment, s: NormStats) -> float:
    """Quantization error measured in normalized space (raw error / sigma^2).

    Secondary diagnostic; the raw-space value is the default everywhere.
    """
    if s.sigma == 0:
        raise DegenerateTensor("sigma is 0: normalized error undefined")
    return quant_error(w, a) / (s.sigma**2)
