"""Sample containers, moment summaries, seeded streams, and batch-mean error.

Conventions used throughout the package:

* A sample block is an ``(R, N)`` matrix: R replications (rows) of N factors
  (columns), already pushed through the per-factor integrand.
* Variances are divisor-R sample moments.  Every covariation identity in
  :mod:`prodmc.covariation` is exact only with that divisor; the unbiased
  divisor R-1 is available for reporting via ``ddof=1`` options where noted.
* Monte Carlo error (MCE) of an evidence-style estimate is the standard
  deviation of per-batch log estimates (divisor B-1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SampleBlock:
    """Immutable (R, N) matrix of evaluated integrand factors."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"sample block must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"sample block needs R >= 1 and N >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ValueError(
                f"non-finite entry at row {bad[0]}, column {bad[1]}"
            )
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_replications(self) -> int:
        return self.values.shape[0]

    @property
    def n_factors(self) -> int:
        return self.values.shape[1]


def as_block(values) -> SampleBlock:
    """Coerce an array-like to a validated SampleBlock."""
    if isinstance(values, SampleBlock):
        return values
    return SampleBlock(np.asarray(values, dtype=np.float64))


@dataclass(frozen=True)
class MomentSummary:
    """Per-factor means/variances plus the zero-mean index set.

    ``cv`` is NaN for factors whose mean is within ``zero_tol`` of zero
    (the zero-mean set); the coefficient of variation is undefined there.
    """

    mean: np.ndarray
    var: np.ndarray
    cv: np.ndarray
    zero_mean: np.ndarray  # boolean mask
    zero_tol: float

    @property
    def n_factors(self) -> int:
        return self.mean.shape[0]

    @property
    def n_zero_mean(self) -> int:
        return int(np.count_nonzero(self.zero_mean))

    @property
    def all_zero_mean(self) -> bool:
        return bool(np.all(self.zero_mean))

    @property
    def none_zero_mean(self) -> bool:
        return not bool(np.any(self.zero_mean))


def moments(block: SampleBlock | np.ndarray, zero_tol: float | None = None,
            ddof: int = 0) -> MomentSummary:
    """Column means and divisor-R variances with zero-mean detection.

    ``zero_tol`` is the absolute threshold below which a mean is treated as
    zero.  Default: 1e-12 relative to the largest absolute column mean
    (a sampled mean is never exactly zero except by symmetry or construction,
    so detection needs a tolerance).  ``ddof=1`` switches to the unbiased
    variance for reporting; identities elsewhere assume ``ddof=0``.
    """
    block = as_block(block)
    if zero_tol is not None and zero_tol < 0:
        raise ValueError("zero_tol must be nonnegative")
    values = block.values
    mean = values.mean(axis=0)
    var = values.var(axis=0, ddof=ddof)
    if zero_tol is None:
        zero_tol = 1e-12 * float(np.max(np.abs(mean)))
    zero_mean = np.abs(mean) <= zero_tol
    cv = np.full(mean.shape, np.nan)
    ok = ~zero_mean
    cv[ok] = np.sqrt(var[ok]) / np.abs(mean[ok])
    for arr in (mean, var, cv, zero_mean):
        arr.flags.writeable = False
    return MomentSummary(mean=mean, var=var, cv=cv, zero_mean=zero_mean,
                         zero_tol=float(zero_tol))


def summary_from_moments(mean, var, zero_tol: float | None = None) -> MomentSummary:
    """Build a MomentSummary directly from known (analytic) moments."""
    mean = np.asarray(mean, dtype=np.float64).copy()
    var = np.asarray(var, dtype=np.float64).copy()
    if mean.shape != var.shape or mean.ndim != 1:
        raise ValueError("mean and var must be 1-D arrays of equal length")
    if np.any(var < 0):
        raise ValueError("variances must be nonnegative")
    if zero_tol is None:
        zero_tol = 1e-12 * float(np.max(np.abs(mean))) if mean.size else 0.0
    zero_mean = np.abs(mean) <= zero_tol
    cv = np.full(mean.shape, np.nan)
    ok = ~zero_mean
    cv[ok] = np.sqrt(var[ok]) / np.abs(mean[ok])
    for arr in (mean, var, cv, zero_mean):
        arr.flags.writeable = False
    return MomentSummary(mean=mean, var=var, cv=cv, zero_mean=zero_mean,
                         zero_tol=float(zero_tol))


@dataclass(frozen=True)
class EstimateReport:
    """A point estimate in log space with its Monte Carlo error.

    ``sign`` is 0 when the estimate is exactly zero (log_estimate = -inf).
    ``mce_scale`` records whether ``mce`` is a standard deviation of batch
    log estimates ("log", the evidence convention) or a linear-scale
    standard error ("linear", used for signed estimates that may cross 0).
    """

    log_estimate: float
    sign: float
    mce: float
    method: str
    r_used: int
    n_batches: int
    mce_scale: str = "log"

    @property
    def estimate(self) -> float:
        if self.sign == 0.0:
            return 0.0
        return self.sign * math.exp(self.log_estimate)


def batch_mce(batch_log_estimates) -> float:
    """Standard deviation (divisor B-1) of per-batch log estimates."""
    logs = np.asarray(batch_log_estimates, dtype=np.float64)
    if logs.ndim != 1 or logs.size < 2:
        raise ValueError("batch MCE needs at least 2 batch estimates")
    if not np.all(np.isfinite(logs)):
        raise ValueError("batch estimates must be finite")
    return float(np.std(logs, ddof=1))


def batch_slices(n: int, n_batches: int) -> list[slice]:
    """Contiguous, disjoint, exhaustive partition of range(n)."""
    if n_batches < 1 or n_batches > n:
        raise ValueError(f"cannot split {n} draws into {n_batches} batches")
    edges = np.linspace(0, n, n_batches + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass(frozen=True)
class RandomStreamSet:
    """A family of independent, reproducible random streams.

    Streams are Philox counter-based generators keyed by
    ``(master_seed, index)``, so any stream can be re-created in isolation
    and parallel consumers never share state.
    """

    master_seed: int
    stream_count: int = field(default=2**31)

    def __post_init__(self):
        if self.stream_count < 1:
            raise ValueError("stream_count must be >= 1")

    def stream(self, index: int) -> np.random.Generator:
        if index < 0 or index >= self.stream_count:
            raise ValueError(f"stream index {index} outside [0, {self.stream_count})")
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(index,))
        return np.random.Generator(np.random.Philox(seq))


def make_streams(master_seed: int, count: int = 2**31) -> RandomStreamSet:
    """Deterministic stream family with disjoint substreams per index."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return RandomStreamSet(master_seed=int(master_seed), stream_count=int(count))
