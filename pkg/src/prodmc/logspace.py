"""Sign-tracked log-space arithmetic.

Estimates of products of hundreds of factors live far outside the range of
linear double precision, so every average and product in this package is
carried as ``(log|x|, sign)``.  Zero is represented as ``(-inf, 0.0)``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp


class SignedLog(NamedTuple):
    """A real number stored as log-magnitude plus sign (+1, -1 or 0)."""

    log_abs: float
    sign: float

    @property
    def value(self) -> float:
        """Linear-space value; saturates to +-inf beyond double range."""
        if self.sign == 0.0:
            return 0.0
        try:
            return self.sign * math.exp(self.log_abs)
        except OverflowError:
            return self.sign * math.inf

    @property
    def is_zero(self) -> bool:
        return self.sign == 0.0

    def log_value(self) -> float:
        """Natural log for strictly positive values, else ValueError."""
        if self.sign <= 0.0:
            raise ValueError(f"log of non-positive value (sign={self.sign})")
        return self.log_abs


def signed_log(x: float) -> SignedLog:
    """Encode a finite linear-space value."""
    if x == 0.0:
        return SignedLog(-math.inf, 0.0)
    return SignedLog(math.log(abs(x)), math.copysign(1.0, x))


def log_abs_and_sign(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise (log|x|, sign) with zeros mapped to (-inf, 0)."""
    values = np.asarray(values, dtype=np.float64)
    signs = np.sign(values)
    out = np.full(values.shape, -np.inf)
    nz = values != 0.0
    np.log(np.abs(values), out=out, where=nz)
    return out, signs


def signed_logsumexp(log_abs: np.ndarray, signs: np.ndarray, axis=None) -> SignedLog:
    """log-sum-exp of signed terms; scalar reduction only."""
    total, sign = logsumexp(log_abs, b=signs, axis=axis, return_sign=True)
    if sign == 0.0:
        return SignedLog(-math.inf, 0.0)
    return SignedLog(float(total), float(sign))


def signed_log_mean(log_abs: np.ndarray, signs: np.ndarray) -> SignedLog:
    """Signed log of the arithmetic mean of the encoded terms."""
    n = np.asarray(log_abs).size
    s = signed_logsumexp(np.ravel(log_abs), np.ravel(signs))
    return SignedLog(s.log_abs - math.log(n), s.sign)


def signed_add(a: SignedLog, b: SignedLog) -> SignedLog:
    return signed_logsumexp(
        np.array([a.log_abs, b.log_abs]), np.array([a.sign, b.sign])
    )


def signed_sub(a: SignedLog, b: SignedLog) -> SignedLog:
    """a - b without leaving log space."""
    return signed_logsumexp(
        np.array([a.log_abs, b.log_abs]), np.array([a.sign, -b.sign])
    )


def signed_mul(a: SignedLog, b: SignedLog) -> SignedLog:
    sign = a.sign * b.sign
    if sign == 0.0:
        return SignedLog(-math.inf, 0.0)
    return SignedLog(a.log_abs + b.log_abs, sign)


def log_mean_exp(log_values: np.ndarray, axis=None) -> np.ndarray | float:
    """log of the mean of exp(log_values), stable."""
    log_values = np.asarray(log_values, dtype=np.float64)
    n = log_values.shape[axis] if axis is not None else log_values.size
    return logsumexp(log_values, axis=axis) - math.log(n)
