"""Gauss-Hermite rules normalized for standard-normal expectations.

Nodes and weights are in the probabilists' convention: the standard normal
density is folded into the weights, so ``sum_j w_j f(x_j)`` approximates
``E[f(Z)]`` with Z standard normal directly, exactly for polynomials of
degree <= 2*order - 1.  Tensor rules extend this to independent multivariate
standard normals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import hermite_e
from scipy.special import logsumexp

MAX_ORDER = 100
MAX_TENSOR_POINTS = 10**6


@dataclass(frozen=True)
class QuadratureRule:
    """Immutable node/weight set; nodes are (n,) in 1-D, (n, k) for tensors."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int
    dimension: int

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=np.float64)
        weights = np.array(self.weights, dtype=np.float64)
        nodes.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def n_points(self) -> int:
        return self.weights.shape[0]


def gauss_hermite(order: int) -> QuadratureRule:
    """Order-n rule for E[f(Z)] with Z ~ N(0, 1)."""
    if order < 1 or order > MAX_ORDER:
        raise ValueError(f"order must be in [1, {MAX_ORDER}], got {order}")
    nodes, weights = hermite_e.hermegauss(order)
    weights = weights / math.sqrt(2.0 * math.pi)
    return QuadratureRule(nodes=nodes, weights=weights, order=order, dimension=1)


def tensor_rule(base: QuadratureRule, k: int) -> QuadratureRule:
    """Full tensor product of a 1-D rule over k coordinates."""
    if base.dimension != 1:
        raise ValueError("tensor_rule expects a 1-D base rule")
    if k < 1:
        raise ValueError("tensor dimension must be >= 1")
    if base.order**k > MAX_TENSOR_POINTS:
        raise ValueError(
            f"tensor grid of {base.order}^{k} points exceeds {MAX_TENSOR_POINTS}"
        )
    if k == 1:
        return base
    grids = np.meshgrid(*([base.nodes] * k), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = base.weights
    for _ in range(k - 1):
        weights = np.multiply.outer(weights, base.weights)
    return QuadratureRule(
        nodes=nodes, weights=weights.ravel(), order=base.order, dimension=k
    )


def _evaluate(rule: QuadratureRule, f: Callable, allow_neginf: bool = False) -> np.ndarray:
    values = np.asarray(f(rule.nodes), dtype=np.float64)
    if values.shape != (rule.n_points,):
        raise ValueError(
            f"integrand must return one value per node, got shape {values.shape}"
        )
    bad = np.isnan(values) | (values == np.inf)
    if not allow_neginf:
        bad |= values == -np.inf
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"integrand non-finite at node index {j} (node {rule.nodes[j]})"
        )
    return values


def expect(rule: QuadratureRule, f: Callable) -> float:
    """sum_j w_j f(node_j); f is evaluated vectorized over all nodes."""
    return float(rule.weights @ _evaluate(rule, f))


def log_expect(rule: QuadratureRule, log_f: Callable) -> float:
    """log of sum_j w_j exp(log_f(node_j)), for nonnegative integrands.

    -inf values (integrand exactly zero at a node) are allowed.
    """
    log_values = _evaluate(rule, log_f, allow_neginf=True)
    return float(logsumexp(np.log(rule.weights) + log_values))
