"""
Gauss-Hermite quadrature rules for the weight function exp(-x^2).
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from cea_engine.exceptions import QuadratureError

MAX_ORDER = 200


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)

    def integrate(self, func) -> float:
        """Approximate the integral of func(x) * exp(-x^2) over the real line."""
        return float(np.sum(self.weights * func(self.nodes)))


@lru_cache(maxsize=32)
def _hermgauss(order: int):
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    # symmetrize against round-off in the eigen solver
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite(order: int) -> QuadratureRule:
    """
    Build the ``order``-point Gauss-Hermite rule.

    The rule integrates x^k exp(-x^2) exactly for k <= 2*order - 1; the weights
    sum to sqrt(pi).

    Raises:
        QuadratureError: If order is outside [1, 200].
    """
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)) or not 1 <= order <= MAX_ORDER:
        raise QuadratureError(f"Quadrature order must be an integer in [1, {MAX_ORDER}], got {order!r}")
    nodes, weights = _hermgauss(int(order))
    return QuadratureRule(nodes=nodes, weights=weights, order=int(order))
