"""
Newton-Raphson maximization with step halving.

Derivatives are central finite differences (statsmodels ``numdiff``) on an
unconstrained parameter vector. Steps that would lower the objective, or
leave its domain, are halved until accepted.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np
from statsmodels.tools.numdiff import approx_fprime, approx_hess3

from cea_engine.exceptions import NumericalError
from cea_engine.utils import logger


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    iterations: int
    converged: bool
    message: str
    history: List[float] = field(default_factory=list)


def safe_objective(func: Callable[[np.ndarray], float]) -> Callable[[np.ndarray], float]:
    """Map evaluation errors and non-finite values to -inf so a step can be rejected."""
    def wrapped(x):
        try:
            value = float(func(x))
        except (NumericalError, FloatingPointError, ValueError, ZeroDivisionError):
            return -np.inf
        return value if np.isfinite(value) else -np.inf
    return wrapped


def numerical_gradient(func, x, step):
    return approx_fprime(np.asarray(x, dtype=float), func, epsilon=step, centered=True)


def numerical_hessian(func, x, step):
    hess = approx_hess3(np.asarray(x, dtype=float), func, epsilon=step)
    return 0.5 * (hess + hess.T)


def newton_maximize(func: Callable[[np.ndarray], float], x0, gradient_tolerance: float = 1e-6,
                    relative_tolerance: float = 1e-10, max_iterations: int = 200, step: float = 1e-4,
                    max_halvings: int = 40) -> NewtonResult:
    """
    Maximize ``func`` from ``x0``.

    Stops when max |gradient| < gradient_tolerance, or when the relative
    change of the objective falls below relative_tolerance. ``converged``
    reports the gradient criterion (with the Newton decrement standing in
    when the objective has stalled at a flat optimum).
    """
    objective = safe_objective(func)
    x = np.asarray(x0, dtype=float).copy()
    value = objective(x)
    if not np.isfinite(value):
        raise NumericalError("Objective is not finite at the starting point")
    history = [value]
    message = "max iterations reached"
    converged = False
    grad = numerical_gradient(objective, x, step)
    hess = numerical_hessian(objective, x, step)
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
            message = "non-finite derivatives"
            break
        if np.max(np.abs(grad)) < gradient_tolerance:
            converged, message = True, "gradient criterion met"
            break
        direction, decrement = _ascent_direction(grad, hess)
        t = 1.0
        new_value = -np.inf
        for _ in range(max_halvings):
            candidate = x + t * direction
            new_value = objective(candidate)
            if new_value >= value:
                break
            t *= 0.5
        else:
            message = "step halving failed to improve the objective"
            converged = decrement < 1e-8
            break
        x = candidate
        change = abs(new_value - value) / max(abs(value), 1.0)
        value = new_value
        history.append(value)
        grad = numerical_gradient(objective, x, step)
        hess = numerical_hessian(objective, x, step)
        logger.debug("Newton iteration %d: loglik=%.10f step=%.3g max|g|=%.3g", iteration, value, t,
                     np.max(np.abs(grad)))
        if change < relative_tolerance:
            _, decrement = _ascent_direction(grad, hess)
            converged = np.max(np.abs(grad)) < gradient_tolerance or decrement < 1e-8
            message = "relative change criterion met"
            break
    return NewtonResult(x=x, value=value, gradient=grad, hessian=hess, iterations=iteration,
                        converged=bool(converged), message=message, history=history)


def _ascent_direction(grad, hess):
    """Newton direction when -H is positive definite, otherwise a shifted (Levenberg) direction."""
    neg = -hess
    shift = 0.0
    scale = max(np.max(np.abs(np.diag(neg))), 1e-8)
    for _ in range(60):
        try:
            chol = np.linalg.cholesky(neg + shift * np.eye(len(grad)))
            direction = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
            return direction, float(grad @ direction)
        except np.linalg.LinAlgError:
            shift = scale * 1e-6 if shift == 0.0 else shift * 10.0
    direction = grad / max(np.linalg.norm(grad), 1e-12)
    return direction, float(grad @ direction)
