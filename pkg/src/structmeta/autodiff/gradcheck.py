from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NumericalError


def finite_diff_grad(scalar_fn: Callable[[np.ndarray], float], params, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``scalar_fn`` at ``params`` (test oracle)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = np.array(params, dtype=np.float64, copy=True).ravel()
    out = np.zeros_like(theta)
    for k in range(theta.size):
        orig = theta[k]
        theta[k] = orig + eps
        hi = float(scalar_fn(theta.copy()))
        theta[k] = orig - eps
        lo = float(scalar_fn(theta.copy()))
        theta[k] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericalError(f"non-finite function value at coordinate {k}")
        out[k] = (hi - lo) / (2 * eps)
    return out


def relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)
