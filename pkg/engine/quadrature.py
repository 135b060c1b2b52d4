"""Adaptive quadrature with failure reporting."""
from typing import Callable

import numpy as np
from scipy.integrate import quad_vec

from engine.errors import QuadratureFail

DEFAULT_RTOL = 1e-10


def integrate(
    func: Callable[[float], np.ndarray],
    a: float,
    b: float,
    rtol: float = DEFAULT_RTOL,
    atol: float = 0.0,
    label: str = "integral",
) -> np.ndarray:
    """Adaptive Gauss-Kronrod integral of a vector-valued function.

    Args:
        func: Integrand returning a 1-D array
        a, b: Integration limits (b >= a)
        rtol: Relative tolerance on the max-norm of the result
        atol: Absolute tolerance
        label: Name used in error messages

    Returns:
        Integral as an array shaped like func's output

    Raises:
        QuadratureFail: If the error estimate does not meet the tolerance
    """
    if b <= a:
        return np.zeros_like(np.asarray(func(a), dtype=float))
    res, err, info = quad_vec(
        func, a, b, epsabs=atol, epsrel=rtol, norm="max", full_output=True
    )
    if not np.all(np.isfinite(res)):
        raise QuadratureFail(f"{label} on [{a:.6g}, {b:.6g}] is not finite")
    scale = float(np.max(np.abs(res))) if np.size(res) else 0.0
    allowed = max(atol, rtol * scale)
    if not info.success and err > allowed:
        raise QuadratureFail(
            f"{label} on [{a:.6g}, {b:.6g}] did not converge: "
            f"error {err:.3e} > {allowed:.3e} ({info.message})"
        )
    return np.asarray(res, dtype=float)
