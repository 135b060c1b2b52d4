"""Fixed-step ODE integration and dense output."""
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline


def make_grid(tau_max: float, step: float) -> np.ndarray:
    """Uniform grid on [0, tau_max] whose spacing does not exceed step.

    Args:
        tau_max: Right end of the grid
        step: Requested spacing

    Returns:
        Ascending grid including both end points
    """
    if tau_max <= 0:
        raise ValueError(f"tau_max must be positive, got {tau_max}")
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    n_steps = int(np.ceil(tau_max / step - 1e-9))
    return np.linspace(0.0, tau_max, n_steps + 1)


def rk4_step(rhs: Callable[[np.ndarray], np.ndarray], y: np.ndarray, h: float) -> np.ndarray:
    """Single classical Runge-Kutta step for an autonomous system."""
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_integrate(
    rhs: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    grid: np.ndarray,
    check: Optional[Callable[[float, np.ndarray], None]] = None,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> np.ndarray:
    """Integrate dy/dtau = rhs(y) on a given grid with RK4.

    Args:
        rhs: Right-hand side of the autonomous system
        y0: Initial state at grid[0]
        grid: Ascending integration grid
        check: Called as check(tau, y) after each step; raises to abort
        project: Optional map applied to the state after each step

    Returns:
        Array of shape (len(grid), len(y0)) with the state at each node
    """
    y = np.asarray(y0, dtype=float).copy()
    out = np.empty((len(grid), y.size))
    out[0] = y
    for i in range(1, len(grid)):
        y = rk4_step(rhs, y, grid[i] - grid[i - 1])
        if project is not None:
            y = project(y)
        if check is not None:
            check(grid[i], y)
        out[i] = y
    return out


def dense_output(grid: np.ndarray, values: np.ndarray) -> CubicSpline:
    """Cubic interpolant through the stored solution, along axis 0."""
    return CubicSpline(grid, values, axis=0)
