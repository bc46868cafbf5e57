"""Central finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .layers import Module


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||); zero when both vanish."""
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return float(num / den) if den > 0 else float(num)


def numeric_gradient(loss: Callable[[], float], array: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of loss() w.r.t. every entry of array (perturbed in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss()
        flat[i] = orig - step
        down = loss()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def check_gradients(loss: Callable[[], float], arrays: dict[str, np.ndarray],
                    analytic: dict[str, np.ndarray], tolerance: float = 1e-4,
                    step: float = 1e-5) -> GradCheckReport:
    errors = {
        name: relative_error(analytic[name], numeric_gradient(loss, arr, step))
        for name, arr in arrays.items()
    }
    return GradCheckReport(errors, tolerance)


def gradient_check(module: Module, x: np.ndarray, tolerance: float = 1e-4, step: float = 1e-5,
                   seed: int = 0, check_input: bool = True) -> GradCheckReport:
    """Check every parameter gradient (and the input gradient) of a module.

    The scalar probe loss is sum(r * module(x)) for a fixed random r.
    """
    x = np.array(x, dtype=np.float64)
    y = module.forward(x)
    r = np.random.default_rng(seed).standard_normal(y.shape)

    module.zero_grad()
    module.forward(x)
    dx = module.backward(r)
    analytic = {k: v.copy() for k, v in module.named_gradients().items()}
    arrays = dict(module.named_parameters())
    if check_input:
        analytic["input"] = dx
        arrays["input"] = x

    def loss() -> float:
        return float(np.sum(r * module.forward(x)))

    return check_gradients(loss, arrays, analytic, tolerance, step)
