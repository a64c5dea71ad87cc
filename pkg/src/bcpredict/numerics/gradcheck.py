"""Central-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from ..errors import NonScalarLoss


@dataclass
class GradCheckReport:
    op_name: str
    max_relative_error: float
    worst_parameter_index: tuple  # (param name, flat index)
    n_checked: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_relative_error <= tol


def _scalar(value) -> float:
    arr = np.asarray(value)
    if arr.size != 1:
        raise NonScalarLoss(f"objective returned shape {arr.shape}, expected a scalar")
    return float(arr.reshape(()))


def grad_check(loss_fn: Callable[[], object], params: Mapping[str, np.ndarray],
               analytic: Mapping[str, np.ndarray], eps: float = 1e-5,
               abs_floor: float = 1e-6, op_name: str = "op",
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn`` is re-evaluated after each in-place perturbation of an entry
    of ``params``; it must return a scalar. Per-coordinate error is
    ``|a - n| / max(|a|, |n|, abs_floor)``. When ``max_coords`` is set, that
    many coordinates per tensor are sampled with ``rng`` instead of all.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _scalar(loss_fn())
    worst, worst_at, count = 0.0, (None, None), 0
    for name, p in params.items():
        g = np.asarray(analytic[name])
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        flat = p.reshape(-1)  # view; perturbations land in the caller's array
        if not np.shares_memory(flat, p):
            raise ValueError(f"parameter {name} must be contiguous")
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = _scalar(loss_fn())
            flat[i] = orig - eps
            down = _scalar(loss_fn())
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            ana = float(g.reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana), abs(num), abs_floor)
            count += 1
            if err > worst or worst_at[0] is None:
                worst, worst_at = max(err, worst), (name, int(i))
    return GradCheckReport(op_name, worst, worst_at, count)
