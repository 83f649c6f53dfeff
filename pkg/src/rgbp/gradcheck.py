"""Finite-difference verification of analytic backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

H_STEP = 1e-5
TOLERANCE = 1e-5


@dataclass
class GradCase:
    """An op wired up for checking.

    ``arrays`` maps names to the float64 arrays that get perturbed in place;
    ``forward()`` reads them and returns one array or a tuple of arrays;
    ``backward(cotangents)`` returns analytic gradients keyed like ``arrays``.
    """

    name: str
    arrays: dict[str, np.ndarray]
    forward: Callable[[], object]
    backward: Callable[[list[np.ndarray]], dict[str, np.ndarray]]
    max_per_array: int | None = None


@dataclass
class GradReport:
    name: str
    max_rel_err: float
    passed: bool
    per_array: dict[str, float] = field(default_factory=dict)
    worst: str = ""
    checked: int = 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name} {status} max_rel_err={self.max_rel_err:.3e} checked={self.checked}"


def _outputs(result) -> list[np.ndarray]:
    if isinstance(result, np.ndarray):
        return [result]
    return [np.asarray(r) for r in result if r is not None]


def grad_check(case: GradCase, seed: int = 0, h: float = H_STEP, tol: float = TOLERANCE,
               max_per_array: int | None = None) -> GradReport:
    """Compare ``case.backward`` against central differences of a random projection.

    The scalar probed is ``sum(c * y)`` over the outputs ``y`` with seeded
    random cotangents ``c``. Arrays larger than ``max_per_array`` are checked
    on a seeded random subset of their elements.
    """
    rng = np.random.default_rng(seed)
    outs = _outputs(case.forward())
    cots = [rng.standard_normal(o.shape) for o in outs]
    analytic = case.backward(cots)
    limit = max_per_array if max_per_array is not None else case.max_per_array

    def loss() -> float:
        return float(sum(np.sum(c * o) for c, o in zip(cots, _outputs(case.forward()))))

    per_array: dict[str, float] = {}
    worst, worst_err, checked = "", 0.0, 0
    for name, arr in case.arrays.items():
        grad = analytic.get(name)
        if grad is None:
            grad = np.zeros_like(arr)
        grad = np.broadcast_to(grad, arr.shape)
        flat = arr.reshape(-1)
        if limit is None or flat.size <= limit:
            idxs = np.arange(flat.size)
        else:
            idxs = np.sort(rng.choice(flat.size, size=limit, replace=False))
        err = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss()
            flat[i] = orig - h
            fm = loss()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = float(grad.reshape(-1)[i])
            e = abs(a - num) / max(1.0, abs(a), abs(num))
            if e > err:
                err = e
        checked += len(idxs)
        per_array[name] = err
        if err >= worst_err:
            worst, worst_err = name, err
    return GradReport(case.name, worst_err, worst_err < tol, per_array, worst, checked)
