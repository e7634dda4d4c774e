"""Finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, TapeError, backward, no_grad


def grad_check(
    function: Callable[..., Tensor],
    point: Tensor | Sequence[Tensor],
    eps: float = 1e-3,
    samples: int | None = None,
    seed: int = 0,
    oracle_dtype=np.float64,
) -> float:
    """Largest relative error between autodiff and central differences.

    ``function(*point)`` must return a single-element tensor. Analytic
    gradients come from the tape at the tensors' own precision; the central
    differences are evaluated after casting the checked tensors to
    ``oracle_dtype`` so the reference is not dominated by float32 round-off.
    When ``samples`` is given, only that many coordinates (drawn with
    ``seed``) are compared.

    The error at a coordinate is ``|a - d| / max(|a|, |d|, 1e-6)``.
    """
    if not 1e-4 <= eps <= 1e-2:
        raise ValueError(f"eps must lie in [1e-4, 1e-2], got {eps}")
    points = [point] if isinstance(point, Tensor) else list(point)

    saved = [(p.data, p.grad, p.requires_grad) for p in points]
    try:
        for p in points:
            p.grad = None
            p.requires_grad = True
        y = function(*points)
        if not isinstance(y, Tensor) or y.size != 1:
            raise TapeError(f"grad_check needs a scalar-valued function, got shape {getattr(y, 'shape', None)}")
        if y.requires_grad:
            backward(y)
        analytic = [
            np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64) for p in points
        ]

        coords = [(i, j) for i, p in enumerate(points) for j in range(p.size)]
        if samples is not None and samples < len(coords):
            rng = np.random.default_rng(seed)
            pick = rng.choice(len(coords), size=samples, replace=False)
            coords = [coords[k] for k in sorted(pick)]

        for p, (data, _, _) in zip(points, saved):
            p.data = data.astype(oracle_dtype, copy=True)

        worst = 0.0
        with no_grad():
            for i, j in coords:
                flat = points[i].data.reshape(-1)
                orig = flat[j]
                flat[j] = orig + eps
                fp = float(function(*points).data.reshape(-1)[0])
                flat[j] = orig - eps
                fm = float(function(*points).data.reshape(-1)[0])
                flat[j] = orig
                cd = (fp - fm) / (2.0 * eps)
                a = float(analytic[i].reshape(-1)[j])
                err = abs(a - cd) / max(abs(a), abs(cd), 1e-6)
                worst = max(worst, err)
        return worst
    finally:
        for p, (data, grad, rg) in zip(points, saved):
            p.data, p.grad, p.requires_grad = data, grad, rg
