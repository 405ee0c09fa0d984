"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NoBackwardError, PrecisionError
from .tensor import Tensor, no_grad


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn(*inputs)`` may return a tensor of any shape; it is reduced to a scalar
    by a fixed random projection so every output coordinate is exercised.
    Gradients are compared for every input with ``requires_grad``.  With
    ``max_coords`` set, at most that many coordinates per input are probed,
    chosen by ``seed``.  The relative error of one coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps={eps} outside [1e-6, 1e-3]")
    for t in inputs:
        if t.dtype != np.float64:
            raise PrecisionError("grad_check requires float64 inputs")
    targets = [t for t in inputs if t.requires_grad]
    for t in targets:
        t.data = np.ascontiguousarray(t.data)
    rng = np.random.default_rng(seed)

    saved = [t.grad for t in targets]
    for t in targets:
        t.grad = np.zeros_like(t.data)
    out = fn(*inputs)
    if out._node is None:
        raise NoBackwardError("output does not depend differentiably on the inputs")
    proj = rng.standard_normal(out.shape)
    out.backward(proj.astype(out.dtype))
    analytic = [t.grad.copy() for t in targets]
    for t, g in zip(targets, saved):
        t.grad = g

    def objective() -> float:
        with no_grad():
            return float(np.sum(fn(*inputs).data * proj))

    worst = 0.0
    for t, a in zip(targets, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        a_flat = a.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = objective()
            flat[i] = orig - eps
            down = objective()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            denom = max(abs(a_flat[i]), abs(num), 1e-8)
            worst = max(worst, abs(a_flat[i] - num) / denom)
    return worst
