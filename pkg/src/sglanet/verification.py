"""Gradient-check suites run by ``sglanet gradcheck``.

Every case builds float64 inputs from a fixed seed and reports the worst
relative error from :func:`sglanet.gradcheck.grad_check`.  Inputs are drawn
away from the kinks of ReLU and max so that finite differences stay on one
side of every branch.  The network cases use the micro preset.
"""

from __future__ import annotations

import time
from typing import Callable, Dict, Iterator, List, NamedTuple, Sequence

import numpy as np

from . import ops
from .attention import SCAModule, apply_attention, channel_attention, hybrid_attention, spatial_attention
from .config import preset
from .gradcheck import grad_check
from .network import SGLANet, total_loss
from .tensor import Tensor
from .transformer import LocalizationHead, affine_grid, bilinear_sample, extract_regions

TOLERANCE = 1e-4
SCOPES = ("tensor", "sca", "st", "network")


class CheckResult(NamedTuple):
    scope: str
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error <= TOLERANCE


def _leaf(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _signed(r: np.random.Generator, shape, margin=0.1) -> np.ndarray:
    return r.uniform(margin, 1.0 + margin, size=shape) * r.choice([-1.0, 1.0], size=shape)


def _distinct(r: np.random.Generator, shape, spacing=0.3) -> np.ndarray:
    return r.permutation(int(np.prod(shape))).reshape(shape) * spacing


# Each case: name -> builder(rng) returning (fn, inputs, max_coords)
Case = Callable[[np.random.Generator], tuple]


def _tensor_cases() -> Dict[str, Case]:
    return {
        "conv2d": lambda r: (lambda x, w, b: ops.conv2d(x, w, b, stride=2, pad=1),
                             [_leaf(r.standard_normal((2, 2, 5, 5))), _leaf(r.standard_normal((3, 2, 3, 3))),
                              _leaf(r.standard_normal(3))], None),
        "conv2d_1x1": lambda r: (ops.conv2d, [_leaf(r.standard_normal((2, 3, 3, 3))),
                                              _leaf(r.standard_normal((2, 3, 1, 1)))], None),
        "linear": lambda r: (ops.linear, [_leaf(r.standard_normal((3, 4))), _leaf(r.standard_normal((2, 4))),
                                          _leaf(r.standard_normal(2))], None),
        "relu": lambda r: (ops.relu, [_leaf(_signed(r, (2, 3, 4)))], None),
        "max_pool": lambda r: (lambda x: ops.max_pool(x, 3, stride=1, pad=1), [_leaf(_distinct(r, (1, 2, 5, 5)))],
                               None),
        "max_pool_strided": lambda r: (lambda x: ops.max_pool(x, 2), [_leaf(_distinct(r, (2, 1, 4, 4)))], None),
        "global_avg_pool": lambda r: (ops.global_avg_pool, [_leaf(r.standard_normal((2, 3, 4, 5)))], None),
        "channel_mean": lambda r: (ops.channel_mean, [_leaf(r.standard_normal((2, 3, 4, 5)))], None),
        "broadcast_mul": lambda r: (ops.broadcast_mul, [_leaf(r.standard_normal((2, 3, 4, 4))),
                                                        _leaf(r.standard_normal((2, 1, 4, 4)))], None),
        "add": lambda r: (ops.add, [_leaf(r.standard_normal((2, 3))), _leaf(r.standard_normal((1, 3)))], None),
        "scale": lambda r: (lambda x: ops.scale(x, 0.7), [_leaf(r.standard_normal((2, 3)))], None),
        "bounded_tanh": lambda r: (lambda x: ops.bounded_tanh(x, 0.5), [_leaf(r.standard_normal((3, 4)))], None),
        "concat": lambda r: (lambda a, b: ops.concat([a, b], axis=1),
                             [_leaf(r.standard_normal((2, 1, 3))), _leaf(r.standard_normal((2, 2, 3)))], None),
        "reshape": lambda r: (lambda x: ops.reshape(x, (3, 4)), [_leaf(r.standard_normal((2, 6)))], None),
        "repeat_batch": lambda r: (lambda x: ops.repeat_batch(x, 3), [_leaf(r.standard_normal((2, 3)))], None),
        "max_over_axis": lambda r: (lambda x: ops.max_over_axis(x, 1), [_leaf(_distinct(r, (2, 3, 4)))], None),
        "softmax_cross_entropy": lambda r: (lambda z: ops.softmax_cross_entropy(z, [0, 4, 2, 2]),
                                            [_leaf(r.standard_normal((4, 5)))], None),
    }


def _sca_module(r: np.random.Generator, channels=8, reduction=4) -> SCAModule:
    m = SCAModule(channels, reduction, rng=r, dtype=np.float64)
    for p in (m.m1, m.m2):
        p.data[...] = _signed(r, p.shape, margin=0.2)
    return m


def _sca_cases() -> Dict[str, Case]:
    def channel(r):
        m = _sca_module(r)
        x = _leaf(r.standard_normal((2, 8, 4, 4)) + 0.5)
        return (lambda x, a, b: channel_attention(m, x), [x, m.m1, m.m2], None)

    def pipeline(r):
        m = _sca_module(r)
        x = _leaf(r.standard_normal((2, 8, 4, 4)) + 0.5)
        return (lambda x, a, b: apply_attention(x, hybrid_attention(m, x)), [x, m.m1, m.m2], None)

    def residual(r):
        m = _sca_module(r)
        x = _leaf(r.standard_normal((2, 8, 4, 4)) + 0.5)
        return (lambda x, a, b: apply_attention(x, hybrid_attention(m, x), residual=True), [x, m.m1, m.m2], None)

    return {
        "spatial_attention": lambda r: (spatial_attention, [_leaf(r.standard_normal((2, 8, 4, 4)))], None),
        "channel_attention": channel,
        "hybrid_gating": pipeline,
        "hybrid_gating_residual": residual,
    }


def _off_kink_grid(r: np.random.Generator, n, oh, ow, h, w) -> np.ndarray:
    px = r.integers(0, w - 1, size=(n, oh, ow)) + r.uniform(0.05, 0.95, size=(n, oh, ow))
    py = r.integers(0, h - 1, size=(n, oh, ow)) + r.uniform(0.05, 0.95, size=(n, oh, ow))
    return np.stack([px / (w - 1) * 2 - 1, py / (h - 1) * 2 - 1], axis=-1)


def _st_cases() -> Dict[str, Case]:
    def regions(r):
        head = LocalizationHead(3, regions=2, dtype=np.float64)
        head.weight.data[...] = r.standard_normal(head.weight.shape) * 0.5
        head.bias.data[...] = r.standard_normal(head.bias.shape) * 0.3
        x = _leaf(r.standard_normal((2, 3, 6, 6)))
        return (lambda x, w, b: extract_regions(head, x).features, [x, head.weight, head.bias], None)

    return {
        "affine_grid": lambda r: (lambda t: affine_grid(t, 4, 5), [_leaf(r.uniform(-0.4, 0.4, size=(3, 4)))], None),
        "bilinear_sample": lambda r: (bilinear_sample, [_leaf(r.standard_normal((2, 2, 5, 6))),
                                                        _leaf(_off_kink_grid(r, 2, 3, 4, 5, 6))], None),
        "extract_regions": regions,
    }


def micro_model(seed: int = 0) -> SGLANet:
    """Micro-preset model at 64-bit with generic nonzero parameters everywhere.

    The default initialisation is kept for weights; biases and the zero-initialised
    localisation heads get small random values so that no two regions tie
    and no ReLU sits exactly on its kink.
    """
    model = SGLANet(preset("micro").model, seed=seed, dtype=np.float64)
    r = np.random.default_rng(seed)
    for p in model.parameters():
        if p.ndim == 1:
            p.data[...] = r.standard_normal(p.shape) * 0.1
    for head in model.st.values():
        head.weight.data[...] = r.standard_normal(head.weight.shape) * 0.1
    return model


def kink_margin(out: Tensor) -> float:
    """Distance of the recorded graph from its nearest non-differentiable point.

    For every ReLU this is the smallest nonzero magnitude among its inputs
    (exact zeros come from dead paths and stay zero under perturbation).  For
    every max it is the smallest gap between distinct values competing in one
    plane, a conservative stand-in for the winner/runner-up gap.
    """
    seen, stack, margin = set(), [out], np.inf
    while stack:
        node = stack.pop()._node
        if node is None or id(node) in seen:
            continue
        seen.add(id(node))
        d = node.inputs[0].data if node.inputs else None
        if node.op == "relu":
            a = np.abs(d[d != 0])
            if a.size:
                margin = min(margin, float(a.min()))
        elif node.op in ("max_pool", "max_over_axis"):
            planes = d.reshape(d.shape[0] * d.shape[1], -1) if node.op == "max_pool" else np.moveaxis(d, 1, -1)
            for plane in planes.reshape(-1, planes.shape[-1]):
                u = np.unique(plane)
                if u.size > 1:
                    margin = min(margin, float(np.diff(u).min()))
        stack.extend(node.inputs)
    return margin


NETWORK_EPS = 1e-5
KINK_MARGIN = 1e-4      # ten probe steps
GRADIENT_FLOOR = 1e-6   # smaller gradients drown in central-difference rounding


def _smooth_draw(r: np.random.Generator, objective, need_input_grad=False, attempts=500):
    """Draw (model, image) pairs until ``objective`` is numerically checkable.

    A draw is rejected when the recorded graph lies within ``KINK_MARGIN`` of a
    kink, or when some nonzero analytic gradient is below ``GRADIENT_FLOOR``,
    where the finite-difference estimate is dominated by rounding.
    """
    for _ in range(attempts):
        model = micro_model(int(r.integers(2**31)))
        x = Tensor(r.standard_normal((2, 3, 8, 8)), requires_grad=need_input_grad)
        out = objective(model, x)
        if kink_margin(out) < KINK_MARGIN:
            continue
        leaves = model.parameters() + ([x] if need_input_grad else [])
        for t in leaves:
            t.grad = np.zeros_like(t.data)
        out.backward(r.standard_normal(out.shape))
        g = np.concatenate([t.grad.ravel() for t in leaves])
        for t in leaves:
            t.grad = np.zeros_like(t.data)
        g = np.abs(g[g != 0])
        if g.size and g.min() >= GRADIENT_FLOOR:
            return model, x
    raise RuntimeError("no draw is far enough from kinks and rounding to check")


def _network_cases() -> Dict[str, Case]:
    def glofls(r):
        def objective(model, x):
            return model.glofls(model.backbone(x))[1]
        model, x = _smooth_draw(r, objective)
        return (lambda *_: objective(model, x), model.parameters(), 12)

    def locfls(r):
        def objective(model, x):
            return model.locfls(model.backbone(x))[1]
        model, x = _smooth_draw(r, objective)
        return (lambda *_: objective(model, x), model.parameters(), 12)

    def full(r):
        def objective(model, x):
            return total_loss(model(x), [0, 2]).total
        model, x = _smooth_draw(r, objective, need_input_grad=True)
        return (lambda x, *_: objective(model, x), [x] + model.parameters(), 12)

    return {"glofls": glofls, "locfls": locfls, "sglanet": full}


SUITES: Dict[str, Callable[[], Dict[str, Case]]] = {
    "tensor": _tensor_cases, "sca": _sca_cases, "st": _st_cases, "network": _network_cases,
}


def run_suite(scope: str = "all", seed: int = 0) -> Iterator[CheckResult]:
    """Yield one result per case in ``scope`` (``all`` runs every suite)."""
    scopes: Sequence[str] = SCOPES if scope == "all" else (scope,)
    for s in scopes:
        if s not in SUITES:
            raise ValueError(f"unknown scope {s!r}")
        for name, build in SUITES[s]().items():
            r = np.random.default_rng([seed, len(name)])
            start = time.perf_counter()
            fn, inputs, max_coords = build(r)
            eps = NETWORK_EPS if s == "network" else 1e-4
            err = grad_check(fn, inputs, eps=eps, max_coords=max_coords, seed=seed)
            yield CheckResult(s, name, float(err), time.perf_counter() - start)


def failures(results: List[CheckResult]) -> List[CheckResult]:
    return [r for r in results if not r.passed]
