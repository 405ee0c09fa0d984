"""Fixed-scale spatial transformers for region localisation.

Each region is an axis-aligned affine warp

    x = s_w * u + t_x
    y = s_h * v + t_y

from a uniform target lattice ``(u, v)`` over ``[-1, 1]^2`` into normalised
source coordinates.  Normalised coordinates map to pixels with the
align-corners convention (-1 is pixel 0, +1 is pixel ``extent - 1``).  A
sample point outside ``[-1, 1]`` on either axis reads zero; points inside
blend their (at most four) neighbouring pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .errors import ShapeError
from .nn import Module, zeros_param
from .tensor import Tensor, check_precision, make_result

DEFAULT_SCALE = 0.5
DEFAULT_REGIONS = 4


@dataclass(frozen=True)
class AffineParams:
    s_h: float
    s_w: float
    t_x: float
    t_y: float

    def as_row(self) -> Tuple[float, float, float, float]:
        return (self.s_h, self.s_w, self.t_x, self.t_y)

    def in_bounds(self) -> bool:
        return abs(self.t_x) + self.s_w <= 1 and abs(self.t_y) + self.s_h <= 1

    def box(self) -> Tuple[float, float, float, float]:
        """Normalised source extent ``(x_min, x_max, y_min, y_max)`` covered by the crop."""
        return (self.t_x - self.s_w, self.t_x + self.s_w, self.t_y - self.s_h, self.t_y + self.s_h)


def _lattice(n: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1)


def affine_grid(theta, out_h: int, out_w: int) -> Tensor:
    """Sample positions ``[N, out_h, out_w, 2]`` (x, y) for ``theta`` rows ``(s_h, s_w, t_x, t_y)``.

    ``theta`` is a ``[N, 4]`` tensor or a single :class:`AffineParams`.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError("affine_grid", f"output size must be positive, got {out_h}x{out_w}")
    if isinstance(theta, AffineParams):
        theta = Tensor(np.array([theta.as_row()], dtype=np.float64))
    if theta.ndim != 2 or theta.shape[1] != 4:
        raise ShapeError("affine_grid", f"theta must be [N, 4], got {theta.shape}", axis=1)
    dt = theta.dtype
    u = _lattice(out_w).astype(dt)
    v = _lattice(out_h).astype(dt)
    th = theta.data
    s_h, s_w, t_x, t_y = (th[:, i, None, None] for i in range(4))
    grid = np.empty((th.shape[0], out_h, out_w, 2), dtype=dt)
    grid[..., 0] = s_w * u[None, None, :] + t_x
    grid[..., 1] = s_h * v[None, :, None] + t_y

    def backward(g):
        gx, gy = g[..., 0], g[..., 1]
        out = np.empty_like(th)
        out[:, 0] = (gy * v[None, :, None]).sum(axis=(1, 2))
        out[:, 1] = (gx * u[None, None, :]).sum(axis=(1, 2))
        out[:, 2] = gx.sum(axis=(1, 2))
        out[:, 3] = gy.sum(axis=(1, 2))
        return (out,)

    return make_result("affine_grid", grid, (theta,), backward)


def _to_pixels(coord: np.ndarray, extent: int, dtype):
    """Align-corners mapping, snapping rounding noise onto exact lattice nodes.

    Returns the pixel coordinates and a mask of points inside the image.
    """
    tol = 4 * np.finfo(dtype).eps * max(extent, 1)
    c = coord.astype(np.float64)
    if extent == 1:
        return np.zeros_like(c), np.abs(c) <= 1 + tol
    p = (c + 1.0) * 0.5 * (extent - 1)
    r = np.rint(p)
    p = np.where(np.abs(p - r) <= tol, r, p)
    return p, (p >= 0) & (p <= extent - 1)


def bilinear_sample(x: Tensor, grid: Tensor) -> Tensor:
    """Bilinearly interpolate ``x`` ``[N, C, H, W]`` at ``grid`` ``[N, oh, ow, 2]``."""
    if x.ndim != 4:
        raise ShapeError("bilinear_sample", f"expected rank-4 input, got {x.shape}")
    if grid.ndim != 4 or grid.shape[3] != 2:
        raise ShapeError("bilinear_sample", f"grid must be [N, oh, ow, 2], got {grid.shape}", axis=3)
    if grid.shape[0] != x.shape[0]:
        raise ShapeError("bilinear_sample", f"grid batch {grid.shape[0]} != input batch {x.shape[0]}",
                         axis=0, expected=x.shape[0], got=grid.shape[0])
    check_precision("bilinear_sample", x, grid)
    n, c, h, w = x.shape
    oh, ow = grid.shape[1], grid.shape[2]
    p = oh * ow
    dt = x.dtype

    px, inside_x = _to_pixels(grid.data[..., 0], w, dt)
    py, inside_y = _to_pixels(grid.data[..., 1], h, dt)
    px, py = px.reshape(n, p), py.reshape(n, p)
    inside = (inside_x & inside_y).reshape(n, p)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = px - x0
    fy = py - y0

    corners = []
    for dy, dx, wt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                       (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy, xx = y0 + dy, x0 + dx
        valid = inside & (yy < h) & (xx < w)
        idx = np.where(valid, yy * w + xx, 0)
        corners.append((idx, valid, wt))

    flat = x.data.reshape(n, c, h * w)
    values = []
    out = np.zeros((n, c, p), dtype=np.float64)
    for idx, valid, wt in corners:
        v = np.take_along_axis(flat, idx[:, None, :], axis=2) * valid[:, None, :]
        values.append(v)
        out += v * wt[:, None, :]

    def backward(g):
        gflat = g.reshape(n, c, p).astype(np.float64)
        gx_in = ggrid = None
        if x.requires_grad:
            base = (np.arange(n)[:, None, None] * c + np.arange(c)[None, :, None]) * (h * w)
            index = np.concatenate([(base + idx[:, None, :]).ravel() for idx, _, _ in corners])
            weights = np.concatenate([(gflat * (wt * valid)[:, None, :]).ravel() for _, valid, wt in corners])
            gx_in = np.bincount(index, weights=weights, minlength=n * c * h * w).reshape(x.shape).astype(dt)
        if grid.requires_grad:
            v00, v01, v10, v11 = values
            dpx = ((1 - fy)[:, None, :] * (v01 - v00) + fy[:, None, :] * (v11 - v10))
            dpy = ((1 - fx)[:, None, :] * (v10 - v00) + fx[:, None, :] * (v11 - v01))
            ggrid = np.empty(grid.shape, dtype=dt)
            ggrid[..., 0] = ((gflat * dpx).sum(axis=1) * (0.5 * (w - 1))).reshape(n, oh, ow)
            ggrid[..., 1] = ((gflat * dpy).sum(axis=1) * (0.5 * (h - 1))).reshape(n, oh, ow)
        return gx_in, ggrid

    return make_result("bilinear_sample", out.reshape(n, c, oh, ow).astype(dt), (x, grid), backward)


class LocalizationHead(Module):
    """Pooled features -> one linear map -> ``2 * regions`` bounded translations.

    Weights and bias start at zero, so every region starts as the centred crop.
    ``fixed`` pins all regions to one :class:`AffineParams` (a testing hook).
    """

    def __init__(self, channels: int, regions: int = DEFAULT_REGIONS, stage: int = 1,
                 scale: float = DEFAULT_SCALE, dtype=np.float32):
        if not 0 < scale <= 1:
            raise ValueError(f"scale must lie in (0, 1], got {scale}")
        self.channels = channels
        self.regions = regions
        self.scale = scale
        self.weight = zeros_param(f"st.{stage}.loc.weight", (2 * regions, channels), dtype)
        self.bias = zeros_param(f"st.{stage}.loc.bias", (2 * regions,), dtype)
        self.fixed: Optional[AffineParams] = None


def localize_regions(head: LocalizationHead, x: Tensor) -> Tensor:
    """Region parameters ``[n, T, 4]`` with columns ``(s_h, s_w, t_x, t_y)``."""
    if x.ndim != 4 or x.shape[1] != head.channels:
        raise ShapeError("localize_regions", f"expected [n, {head.channels}, h, w], got {x.shape}", axis=1)
    n, t = x.shape[0], head.regions
    if head.fixed is not None:
        row = np.array(head.fixed.as_row(), dtype=x.dtype)
        return Tensor(np.broadcast_to(row, (n, t, 4)).copy())
    pooled = ops.reshape(ops.global_avg_pool(x), (n, head.channels))
    z = ops.linear(pooled, head.weight, head.bias)
    shift = ops.reshape(ops.bounded_tanh(z, 1.0 - head.scale), (n, t, 2))
    scales = Tensor(np.full((n, t, 2), head.scale, dtype=x.dtype))
    return ops.concat([scales, shift], axis=2)


def affine_params(theta: Tensor) -> List[List[AffineParams]]:
    """Unpack a ``[n, T, 4]`` parameter tensor into nested :class:`AffineParams`."""
    return [[AffineParams(*map(float, row)) for row in item] for item in theta.data]


class RegionBatch(NamedTuple):
    features: Tensor                  # [n * T, c, out_h, out_w], item-major
    theta: Tensor                     # [n, T, 4]
    index: Sequence[Tuple[int, int]]  # batch row -> (item, region)


def extract_regions(head: LocalizationHead, x: Tensor, out_h: Optional[int] = None,
                    out_w: Optional[int] = None) -> RegionBatch:
    n, c, h, w = x.shape
    out_h = out_h or h
    out_w = out_w or w
    t = head.regions
    theta = localize_regions(head, x)
    grid = affine_grid(ops.reshape(theta, (n * t, 4)), out_h, out_w)
    feats = bilinear_sample(ops.repeat_batch(x, t), grid)
    index = [(i, r) for i in range(n) for r in range(t)]
    return RegionBatch(feats, theta, index)
