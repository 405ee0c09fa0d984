"""Hybrid spatial-channel attention.

The spatial map is the channel-wise mean of the features, the channel map is
a two-layer bottleneck (no biases, ReLU after each layer) applied to the
spatially pooled features, and the saliency map is their outer product,
shaped exactly like the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError
from .nn import Module, uniform
from .tensor import Parameter, Tensor


@dataclass
class AttentionMaps:
    spatial: Tensor   # [n, 1, h, w]
    channel: Tensor   # [n, c, 1, 1]
    hybrid: Tensor    # [n, c, h, w]


class SCAModule(Module):
    """Channel bottleneck ``c -> c/r -> c`` holding the two 1x1 projection matrices."""

    def __init__(self, channels: int, reduction: int = 16, stage: int = 1,
                 rng: np.random.Generator = None, dtype=np.float32):
        if reduction < 1 or channels % reduction:
            raise ShapeError("SCAModule", f"reduction rate {reduction} must divide channels {channels}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.reduction = reduction
        hidden = channels // reduction
        self.m1 = Parameter(f"sca.{stage}.m1", uniform(rng, (hidden, channels), channels, dtype))
        self.m2 = Parameter(f"sca.{stage}.m2", uniform(rng, (channels, hidden), hidden, dtype))


def spatial_attention(x: Tensor) -> Tensor:
    return ops.channel_mean(x)


def channel_attention(module: SCAModule, x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError("channel_attention", f"expected rank 4, got {x.shape}")
    if x.shape[1] != module.channels:
        raise ShapeError("channel_attention", f"input has {x.shape[1]} channels, module expects {module.channels}",
                         axis=1, expected=module.channels, got=x.shape[1])
    hidden, c = module.m1.shape
    pooled = ops.global_avg_pool(x)
    w1 = ops.reshape(module.m1, (hidden, c, 1, 1))
    w2 = ops.reshape(module.m2, (c, hidden, 1, 1))
    return ops.relu(ops.conv2d(ops.relu(ops.conv2d(pooled, w1)), w2))


def hybrid_attention(module: SCAModule, x: Tensor) -> AttentionMaps:
    s = spatial_attention(x)
    c = channel_attention(module, x)
    return AttentionMaps(spatial=s, channel=c, hybrid=ops.broadcast_mul(s, c))


def apply_attention(x: Tensor, maps: AttentionMaps, residual: bool = False) -> Tensor:
    """Gate ``x`` by the saliency map: ``x * A``, or ``x * (1 + A)`` when ``residual``."""
    a = maps.hybrid
    if a.shape != x.shape:
        raise ShapeError("apply_attention", f"map shape {a.shape} != feature shape {x.shape}")
    if residual:
        a = ops.add(a, 1.0)
    return ops.broadcast_mul(x, a)
