"""The stacked global-local attention network.

A plain convolutional trunk produces one feature map per stage.  For each
tapped stage the global branch gates the map with hybrid spatial-channel
attention and pools it; the local branch crops ``T`` regions with a spatial
transformer, runs an inception block on each and keeps the elementwise max
of the pooled region vectors.  Each branch fuses its per-stage vectors with
one linear layer and classifies; a joint classifier reads the concatenated
global and local features.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from . import ops
from .attention import AttentionMaps, SCAModule, apply_attention, hybrid_attention
from .config import ModelConfig
from .errors import ConfigError, ShapeError
from .nn import Module, conv_param, linear_param, zeros_param
from .tensor import Tensor
from .transformer import LocalizationHead, extract_regions


@dataclass
class LossWeights:
    gamma1: float = 0.5
    gamma2: float = 0.5

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class ModelOutputs:
    joint_logits: Tensor
    global_logits: Tensor
    local_logits: Tensor
    global_feature: Tensor
    local_feature: Tensor
    attention: Dict[int, AttentionMaps] = field(default_factory=dict)
    regions: Dict[int, Tensor] = field(default_factory=dict)   # stage -> theta [n, T, 4]
    stages: List[Tensor] = field(default_factory=list)


class Losses(NamedTuple):
    total: Tensor
    joint: Tensor
    global_: Tensor
    local: Tensor


class ConvReLU(Module):
    def __init__(self, name, rng, ci, co, k, stride=1, dtype=np.float32):
        self.weight = conv_param(f"{name}.weight", rng, co, ci, k, dtype)
        self.bias = zeros_param(f"{name}.bias", (co,), dtype)
        self.stride = stride
        self.pad = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(ops.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad))


class Linear(Module):
    def __init__(self, name, rng, in_dim, out_dim, dtype=np.float32):
        self.weight = linear_param(f"{name}.weight", rng, out_dim, in_dim, dtype)
        self.bias = zeros_param(f"{name}.bias", (out_dim,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Backbone(Module):
    """Stem convolution at full resolution, then one stride-2 conv-ReLU per stage."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        self.depth = cfg.stages
        self.stem = ConvReLU("backbone.stem", rng, 3, cfg.stem_width, 3, dtype=dtype)
        ins = (cfg.stem_width,) + tuple(cfg.widths[:-1])
        self.blocks = [ConvReLU(f"backbone.stage{i + 1}", rng, ci, co, 3, stride=2, dtype=dtype)
                       for i, (ci, co) in enumerate(zip(ins, cfg.widths))]

    def __call__(self, image: Tensor) -> List[Tensor]:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError("backbone", f"expected [n, 3, H, W], got {image.shape}", axis=1)
        factor = 2 ** self.depth
        for axis in (2, 3):
            if image.shape[axis] % factor:
                raise ShapeError("backbone", f"extent {image.shape[axis]} not divisible by {factor}", axis=axis)
        x = self.stem(image)
        out = []
        for block in self.blocks:
            x = block(x)
            out.append(x)
        return out


class InceptionBlock(Module):
    """Four same-resolution branches: 1x1; 1x1-3x3; 1x1-3x3-3x3; maxpool-1x1."""

    def __init__(self, name, rng, channels, width, dtype=np.float32):
        self.b1 = [ConvReLU(f"{name}.b1.0", rng, channels, width, 1, dtype=dtype)]
        self.b2 = [ConvReLU(f"{name}.b2.0", rng, channels, width, 1, dtype=dtype),
                   ConvReLU(f"{name}.b2.1", rng, width, width, 3, dtype=dtype)]
        self.b3 = [ConvReLU(f"{name}.b3.0", rng, channels, width, 1, dtype=dtype),
                   ConvReLU(f"{name}.b3.1", rng, width, width, 3, dtype=dtype),
                   ConvReLU(f"{name}.b3.2", rng, width, width, 3, dtype=dtype)]
        self.b4 = [ConvReLU(f"{name}.b4.1", rng, channels, width, 1, dtype=dtype)]
        self.out_channels = 4 * width

    def __call__(self, x: Tensor) -> Tensor:
        outs = []
        for branch in (self.b1, self.b2, self.b3):
            y = x
            for layer in branch:
                y = layer(y)
            outs.append(y)
        outs.append(self.b4[0](ops.max_pool(x, 3, stride=1, pad=1)))
        return ops.concat_channels(outs)


def _pooled(x: Tensor) -> Tensor:
    return ops.reshape(ops.global_avg_pool(x), x.shape[:2])


class SGLANet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(cfg, rng, dtype)
        self.tapped = tuple(cfg.tapped)
        widths = {s: cfg.widths[s - 1] for s in self.tapped}
        self.sca = {s: SCAModule(widths[s], cfg.reduction, stage=s, rng=rng, dtype=dtype) for s in self.tapped}
        self.st = {s: LocalizationHead(widths[s], cfg.regions, stage=s, scale=cfg.scale, dtype=dtype)
                   for s in self.tapped}
        self.inception = {s: InceptionBlock(f"inception.{s}", rng, widths[s], cfg.branch_width, dtype)
                          for s in self.tapped}
        self.global_fuse = Linear("glofls.fuse", rng, sum(widths.values()), cfg.global_dim, dtype)
        self.global_cls = Linear("glofls.cls", rng, cfg.global_dim, cfg.classes, dtype)
        local_in = sum(b.out_channels for b in self.inception.values())
        self.local_fuse = Linear("locfls.fuse", rng, local_in, cfg.local_dim, dtype)
        self.local_cls = Linear("locfls.cls", rng, cfg.local_dim, cfg.classes, dtype)
        self.joint_cls = Linear("joint.cls", rng, cfg.global_dim + cfg.local_dim, cfg.classes, dtype)

    def classifier_heads(self) -> Dict[str, Linear]:
        return {"global": self.global_cls, "local": self.local_cls, "joint": self.joint_cls}

    def _tapped_maps(self, stages: Sequence[Tensor]) -> Dict[int, Tensor]:
        if len(stages) != self.cfg.stages:
            raise ConfigError(f"got {len(stages)} stage maps for a {self.cfg.stages}-stage model")
        return {s: stages[s - 1] for s in self.tapped}

    def glofls(self, stages: Sequence[Tensor]):
        """Global branch -> (global_feature, global_logits, attention maps per stage)."""
        maps, vectors = {}, []
        for s, x in self._tapped_maps(stages).items():
            maps[s] = hybrid_attention(self.sca[s], x)
            gated = apply_attention(x, maps[s], residual=self.cfg.residual_attention)
            vectors.append(_pooled(gated))
        feature = self.global_fuse(ops.concat(vectors, axis=1))
        return feature, self.global_cls(feature), maps

    def locfls(self, stages: Sequence[Tensor]):
        """Local branch -> (local_feature, local_logits, region parameters per stage)."""
        thetas, vectors = {}, []
        for s, x in self._tapped_maps(stages).items():
            n, t = x.shape[0], self.st[s].regions
            regions = extract_regions(self.st[s], x)
            thetas[s] = regions.theta
            pooled = _pooled(self.inception[s](regions.features))           # [n*T, d]
            per_item = ops.reshape(pooled, (n, t, pooled.shape[1]))
            vectors.append(ops.max_over_axis(per_item, axis=1))
        feature = self.local_fuse(ops.concat(vectors, axis=1))
        return feature, self.local_cls(feature), thetas

    def __call__(self, image: Tensor) -> ModelOutputs:
        if image.dtype != self.dtype:
            image = Tensor(image.data.astype(self.dtype))
        stages = self.backbone(image)
        g_feat, g_logits, maps = self.glofls(stages)
        l_feat, l_logits, thetas = self.locfls(stages)
        joint = self.joint_cls(ops.concat([g_feat, l_feat], axis=1))
        return ModelOutputs(joint, g_logits, l_logits, g_feat, l_feat, maps, thetas, stages)

    forward = __call__


def total_loss(outputs: ModelOutputs, labels, weights: Optional[LossWeights] = None) -> Losses:
    """Joint cross-entropy plus the weighted global and local cross-entropies."""
    w = weights or LossWeights()
    joint = ops.softmax_cross_entropy(outputs.joint_logits, labels)
    glob = ops.softmax_cross_entropy(outputs.global_logits, labels)
    loc = ops.softmax_cross_entropy(outputs.local_logits, labels)
    total = ops.add(ops.add(joint, ops.scale(glob, w.gamma1)), ops.scale(loc, w.gamma2))
    return Losses(total, joint, glob, loc)
