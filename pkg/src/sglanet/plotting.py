"""PNG rendering of attention maps, region boxes and training curves.

Everything draws through the non-interactive Agg backend, so no display is
needed.  The array helpers are separate from the file writers to keep them
testable.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402
import numpy as np  # noqa: E402

from .transformer import AffineParams  # noqa: E402

REGION_COLORS = ("tab:red", "tab:cyan", "tab:orange", "tab:green", "tab:purple", "tab:olive")


def normalize_map(s: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant map becomes uniform 0.5 gray."""
    s = np.asarray(s, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full(s.shape, 0.5)
    return (s - lo) / (hi - lo)


def upsample_nearest(s: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of a ``[h, w]`` map to ``[height, width]``."""
    h, w = s.shape
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return s[rows[:, None], cols[None, :]]


def heatmap_overlay(image: np.ndarray, spatial: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend a grayscale rendering of ``spatial`` over an ``[H, W, 3]`` image in [0, 1]."""
    height, width = image.shape[:2]
    heat = upsample_nearest(normalize_map(spatial), height, width)
    return (1 - alpha) * image + alpha * heat[..., None]


def region_box_pixels(p: AffineParams, height: int, width: int) -> Tuple[float, float, float, float]:
    """Crop extent in input pixels ``(x0, y0, x1, y1)`` under the align-corners mapping."""
    x_min, x_max, y_min, y_max = p.box()
    sx = 0.5 * (width - 1)
    sy = 0.5 * (height - 1)
    return ((x_min + 1) * sx, (y_min + 1) * sy, (x_max + 1) * sx, (y_max + 1) * sy)


def _figure(image: np.ndarray):
    h, w = image.shape[:2]
    scale = max(1, 256 // max(h, w))
    fig = plt.figure(figsize=(w * scale / 100, h * scale / 100), dpi=100)
    ax = fig.add_axes((0, 0, 1, 1))
    ax.set_axis_off()
    ax.imshow(image, interpolation="nearest", vmin=0, vmax=1)
    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    return fig, ax


def save_heatmap(path, image: np.ndarray, spatial: np.ndarray) -> Path:
    """Write the 50% grayscale overlay of ``spatial`` on ``image``."""
    fig, _ = _figure(np.clip(heatmap_overlay(image, spatial), 0, 1))
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def save_regions(path, image: np.ndarray, regions: Sequence[AffineParams]) -> Path:
    """Write ``image`` with one outlined rectangle per region."""
    h, w = image.shape[:2]
    fig, ax = _figure(image)
    for i, p in enumerate(regions):
        x0, y0, x1, y1 = region_box_pixels(p, h, w)
        ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, linewidth=1.5,
                               edgecolor=REGION_COLORS[i % len(REGION_COLORS)]))
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def save_curves(path, records: Iterable[dict]) -> Path:
    """Top-1 and loss per epoch for every split found in the metric records."""
    by_split: dict = {}
    for rec in records:
        by_split.setdefault(rec["split"], []).append(rec)
    fig, (acc_ax, loss_ax) = plt.subplots(1, 2, figsize=(9, 3.5))
    for split, recs in sorted(by_split.items()):
        epochs: List[int] = [r["epoch"] for r in recs]
        acc_ax.plot(epochs, [r["top1"] for r in recs], marker="o", markersize=3, label=split)
        loss_ax.plot(epochs, [r["loss"] for r in recs], marker="o", markersize=3, label=split)
    acc_ax.set_xlabel("epoch")
    acc_ax.set_ylabel("top-1")
    acc_ax.set_ylim(0, 1.02)
    loss_ax.set_xlabel("epoch")
    loss_ax.set_ylabel("loss")
    for ax in (acc_ax, loss_ax):
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
