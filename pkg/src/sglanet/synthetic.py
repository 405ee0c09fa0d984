"""Procedurally generated textured-shape images for toy-scale experiments.

Four classes, one per shape (disk, square, triangle, cross).  Each shape is
drawn at a random position and size over a noisy background and filled with
a randomly chosen texture (horizontal, vertical or diagonal stripes, or a
checkerboard) in random colours, so only the outline identifies the class.

Run ``python -m sglanet.synthetic ROOT`` to write the corpus as class folders.
"""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import Tuple

import numpy as np
from PIL import Image

CLASSES = ("disk", "square", "triangle", "cross")


def _mask(kind: str, yy, xx, cy, cx, radius) -> np.ndarray:
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        return dy * dy + dx * dx <= radius * radius
    if kind == "square":
        return (np.abs(dy) <= radius * 0.85) & (np.abs(dx) <= radius * 0.85)
    if kind == "triangle":
        # apex up; base at cy + radius
        rel = (dy + radius) / (2 * radius)
        return (rel >= 0) & (rel <= 1) & (np.abs(dx) <= rel * radius)
    arm = radius * 0.35
    return ((np.abs(dy) <= arm) & (np.abs(dx) <= radius)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= radius))


def _texture(kind: int, yy, xx, period: float, phase: float) -> np.ndarray:
    if kind == 0:
        coord = yy
    elif kind == 1:
        coord = xx
    elif kind == 2:
        return ((np.floor((yy + phase) / period) + np.floor((xx + phase) / period)) % 2).astype(bool)
    else:
        coord = (yy + xx) / np.sqrt(2)
    return (np.floor((coord + phase) / period) % 2).astype(bool)


def render(label: int, rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """One ``size x size`` RGB image (uint8) of class ``label``."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    radius = rng.uniform(0.25, 0.36) * size
    jitter = size * 0.12
    cy = size / 2 + rng.uniform(-jitter, jitter)
    cx = size / 2 + rng.uniform(-jitter, jitter)
    mask = _mask(CLASSES[label], yy, xx, cy, cx, radius)
    stripes = _texture(int(rng.integers(4)), yy, xx, period=rng.uniform(2.0, 3.5), phase=rng.uniform(0, 4))

    background = rng.uniform(0, 90, size=3)
    light = rng.uniform(160, 255, size=3)
    dark = rng.uniform(40, 110, size=3)
    img = np.broadcast_to(background, (size, size, 3)).copy()
    fill = np.where(stripes[..., None], light, dark)
    img[mask] = fill[mask]
    img += rng.normal(0, 12, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def make_split(per_class: int, seed: int, size: int = 32) -> Tuple[np.ndarray, np.ndarray]:
    """``per_class`` images of every class, interleaved by class; returns (uint8 [N,H,W,3], labels)."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for _ in range(per_class):
        for label in range(len(CLASSES)):
            images.append(render(label, rng, size))
            labels.append(label)
    return np.stack(images), np.array(labels, dtype=np.int64)


def make_corpus(train_per_class: int = 200, test_per_class: int = 50, seed: int = 0, size: int = 32):
    """Disjoint train and test splits drawn from independent seeded streams."""
    train = make_split(train_per_class, seed=seed * 2 + 1, size=size)
    test = make_split(test_per_class, seed=seed * 2 + 2, size=size)
    return train, test


def write_corpus(root, per_class: int = 250, seed: int = 0, size: int = 32) -> Path:
    """Write ``<root>/<class>/<index>.png``."""
    root = Path(root)
    images, labels = make_split(per_class, seed=seed, size=size)
    counters = {name: 0 for name in CLASSES}
    for img, label in zip(images, labels):
        name = CLASSES[label]
        folder = root / name
        folder.mkdir(parents=True, exist_ok=True)
        Image.fromarray(img).save(folder / f"{counters[name]:04d}.png")
        counters[name] += 1
    return root


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m sglanet.synthetic", description=__doc__.splitlines()[0])
    parser.add_argument("root")
    parser.add_argument("--per-class", type=int, default=250)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--size", type=int, default=32)
    args = parser.parse_args(argv)
    write_corpus(args.root, args.per_class, args.seed, args.size)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
