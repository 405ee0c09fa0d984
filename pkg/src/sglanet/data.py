"""Class-folder datasets, the per-class split protocol and preprocessing."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".ppm"}
SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.6, 0.1, 0.3)


@dataclass
class DatasetIndex:
    classes: List[str]
    splits: Dict[str, List[Tuple[Path, int]]]
    fractions: Tuple[float, float, float] = DEFAULT_FRACTIONS
    skipped: int = 0
    root: Path = field(default=None)

    def labels(self, split: str) -> np.ndarray:
        return np.array([label for _, label in self.splits[split]], dtype=np.int64)


def split_counts(m: int, fractions=DEFAULT_FRACTIONS) -> Tuple[int, int, int]:
    """Floor allocation of ``m`` items; the remainder goes to the test split."""
    train = math.floor(fractions[0] * m + 1e-9)
    val = math.floor(fractions[1] * m + 1e-9)
    return train, val, m - train - val


def _readable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (OSError, UnidentifiedImageError, SyntaxError):
        return False


def load_dataset(root, seed: int = 0, fractions=DEFAULT_FRACTIONS) -> DatasetIndex:
    """Index ``<root>/<class>/<image>`` and split each class 60/10/30 (by default).

    Files are sorted by name, shuffled with a generator seeded by ``seed``
    (one stream per class, so adding a class never reshuffles another) and
    cut by :func:`split_counts`.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data root {root} is not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise DataError(f"data root {root} has no class directories")
    splits = {name: [] for name in SPLITS}
    skipped = 0
    for label, name in enumerate(classes):
        files = sorted(p for p in (root / name).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        good = [p for p in files if _readable(p)]
        skipped += len(files) - len(good)
        if not good:
            raise DataError(f"class {name} has no images")
        rng = np.random.default_rng([seed, label])
        order = rng.permutation(len(good))
        shuffled = [good[i] for i in order]
        n_train, n_val, _ = split_counts(len(shuffled), fractions)
        cuts = {"train": shuffled[:n_train], "val": shuffled[n_train:n_train + n_val],
                "test": shuffled[n_train + n_val:]}
        for split, items in cuts.items():
            splits[split].extend((p, label) for p in items)
    if skipped:
        log.warning("skipped %d unreadable image files under %s", skipped, root)
    return DatasetIndex(classes, splits, tuple(fractions), skipped, root)


def resize_shape(height: int, width: int, resolution: int) -> Tuple[int, int]:
    """Target ``(height, width)`` that brings the shorter side to ``round(R * 8 / 7)``."""
    short = round(resolution * 8 / 7)
    if height <= width:
        return short, max(short, round(width * short / height))
    return max(short, round(height * short / width)), short


def preprocess(image, resolution: int, mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25)) -> np.ndarray:
    """Decode, resize, centre-crop and standardise one image -> float32 ``[3, R, R]``.

    ``image`` is a path, a PIL image, or a uint8 ``[H, W, 3]`` array.  An
    image that is already ``R x R`` is used as is.
    """
    if isinstance(image, np.ndarray):
        im = Image.fromarray(image)
    elif isinstance(image, Image.Image):
        im = image
    else:
        try:
            with Image.open(image) as f:
                im = f.convert("RGB")
        except (OSError, UnidentifiedImageError, SyntaxError) as exc:
            raise DataError(f"cannot decode image {image}: {exc}") from None
    im = im.convert("RGB")
    if im.size != (resolution, resolution):
        h, w = resize_shape(im.height, im.width, resolution)
        im = im.resize((w, h), Image.BILINEAR)
        top = (h - resolution) // 2
        left = (w - resolution) // 2
        im = im.crop((left, top, left + resolution, top + resolution))
    arr = np.asarray(im, dtype=np.float32) / np.float32(255.0)
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def unstandardize(chw: np.ndarray, mean, std) -> np.ndarray:
    """Invert :func:`preprocess` standardisation -> float ``[H, W, 3]`` in [0, 1]."""
    hwc = chw.transpose(1, 2, 0) * np.asarray(std) + np.asarray(mean)
    return np.clip(hwc, 0.0, 1.0)


def worker_count() -> int:
    raw = os.environ.get("SGLA_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            return max(1, min(int(raw), cap))
        except ValueError:
            log.warning("ignoring non-integer SGLA_THREADS=%r", raw)
    return min(4, cap)


def load_images(items: Sequence, resolution: int, mean, std) -> np.ndarray:
    """Preprocess many images into one ``[N, 3, R, R]`` array; output order follows ``items``."""
    def one(item):
        return preprocess(item, resolution, mean, std)

    if not items:
        return np.zeros((0, 3, resolution, resolution), dtype=np.float32)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return np.stack(list(pool.map(one, items)))


def load_split(index: DatasetIndex, split: str, resolution: int, mean, std) -> Tuple[np.ndarray, np.ndarray]:
    if split not in index.splits:
        raise DataError(f"unknown split {split!r}")
    paths = [p for p, _ in index.splits[split]]
    return load_images(paths, resolution, mean, std), index.labels(split)
