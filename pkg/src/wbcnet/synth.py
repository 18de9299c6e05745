"""Synthetic image datasets for pipeline tests and desk-scale training runs.

Each class renders as a colored Gaussian blob with a class-specific stripe
texture over a noisy background, so classes are separable by both color and
spatial frequency while individual samples still vary in position and scale.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, LabeledImage
from .image_io import save_image

DEFAULT_CLASS_NAMES = ["blob_a", "blob_b", "blob_c", "blob_d"]

# Base RGB per class, chosen well apart in color space.
_CLASS_COLORS = np.array([
    [0.85, 0.20, 0.20],
    [0.20, 0.80, 0.25],
    [0.20, 0.30, 0.85],
    [0.80, 0.75, 0.20],
])

# Stripe frequency (cycles across the image) per class.
_CLASS_FREQ = [3.0, 6.0, 9.0, 12.0]


def make_blob_image(label: int, rng: np.random.Generator,
                    hw: tuple[int, int] = (100, 100)) -> np.ndarray:
    """Render one ``[3, H, W]`` float32 image of the given class in [0, 1]."""
    h, w = hw
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    cy = rng.uniform(0.3, 0.7) * h
    cx = rng.uniform(0.3, 0.7) * w
    radius = rng.uniform(0.18, 0.32) * min(h, w)
    blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius ** 2)))

    freq = _CLASS_FREQ[label % len(_CLASS_FREQ)]
    phase = rng.uniform(0, 2 * np.pi)
    angle = rng.uniform(0, np.pi)
    stripes = 0.5 + 0.5 * np.sin(
        2 * np.pi * freq * (yy * np.sin(angle) + xx * np.cos(angle)) / max(h, w) + phase)

    color = _CLASS_COLORS[label % len(_CLASS_COLORS)]
    img = np.empty((3, h, w), dtype=np.float32)
    for ch in range(3):
        img[ch] = 0.15 + color[ch] * blob * (0.55 + 0.45 * stripes)
    img += rng.normal(0.0, 0.05, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0, out=img)


def make_blob_dataset(n_images: int, n_classes: int = 4, hw: tuple[int, int] = (100, 100),
                      seed: int = 0, class_names: list[str] | None = None) -> Dataset:
    """Balanced synthetic dataset of ``n_images`` blob images across ``n_classes``."""
    if class_names is None:
        class_names = [DEFAULT_CLASS_NAMES[i] if i < len(DEFAULT_CLASS_NAMES) else f"blob_{i}"
                       for i in range(n_classes)]
    rng = np.random.default_rng(seed)
    images = [
        LabeledImage(pixels=make_blob_image(i % n_classes, rng, hw),
                     label=i % n_classes,
                     source_path=f"synthetic://{class_names[i % n_classes]}/{i:05d}")
        for i in range(n_images)
    ]
    return Dataset(images=images, class_names=class_names)


def write_blob_tree(root, n_per_class: int, n_classes: int = 4,
                    hw: tuple[int, int] = (100, 100), seed: int = 0) -> None:
    """Materialize a synthetic dataset as ``<root>/<class>/<name>.bmp`` files."""
    from pathlib import Path

    rng = np.random.default_rng(seed)
    for label in range(n_classes):
        name = DEFAULT_CLASS_NAMES[label] if label < len(DEFAULT_CLASS_NAMES) else f"blob_{label}"
        class_dir = Path(root) / name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(n_per_class):
            save_image(class_dir / f"{name}_{i:03d}.bmp", make_blob_image(label, rng, hw))
