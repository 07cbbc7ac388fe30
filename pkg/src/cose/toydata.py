"""Synthetic three-class shape dataset: filled circles, squares and
triangles at random positions, scales and colors over textured noise
backgrounds.  Deterministic given the seed; stratified 80/20 split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cose import imageops

CLASS_NAMES = ("circle", "square", "triangle")


@dataclass
class ToyDataset:
    images: np.ndarray  # (N, side, side, 3) float32 in [0, 1]
    labels: np.ndarray  # (N,) int
    train_idx: np.ndarray
    test_idx: np.ndarray
    class_count: int = 3

    @property
    def mean_color(self) -> np.ndarray:
        return self.images.reshape(-1, 3).mean(axis=0)

    def train(self):
        return self.images[self.train_idx], self.labels[self.train_idx]

    def test(self):
        return self.images[self.test_idx], self.labels[self.test_idx]


def _shape_mask(label: int, side: int, cy: float, cx: float, r: float, supersample: int = 2) -> np.ndarray:
    """Coverage mask in [0, 1], rendered at supersample resolution."""
    ss = supersample
    n = side * ss
    yy, xx = np.mgrid[0:n, 0:n]
    y = (yy + 0.5) / ss - 0.5
    x = (xx + 0.5) / ss - 0.5
    dy, dx = y - cy, x - cx

    if label == 0:  # circle
        hard = dy * dy + dx * dx <= r * r
    elif label == 1:  # square, side 1.6 r
        hard = (np.abs(dy) <= 0.8 * r) & (np.abs(dx) <= 0.8 * r)
    else:  # upward triangle with circumradius r
        ay, ax = -r, 0.0
        by, bx = 0.5 * r, -0.8660254 * r
        cy2, cx2 = 0.5 * r, 0.8660254 * r

        def half_plane(py, px, qy, qx):
            return (qx - px) * (dy - py) - (qy - py) * (dx - px)

        d1 = half_plane(ay, ax, by, bx)
        d2 = half_plane(by, bx, cy2, cx2)
        d3 = half_plane(cy2, cx2, ay, ax)
        hard = ((d1 <= 0) & (d2 <= 0) & (d3 <= 0)) | ((d1 >= 0) & (d2 >= 0) & (d3 >= 0))

    m = hard.astype(np.float64).reshape(side, ss, side, ss).mean(axis=(1, 3))
    return m


def _render_image(rng: np.random.Generator, label: int, side: int) -> np.ndarray:
    bg_base = rng.uniform(0.15, 0.85, size=3)
    noise = rng.uniform(-1.0, 1.0, size=(side, side, 3))
    texture = imageops.gaussian_blur(noise, 1.2)
    bg = np.clip(bg_base + 0.10 * texture, 0.0, 1.0)

    color = rng.uniform(0.0, 1.0, size=3)
    while np.linalg.norm(color - bg_base) < 0.6:
        color = rng.uniform(0.0, 1.0, size=3)

    r = rng.uniform(6.0, 10.0)
    margin = r + 2.0
    cy = rng.uniform(margin, side - 1 - margin)
    cx = rng.uniform(margin, side - 1 - margin)
    mask = _shape_mask(label, side, cy, cx, r)[..., None]
    img = bg * (1.0 - mask) + color * mask
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_toy_dataset(seed: int, n_per_class: int, side: int = 32, train_fraction: float = 0.8) -> ToyDataset:
    """Three balanced shape classes, ``n_per_class`` images each.

    The same seed reproduces the dataset bit for bit.  Train and test are
    disjoint and every class appears in both splits.
    """
    if n_per_class < 2:
        raise ValueError("n_per_class must be >= 2 so both splits see every class")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label in range(len(CLASS_NAMES)):
        for _ in range(n_per_class):
            images.append(_render_image(rng, label, side))
            labels.append(label)
    images = np.stack(images)
    labels = np.asarray(labels, dtype=np.int64)

    n_train = max(1, int(round(train_fraction * n_per_class)))
    if n_train >= n_per_class:
        n_train = n_per_class - 1
    train_idx, test_idx = [], []
    for label in range(len(CLASS_NAMES)):
        base = label * n_per_class
        train_idx.extend(range(base, base + n_train))
        test_idx.extend(range(base + n_train, base + n_per_class))
    return ToyDataset(
        images=images,
        labels=labels,
        train_idx=np.asarray(train_idx, dtype=np.int64),
        test_idx=np.asarray(test_idx, dtype=np.int64),
        class_count=len(CLASS_NAMES),
    )
