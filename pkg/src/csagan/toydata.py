"""Procedural toy dataset: outline drawings paired with filled colored
shapes.  The outline probability map carries a strong main contour plus a
weaker inner detail stroke, so raising the threshold drops detail the way a
sparser drawing would."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SHAPES = ("circle", "square", "triangle")
COLORS = {
    "circle": (0.85, 0.25, 0.25),
    "square": (0.25, 0.75, 0.30),
    "triangle": (0.30, 0.35, 0.85),
}
MAIN_STRENGTH = 0.9
DETAIL_STRENGTH = 0.4


@dataclass
class ToySample:
    prob: np.ndarray    # H x W edge probabilities in [0,1]
    photo: np.ndarray   # 3 x H x W in [-1, 1]
    label: int


def _fill_mask(shape, cy, cx, radius, side):
    yy, xx = np.mgrid[0:side, 0:side].astype(float)
    if shape == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    if shape == "square":
        return (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)
    # upright triangle
    inside = (yy >= cy - radius) & (yy <= cy + radius)
    frac = np.clip((yy - (cy - radius)) / (2 * radius), 0, 1)
    return inside & (np.abs(xx - cx) <= frac * radius)


def _outline(mask):
    p = np.pad(mask, 1, constant_values=False)
    interior = mask.copy()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            interior &= p[1 + di:1 + di + mask.shape[0], 1 + dj:1 + dj + mask.shape[1]]
    return mask & ~interior


def make_sample(rng: np.random.Generator, side: int = 32) -> ToySample:
    label = int(rng.integers(len(SHAPES)))
    shape = SHAPES[label]
    radius = float(rng.uniform(side * 0.22, side * 0.34))
    cy = float(rng.uniform(radius + 2, side - radius - 2))
    cx = float(rng.uniform(radius + 2, side - radius - 2))
    mask = _fill_mask(shape, cy, cx, radius, side)

    prob = np.zeros((side, side))
    prob[_outline(mask)] = MAIN_STRENGTH
    # inner detail: a smaller concentric outline, visible only at low tau
    inner = _fill_mask(shape, cy, cx, radius * 0.5, side)
    prob[_outline(inner)] = DETAIL_STRENGTH

    base = np.array(COLORS[shape]) * float(rng.uniform(0.8, 1.1))
    photo = np.full((3, side, side), 0.15)
    for c in range(3):
        photo[c][mask] = np.clip(base[c], 0, 1)
        photo[c][inner] = np.clip(base[c] * 0.6, 0, 1)
    return ToySample(prob=prob, photo=photo * 2.0 - 1.0, label=label)


def make_toy_dataset(n: int, side: int = 32, seed: int = 0) -> list[ToySample]:
    rng = np.random.default_rng(seed)
    return [make_sample(rng, side) for _ in range(n)]
