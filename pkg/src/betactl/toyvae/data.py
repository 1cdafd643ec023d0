"""Synthetic binary images of one square, one image per factor combination."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

FACTOR_NAMES = ("pos_x", "pos_y", "scale")


@dataclass(frozen=True)
class FactorDataset:
    images: np.ndarray   # (N, H, W) of {0, 1}
    factors: np.ndarray  # (N, 3) integer grid indices
    grid: tuple

    @property
    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self.images), -1).astype(float)

    def __len__(self):
        return len(self.images)


def square_sides(ns: int, min_side: int = 2, step: int = 1) -> list:
    return [min_side + step * k for k in range(ns)]


def _offsets(n: int, span: int) -> list:
    # n distinct integer offsets spread evenly over [0, span]
    if n == 1:
        return [span // 2]
    return [int(round(i * span / (n - 1))) for i in range(n)]


def make_factor_dataset(nx: int = 8, ny: int = 8, ns: int = 3, image_size: int = 16,
                        min_side: int = 2, side_step: int = 2) -> FactorDataset:
    """Render a white axis-aligned square on black for every (x, y, scale) index.

    Scale index ``k`` draws a square of side ``min_side + side_step * k``; the
    x/y indices place its top-left corner on ``nx`` / ``ny`` evenly spread,
    distinct offsets such that the largest square still fits.
    """
    if min(nx, ny, ns) < 1:
        raise ValueError("factor cardinalities must be positive")
    sides = square_sides(ns, min_side, side_step)
    span = image_size - max(sides)
    if min_side < 1 or span < 0 or span + 1 < max(nx, ny):
        raise ValueError(
            f"geometry overflow: {nx}x{ny} positions of squares up to side {max(sides)} "
            f"do not fit distinctly in {image_size}x{image_size}"
        )
    xs, ys = _offsets(nx, span), _offsets(ny, span)
    combos = list(itertools.product(range(nx), range(ny), range(ns)))
    images = np.zeros((len(combos), image_size, image_size), dtype=np.uint8)
    for i, (ix, iy, k) in enumerate(combos):
        s = sides[k]
        images[i, ys[iy]:ys[iy] + s, xs[ix]:xs[ix] + s] = 1
    return FactorDataset(images, np.array(combos, dtype=np.int64), (nx, ny, ns))
