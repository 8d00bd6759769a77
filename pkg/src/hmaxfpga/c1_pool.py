"""C1: cross-scale maximum within a band, then 2D x 2D max pooling at stride D.

The pooling is done the way the hardware streams it: maxima over the
non-overlapping D x D cell grid first, then the maximum of every 2 x 2
group of adjacent cells. This equals a direct 2D x 2D window maximum
sampled every D pixels, with trailing partial cells dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .s1_gabor import ORIENTATIONS, S1Maps, diameter, subsample_period


@dataclass(frozen=True, eq=False)
class C1Maps:
    b: int
    maps: np.ndarray  # (4, h, w)
    mode: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1], self.maps.shape[2]

    @property
    def empty(self) -> bool:
        return self.maps.shape[1] == 0 or self.maps.shape[2] == 0

    def orientation(self, theta: int) -> np.ndarray:
        return self.maps[ORIENTATIONS.index(theta)]


def c1_side(s1_side: int, delta: int) -> int:
    return max(0, s1_side // delta - 1)


def band_c1_side(image_side: int, b: int) -> int:
    """C1 grid side of band ``b`` for a square image, by the exact pooling count."""
    return c1_side(max(0, image_side - diameter(2 * b) + 1), subsample_period(b))


def cross_scale_max(small: S1Maps, large: S1Maps) -> S1Maps:
    """Elementwise max of a band's two scales on the larger filter's grid.

    Both filters are centred on the same pixel lattice, so the smaller
    filter's map is cropped symmetrically by one pixel on every side.
    """
    sh, lh = small.shape, large.shape
    if sh[0] - lh[0] != 2 or sh[1] - lh[1] != 2:
        raise InvalidArgumentError(f"expected the smaller-filter grid to be 2 larger per axis, got {sh} vs {lh}")
    if small.mode != large.mode:
        raise InvalidArgumentError("cannot mix fixed and float maps")
    cropped = small.maps[:, 1:-1, 1:-1]
    out = np.maximum(cropped, large.maps)
    out.setflags(write=False)
    return S1Maps(large.j, out, large.mode)


def pool_grid(grid: np.ndarray, delta: int) -> np.ndarray:
    """Two-stage max pooling of a (..., h, w) array."""
    h, w = grid.shape[-2:]
    nh, nw = h // delta, w // delta
    lead = grid.shape[:-2]
    if nh < 2 or nw < 2:
        return np.zeros(lead + (max(0, nh - 1), max(0, nw - 1)), dtype=grid.dtype)
    cells = grid[..., :nh * delta, :nw * delta].reshape(lead + (nh, delta, nw, delta)).max(axis=(-3, -1))
    return np.maximum(
        np.maximum(cells[..., :-1, :-1], cells[..., :-1, 1:]),
        np.maximum(cells[..., 1:, :-1], cells[..., 1:, 1:]),
    )


def c1_pool(band_max: S1Maps, delta: int, b: int | None = None) -> C1Maps:
    if delta < 1:
        raise InvalidArgumentError(f"subsample period must be positive, got {delta}")
    if b is None:
        b = (band_max.j + 1) // 2
    out = pool_grid(band_max.maps, delta)
    out.setflags(write=False)
    return C1Maps(b, out, band_max.mode)
