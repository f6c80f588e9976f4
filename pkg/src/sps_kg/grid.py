"""Periodic uniform lattices and the finite-difference operators built on them.

Fields are plain ``numpy`` arrays of shape ``grid.shape`` (always three axes,
C order so the third index runs fastest).  Inactive axes have count 1 and are
skipped by every operator, so 1D, 2D and 3D runs share one code path.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Periodic lattice with per-axis point counts and spacings."""

    dim: int
    counts: tuple[int, int, int]
    spacings: tuple[float, float, float]

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        counts = tuple(int(c) for c in self.counts)
        spacings = tuple(float(h) for h in self.spacings)
        if len(counts) != 3 or len(spacings) != 3:
            raise ValueError("counts and spacings need three entries")
        for axis in range(3):
            if axis < self.dim:
                if counts[axis] < 3:
                    raise ValueError(f"axis {axis} needs at least 3 points, got {counts[axis]}")
                if not spacings[axis] > 0.0:
                    raise ValueError(f"axis {axis} spacing must be positive")
            elif counts[axis] != 1:
                raise ValueError(f"inactive axis {axis} must have count 1")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "spacings", tuple(
            h if axis < self.dim else 1.0 for axis, h in enumerate(spacings)))

    @classmethod
    def uniform(cls, n, h, dim=1):
        """Same count ``n`` and spacing ``h`` on each of the first ``dim`` axes."""
        counts = tuple(n if axis < dim else 1 for axis in range(3))
        spacings = tuple(h if axis < dim else 1.0 for axis in range(3))
        return cls(dim, counts, spacings)

    @property
    def shape(self):
        return self.counts

    @property
    def active_axes(self):
        return tuple(range(self.dim))

    @property
    def size(self):
        return self.counts[0] * self.counts[1] * self.counts[2]

    @property
    def cell_volume(self):
        return self.spacings[0] * self.spacings[1] * self.spacings[2]

    @property
    def lengths(self):
        return tuple(n * h for n, h in zip(self.counts, self.spacings))

    def coordinates(self, axis):
        """Node positions ``k * h`` along one axis, k = 0..n-1."""
        return np.arange(self.counts[axis]) * self.spacings[axis]

    def mesh(self):
        """Broadcastable coordinate arrays, one per axis."""
        return np.meshgrid(*(self.coordinates(a) for a in range(3)), indexing="ij")

    def zeros(self):
        return np.zeros(self.shape)

    @cached_property
    def _shift_index(self):
        return {}

    def shift(self, f, s, axis):
        """g[k] = f[k + s] along ``axis`` with periodic wraparound."""
        key = (s, axis)
        idx = self._shift_index.get(key)
        if idx is None:
            n = self.counts[axis]
            idx = self._shift_index[key] = (np.arange(n) + s) % n
        return f.take(idx, axis=axis)

    def rfft(self, f):
        """Real FFT over the active axes (last active axis halved)."""
        if self.dim == 1:
            return np.fft.rfft(f, axis=0)
        return np.fft.rfftn(f, axes=self.active_axes)

    def irfft(self, f_hat):
        if self.dim == 1:
            return np.fft.irfft(f_hat, n=self.counts[0], axis=0)
        axes = self.active_axes
        return np.fft.irfftn(f_hat, s=[self.counts[a] for a in axes], axes=axes)

    @cached_property
    def _thetas(self):
        # lattice phase angle 2*pi*j/n per active axis, laid out like rfft output
        out = []
        last = self.active_axes[-1]
        for axis in self.active_axes:
            n = self.counts[axis]
            j = np.fft.rfftfreq(n) * n if axis == last else np.fft.fftfreq(n) * n
            shape = [1, 1, 1]
            shape[axis] = j.size
            out.append((2.0 * np.pi * j / n).reshape(shape))
        return out

    def laplacian_symbol(self, kind):
        """Fourier symbol of ``lap_wide`` ("wide") or ``lap_std`` ("std") on the ``rfft`` layout."""
        sym = 0.0
        for axis, theta in zip(self.active_axes, self._thetas):
            h = self.spacings[axis]
            if kind == "wide":
                sym = sym - np.sin(theta) ** 2 / h**2
            elif kind == "std":
                sym = sym - 4.0 * np.sin(0.5 * theta) ** 2 / h**2
            else:
                raise ValueError(f"unknown laplacian kind {kind!r}")
        return np.broadcast_to(sym, self.rfft(self.zeros()).shape).copy()


def _check_axis(grid, axis):
    if axis not in grid.active_axes:
        raise ValueError(f"axis {axis} is not active on a {grid.dim}D grid")


def d1(f, grid, axis):
    """Central first difference (f[k+1] - f[k-1]) / (2h) along ``axis``, periodic."""
    _check_axis(grid, axis)
    h = grid.spacings[axis]
    return (grid.shift(f, 1, axis) - grid.shift(f, -1, axis)) / (2.0 * h)


def lap_wide(f, grid):
    """Sum over active axes of d1(d1(f)): (f[k+2] - 2f[k] + f[k-2]) / (4h^2).

    Annihilates the Nyquist mode (-1)^k on even-count axes.
    """
    out = np.zeros_like(f, dtype=float)
    for axis in grid.active_axes:
        h = grid.spacings[axis]
        out += (grid.shift(f, 2, axis) - 2.0 * f + grid.shift(f, -2, axis)) / (4.0 * h * h)
    return out


def lap_std(f, grid):
    """Sum over active axes of the three-point stencil (f[k+1] - 2f[k] + f[k-1]) / h^2."""
    out = np.zeros_like(f, dtype=float)
    for axis in grid.active_axes:
        h = grid.spacings[axis]
        out += (grid.shift(f, 1, axis) - 2.0 * f + grid.shift(f, -1, axis)) / (h * h)
    return out


def laplacian(f, grid, kind):
    if kind == "wide":
        return lap_wide(f, grid)
    if kind == "std":
        return lap_std(f, grid)
    raise ValueError(f"unknown laplacian kind {kind!r}")


def grad_squared(f, grid):
    """Pointwise sum over active axes of d1(f, i)**2."""
    out = np.zeros_like(f, dtype=float)
    for axis in grid.active_axes:
        g = d1(f, grid, axis)
        out += g * g
    return out


def grid_sum(f, grid):
    """Riemann sum of ``f`` over the lattice: sum of all entries times the cell volume."""
    return float(np.sum(f)) * grid.cell_volume


def ipow(x, n):
    """``x**n`` for a non-negative integer ``n`` by repeated squaring."""
    if n < 0:
        raise ValueError("negative exponent")
    result = None
    base = x
    while n:
        if n & 1:
            result = base if result is None else result * base
        n >>= 1
        if n:
            base = base * base
    if result is None:
        return np.ones_like(x, dtype=float) if isinstance(x, np.ndarray) else 1.0
    return result
