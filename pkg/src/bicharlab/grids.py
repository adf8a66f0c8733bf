"""Half-open tensor grids, finite differences, bump profiles.

Grids are FFT-natural: axis values run t_lo + k*dt for k = 0..N-1 with
dt = (t_hi - t_lo)/N, so symmetric boxes with even N contain 0 exactly
at index N//2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Rectangular (t, x) grid; x may have one or two axes."""

    t: np.ndarray
    x_axes: tuple[np.ndarray, ...]

    @staticmethod
    def build(t_box, t_points, x_halfwidth, x_points, x_dim=1) -> "Grid":
        t = half_open_axis(t_box[0], t_box[1], t_points)
        axes = tuple(half_open_axis(-x_halfwidth, x_halfwidth, x_points)
                     for _ in range(x_dim))
        return Grid(t=t, x_axes=axes)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(float(ax[1] - ax[0]) for ax in self.x_axes)

    @property
    def x_dim(self) -> int:
        return len(self.x_axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.t.size, *[ax.size for ax in self.x_axes])

    def x_meshes(self):
        """Meshgrid of the x axes (ij indexing), without the t axis."""
        return np.meshgrid(*self.x_axes, indexing="ij")

    def x_zero_index(self) -> tuple[int, ...]:
        idx = []
        for ax in self.x_axes:
            i = int(np.argmin(np.abs(ax)))
            if abs(ax[i]) > 1e-12 * max(1.0, abs(ax[-1])):
                raise ValueError("grid does not contain x = 0")
            idx.append(i)
        return tuple(idx)

    def t_zero_index(self) -> int:
        i = int(np.argmin(np.abs(self.t)))
        if abs(self.t[i]) > 1e-9 * max(1.0, abs(self.t[-1])):
            raise ValueError("grid does not contain t = 0")
        return i


def half_open_axis(lo: float, hi: float, n: int) -> np.ndarray:
    dt = (hi - lo) / n
    return lo + dt * np.arange(n)


def fd_derivative(arr: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """Fourth-order central differences; copies one-sided 2nd-order
    values into the two boundary layers (callers restrict to the
    interior for tight checks)."""
    a = np.moveaxis(arr, axis, 0)
    out = np.empty_like(a, dtype=np.result_type(a, float))
    out[2:-2] = (-a[4:] + 8 * a[3:-1] - 8 * a[1:-3] + a[:-4]) / (12 * h)
    out[0] = (a[1] - a[0]) / h
    out[1] = (a[2] - a[0]) / (2 * h)
    out[-2] = (a[-1] - a[-3]) / (2 * h)
    out[-1] = (a[-1] - a[-2]) / h
    return np.moveaxis(out, 0, axis)


def bump(y: np.ndarray) -> np.ndarray:
    """C-infinity bump: exp(4 - 4/(1-|y|^2)^2) inside |y| < 1, 0 outside.

    ``y`` is the radial coordinate (or |y| for several axes); value 1
    at 0, exact compact support in [-1, 1].  The squared reciprocal in
    the exponent keeps the Fourier tail several orders below the
    classic exp(-1/(1-y^2)) profile at the frequency separations the
    cone cutoff probes.
    """
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    r2 = np.clip(y[inside] ** 2, 0.0, 1.0 - 1e-300)
    out[inside] = np.exp(4.0 - 4.0 / (1.0 - r2) ** 2)
    return out


def smoothstep(u: np.ndarray) -> np.ndarray:
    """C-infinity monotone transition, 0 for u <= 0 and 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    out[u >= 1.0] = 1.0
    mid = (u > 0.0) & (u < 1.0)
    um = u[mid]
    a = np.exp(-1.0 / um)
    b = np.exp(-1.0 / (1.0 - um))
    out[mid] = a / (a + b)
    return out
