"""Quasimode assembly, Sobolev norms, scaling-law fits.

Norms follow the x-frequency convention: per time slice the grid
function is Fourier transformed in x, weighted by (1 + |xi|^2)^s and
integrated over t and xi (the fiber quotient <xi>/<(tau,xi)> is of
order one on the frequency support, so the t-frequency is not
weighted).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BicharLabError, GridMismatchError, PeriodizationError
from .grids import Grid

# Exponent of the amplitude ladder in the assembled sum.  Distinct from
# the curve parameter kappa = min |H_p| despite the historical name
# clash; code refers to it as rho (step) throughout.
RHO_STEP = 1.0 / 24.0


@dataclass
class Quasimode:
    """Oscillatory grid function exp(i lam(<x,xi0> + omega)) * amplitudes."""

    grid: Grid
    values: np.ndarray
    lam: float
    epsilon: float
    delta: float
    rho: float
    xi0: np.ndarray
    M: int
    phase: object = None
    chain: object = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.grid.x_dim + 1

    def prefactor(self) -> float:
        """Normalization lam^((n-1) delta / 2) used in norm studies."""
        return float(self.lam ** ((self.n - 1) * self.delta / 2.0))


def assemble_quasimode(phase, chain, lam: float, xi0=None,
                       epsilon: float = 0.125, delta: float = 5.0 / 12.0,
                       rho: float = RHO_STEP,
                       apply_prefactor: bool = False) -> Quasimode:
    """u = exp(i lam (<x,xi0> + omega)) sum_k lam^(-k rho) phi_k.

    ``phase`` may be None for flat models (omega = 0).  The
    normalization prefactor is only applied on request; norm studies
    apply it through the report assembly.
    """
    grid = chain.grid
    if phase is not None:
        if phase.grid.shape != grid.shape or \
                abs(phase.grid.dt - grid.dt) > 1e-15:
            raise GridMismatchError("incompatible discretizations")
        omega = phase.omega
    else:
        omega = 0.0

    meshes = grid.x_meshes()
    if xi0 is None:
        xi0 = np.zeros(grid.x_dim)
        xi0[-1] = 1.0
    xi0 = np.asarray(xi0, dtype=float)
    x_dot_xi0 = sum(xi0[j] * meshes[j] for j in range(grid.x_dim))

    amp = chain.partial_sum()
    u = np.exp(1j * lam * (x_dot_xi0[None] + omega)) * amp
    if apply_prefactor:
        u = u * lam ** ((grid.x_dim) * delta / 2.0)
    return Quasimode(grid=grid, values=u, lam=lam, epsilon=epsilon,
                     delta=delta, rho=rho, xi0=xi0, M=len(chain.phi) - 1,
                     phase=phase, chain=chain)


def x_frequencies(grid: Grid):
    """Angular frequency axes matching fft along each x axis."""
    return [2 * np.pi * np.fft.fftfreq(ax.size, d=dx)
            for ax, dx in zip(grid.x_axes, grid.dx)]


def _check_support(grid: Grid, values: np.ndarray):
    vmax = np.abs(values).max()
    if vmax == 0.0:
        return
    d = grid.x_dim
    for j in range(d):
        sl_lo = [slice(None)] * (d + 1)
        sl_lo[1 + j] = 0
        sl_hi = list(sl_lo)
        sl_hi[1 + j] = -1
        edge = max(np.abs(values[tuple(sl_lo)]).max(),
                   np.abs(values[tuple(sl_hi)]).max())
        if edge > 1e-12 * vmax:
            raise PeriodizationError(
                f"periodization aliasing risk: x-boundary value {edge:.3e} "
                f"vs max {vmax:.3e}"
            )


def sobolev_norms(grid: Grid, values: np.ndarray, orders,
                  prefactor: float = 1.0,
                  check_support: bool = True) -> dict[float, float]:
    """Sobolev norms of several orders with one transform pass.

    ``check_support`` guards against periodization aliasing and should
    stay on for grid functions with compact support (quasimodes); the
    outputs of Fourier multipliers are box-periodic by construction and
    may disable it.
    """
    if check_support:
        _check_support(grid, values)
    d = grid.x_dim
    axes = tuple(range(1, 1 + d))
    F = np.fft.fftn(values, axes=axes)
    freqs = x_frequencies(grid)
    xi2 = np.zeros([ax.size for ax in grid.x_axes])
    for j, f in enumerate(freqs):
        shape = [1] * d
        shape[j] = f.size
        xi2 = xi2 + f.reshape(shape) ** 2
    cell = np.prod([dx / ax.size for dx, ax in zip(grid.dx, grid.x_axes)])
    power = np.abs(F) ** 2
    out = {}
    for s in orders:
        w = (1.0 + xi2) ** s
        total = float(np.sum(power * w[None]) * cell * grid.dt)
        out[s] = prefactor * np.sqrt(total)
    return out


def sobolev_norm(u: Quasimode, s: float, apply_prefactor: bool = False) -> float:
    """One Sobolev norm of a quasimode (periodizes the grid in x)."""
    pref = u.prefactor() if apply_prefactor else 1.0
    return sobolev_norms(u.grid, u.values, [s], prefactor=pref)[s]


def frequency_peak(u: Quasimode) -> np.ndarray:
    """Location of the maximum of the t-integrated x power spectrum."""
    d = u.grid.x_dim
    axes = tuple(range(1, 1 + d))
    F = np.fft.fftn(u.values, axes=axes)
    power = (np.abs(F) ** 2).sum(axis=0)
    idx = np.unravel_index(int(np.argmax(power)), power.shape)
    freqs = x_frequencies(u.grid)
    return np.array([freqs[j][idx[j]] for j in range(d)])


@dataclass
class NormReport:
    lam: float
    norms: dict
    residual_nu: float
    cutoff_norm: float
    ratio: float
    N: int = 0
    nu: int = 0
    prefactor_applied: bool = True
    diagnostics: dict = field(default_factory=dict)


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    window: tuple[float, float] | None
    within: bool | None
    points: int


def norm_scaling_fit(reports, s: float, *, N: int | None = None,
                     n: int | None = None, delta: float = 5.0 / 12.0,
                     tol: float = 0.1, values=None) -> SlopeFit:
    """Least-squares slope of log norm(s) against log lam.

    ``reports`` is a list of NormReport over a geometric ladder (or a
    list of lams when ``values`` carries the norms directly).  With N
    and n given, the predicted window

        [-(N + n/2)(eps + rho) + (n-1) delta/2 - tol, -N (eps + rho) + tol]

    is attached, with eps + rho = 1 in the scale split of the assembled
    phase (eps = 3/8, rho = 5/8).
    """
    if values is not None:
        lams = np.asarray(reports, dtype=float)
        vals = np.asarray(values, dtype=float)
    else:
        lams = np.array([r.lam for r in reports], dtype=float)
        vals = np.array([r.norms[s] for r in reports], dtype=float)
    if lams.size < 4:
        raise BicharLabError("insufficient ladder: need at least 4 points")
    ratios = lams[1:] / lams[:-1]
    if np.ptp(ratios) > 1e-9 * ratios[0]:
        raise BicharLabError("ladder must be geometric")
    if np.any(vals <= 0):
        raise BicharLabError("norms must be positive for a log fit")
    slope, intercept = np.polyfit(np.log(lams), np.log(vals), 1)
    window = None
    within = None
    if N is not None and n is not None:
        lo = -(N + n / 2.0) + (n - 1) * delta / 2.0 - tol
        hi = -float(N) + tol
        window = (lo, hi)
        within = bool(lo <= slope <= hi)
    return SlopeFit(slope=float(slope), intercept=float(intercept),
                    window=window, within=within, points=int(lams.size))
