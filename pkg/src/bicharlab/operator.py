"""Application of the prepared operator and the frequency-cone cutoff.

The fft path quantizes  D_t - Op(r) + q0 + r0  on the grid:  D_t by
spectral differentiation in t (the time window guarantees endpoint
decay), r(t,x,D) per time slice as a Fourier multiplier with the x
dependence carried by a low-rank Chebyshev-Lagrange blend, and q0, r0
as multiplication operators.  The degree-1 frequency extension
r_op(t,x,xi) = lam * r(t, x, xi/lam - xi0) pins the chart at scale lam.

The oscillatory path evaluates the conjugated expansion through
second-order fiber derivatives directly on the amplitude chain.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BicharLabError,
    PeriodizationError,
    QuantizationRankError,
)
from .grids import Grid, fd_derivative, smoothstep
from .quasimode import NormReport, Quasimode, sobolev_norms, x_frequencies
from .symbols import SymbolModel
from .transport import expansion_defect


@dataclass
class PreparedOperator:
    model: SymbolModel
    lam: float
    method: str = "fft_quantization"
    expansion_order: int = 2
    sep_nodes: int = 4
    sep_tol: float = 1e-8

    def __post_init__(self):
        if self.method not in ("fft_quantization", "oscillatory_expansion"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "oscillatory_expansion" and self.expansion_order > 4:
            raise ValueError("expansion_order must be <= 4")
        if not self.model.prepared or "forms" not in self.model.grid_fns:
            raise BicharLabError("apply_operator needs a prepared model")


def _chebyshev_nodes(lo: float, hi: float, m: int) -> np.ndarray:
    k = np.arange(m)
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * k / (m - 1))


def _lagrange_cardinals(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cardinal polynomials evaluated on x; shape (m, len(x))."""
    m = nodes.size
    out = np.ones((m, x.size))
    for a in range(m):
        for b in range(m):
            if a != b:
                out[a] *= (x - nodes[b]) / (nodes[a] - nodes[b])
    return out


def _check_t_endpoints(values: np.ndarray):
    vmax = np.abs(values).max()
    if vmax == 0.0:
        return
    edge = max(np.abs(values[0]).max(), np.abs(values[-1]).max())
    if edge > 1e-10 * vmax:
        raise PeriodizationError(
            f"time endpoints carry {edge:.3e} against max {vmax:.3e}; "
            "apply the time cutoff before quantizing"
        )


def _separable_data(op: PreparedOperator, grid: Grid):
    d = grid.x_dim
    nodes_per_axis = [
        _chebyshev_nodes(ax[0], ax[-1], op.sep_nodes) for ax in grid.x_axes
    ]
    cards = [
        _lagrange_cardinals(nodes_per_axis[j], grid.x_axes[j])
        for j in range(d)
    ]
    combos = list(itertools.product(range(op.sep_nodes), repeat=d))
    return nodes_per_axis, cards, combos


def _sep_residual(op: PreparedOperator, grid: Grid, rng=None) -> float:
    """Max interpolation defect of r in x over random probe points."""
    rng = rng or np.random.default_rng(12345)
    forms = op.model.grid_fns["forms"]
    d = grid.x_dim
    nodes_per_axis, _, combos = _separable_data(op, grid)
    n_pts = 64
    xs = [rng.uniform(ax[0], ax[-1], n_pts) for ax in grid.x_axes]
    freqs = x_frequencies(grid)
    zs = [rng.choice(f, n_pts) / op.lam - op.model.xi0[j]
          for j, f in enumerate(freqs)]
    ts = rng.uniform(grid.t[0], grid.t[-1], n_pts)
    exact = forms.eval("r", ts, xs, zs)
    approx = np.zeros(n_pts, dtype=complex)
    for combo in combos:
        node_x = [np.full(n_pts, nodes_per_axis[j][combo[j]])
                  for j in range(d)]
        vals = forms.eval("r", ts, node_x, zs)
        card = np.ones(n_pts)
        for j in range(d):
            cj = _lagrange_cardinals(nodes_per_axis[j], xs[j])
            card = card * cj[combo[j]]
        approx += card * vals
    scale = max(np.abs(exact).max(), 1e-30)
    return float(np.abs(exact - approx).max() / scale)


def apply_operator(op: PreparedOperator, u) -> np.ndarray:
    """Apply D_t - Op(r) + q0 + r0 to a quasimode (or (grid, values))."""
    if isinstance(u, Quasimode):
        grid, values = u.grid, u.values
    else:
        grid, values = u
    if op.method == "fft_quantization":
        return _apply_fft(op, grid, values)
    if not isinstance(u, Quasimode) or u.chain is None:
        raise BicharLabError(
            "oscillatory_expansion needs a quasimode carrying its chain"
        )
    return _apply_oscillatory(op, u)


def _apply_fft(op: PreparedOperator, grid: Grid, values: np.ndarray) -> np.ndarray:
    _check_t_endpoints(values)
    model = op.model
    forms = model.grid_fns["forms"]
    d = grid.x_dim
    Nt = grid.t.size
    lam = op.lam
    x_axes_idx = tuple(range(1, 1 + d))

    tau = 2 * np.pi * np.fft.fftfreq(Nt, d=grid.dt)
    out = np.fft.ifft(
        np.fft.fft(values, axis=0) * tau.reshape((-1,) + (1,) * d), axis=0)

    r_expr = forms.expr("r")
    if r_expr != 0:
        res = _sep_residual(op, grid)
        if res > op.sep_tol:
            raise QuantizationRankError(
                f"quantization rank too low, increase sep_nodes "
                f"(interpolation defect {res:.3e})"
            )
        freqs = x_frequencies(grid)
        Z = []
        for j in range(d):
            shape = [1] * d
            shape[j] = freqs[j].size
            Z.append(freqs[j].reshape(shape) / lam - model.xi0[j])
        tcol = grid.t.reshape((-1,) + (1,) * d)
        nodes_per_axis, cards, combos = _separable_data(op, grid)
        F = np.fft.fftn(values, axes=x_axes_idx)
        r_total = np.zeros_like(values)
        for combo in combos:
            node_x = [np.full_like(tcol, nodes_per_axis[j][combo[j]])
                      for j in range(d)]
            mult = lam * forms.eval("r", tcol, node_x, Z)
            card = np.ones([ax.size for ax in grid.x_axes])
            for j in range(d):
                shape = [1] * d
                shape[j] = grid.x_axes[j].size
                card = card * cards[j][combo[j]].reshape(shape)
            piece = np.fft.ifftn(mult * F, axes=x_axes_idx)
            if model.quantization_tag == "weyl":
                sym = np.fft.ifftn(
                    mult * np.fft.fftn(card[None] * values, axes=x_axes_idx),
                    axes=x_axes_idx)
                r_total += 0.5 * (card[None] * piece + sym)
            else:
                r_total += card[None] * piece
        out = out - r_total

    meshes = grid.x_meshes()
    tcol = grid.t.reshape((-1,) + (1,) * d)
    X = [np.broadcast_to(m[None], values.shape) for m in meshes]
    Z0 = [np.zeros(values.shape) for _ in range(d)]
    q0_grid = forms.eval("q0", tcol, X, Z0)
    out = out + q0_grid * values
    r0_expr = forms.expr("r0")
    if r0_expr != 0:
        out = out + forms.eval("r0", tcol, X, Z0) * values
    return out


def _apply_oscillatory(op: PreparedOperator, u: Quasimode) -> np.ndarray:
    grid = u.grid
    d = grid.x_dim
    lam = u.lam
    model = op.model
    forms = model.grid_fns["forms"]
    chain = u.chain
    phase = u.phase

    phi = chain.partial_sum()
    _check_t_endpoints(phi)
    meshes = grid.x_meshes()
    tcol = grid.t.reshape((-1,) + (1,) * d)
    X = [np.broadcast_to(m[None], phi.shape) for m in meshes]
    if phase is not None:
        Z = [phase.omega_x[..., j] for j in range(d)]
        omega = phase.omega
        omega_t = phase.omega_t
    else:
        Z = [np.zeros(phi.shape) for _ in range(d)]
        omega = np.zeros(phi.shape)
        omega_t = np.zeros(phi.shape)

    # lam (d_t omega - s(t,x,xi0+d_x omega)) phi, complex s.
    s_val = forms.eval("r", tcol, X, Z)
    total = lam * (omega_t - s_val) * phi

    # D_t phi spectrally (time window already applied).
    tau = 2 * np.pi * np.fft.fftfreq(grid.t.size, d=grid.dt)
    total = total + np.fft.ifft(
        np.fft.fft(phi, axis=0) * tau.reshape((-1,) + (1,) * d), axis=0)

    # Transport coefficient q0 evaluated on the shifted fiber.
    total = total + forms.eval("q0", tcol, X, Z) * phi
    if forms.expr("r0") != 0:
        total = total + forms.eval("r0", tcol, X, Z) * phi

    if op.expansion_order >= 1:
        from .transport import _spectral_dx
        for j in range(d):
            Sj = forms.eval("r", tcol, X, Z, dz=(j,))
            total = total - Sj * _spectral_dx(phi, grid, j)
    if op.expansion_order >= 2:
        from .transport import _spectral_dx
        for j in range(d):
            Dj = _spectral_dx(phi, grid, j)
            for k in range(d):
                Sjk = forms.eval("r", tcol, X, Z, dz=(j, k))
                if np.abs(Sjk).max() == 0.0:
                    continue
                DjDk_phi = _spectral_dx(Dj, grid, k)
                if phase is not None:
                    DjDk_om = -fd_derivative(phase.omega_x[..., j],
                                             grid.dx[k], axis=1 + k)
                else:
                    DjDk_om = 0.0
                total = total + 0.5 * Sjk * (DjDk_phi / lam
                                             + 1j * phi * DjDk_om)

    x_dot_xi0 = sum(u.xi0[j] * meshes[j] for j in range(d))
    return np.exp(1j * lam * (x_dot_xi0[None] + omega)) * total


@dataclass
class ConeCutoff:
    """Fourier multiplier vanishing on a cone around the central ray.

    The symbol is 0 where the angle between the (t,x) frequency vector
    and (0, xi0) is below ``angle_scale * lam**(-epsilon)``, equal to 1
    beyond twice that angle, with a smooth monotone transition; an
    optional spatial window multiplies the result.
    """

    xi0: np.ndarray
    lam: float
    epsilon: float = 0.125
    angle_scale: float = 1.5
    spatial_window: object = None

    def half_angle(self) -> float:
        return float(self.angle_scale * self.lam ** (-self.epsilon))

    def symbol(self, grid: Grid) -> np.ndarray:
        d = grid.x_dim
        tau = 2 * np.pi * np.fft.fftfreq(grid.t.size, d=grid.dt)
        freqs = x_frequencies(grid)
        shape = (grid.t.size,) + tuple(f.size for f in freqs)
        tau_m = tau.reshape((-1,) + (1,) * d)
        comps = [np.broadcast_to(
            freqs[j].reshape((1,) * (1 + j) + (-1,) + (1,) * (d - 1 - j)),
            shape) for j in range(d)]
        norm = np.sqrt(tau_m**2 + sum(c**2 for c in comps))
        norm = np.where(norm == 0.0, 1.0, norm)
        along = sum(self.xi0[j] * comps[j] for j in range(d))
        cosang = np.clip(along / norm, -1.0, 1.0)
        angle = np.arccos(cosang)
        th = self.half_angle()
        return smoothstep((angle - th) / th)


def apply_cone_cutoff(cut: ConeCutoff, u) -> np.ndarray:
    """Multiply by the cone symbol in joint (t,x) frequencies."""
    if isinstance(u, Quasimode):
        grid, values = u.grid, u.values
    else:
        grid, values = u
    sym = cut.symbol(grid)
    axes = tuple(range(values.ndim))
    out = np.fft.ifftn(sym * np.fft.fftn(values, axes=axes), axes=axes)
    if cut.spatial_window is not None:
        meshes = grid.x_meshes()
        out = out * cut.spatial_window(*meshes)[None]
    return out


def solvability_ratio(op: PreparedOperator, u: Quasimode, N: int, nu: int,
                      cut: ConeCutoff, apply_prefactor: bool = True,
                      extra_orders=()) -> NormReport:
    """Norm report for the a-priori estimate stress test.

    ratio = ||u||_(-N) / (||Q u||_(nu) + ||u||_(-N-n) + ||A u||_(0)).
    """
    if N < 0:
        raise ValueError("N must be >= 0")
    if nu not in (0, 1, 2):
        raise ValueError("nu must be one of 0, 1, 2")
    n = u.n
    pref = u.prefactor() if apply_prefactor else 1.0
    orders = {-float(N), -float(N + n), 0.0}
    orders.update(float(s) for s in extra_orders)
    norms = sobolev_norms(u.grid, u.values, sorted(orders), prefactor=pref)

    Qu = apply_operator(op, u)
    residual = sobolev_norms(u.grid, Qu, [float(nu)], prefactor=pref,
                             check_support=False)[float(nu)]
    Au = apply_cone_cutoff(cut, u)
    cutoff_norm = sobolev_norms(u.grid, Au, [0.0], prefactor=pref,
                                check_support=False)[0.0]

    denom = residual + norms[-float(N + n)] + cutoff_norm
    if denom == 0.0:
        raise BicharLabError("degenerate report: zero denominator "
                             "(grid too coarse)")
    ratio = norms[-float(N)] / denom
    return NormReport(
        lam=u.lam, norms=norms, residual_nu=residual,
        cutoff_norm=cutoff_norm, ratio=float(ratio), N=N, nu=nu,
        prefactor_applied=apply_prefactor,
        diagnostics={"denominator": float(denom)},
    )
