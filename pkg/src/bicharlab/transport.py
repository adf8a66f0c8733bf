"""Amplitude chain: transport coefficients, drift straightening,
leading amplitude, higher corrections, time cutoff.

The leading amplitude solves  D_t phi + (q0(t) + i r0(t,x)) phi = 0
exactly via B(t,x) = int_0^t (q0 + i r0) ds;  corrections absorb the
total defect of the truncated sum evaluated through second-order
fiber-derivative terms of the oscillatory expansion, stepping down by
one rho-order per correction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BicharLabError, CutoffNotApplicable, TransportBlowup
from .grids import Grid, bump as default_bump, fd_derivative, smoothstep
from .symbols import SymbolModel, homogeneous_gradient_norm, subprincipal


def _cumtrapz_from(values: np.ndarray, t: np.ndarray, i0: int) -> np.ndarray:
    """Cumulative trapezoid along axis 0, zeroed at index i0."""
    dt = np.diff(t)
    seg = 0.5 * (values[1:] + values[:-1]) * dt.reshape((-1,) + (1,) * (values.ndim - 1))
    F = np.concatenate((np.zeros_like(values[:1]),
                        np.cumsum(seg, axis=0)), axis=0)
    return F - F[i0]


@dataclass
class TransportCoefficients:
    """q0(t), r0(t,x) and the drift vectors on a fixed grid."""

    grid: Grid
    lam: float
    q0: np.ndarray             # (Nt,) complex
    r0: np.ndarray             # (Nt, Nx...) real
    a_matrix: np.ndarray       # (Nt, d, d); row j is a_j(t)
    hp_on_ray: np.ndarray      # |grad p|(t,0,xi0)
    dropped_q0_size: float = 0.0

    @property
    def t_zero_index(self) -> int:
        return self.grid.t_zero_index()


def compute_coefficients(model: SymbolModel, phase, curve=None,
                         grid: Grid | None = None,
                         lam: float | None = None) -> TransportCoefficients:
    """Transport data of a model along the central ray.

    q0(t) = D_t |grad p| / (2 |grad p|) + p0 / |grad p| at (t,0,xi0)
    with the homogeneous gradient differenced in log; r0 and the drift
    vectors a_j(t) = -d_x d_{xi_j} re s(t,0,0) need the prepared normal
    form.  ``phase`` supplies d_x omega for r0 (may be None for models
    with r = 0 when a grid is given).
    """
    if grid is None:
        grid = phase.grid
    if lam is None:
        lam = phase.lam if phase is not None else 1.0
    tg = grid.t
    Nt = tg.size
    d = grid.x_dim

    q = np.empty(Nt)
    p0v = np.empty(Nt, dtype=complex)
    for i, t in enumerate(tg):
        w = model.gamma_point(float(t))
        q[i] = homogeneous_gradient_norm(model, w)
        p0v[i] = subprincipal(model, w)
    if q.min() < 1e-14:
        raise BicharLabError(
            f"normalization breakdown: |grad p| = {q.min():.3e} on the ray"
        )
    dlog = fd_derivative(np.log(q), grid.dt, axis=0)
    q0 = dlog / 2j + p0v / q

    eps = 0.125
    dropped = float(lam ** (-8 * eps / 3) + lam ** (2 * eps) * np.ptp(grid.x_axes[0]) / 2) \
        if lam > 1 else 0.0

    forms = model.grid_fns.get("forms")
    if forms is not None:
        meshes = grid.x_meshes()
        tcol = tg.reshape((-1,) + (1,) * d)
        X = [np.broadcast_to(m[None], (Nt,) + m.shape) for m in meshes]
        if phase is not None:
            Z = [phase.omega_x[..., j] for j in range(d)]
        else:
            Z = [np.zeros((Nt,) + meshes[0].shape) for _ in range(d)]
        r0 = lam * forms.eval("r", tcol, X, Z, part="im")
        zeros = [np.zeros_like(tg)] * d
        a_mat = np.empty((Nt, d, d))
        for j in range(d):
            for k in range(d):
                a_mat[:, j, k] = -forms.eval("r", tg, zeros, zeros,
                                             dx=(k,), dz=(j,), part="re")
    else:
        r0 = np.zeros((Nt,) + tuple(ax.size for ax in grid.x_axes))
        a_mat = np.zeros((Nt, d, d))

    return TransportCoefficients(grid=grid, lam=lam, q0=q0, r0=r0,
                                 a_matrix=a_mat, hp_on_ray=q,
                                 dropped_q0_size=dropped)


@dataclass
class StraightenMap:
    """Time-dependent linear coordinate change z = Phi(t)^{-1} x.

    Phi solves Phi' = M(t) Phi, Phi(0) = I, where M(t) rows are the
    drift vectors a_j(t); flow labels straighten the first-order drift
    out of the transport operator.
    """

    times: np.ndarray
    Phi: np.ndarray       # (Nt, d, d)
    Phi_inv: np.ndarray   # (Nt, d, d)

    @property
    def is_identity(self) -> bool:
        eye = np.eye(self.Phi.shape[1])
        return bool(np.abs(self.Phi - eye).max() < 1e-14)

    def forward(self, i: int, pts: np.ndarray) -> np.ndarray:
        """Label -> position at time index i (x = Phi z)."""
        return pts @ self.Phi[i].T

    def inverse(self, i: int, pts: np.ndarray) -> np.ndarray:
        return pts @ self.Phi_inv[i].T

    def roundtrip_defect(self, rng=None, samples: int = 50) -> float:
        rng = rng or np.random.default_rng(0)
        d = self.Phi.shape[1]
        worst = 0.0
        for _ in range(samples):
            i = int(rng.integers(0, len(self.times)))
            x = rng.standard_normal(d)
            worst = max(worst, float(np.abs(
                self.forward(i, self.inverse(i, x)) - x).max()))
        return worst


def straighten_drift(coeffs: TransportCoefficients,
                     t_grid: np.ndarray | None = None) -> StraightenMap:
    """Fundamental matrix of z' = M(t) z anchored at t = 0."""
    tg = coeffs.grid.t if t_grid is None else t_grid
    Nt = tg.size
    d = coeffs.a_matrix.shape[1]
    i0 = int(np.argmin(np.abs(tg)))
    M = coeffs.a_matrix

    def m_at(i):
        return M[i]

    Phi = np.empty((Nt, d, d))
    Phi[i0] = np.eye(d)

    def march(indices):
        P = Phi[i0].copy()
        prev = i0
        for i in indices:
            h = tg[i] - tg[prev]
            k1 = m_at(prev) @ P
            k2 = 0.5 * (m_at(prev) + m_at(i)) @ (P + h / 2 * k1)
            k3 = 0.5 * (m_at(prev) + m_at(i)) @ (P + h / 2 * k2)
            k4 = m_at(i) @ (P + h * k3)
            P = P + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            Phi[i] = P
            prev = i
        return P

    march(range(i0 + 1, Nt))
    march(range(i0 - 1, -1, -1))
    Phi_inv = np.linalg.inv(Phi)
    return StraightenMap(times=tg.copy(), Phi=Phi, Phi_inv=Phi_inv)


@dataclass
class AmplitudeChain:
    """phi_0..phi_M on the grid plus the transport exponent B."""

    grid: Grid
    lam: float
    delta: float
    rho: float
    phi: list[np.ndarray]
    B: np.ndarray
    coeffs: TransportCoefficients
    straighten: StraightenMap | None = None
    chi: np.ndarray | None = None            # (Nt,)
    correction_sizes: list[float] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def partial_sum(self, M: int | None = None) -> np.ndarray:
        """sum_k lam^(-k rho) phi_k (chi already folded into phi)."""
        M = len(self.phi) - 1 if M is None else M
        out = np.zeros_like(self.phi[0])
        for k in range(M + 1):
            out += self.lam ** (-k * self.rho) * self.phi[k]
        return out

    def csv_rows(self, k: int):
        d = self.grid.x_dim
        meshes = self.grid.x_meshes()
        arr = self.phi[k]
        for idx in np.ndindex(*arr.shape):
            xs = [meshes[j][idx[1:]] for j in range(d)]
            yield (self.grid.t[idx[0]], *xs, arr[idx].real, arr[idx].imag)


def solve_leading(coeffs: TransportCoefficients, lam: float, delta: float,
                  bump_profile=None,
                  straighten: StraightenMap | None = None,
                  blowup_bound: float = 500.0):
    """Integrate the leading transport equation.

    B(t,x) = int_0^t (q0(s) + i r0(s,x)) ds by trapezoid per x-column
    (in straightened labels when a drift map is given) and
    phi0 = bump(lam^delta x) exp(-i B).  Raises when re(-iB) exceeds
    ``blowup_bound`` (wrong start-point normalization).
    """
    if bump_profile is None:
        bump_profile = default_bump
    if abs(float(bump_profile(np.zeros(1))[0]) - 1.0) > 1e-12:
        raise ValueError("bump profile must equal 1 at 0")
    grid = coeffs.grid
    tg = grid.t
    i0 = grid.t_zero_index()
    d = grid.x_dim
    meshes = grid.x_meshes()
    radius = np.sqrt(sum(m**2 for m in meshes))

    identity = straighten is None or straighten.is_identity
    if identity:
        integrand = coeffs.q0.reshape((-1,) + (1,) * d) + 1j * coeffs.r0
        B = _cumtrapz_from(integrand, tg, i0)
        labels_radius = radius
    else:
        # Work on the label grid: r0 is re-sampled along the flow.
        from scipy.interpolate import RegularGridInterpolator
        pts = np.stack([m.ravel() for m in meshes], axis=1)
        r0_flow = np.empty_like(coeffs.r0)
        for i in range(tg.size):
            moved = straighten.forward(i, pts)
            itp = RegularGridInterpolator(grid.x_axes, coeffs.r0[i],
                                          bounds_error=False, fill_value=0.0)
            r0_flow[i] = itp(moved).reshape(meshes[0].shape)
        integrand = coeffs.q0.reshape((-1,) + (1,) * d) + 1j * r0_flow
        B_labels = _cumtrapz_from(integrand, tg, i0)
        B = B_labels
        labels_radius = radius

    growth = np.max(B.imag)
    if growth > blowup_bound:
        raise TransportBlowup(
            f"transport blow-up: re(-iB) reaches {growth:.1f}; check the "
            "start-point normalization of the endpoint integral"
        )

    phi0_labels = bump_profile(lam ** delta * labels_radius) * np.exp(-1j * B)
    if identity:
        phi0 = phi0_labels
    else:
        from scipy.interpolate import RegularGridInterpolator
        pts = np.stack([m.ravel() for m in meshes], axis=1)
        phi0 = np.empty_like(phi0_labels)
        for i in range(tg.size):
            labels = straighten.inverse(i, pts)
            itp_r = RegularGridInterpolator(grid.x_axes, phi0_labels[i].real,
                                            bounds_error=False, fill_value=0.0)
            itp_i = RegularGridInterpolator(grid.x_axes, phi0_labels[i].imag,
                                            bounds_error=False, fill_value=0.0)
            phi0[i] = (itp_r(labels) + 1j * itp_i(labels)).reshape(meshes[0].shape)
    return B, phi0


def transport_residual(phi: np.ndarray, coeffs: TransportCoefficients) -> float:
    """max interior |D_t phi + (q0 + i r0) phi| / max |phi|."""
    grid = coeffs.grid
    d = grid.x_dim
    dt_phi = fd_derivative(phi, grid.dt, axis=0) / 1j
    res = dt_phi + (coeffs.q0.reshape((-1,) + (1,) * d) + 1j * coeffs.r0) * phi
    return float(np.abs(res[2:-2]).max() / max(np.abs(phi).max(), 1e-300))


def _spectral_dx(arr: np.ndarray, grid: Grid, axis_j: int) -> np.ndarray:
    """D_{x_j} = (1/i) d_{x_j} by FFT along x axis j (compact support)."""
    ax = 1 + axis_j
    N = grid.x_axes[axis_j].size
    k = 2 * np.pi * np.fft.fftfreq(N, d=grid.dx[axis_j])
    shape = [1] * arr.ndim
    shape[ax] = N
    return np.fft.ifft(np.fft.fft(arr, axis=ax) * k.reshape(shape), axis=ax)


def expansion_defect(model: SymbolModel, phase, coeffs: TransportCoefficients,
                     phi: np.ndarray, lam: float) -> np.ndarray:
    """Defect terms of the oscillatory expansion applied to one amplitude.

    Includes the fiber-gradient remainder beyond the linear drift, the
    x-variation of q0, the model's own zero-order term r0_fn, and the
    second-order fiber-derivative terms; the leading transport pieces
    (D_t + q0 + i r0) are excluded (they are solved exactly).
    """
    grid = coeffs.grid
    d = grid.x_dim
    forms = model.grid_fns["forms"]
    meshes = grid.x_meshes()
    Nt = grid.t.size
    tcol = grid.t.reshape((-1,) + (1,) * d)
    X = [np.broadcast_to(m[None], phi.shape) for m in meshes]
    if phase is not None:
        Z = [phase.omega_x[..., j] for j in range(d)]
        omega_x = phase.omega_x
    else:
        Z = [np.zeros(phi.shape) for _ in range(d)]
        omega_x = np.zeros(phi.shape + (d,))

    out = np.zeros(phi.shape, dtype=complex)

    # Fiber gradient beyond the straightened linear drift.
    for j in range(d):
        S_j = forms.eval("r", tcol, X, Z, dz=(j,))
        lin = sum(coeffs.a_matrix[:, j, k].reshape((-1,) + (1,) * d) * meshes[k][None]
                  for k in range(d))
        out += (-S_j - lin) * _spectral_dx(phi, grid, j)

    # Zero-order variation of q0 across the support, and the r0_fn term.
    q0_grid = forms.eval("q0", tcol, X, Z)
    out += (q0_grid - coeffs.q0.reshape((-1,) + (1,) * d)) * phi
    r0fn = forms.eval("r0", tcol, X, Z)
    if np.abs(r0fn).max() > 0:
        out += r0fn * phi

    # Second-order fiber derivatives.
    for j in range(d):
        Djphi = _spectral_dx(phi, grid, j)
        for k in range(d):
            Sjk = forms.eval("r", tcol, X, Z, dz=(j, k))
            if np.abs(Sjk).max() == 0.0:
                continue
            DjDk_phi = _spectral_dx(Djphi, grid, k)
            DjDk_omega = -fd_derivative(omega_x[..., j], grid.dx[k], axis=1 + k)
            out += 0.5 * Sjk * (DjDk_phi / lam + 1j * phi * DjDk_omega)
    return out


def solve_corrections(model: SymbolModel, phase, coeffs: TransportCoefficients,
                      B: np.ndarray, lam: float, M: int,
                      phi0: np.ndarray, rho: float = 1.0 / 24.0,
                      class_warn_factor: float = 10.0):
    """Correction amplitudes phi_1..phi_M by total-defect recursion.

    phi_k absorbs the remaining defect of sum_{j<k} lam^(-j rho) phi_j:
    D_t phi_k + (q0 + i r0) phi_k = -lam^(k rho) * defect, solved with
    phi_k(0, .) = 0 through the exp(-iB) substitution.  Returns the
    amplitude list (phi0 included) and the measured source sizes, one
    per correction, in units of the expansion class; sizes beyond
    ``class_warn_factor`` emit a warning.
    """
    if M > 8:
        raise ValueError("M must be <= 8")
    grid = coeffs.grid
    i0 = grid.t_zero_index()
    d = grid.x_dim
    phis = [phi0]
    sizes: list[float] = []
    if M == 0:
        return phis, sizes

    if np.abs(B.imag).max() > 650.0:
        raise TransportBlowup(
            "exp(iB) would overflow while assembling corrections; reduce "
            "the subprincipal strength or the time box"
        )
    eiB = np.exp(1j * B)
    e_miB = np.exp(-1j * B)

    total = expansion_defect(model, phase, coeffs, phi0, lam)
    for k in range(1, M + 1):
        source = lam ** (k * rho) * total
        size_k = float(np.abs(source * eiB).max())
        sizes.append(size_k)
        if size_k > class_warn_factor:
            warnings.warn(
                f"expansion source for correction {k} has size {size_k:.2e}, "
                f"beyond {class_warn_factor}x its class bound",
                RuntimeWarning,
            )
        psi = _cumtrapz_from(-1j * eiB * source, grid.t, i0)
        phi_k = e_miB * psi
        phis.append(phi_k)
        total = lam ** (-k * rho) * expansion_defect(model, phase, coeffs,
                                                     phi_k, lam)
    return phis, sizes


def apply_time_cutoff(chain: AmplitudeChain, divergence=None, *,
                      target_exponent: float | None = None,
                      margin: float = 5.0, strict: bool = False,
                      fixed_fraction: float = 0.12) -> AmplitudeChain:
    """Multiply the chain by a smooth time window chi with chi(0) = 1.

    The transition bands of chi are placed inside the maximal end
    intervals where the leading amplitude has dropped below
    lam^(-target_exponent) * exp(-margin) of its maximum.  When no such
    intervals exist the divergence premise is too weak at this lam:
    with ``strict`` this raises; otherwise a fixed window at the grid
    margins is applied and the failure is recorded in the diagnostics.
    """
    grid = chain.grid
    tg = grid.t
    Nt = tg.size
    i0 = grid.t_zero_index()
    d = grid.x_dim
    lam = chain.lam
    if target_exponent is None:
        target_exponent = (d + 1) + 2

    amp = np.abs(chain.phi[0]).reshape(Nt, -1).max(axis=1)
    amp_max = amp.max()
    thr = lam ** (-target_exponent) * np.exp(-margin) * amp_max

    dead = amp <= thr
    iL = 0
    while iL < Nt and dead[iL]:
        iL += 1
    iR = Nt
    while iR > 0 and dead[iR - 1]:
        iR -= 1
    min_width = 6
    triggered = iL >= min_width and (Nt - iR) >= min_width and iL < i0 < iR

    if not triggered:
        if strict:
            raise CutoffNotApplicable(
                f"divergence condition too weak at lam = {lam:g}: no end "
                f"interval with amplitudes below {thr:.3e}"
            )
        wL = max(int(fixed_fraction * Nt), min_width)
        aL, bL = tg[2], tg[wL]
        aR, bR = tg[Nt - 1 - wL], tg[Nt - 3]
    else:
        aL = tg[0] + 0.1 * (tg[iL] - tg[0])
        bL = tg[0] + 0.9 * (tg[iL] - tg[0])
        aR = tg[iR - 1] + 0.1 * (tg[-1] - tg[iR - 1])
        bR = tg[iR - 1] + 0.9 * (tg[-1] - tg[iR - 1])

    chi = smoothstep((tg - aL) / (bL - aL)) * smoothstep((bR - tg) / (bR - aR))
    if abs(chi[i0] - 1.0) > 1e-12:
        raise CutoffNotApplicable("cutoff bands would reach t = 0")

    chi_prime = fd_derivative(chi, grid.dt, axis=0)
    band = (chi > 1e-12) & (chi < 1 - 1e-12)
    band_amp = float(amp[band].max() / amp_max) if band.any() else 0.0

    shape = (Nt,) + (1,) * d
    chain.phi = [p * chi.reshape(shape) for p in chain.phi]
    chain.chi = chi
    chain.diagnostics.update({
        "divergence_triggered": bool(triggered),
        "cutoff_threshold": float(thr),
        "cutoff_band_relative_amplitude": band_amp,
        "chi_prime_max": float(np.abs(chi_prime).max()),
        "chi_prime_bound": float(4.0 * lam ** 0.125),
    })
    if not triggered:
        chain.diagnostics["warnings"] = chain.diagnostics.get("warnings", []) + [
            f"divergence condition too weak at lam={lam:g}; fixed window applied"
        ]
    return chain
