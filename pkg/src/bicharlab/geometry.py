"""Semibicharacteristic tracing and curve diagnostics.

Curves are unit-speed integral curves of the Hamilton field of
re(a*p) inside its zero set, traced by fixed-step RK4 with a Newton
re-projection whenever the level-set drift exceeds tolerance.  The
multiplier a is evaluated pointwise and treated as constant in the
directions transverse to the curve, so H_{re(ap)} = re(a H_p) on the
characteristic set.

Diagnostics report measured constants (arclength bounds, derivative
bounds, the small parameter kappa = min |H_p|, wedge and linearization
bounds); thresholds are left to the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BicharLabError,
    CoordinateSingularity,
    DegenerateHamiltonField,
    LeftCharacteristicSet,
)
from .symbols import PhasePoint, SymbolModel, eval_jet, homogeneous_gradient_norm

FIELD_FLOOR = 1e-12
DRIFT_TOL = 1e-10


@dataclass
class Semibicharacteristic:
    """Arclength-sampled curve with per-sample Hamilton data."""

    s: np.ndarray                 # arclength values, shape (N,)
    points: np.ndarray            # phase points, shape (N, 2n)
    H: np.ndarray                 # complex a*H_p per sample, shape (N, 2n)
    hp_norm: np.ndarray           # homogeneous |H_p| per sample
    p_values: np.ndarray          # complex p(w) per sample
    a_values: np.ndarray          # multiplier values per sample
    n: int
    orientation: int = 1
    multiplier_a: object = None

    def __len__(self):
        return self.s.size

    def point(self, i: int) -> PhasePoint:
        return PhasePoint.from_vector(self.points[i])

    @property
    def t_values(self) -> np.ndarray:
        return self.points[:, 0]

    def arc_length(self) -> float:
        return float(self.s[-1] - self.s[0])

    def kappa(self) -> float:
        return float(self.hp_norm.min())

    def unit_speed_deviation(self) -> float:
        """max | |dw|/ds - 1 | between consecutive samples."""
        dw = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        ds = np.diff(self.s)
        return float(np.abs(dw / ds - 1.0).max())

    def csv_rows(self):
        """Rows (s, t, x…, tau, xi…, |H_p|, im_ap, re_ap)."""
        ap = self.a_values * self.p_values
        for i in range(len(self)):
            yield (self.s[i], *self.points[i], self.hp_norm[i],
                   float(ap[i].imag), float(ap[i].real))

    def csv_header(self):
        n1 = self.n - 1
        cols = ["s", "t"] + [f"x{j+1}" for j in range(n1)] + ["tau"]
        cols += [f"xi{j+1}" for j in range(n1)] + ["hp_norm", "im_ap", "re_ap"]
        return cols


@dataclass
class CurveDiagnostics:
    kappa: float
    arc_length: float
    derivative_bounds: list[float] = field(default_factory=list)
    nabla_ratio: float = np.nan
    im_field_bound: float = np.nan
    wedge_bound: float = np.nan
    wedge_derivative_bound: float = np.nan
    linearization_bound: float = np.nan
    implied_constants: dict = field(default_factory=dict)


@dataclass
class LagrangeanPath:
    """Time-indexed symmetric matrix A(t) spanning {(s,y;0,A(t)y)}."""

    times: np.ndarray
    A: np.ndarray  # shape (N, n-1, n-1)

    def at(self, t):
        """Linear interpolation of A at scalar or array times."""
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.times, t) - 1, 0,
                      len(self.times) - 2)
        t0 = self.times[idx]
        t1 = self.times[idx + 1]
        w = np.where(t1 > t0, (t - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0)
        w = w[..., None, None]
        return (1 - w) * self.A[idx] + w * self.A[idx + 1]

    def symmetry_defect(self) -> float:
        return float(np.abs(self.A - np.transpose(self.A, (0, 2, 1))).max())

    def basis(self, t) -> np.ndarray:
        """Spanning vectors of L(t) in (t,x,tau,xi) packing, shape (n, 2n)."""
        At = self.at(t)
        n1 = At.shape[-1]
        n = n1 + 1
        vecs = np.zeros((n, 2 * n))
        vecs[0, 0] = 1.0
        for j in range(n1):
            vecs[j + 1, 1 + j] = 1.0
            vecs[j + 1, n + 1:] = At[:, j]
        return vecs


def _as_multiplier(a):
    if a is None:
        return lambda w: 1.0 + 0.0j
    if callable(a):
        return a
    a_const = complex(a)
    return lambda w: a_const


def _hamilton_data(model: SymbolModel, vec: np.ndarray, a_fn):
    """Gradient-derived data at a packed point: (a, p, grad, F=H_{re ap})."""
    w = PhasePoint.from_vector(vec)
    jet = eval_jet(model, w, order=1)
    a = complex(a_fn(w))
    n = model.n
    grad_ap = a * jet.grad
    ham = np.concatenate((grad_ap[n:], -grad_ap[:n]))
    return a, jet.value, jet.grad, ham.real


def trace_semibicharacteristic(model: SymbolModel, a, w0: PhasePoint,
                               arc_span: float, step: float,
                               require_null: bool = True) -> Semibicharacteristic:
    """Trace the unit-speed flow of H_{re(ap)} from ``w0``.

    ``a`` is the multiplier (callable of PhasePoint, constant, or None
    for 1).  ``require_null`` enforces |p(w0)| <= 1e-8, the case of a
    true semibicharacteristic; sign-scan curves of re(ap) may disable
    it.
    """
    a_fn = _as_multiplier(a)
    n = model.n
    vec = w0.as_vector()

    a0, p0, grad0, F0 = _hamilton_data(model, vec, a_fn)
    if require_null and abs(p0) > 1e-8:
        raise BicharLabError(
            f"seed is not on the characteristic set: |p(w0)| = {abs(p0):.3e}"
        )
    if np.linalg.norm(F0) < FIELD_FLOOR:
        raise DegenerateHamiltonField(
            f"degenerate Hamilton field at seed: |H| = {np.linalg.norm(F0):.3e}"
        )

    def rhs(v):
        _, _, _, F = _hamilton_data(model, v, a_fn)
        nrm = np.linalg.norm(F)
        if nrm < FIELD_FLOOR:
            raise DegenerateHamiltonField(
                f"degenerate Hamilton field at {v}: |H| = {nrm:.3e}"
            )
        return F / nrm

    n_steps = int(round(arc_span / step))
    s_vals = np.empty(n_steps + 1)
    pts = np.empty((n_steps + 1, 2 * n))
    Hs = np.empty((n_steps + 1, 2 * n), dtype=complex)
    hp = np.empty(n_steps + 1)
    pv = np.empty(n_steps + 1, dtype=complex)
    av = np.empty(n_steps + 1, dtype=complex)

    def record(i, s, v):
        a_i, p_i, grad_i, _ = _hamilton_data(model, v, a_fn)
        s_vals[i] = s
        pts[i] = v
        Hs[i] = a_i * np.concatenate((grad_i[n:], -grad_i[:n]))
        hp[i] = homogeneous_gradient_norm(model, PhasePoint.from_vector(v))
        pv[i] = p_i
        av[i] = a_i

    record(0, 0.0, vec)
    level0 = (a0 * p0).real

    for i in range(1, n_steps + 1):
        k1 = rhs(vec)
        k2 = rhs(vec + 0.5 * step * k1)
        k3 = rhs(vec + 0.5 * step * k2)
        k4 = rhs(vec + step * k3)
        vec = vec + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

        a_i, p_i, grad_i, _ = _hamilton_data(model, vec, a_fn)
        drift = (a_i * p_i).real - level0
        scale = 1.0 + np.linalg.norm(grad_i)
        if abs(drift) > DRIFT_TOL * scale:
            grad_level = (a_i * grad_i).real
            denom = np.dot(grad_level, grad_level)
            if denom < FIELD_FLOOR**2:
                raise LeftCharacteristicSet(
                    f"left characteristic set at s = {i * step:.4f}"
                )
            vec = vec - drift * grad_level / denom
            a_i, p_i, grad_i, _ = _hamilton_data(model, vec, a_fn)
            if abs((a_i * p_i).real - level0) > 10 * DRIFT_TOL * scale:
                raise LeftCharacteristicSet(
                    f"left characteristic set at s = {i * step:.4f}"
                )
        record(i, i * step, vec)

    return Semibicharacteristic(
        s=s_vals, points=pts, H=Hs, hp_norm=hp, p_values=pv, a_values=av,
        n=n, orientation=1, multiplier_a=a_fn,
    )


def _normalized_gradient_fields(model, curve):
    """re(a grad p)/q and im(a grad p)/q sampled along the curve."""
    N = len(curve)
    re_v = np.empty((N, 2 * model.n))
    im_v = np.empty((N, 2 * model.n))
    for i in range(N):
        jet = eval_jet(model, curve.point(i), order=1)
        g = curve.a_values[i] * jet.grad
        q = curve.hp_norm[i]
        re_v[i] = g.real / q
        im_v[i] = g.imag / q
    return re_v, im_v


def _homog_norm_rows(model, rows, fiber_norms):
    n = model.n
    base = np.linalg.norm(rows[:, :n], axis=1)
    fib = np.linalg.norm(rows[:, n:], axis=1)
    return np.sqrt(base**2 / fiber_norms**2 + fib**2)


def uniformity_diagnostics(curve: Semibicharacteristic, model: SymbolModel,
                           K: int = 4) -> CurveDiagnostics:
    """Measured constants of the uniform-family conditions along a curve.

    derivative_bounds[k] is the sup of the k-th repeated derivative of
    the normalized gradient field re(a grad p)/|grad p| along the curve
    (k = 0..K, estimated by differencing in arclength).
    """
    if K > 4:
        raise ValueError("K must be <= 4")
    re_v, im_v = _normalized_gradient_fields(model, curve)
    fiber = np.linalg.norm(curve.points[:, model.n:], axis=1)

    bounds = []
    d = re_v
    for k in range(K + 1):
        bounds.append(float(np.linalg.norm(d, axis=1).max()))
        d = np.gradient(d, curve.s, axis=0)

    re_norms = _homog_norm_rows(model, re_v, fiber)
    kappa = curve.kappa()
    diag = CurveDiagnostics(
        kappa=kappa,
        arc_length=curve.arc_length(),
        derivative_bounds=bounds,
        nabla_ratio=float(re_norms.min()),
        im_field_bound=float(_homog_norm_rows(model, im_v, fiber).max()),
    )
    if kappa < 1.0:
        diag.implied_constants["im_field_over_kappa_14_3"] = (
            diag.im_field_bound / kappa ** (14.0 / 3.0))
    return diag


def complex_tangency_diagnostics(curve: Semibicharacteristic,
                                 model: SymbolModel,
                                 L: LagrangeanPath,
                                 stride: int = 1) -> CurveDiagnostics:
    """Wedge-form and linearization bounds along the curve.

    wedge_bound is max ||Im(conj(grad p) outer grad p)|| / |H_p|^2;
    wedge_derivative_bound restricts the outer differential of that
    form to the section L; linearization_bound is max
    ||d H_p restricted to L|| / |H_p|.
    """
    idx = range(0, len(curve), stride)
    n = model.n
    h_dir = 1e-5

    def wedge_matrix(vec):
        jet = eval_jet(model, PhasePoint.from_vector(vec), order=1)
        g = jet.grad
        return np.imag(np.outer(np.conjugate(g), g))

    wedge = 0.0
    wedge_d = 0.0
    lin = 0.0
    for i in idx:
        vec = curve.points[i]
        q = curve.hp_norm[i]
        M = wedge_matrix(vec)
        wedge = max(wedge, np.linalg.norm(M, 2) / q**2)

        basis = L.basis(curve.t_values[i])
        for b in basis:
            bn = b / np.linalg.norm(b)
            Mp = wedge_matrix(vec + h_dir * bn)
            Mm = wedge_matrix(vec - h_dir * bn)
            dM = (Mp - Mm) / (2 * h_dir)
            wedge_d = max(wedge_d, np.linalg.norm(dM, 2) / q**2)

        jet2 = eval_jet(model, curve.point(i), order=2)
        dHp = np.vstack((jet2.hess[n:], -jet2.hess[:n]))
        cols = dHp @ basis.T
        lin = max(lin, np.linalg.norm(cols, 2) / q)

    diag = CurveDiagnostics(
        kappa=curve.kappa(),
        arc_length=curve.arc_length(),
        wedge_bound=float(wedge),
        wedge_derivative_bound=float(wedge_d),
        linearization_bound=float(lin),
    )
    kappa = diag.kappa
    if kappa < 1.0:
        diag.implied_constants["wedge_over_kappa_14_3"] = (
            wedge / kappa ** (14.0 / 3.0))
        diag.implied_constants["wedge_derivative_over_kappa_4_3"] = (
            wedge_d / kappa ** (4.0 / 3.0))
    return diag


def psi_violation_scan(model: SymbolModel, a, curve: Semibicharacteristic):
    """Sign-change events of im(ap) along a bicharacteristic of re(ap).

    Returns a list of (s_minus, s_plus) pairs, one per maximal interval
    over which im(ap) moves from below -tol to above +tol, with
    tol = 1e-10 * max |im(ap)|.  An empty list means no violation on
    this curve.
    """
    a_fn = _as_multiplier(a)
    vals = np.array([complex(a_fn(curve.point(i))) * curve.p_values[i]
                     for i in range(len(curve))]).imag
    scale = np.abs(vals).max()
    if scale == 0.0:
        return []
    tol = 1e-10 * scale
    events = []
    neg_idx = None
    for i, v in enumerate(vals):
        if v < -tol:
            neg_idx = i
        elif v > tol and neg_idx is not None:
            events.append((float(curve.s[neg_idx]), float(curve.s[i])))
            neg_idx = None
    return events


@dataclass
class DivergenceRecord:
    kappa: float
    lam: float
    D: float
    start_s: float
    endpoint_integrals: tuple[float, float]


def subprincipal_divergence(model: SymbolModel, curves,
                            lambda_of_curve=None, *,
                            direct: bool = False,
                            epsilon: float = 0.125) -> list[DivergenceRecord]:
    """Normalized endpoint integrals of im(a p_s)/|H_p| per curve.

    With J(s) the signed integral from the start point s*, the direct
    form takes s* = argmin of the running integral (so J >= 0, zero at
    s*) and returns

        D = min(J(left end), J(right end)) / |log kappa|

    The adjoint-facing default evaluates the same construction on the
    conjugated data (integrand negated, s* = argmax, J <= 0) and
    returns -max(J(left end), J(right end)) / |log kappa|; the two
    forms agree as numbers and differ only in which operator's
    normalization they exhibit.

    ``lambda_of_curve`` supplies an external scale per curve, in which
    case kappa = lam**(-epsilon); otherwise kappa = min |H_p| of the
    curve and lam = kappa**(-1/epsilon).
    """
    from .symbols import subprincipal as subprincipal_value

    records = []
    for ci, curve in enumerate(curves):
        if lambda_of_curve is not None:
            lam = float(lambda_of_curve[ci])
            kappa = lam ** (-epsilon)
        else:
            kappa = curve.kappa()
            if kappa >= 1.0:
                raise BicharLabError(
                    "curve not near double characteristics; divergence test "
                    f"meaningless (kappa = {kappa:.3g})"
                )
            lam = kappa ** (-1.0 / epsilon)

        f = np.array([
            (curve.a_values[i]
             * subprincipal_value(model, curve.point(i))).imag
            / curve.hp_norm[i]
            for i in range(len(curve))
        ])
        if not direct:
            f = -f
        F = np.concatenate(([0.0], np.cumsum(
            0.5 * (f[1:] + f[:-1]) * np.diff(curve.s))))
        i_star = int(np.argmin(F) if direct else np.argmax(F))
        J = F - F[i_star]
        log_k = abs(np.log(kappa))
        if direct:
            D = min(J[0], J[-1]) / log_k
        else:
            D = -max(J[0], J[-1]) / log_k
        records.append(DivergenceRecord(
            kappa=float(kappa), lam=float(lam), D=float(D),
            start_s=float(curve.s[i_star]),
            endpoint_integrals=(float(J[0]), float(J[-1])),
        ))
    return records


def riccati_blocks(model: SymbolModel):
    """Coefficient callables t -> (Rxx, Rxz, Rzz) at (t, 0, xi0).

    Rxx = d2x re r, Rxz[j,k] = dx_j dz_k re r, Rzz = d2z re r, all
    evaluated on the central ray of a prepared model.
    """
    if not model.prepared or "forms" not in model.grid_fns:
        raise BicharLabError("riccati_blocks needs a prepared catalog model")
    forms = model.grid_fns["forms"]
    n1 = model.n - 1
    zeros = [0.0] * n1

    def blocks(t):
        Rxx = np.empty((n1, n1))
        Rxz = np.empty((n1, n1))
        Rzz = np.empty((n1, n1))
        for j in range(n1):
            for k in range(n1):
                Rxx[j, k] = forms.eval("r", t, zeros, zeros,
                                       dx=(j, k), part="re")
                Rxz[j, k] = forms.eval("r", t, zeros, zeros,
                                       dx=(j,), dz=(k,), part="re")
                Rzz[j, k] = forms.eval("r", t, zeros, zeros,
                                       dz=(j, k), part="re")
        return Rxx, Rxz, Rzz

    return blocks


def evolve_grazing_lagrangean(model: SymbolModel, curve, A0,
                              step: float = 1e-3,
                              t_span: tuple[float, float] | None = None,
                              anchor: float | None = None,
                              sing_tol: float = 1e-6) -> LagrangeanPath:
    """Integrate the matrix Riccati evolution of the grazing section.

    A' = Rxx + Rxz A + A Rxz^T + A Rzz A with A(anchor) = A0,
    coefficients evaluated at (t, 0, xi0) of a prepared model whose
    curve is the straightened central ray.  The anchor defaults to the
    left end of the span (or to 0 when the span contains it, matching
    the eikonal's initial time).  Halts with a chart-singularity
    diagnostic when ||A|| exceeds 1/sing_tol.
    """
    n1 = model.n - 1
    A0 = np.asarray(A0, dtype=float).reshape(n1, n1)
    if np.abs(A0 - A0.T).max() > 1e-12 * max(1.0, np.abs(A0).max()):
        raise ValueError("A0 must be symmetric")

    if t_span is None:
        tv = curve.t_values if curve is not None else None
        if tv is None:
            raise ValueError("need a curve or an explicit t_span")
        t_span = (float(tv.min()), float(tv.max()))
    if curve is not None:
        off = np.abs(np.delete(curve.points, 0, axis=1)
                     - np.concatenate((np.zeros(n1), [0.0], model.xi0)))
        if off.max() > 1e-6:
            raise BicharLabError(
                "curve is not the straightened central ray; max transverse "
                f"offset {off.max():.3e}"
            )

    blocks = riccati_blocks(model)

    def rhs(t, A):
        Rxx, Rxz, Rzz = blocks(t)
        return Rxx + Rxz @ A + A @ Rxz.T + A @ Rzz @ A

    t0, t1 = t_span
    if anchor is None:
        anchor = 0.0 if t0 <= 0.0 <= t1 else t0
    if not t0 <= anchor <= t1:
        raise ValueError("anchor must lie inside t_span")

    # march outward from the anchor so A0 sits exactly on a node
    n_lo = int(np.ceil((anchor - t0) / step - 1e-12))
    n_hi = int(np.ceil((t1 - anchor) / step - 1e-12))
    times = anchor + step * np.arange(-n_lo, n_hi + 1)
    ia = n_lo
    n_steps = n_lo + n_hi
    out = np.empty((n_steps + 1, n1, n1))
    bound = 1.0 / sing_tol

    def march(indices):
        A = A0.copy()
        prev = times[ia]
        for i in indices:
            h = times[i] - prev
            k1 = rhs(prev, A)
            k2 = rhs(prev + h / 2, A + h / 2 * k1)
            k3 = rhs(prev + h / 2, A + h / 2 * k2)
            k4 = rhs(prev + h, A + h * k3)
            A = A + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            A = 0.5 * (A + A.T)
            if np.linalg.norm(A, 2) > bound:
                done = out[:i] if h > 0 else out[i + 1:]
                raise CoordinateSingularity(
                    f"Lagrangean chart singularity at t={times[i]:.6f}",
                    partial_times=times[:i] if h > 0 else times[i + 1:],
                    partial_path=done.copy(),
                )
            out[i] = A
            prev = times[i]

    out[ia] = A0
    march(range(ia + 1, n_steps + 1))
    march(range(ia - 1, -1, -1))
    return LagrangeanPath(times=times, A=out)
