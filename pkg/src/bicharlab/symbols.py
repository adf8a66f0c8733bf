"""Model symbols on a fixed cotangent chart.

Phase space is R^{2n} with coordinates (t, x; tau, xi), x and xi of
dimension n-1.  A :class:`SymbolModel` evaluates a complex principal
symbol and its lower-order term at phase points and supplies derivative
jets, either from closed forms or by central finite differences.
The chart is centered on a unit covector xi0 (|xi0| = 1); no conic
extension is represented.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import SymbolEvaluationError

# Rounding/truncation balance for first derivatives (pinned) and for
# second derivatives (eps**(1/4), see notes in eval_jet).
GRAD_STEP = 1e-5
HESS_STEP = float(np.finfo(float).eps ** 0.25)


@dataclass(frozen=True)
class PhasePoint:
    """A point (t, x; tau, xi) of the chart, x and xi of equal dimension."""

    t: float
    x: np.ndarray
    tau: float
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "xi", np.atleast_1d(np.asarray(self.xi, dtype=float)))
        if self.x.shape != self.xi.shape or self.x.ndim != 1:
            raise ValueError("x and xi must be 1-d arrays of equal length")
        vec = self.as_vector()
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"non-finite phase point {vec}")

    @property
    def n(self) -> int:
        return self.x.size + 1

    def as_vector(self) -> np.ndarray:
        """Pack as (t, x..., tau, xi...) of length 2n."""
        return np.concatenate(([self.t], self.x, [self.tau], self.xi))

    @staticmethod
    def from_vector(vec: np.ndarray) -> "PhasePoint":
        vec = np.asarray(vec, dtype=float)
        n = vec.size // 2
        return PhasePoint(vec[0], vec[1:n], vec[n], vec[n + 1 :])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_vector()))


@dataclass(frozen=True)
class Jet:
    """Value plus derivatives of a symbol at one point.

    ``grad`` follows the (t, x..., tau, xi...) packing; ``hess`` is the
    symmetric matrix of second derivatives in the same ordering.  Both
    are None below the requested order.
    """

    value: complex
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None
    order: int = 0

    def __post_init__(self):
        if self.hess is not None:
            asym = np.abs(self.hess - self.hess.T).max()
            scale = max(1.0, np.abs(self.hess).max())
            if asym > 1e-12 * scale:
                raise ValueError(f"hessian asymmetry {asym:.3e} exceeds 1e-12 relative")


@dataclass
class SymbolModel:
    """Evaluatable principal/subprincipal symbol pair.

    Parameters
    ----------
    n : int
        Half the phase dimension; x and xi live in R^{n-1}.
    principal, subprincipal_term : callables PhasePoint -> complex
        The top-order symbol p and the next term p0.
    quantization_tag : {"weyl", "kohn_nirenberg"}
    prepared : bool
        True when principal(t,x,tau,xi) = tau - r(t,x,xi) exactly.  The
        components below are then populated.
    r, q0_fn, r0_fn : callables (t, x, z) -> complex or None
        Normal-form components as functions of the fiber offset
        z = xi - xi0 (vectorized over numpy arrays).
    analytic_jet : callable (PhasePoint, which) -> (value, grad, hess) or None
        Closed-form derivative supplier used instead of differencing.
    grid_fns : dict
        Lazily built vectorized evaluators for prepared components
        (populated by the catalog; may be empty for ad-hoc models).
    """

    n: int
    principal: Callable[[PhasePoint], complex]
    subprincipal_term: Callable[[PhasePoint], complex] = lambda w: 0.0 + 0.0j
    quantization_tag: str = "weyl"
    prepared: bool = False
    r: Callable | None = None
    q0_fn: Callable | None = None
    r0_fn: Callable | None = None
    analytic_jet: Callable | None = None
    xi0: np.ndarray | None = None
    model_id: str = "custom"
    parameters: dict = field(default_factory=dict)
    grid_fns: dict = field(default_factory=dict)
    adjoint_builder: Callable | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.quantization_tag not in ("weyl", "kohn_nirenberg"):
            raise ValueError(f"unknown quantization tag {self.quantization_tag!r}")
        if self.xi0 is None:
            xi0 = np.zeros(self.n - 1)
            xi0[-1] = 1.0
            self.xi0 = xi0
        else:
            self.xi0 = np.asarray(self.xi0, dtype=float)

    # Models are immutable in practice: nothing below mutates state, so
    # instances are safe to share across threads.

    def gamma_point(self, t: float) -> PhasePoint:
        """The chart's central ray point (t, 0; 0, xi0)."""
        zeros = np.zeros(self.n - 1)
        return PhasePoint(t, zeros, 0.0, self.xi0.copy())

    def adjoint(self) -> "SymbolModel":
        """Model of the adjoint operator: all symbols conjugated."""
        if self.adjoint_builder is not None:
            return self.adjoint_builder()

        def conj_wrap(f):
            if f is None:
                return None
            return lambda *args, f=f: np.conjugate(f(*args))

        adj_jet = None
        if self.analytic_jet is not None:
            base = self.analytic_jet

            def adj_jet(w, which):
                v, g, h = base(w, which)
                return np.conjugate(v), np.conjugate(g), np.conjugate(h)

        return SymbolModel(
            n=self.n,
            principal=conj_wrap(self.principal),
            subprincipal_term=conj_wrap(self.subprincipal_term),
            quantization_tag=self.quantization_tag,
            prepared=self.prepared,
            r=conj_wrap(self.r),
            q0_fn=conj_wrap(self.q0_fn),
            r0_fn=conj_wrap(self.r0_fn),
            analytic_jet=adj_jet,
            xi0=self.xi0.copy(),
            model_id=self.model_id + "_adjoint",
            parameters=dict(self.parameters),
        )


def _eval_checked(f: Callable[[PhasePoint], complex], w: PhasePoint) -> complex:
    val = complex(f(w))
    if not (np.isfinite(val.real) and np.isfinite(val.imag)):
        raise SymbolEvaluationError(
            f"symbol evaluation failure at {w.as_vector()}: got {val}"
        )
    return val


def _shift(w: PhasePoint, i: int, h: float) -> PhasePoint:
    vec = w.as_vector()
    vec[i] += h
    return PhasePoint.from_vector(vec)


def eval_jet(model: SymbolModel, w: PhasePoint, order: int,
             which: str = "principal", step: float | None = None) -> Jet:
    """Evaluate a symbol with derivatives through ``order`` at ``w``.

    Uses the model's closed-form jet when available, otherwise central
    finite differences with step ``GRAD_STEP*(1+|w|)`` for gradients and
    ``HESS_STEP*(1+|w|)`` for second differences.  ``step`` overrides
    both (used by the convergence tests).
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    if which == "principal":
        f = model.principal
    elif which == "subprincipal":
        f = model.subprincipal_term
    else:
        raise ValueError(f"unknown symbol part {which!r}")

    if model.analytic_jet is not None and step is None:
        value, grad, hess = model.analytic_jet(w, which)
        return Jet(
            value=complex(value),
            grad=np.asarray(grad, dtype=complex) if order >= 1 else None,
            hess=np.asarray(hess, dtype=complex) if order >= 2 else None,
            order=order,
        )

    value = _eval_checked(f, w)
    if order == 0:
        return Jet(value=value, order=0)

    dim = 2 * model.n
    scale = 1.0 + w.norm()
    h1 = (step if step is not None else GRAD_STEP) * scale
    grad = np.empty(dim, dtype=complex)
    for i in range(dim):
        fp = _eval_checked(f, _shift(w, i, h1))
        fm = _eval_checked(f, _shift(w, i, -h1))
        grad[i] = (fp - fm) / (2 * h1)
    if order == 1:
        return Jet(value=value, grad=grad, order=1)

    h2 = (step if step is not None else HESS_STEP) * scale
    hess = np.empty((dim, dim), dtype=complex)
    for i in range(dim):
        fp = _eval_checked(f, _shift(w, i, h2))
        fm = _eval_checked(f, _shift(w, i, -h2))
        hess[i, i] = (fp - 2 * value + fm) / h2**2
        for j in range(i + 1, dim):
            fpp = _eval_checked(f, _shift(_shift(w, i, h2), j, h2))
            fpm = _eval_checked(f, _shift(_shift(w, i, h2), j, -h2))
            fmp = _eval_checked(f, _shift(_shift(w, i, -h2), j, h2))
            fmm = _eval_checked(f, _shift(_shift(w, i, -h2), j, -h2))
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4 * h2**2)
    hess = 0.5 * (hess + hess.T)
    return Jet(value=value, grad=grad, hess=hess, order=2)


def hamilton_field(model: SymbolModel, w: PhasePoint,
                   which: str = "principal") -> np.ndarray:
    """Hamilton vector of the symbol at ``w``.

    Returned in (t, x, tau, xi) packing, i.e. components
    (d tau p, d xi p, -d t p, -d x p) read as (t', x', tau', xi').
    """
    jet = eval_jet(model, w, order=1, which=which)
    n = model.n
    g = jet.grad
    return np.concatenate((g[n:], -g[:n]))


def symplectic_product(v: np.ndarray, u: np.ndarray) -> complex:
    """sigma(v, u) = <J v, u> with the standard block form of J."""
    n = v.size // 2
    Jv = np.concatenate((v[n:], -v[:n]))
    return np.dot(Jv, u)


def homogeneous_gradient_norm(model: SymbolModel, w: PhasePoint,
                              which: str = "principal") -> float:
    """sqrt(|d_{t,x} p|^2 / |(tau,xi)|^2 + |d_{tau,xi} p|^2) at ``w``."""
    n = model.n
    fiber = np.concatenate(([w.tau], w.xi))
    fiber_norm = np.linalg.norm(fiber)
    if fiber_norm == 0.0:
        raise SymbolEvaluationError(
            f"homogeneous norm undefined at zero section (point {w.as_vector()})"
        )
    jet = eval_jet(model, w, order=1, which=which)
    g = jet.grad
    base = np.linalg.norm(g[:n])
    fib = np.linalg.norm(g[n:])
    return float(np.sqrt(base**2 / fiber_norm**2 + fib**2))


def subprincipal(model: SymbolModel, w: PhasePoint) -> complex:
    """Invariant lower-order symbol at ``w``.

    Kohn-Nirenberg models subtract (1/2i) * sum_j d_{xi_j} d_{x_j} p with
    the sum over all n coordinate pairs including (t, tau); Weyl models
    return the stored lower-order term unchanged.
    """
    p0 = _eval_checked(model.subprincipal_term, w)
    if model.quantization_tag == "weyl":
        return p0
    jet = eval_jet(model, w, order=2, which="principal")
    n = model.n
    mixed = sum(jet.hess[j, n + j] for j in range(n))
    return p0 - mixed / 2j
