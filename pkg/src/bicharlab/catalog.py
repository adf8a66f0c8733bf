"""Model catalog.

Models are described by small config records

    {"model_id": ..., "n": ..., "parameters": {...}, "quantization_tag": ...}

and instantiated into :class:`~bicharlab.symbols.SymbolModel` objects with
closed-form derivative jets.  Parameter expressions are sympy strings in
the variables ``t``, ``x1..x_{n-1}``, ``z1..z_{n-1}`` (fiber offset
z = xi - xi0) and may reference ``lam``, the scale parameter of the run;
such models must be bound to a concrete lam value before use.

Fixed ids:

``pt_trivial``
    p = tau - r(t,x,z) with r configurable (default 0) and lower-order
    term i*g(t).
``grazex``
    p = tau + i*a(t,x)*z1 - (<Ax,x> + 2<Bx,z> + <Cz,z>)/2 with matrix
    parameters A, B, C (A, C symmetric, complex entries allowed).
``sympex_k``
    p = tau * xi1^(k-1), vanishing of order k on {tau = xi1 = 0};
    lower-order term i*g(t).  Requires n >= 3.
``mu_product``
    p = (first factor)*(second factor), two real principal-type linear
    factors, default tau * xi1.  Requires n >= 3.
"""

from __future__ import annotations

import numpy as np
import sympy as sp

from .errors import ConfigError
from .symbols import PhasePoint, SymbolModel

_FUNC_NS = {
    "sin": sp.sin, "cos": sp.cos, "tan": sp.tan, "exp": sp.exp,
    "tanh": sp.tanh, "cosh": sp.cosh, "sinh": sp.sinh, "log": sp.log,
    "sqrt": sp.sqrt, "Abs": sp.Abs, "pi": sp.pi, "I": sp.I,
}

LAM = sp.Symbol("lam", positive=True)


def chart_symbols(n: int):
    """Sympy coordinates (t, x…, tau, xi…) plus offsets z = xi - xi0."""
    t = sp.Symbol("t", real=True)
    tau = sp.Symbol("tau", real=True)
    x = [sp.Symbol(f"x{j+1}", real=True) for j in range(n - 1)]
    xi = [sp.Symbol(f"xi{j+1}", real=True) for j in range(n - 1)]
    z = [sp.Symbol(f"z{j+1}", real=True) for j in range(n - 1)]
    return t, x, tau, xi, z


def _parse(expr, ns) -> sp.Expr:
    if isinstance(expr, (int, float, complex)):
        return sp.sympify(expr)
    try:
        return sp.sympify(expr, locals=ns)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse expression {expr!r}: {exc}") from exc


def _conj(expr: sp.Expr) -> sp.Expr:
    # All catalog symbols are declared real, so re/im split cleanly.
    return sp.expand(sp.re(expr) - sp.I * sp.im(expr))


def _parse_matrix(value, n1: int, ns, name: str, symmetrize: bool) -> sp.Matrix:
    if value is None:
        return sp.zeros(n1, n1)
    if np.isscalar(value) or isinstance(value, str):
        if n1 != 1:
            raise ConfigError(f"{name} must be a {n1}x{n1} matrix for n-1={n1}")
        return sp.Matrix([[_parse(value, ns)]])
    mat = sp.Matrix([[_parse(v, ns) for v in row] for row in value])
    if mat.shape != (n1, n1):
        raise ConfigError(f"{name} has shape {mat.shape}, expected {(n1, n1)}")
    if symmetrize:
        mat = (mat + mat.T) / 2
    return mat


class PreparedForms:
    """Vectorized evaluators for the normal-form components of a model.

    Holds sympy expressions r, q0, r0 in the variables (t, x…, z…) and
    lambdifies requested derivatives on demand.  Evaluation broadcasts
    over numpy arrays.
    """

    def __init__(self, n: int, r_expr, q0_expr, r0_expr):
        self.n = n
        t, x, _, _, z = chart_symbols(n)
        self.t_sym, self.x_syms, self.z_syms = t, x, z
        self.exprs = {"r": sp.expand(r_expr), "q0": sp.expand(q0_expr),
                      "r0": sp.expand(r0_expr)}
        self._cache: dict = {}

    def expr(self, name: str) -> sp.Expr:
        return self.exprs[name]

    def free_lambda(self) -> bool:
        return any(LAM in e.free_symbols for e in self.exprs.values())

    def _fn(self, key):
        if key in self._cache:
            return self._cache[key]
        name, part, dx, dz = key
        e = self.exprs[name]
        for i in dx:
            e = sp.diff(e, self.x_syms[i])
        for j in dz:
            e = sp.diff(e, self.z_syms[j])
        if part == "re":
            e = sp.re(e)
        elif part == "im":
            e = sp.im(e)
        f = sp.lambdify([self.t_sym, *self.x_syms, *self.z_syms], e,
                        modules="numpy")
        self._cache[key] = f
        return f

    def eval(self, name: str, t, X, Z, dx=(), dz=(), part=None):
        """Evaluate d^dx_x d^dz_z [part of name] at broadcast arguments.

        ``X`` and ``Z`` are sequences of n-1 scalars/arrays; ``dx`` and
        ``dz`` are tuples of coordinate indices to differentiate.
        """
        f = self._fn((name, part, tuple(dx), tuple(dz)))
        args = [np.asarray(t), *[np.asarray(v) for v in X],
                *[np.asarray(v) for v in Z]]
        shape = np.broadcast(*args).shape
        out = np.asarray(f(*args))
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        if part is None and not np.iscomplexobj(out):
            out = out.astype(complex)
        return out

    def conjugated(self) -> "PreparedForms":
        return PreparedForms(self.n, _conj(self.exprs["r"]),
                             _conj(self.exprs["q0"]), _conj(self.exprs["r0"]))


def _point_args(n: int, w: PhasePoint):
    return (w.t, *w.x, w.tau, *w.xi)


def _build_symbol_model(n, principal_expr, p0_expr, tag, model_id, parameters,
                        forms: PreparedForms | None, config) -> SymbolModel:
    t, x, tau, xi, _ = chart_symbols(n)
    full_vars = [t, *x, tau, *xi]

    remaining = set().union(*[e.free_symbols for e in (principal_expr, p0_expr)])
    if forms is not None:
        remaining |= set().union(*[e.free_symbols for e in forms.exprs.values()])
    remaining -= set(full_vars) | set(chart_symbols(n)[4])
    if remaining:
        raise ConfigError(
            f"unbound symbols {sorted(map(str, remaining))} in model "
            f"{model_id!r}; pass lam= when instantiating a lam-dependent model"
        )

    fns = {}
    for which, e in (("principal", principal_expr), ("subprincipal", p0_expr)):
        grad = [sp.diff(e, v) for v in full_vars]
        hess = [[sp.diff(g, v) for v in full_vars] for g in grad]
        fns[which] = (
            sp.lambdify(full_vars, e, modules="numpy"),
            sp.lambdify(full_vars, sp.Matrix([grad]), modules="numpy"),
            sp.lambdify(full_vars, sp.Matrix(hess), modules="numpy"),
        )

    def analytic_jet(w: PhasePoint, which: str):
        fv, fg, fh = fns[which]
        args = _point_args(n, w)
        val = complex(fv(*args))
        g = np.asarray(fg(*args), dtype=complex).ravel()
        h = np.asarray(fh(*args), dtype=complex)
        return val, g, h

    def principal(w: PhasePoint) -> complex:
        return complex(fns["principal"][0](*_point_args(n, w)))

    def p0(w: PhasePoint) -> complex:
        return complex(fns["subprincipal"][0](*_point_args(n, w)))

    xi0 = np.zeros(n - 1)
    xi0[-1] = 1.0

    r_cb = q0_cb = r0_cb = None
    if forms is not None:
        def r_cb(tv, X, Z, _f=forms):
            return _f.eval("r", tv, X, Z)

        def q0_cb(tv, X, Z, _f=forms):
            return _f.eval("q0", tv, X, Z)

        def r0_cb(tv, X, Z, _f=forms):
            return _f.eval("r0", tv, X, Z)

    def adjoint_builder():
        adj_cfg = dict(config)
        adj_cfg["_conjugate"] = not config.get("_conjugate", False)
        lamv = config.get("_lam")
        return make_model(adj_cfg, lam=lamv)

    return SymbolModel(
        n=n,
        principal=principal,
        subprincipal_term=p0,
        quantization_tag=tag,
        prepared=forms is not None,
        r=r_cb,
        q0_fn=q0_cb,
        r0_fn=r0_cb,
        analytic_jet=analytic_jet,
        xi0=xi0,
        model_id=model_id,
        parameters=dict(parameters),
        grid_fns={"forms": forms} if forms is not None else {},
        adjoint_builder=adjoint_builder,
    )


def make_model(config: dict, lam: float | None = None) -> SymbolModel:
    """Instantiate a catalog model from a config record.

    ``lam`` substitutes the free scale symbol in parameter expressions;
    required whenever a parameter references ``lam``.
    """
    model_id = config.get("model_id")
    n = int(config.get("n", 2))
    params = dict(config.get("parameters", {}))
    tag = config.get("quantization_tag", "weyl")
    conj = bool(config.get("_conjugate", False))
    if n < 2:
        raise ConfigError("n must be >= 2")

    t, x, tau, xi, z = chart_symbols(n)
    ns = dict(_FUNC_NS)
    ns.update({"t": t, "tau": tau, "lam": LAM})
    ns.update({str(s): s for s in x})
    ns.update({str(s): s for s in xi})
    ns.update({str(s): s for s in z})

    xi0 = [sp.Integer(0)] * (n - 1)
    xi0[-1] = sp.Integer(1)
    z_subs = {zz: xx - x0 for zz, xx, x0 in zip(z, xi, xi0)}

    if model_id == "pt_trivial":
        g = _parse(params.get("g", "t"), ns)
        r_expr = _parse(params.get("r", 0), ns)
        q0_expr = sp.I * g
        r0_expr = _parse(params.get("r0", 0), ns)
        p0_expr = q0_expr + r0_expr
    elif model_id == "grazex":
        n1 = n - 1
        A = _parse_matrix(params.get("A"), n1, ns, "A", symmetrize=True)
        B = _parse_matrix(params.get("B"), n1, ns, "B", symmetrize=False)
        C = _parse_matrix(params.get("C"), n1, ns, "C", symmetrize=True)
        a = _parse(params.get("a", 0), ns)
        xv = sp.Matrix(x)
        zv = sp.Matrix(z)
        quad = ((xv.T * A * xv)[0, 0] + 2 * (xv.T * B * zv)[0, 0]
                + (zv.T * C * zv)[0, 0]) / 2
        r_expr = sp.expand(quad - sp.I * a * z[0])
        g = _parse(params.get("g", 0), ns)
        q0_expr = sp.I * g
        r0_expr = sp.Integer(0)
        p0_expr = q0_expr
    elif model_id == "sympex_k":
        if n < 3:
            raise ConfigError("sympex_k needs n >= 3 (xi1 transverse to xi0)")
        k = int(params.get("k", 2))
        if k < 2:
            raise ConfigError("sympex_k needs k >= 2")
        g = _parse(params.get("g", "t"), ns)
        r_expr = None
        principal_expr = tau * xi[0] ** (k - 1)
        p0_expr = sp.I * g
        q0_expr = r0_expr = sp.Integer(0)
    elif model_id == "mu_product":
        if n < 3:
            raise ConfigError("mu_product needs n >= 3")
        f1 = _parse(params.get("factor1", "tau"), ns)
        f2 = _parse(params.get("factor2", "xi1"), ns)
        g = _parse(params.get("g", 0), ns)
        r_expr = None
        principal_expr = sp.expand(f1 * f2)
        if principal_expr.has(sp.I):
            raise ConfigError("mu_product factors must be real")
        p0_expr = sp.I * g
        q0_expr = r0_expr = sp.Integer(0)
    else:
        raise ConfigError(f"unknown model_id {model_id!r}")

    exprs = {"r": r_expr, "q0": q0_expr, "r0": r0_expr, "p0": p0_expr}
    if model_id in ("pt_trivial", "grazex"):
        exprs["principal"] = None
    else:
        exprs["principal"] = principal_expr

    if lam is not None:
        exprs = {k: (e.subs(LAM, float(lam)) if e is not None else None)
                 for k, e in exprs.items()}
    if conj:
        exprs = {k: (_conj(e) if e is not None else None)
                 for k, e in exprs.items()}

    if exprs["r"] is not None:
        principal_expr = sp.expand(tau - exprs["r"].subs(z_subs))
        forms = PreparedForms(n, exprs["r"], exprs["q0"], exprs["r0"])
        if forms.free_lambda():
            raise ConfigError(
                f"model {model_id!r} has lam-dependent parameters; "
                "instantiate with make_model(config, lam=...)"
            )
        p0_full = sp.expand(exprs["p0"].subs(z_subs))
    else:
        principal_expr = exprs["principal"]
        forms = None
        p0_full = exprs["p0"]

    return _build_symbol_model(n, principal_expr, p0_full, tag,
                               model_id, params, forms,
                               {**config, "_lam": lam})


def default_catalog_configs(n: int = 2) -> list[dict]:
    """One default config per fixed catalog id (for sweep tests)."""
    return [
        {"model_id": "pt_trivial", "n": n, "parameters": {"g": "t"},
         "quantization_tag": "weyl"},
        {"model_id": "grazex", "n": n,
         "parameters": {"A": 0.5, "B": 0.0, "C": 0.5, "a": "0.2"},
         "quantization_tag": "weyl"},
        {"model_id": "sympex_k", "n": max(n, 3),
         "parameters": {"k": 2, "g": "t"}, "quantization_tag": "weyl"},
        {"model_id": "mu_product", "n": max(n, 3), "parameters": {"g": "t"},
         "quantization_tag": "weyl"},
    ]
