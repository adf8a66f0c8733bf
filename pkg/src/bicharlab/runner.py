"""Experiment orchestration: config ingestion, ladder runs, reports.

A run walks the scale ladder; per rung it traces the seed curve,
collects curve diagnostics, evolves the grazing section, solves the
eikonal and transport stages, assembles the quasimode and writes the
norm report.  Results land in norms.csv, curves.csv and report.json
under the output directory; the exit code is 0 when all enabled checks
pass, 1 on check failure, 2 on any aborted rung or invalid config.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from . import catalog, eikonal, geometry, operator, quasimode, transport
from .errors import BicharLabError, ConfigError
from .grids import Grid
from .symbols import PhasePoint

STAGES = ("trace", "diagnostics", "riccati", "eikonal", "transport",
          "quasimode", "norms")

_DEFAULTS = {
    "epsilon": 1.0 / 8.0,
    "delta": 5.0 / 12.0,
    "rho": 1.0 / 24.0,
    "M": 0,
    "N": 0,
    "nu": 0,
    "grid": {"t_points": 1024, "x_points": 2048, "t_box": [-1.2, 1.2],
             "box_support_factor": 6.0},
    "curve": {"seed": None, "arc_span": 2.0, "step": 1e-3,
              "multiplier": "1", "require_null": True, "K": 3},
    "toggles": {"method": "fft_quantization", "prefactor": True,
                "divergence_test": True, "adjoint": True,
                "write_curves": True, "write_phase": False},
    "cutoff": {"target_exponent": None, "margin": 5.0, "strict": False},
    "cone": {"angle_scale": 1.5},
    "tolerances": {"eikonal_residual_rtol": 1e-6, "sep_tol": 1e-8},
    "operator": {"sep_nodes": 4, "expansion_order": 2},
    "checks": [],
}


def _merge(defaults, given):
    out = {}
    for k, v in defaults.items():
        if isinstance(v, dict):
            out[k] = _merge(v, (given or {}).get(k, {}))
        else:
            out[k] = (given or {}).get(k, v)
    for k, v in (given or {}).items():
        if k not in out:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    raw: dict

    @staticmethod
    def load(path: str) -> "ExperimentConfig":
        with open(path) as fh:
            data = json.load(fh)
        return ExperimentConfig.from_dict(data)

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        cfg = _merge(_DEFAULTS, data)
        if "model" not in cfg:
            raise ConfigError("config needs a 'model' section")
        ladder = cfg.get("ladder")
        if not isinstance(ladder, list) or len(ladder) < 2:
            raise ConfigError("insufficient ladder: need at least 2 rungs")
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError("ladder must be strictly increasing")
        for key in ("t_points", "x_points"):
            npts = cfg["grid"][key]
            if npts < 8 or (npts & (npts - 1)) != 0:
                raise ConfigError(f"grid.{key} must be a power of two, >= 8")
        if cfg["N"] < 0:
            raise ConfigError("N must be >= 0")
        if cfg["nu"] not in (0, 1, 2):
            raise ConfigError("nu must be one of 0, 1, 2")
        if cfg["M"] > 8 or cfg["M"] < 0:
            raise ConfigError("M must be between 0 and 8")
        if cfg["toggles"]["method"] not in ("fft_quantization",
                                            "oscillatory_expansion"):
            raise ConfigError("unknown operator method")
        return ExperimentConfig(raw=cfg)

    def __getitem__(self, key):
        return self.raw[key]


def _parse_multiplier(expr, n):
    if expr in (None, "1", 1, 1.0):
        return None
    t, x, tau, xi, _ = catalog.chart_symbols(n)
    ns = {"t": t, "tau": tau, "I": sp.I}
    ns.update({str(s): s for s in x})
    ns.update({str(s): s for s in xi})
    e = sp.sympify(expr, locals=ns)
    f = sp.lambdify([t, *x, tau, *xi], e, modules="numpy")

    def mult(w: PhasePoint) -> complex:
        return complex(f(w.t, *w.x, w.tau, *w.xi))

    return mult


def _seed_point(cfg_model, cfg_curve) -> PhasePoint:
    n = int(cfg_model.get("n", 2))
    seed = cfg_curve.get("seed")
    if seed is None:
        x = [0.0] * (n - 1)
        xi = [0.0] * (n - 1)
        xi[-1] = 1.0
        t0 = -0.5 * float(cfg_curve["arc_span"])
        return PhasePoint(t0, x, 0.0, xi)
    return PhasePoint(float(seed["t"]), seed["x"], float(seed["tau"]),
                      seed["xi"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _fmt(x) -> str:
    return "%.17g" % float(x)


class RungResult:
    def __init__(self, lam):
        self.lam = lam
        self.status = "ok"
        self.stage_reached = None
        self.error = None
        self.diagnostics = {}
        self.warnings = []
        self.report = None
        self.curve = None
        self.phase = None

    def record_error(self, stage, exc):
        self.status = "error"
        self.error = {"stage": stage, "type": type(exc).__name__,
                      "message": str(exc)}


def run_rung(cfg: ExperimentConfig, lam: float,
             last_stage: str = "norms") -> RungResult:
    """Execute the pipeline for one ladder rung."""
    res = RungResult(lam)
    raw = cfg.raw
    eps, delta, rho = raw["epsilon"], raw["delta"], raw["rho"]
    stop = STAGES.index(last_stage)

    def reached(stage):
        res.stage_reached = stage
        return STAGES.index(stage) <= stop

    try:
        model_p = catalog.make_model(raw["model"], lam=lam)
    except Exception as exc:  # config-level failure
        res.record_error("model", exc)
        return res

    n = model_p.n
    mult = _parse_multiplier(raw["curve"]["multiplier"], n)

    # trace
    if not reached("trace"):
        return res
    try:
        curve = geometry.trace_semibicharacteristic(
            model_p, mult, _seed_point(raw["model"], raw["curve"]),
            float(raw["curve"]["arc_span"]), float(raw["curve"]["step"]),
            require_null=bool(raw["curve"]["require_null"]))
        res.curve = curve
        res.diagnostics["unit_speed_deviation"] = curve.unit_speed_deviation()
    except BicharLabError as exc:
        res.record_error("trace", exc)
        return res

    # diagnostics
    if not reached("diagnostics"):
        return res
    try:
        diag = geometry.uniformity_diagnostics(curve, model_p,
                                               K=int(raw["curve"]["K"]))
        res.diagnostics["uniformity"] = {
            "kappa": diag.kappa, "arc_length": diag.arc_length,
            "derivative_bounds": diag.derivative_bounds,
            "nabla_ratio": diag.nabla_ratio,
            "im_field_bound": diag.im_field_bound,
        }
        events = geometry.psi_violation_scan(model_p, mult, curve)
        res.diagnostics["psi_violation_events"] = events
        if raw["toggles"]["divergence_test"]:
            rec = geometry.subprincipal_divergence(
                model_p, [curve], lambda_of_curve=[lam], epsilon=eps)[0]
            res.diagnostics["divergence"] = {
                "kappa": rec.kappa, "D": rec.D, "start_s": rec.start_s,
                "endpoint_integrals": rec.endpoint_integrals,
            }
    except BicharLabError as exc:
        res.record_error("diagnostics", exc)
        return res

    model_w = model_p.adjoint() if raw["toggles"]["adjoint"] else model_p

    grid = Grid.build(tuple(raw["grid"]["t_box"]), raw["grid"]["t_points"],
                      raw["grid"]["box_support_factor"] * lam ** (-delta),
                      raw["grid"]["x_points"], x_dim=n - 1)

    # riccati
    if not reached("riccati"):
        return res
    ric_path = None
    if model_w.prepared:
        try:
            ric_path = geometry.evolve_grazing_lagrangean(
                model_w, None, np.zeros((n - 1, n - 1)),
                step=float(raw["curve"]["step"]),
                t_span=(grid.t[0], grid.t[-1]))
            res.diagnostics["riccati_max_norm"] = float(
                np.abs(ric_path.A).max())
        except BicharLabError as exc:
            res.record_error("riccati", exc)
            return res

    # eikonal
    if not reached("eikonal"):
        return res
    phase = None
    if model_w.prepared:
        forms = model_w.grid_fns["forms"]
        if forms.expr("r") != 0:
            try:
                scaled = eikonal.scale_symbol(model_w, lam, eps)
                seeds = eikonal.make_seeds(lam, eps, delta, dim=n - 1)
                fan = eikonal.solve_characteristics(scaled, seeds, grid.t)
                phase = eikonal.reconstruct_phase(
                    fan, scaled, lam, eps, grid,
                    residual_rtol=raw["tolerances"]["eikonal_residual_rtol"])
                res.phase = phase
                ref = (lambda t: ric_path.at(t)) if ric_path is not None else None
                v0, v1, v2 = phase.vanishing_defects(hessian_reference=ref)
                res.diagnostics["eikonal"] = {
                    "residual": phase.eikonal_residual(model_w),
                    "omega_defect": v0, "omega_x_defect": v1,
                    "hessian_vs_riccati": v2,
                }
                supp = lam ** (-delta)
                cover = grid.x_meshes()[0][phase.valid.all(axis=0)]
                if cover.size == 0 or np.abs(cover).max() < supp:
                    res.warnings.append(
                        "amplitude support needs the phase outside the "
                        "solved characteristic box")
            except BicharLabError as exc:
                res.record_error("eikonal", exc)
                return res
    else:
        res.warnings.append("model not prepared; skipping eikonal/transport")
        return res

    # transport
    if not reached("transport"):
        return res
    try:
        coeffs = transport.compute_coefficients(model_w, phase, grid=grid,
                                                lam=lam)
        res.diagnostics["dropped_q0_size"] = coeffs.dropped_q0_size
        straighten = None
        if np.abs(coeffs.a_matrix).max() > 1e-12:
            straighten = transport.straighten_drift(coeffs)
        B, phi0 = transport.solve_leading(coeffs, lam, delta,
                                          straighten=straighten)
        res.diagnostics["transport_residual"] = transport.transport_residual(
            phi0, coeffs)
        phis, sizes = transport.solve_corrections(
            model_w, phase, coeffs, B, lam, int(raw["M"]), phi0, rho=rho)
        chain = transport.AmplitudeChain(
            grid=grid, lam=lam, delta=delta, rho=rho, phi=phis, B=B,
            coeffs=coeffs, straighten=straighten,
            correction_sizes=sizes)
        chain = transport.apply_time_cutoff(
            chain,
            target_exponent=raw["cutoff"]["target_exponent"],
            margin=raw["cutoff"]["margin"],
            strict=bool(raw["cutoff"]["strict"]))
        res.diagnostics["cutoff"] = dict(chain.diagnostics)
        res.warnings.extend(chain.diagnostics.get("warnings", []))
        res.diagnostics["correction_sizes"] = sizes
    except BicharLabError as exc:
        res.record_error("transport", exc)
        return res

    # quasimode
    if not reached("quasimode"):
        return res
    try:
        u = quasimode.assemble_quasimode(phase, chain, lam, epsilon=eps,
                                         delta=delta, rho=rho)
    except BicharLabError as exc:
        res.record_error("quasimode", exc)
        return res

    # norms
    if not reached("norms"):
        return res
    try:
        op = operator.PreparedOperator(
            model=model_w, lam=lam, method=raw["toggles"]["method"],
            expansion_order=int(raw["operator"]["expansion_order"]),
            sep_nodes=int(raw["operator"]["sep_nodes"]),
            sep_tol=float(raw["tolerances"]["sep_tol"]))
        cut = operator.ConeCutoff(xi0=u.xi0, lam=lam, epsilon=eps,
                                  angle_scale=float(raw["cone"]["angle_scale"]))
        extra = {-1.0}
        for chk in raw["checks"]:
            if chk.get("name") == "norm_slope_window":
                extra.add(-float(chk.get("N", raw["N"])))
        rep = operator.solvability_ratio(
            op, u, int(raw["N"]), int(raw["nu"]), cut,
            apply_prefactor=bool(raw["toggles"]["prefactor"]),
            extra_orders=sorted(extra))
        res.report = rep
    except BicharLabError as exc:
        res.record_error("norms", exc)
        return res
    return res


def _evaluate_checks(cfg: ExperimentConfig, rungs, slopes):
    checks = []
    reports = [r.report for r in rungs if r.report is not None]
    for chk in cfg.raw["checks"]:
        name = chk.get("name")
        entry = {"name": name, "params": chk}
        try:
            if name == "ratio_growth":
                ratios = [r.ratio for r in reports]
                mono = all(b > a for a, b in zip(ratios, ratios[1:]))
                top = ratios[-1] if ratios else float("nan")
                ok = top >= float(chk.get("min_top_ratio", 1e3))
                if chk.get("monotone", True):
                    ok = ok and mono
                entry.update({"pass": bool(ok), "top_ratio": top,
                              "monotone": mono})
            elif name == "ratio_bounded":
                ratios = [r.ratio for r in reports]
                base = ratios[0]
                factor = max(max(r / base, base / r) for r in ratios)
                ok = factor <= float(chk.get("max_factor", 10.0))
                entry.update({"pass": bool(ok), "max_factor": factor})
            elif name == "cone_slope":
                slope = slopes.get("cutoff_norm")
                ok = slope is not None and slope <= float(
                    chk.get("max_slope", -6.0))
                entry.update({"pass": bool(ok), "slope": slope})
            elif name == "norm_slope_window":
                N = int(chk.get("N", cfg.raw["N"]))
                n = int(cfg.raw["model"].get("n", 2))
                fit = quasimode.norm_scaling_fit(
                    reports, -float(N), N=N, n=n,
                    tol=float(chk.get("tol", 0.1)))
                entry.update({"pass": bool(fit.within), "slope": fit.slope,
                              "window": fit.window})
            elif name == "divergence_triggered":
                flags = [r.diagnostics.get("cutoff", {}).get(
                    "divergence_triggered") for r in rungs if r.status == "ok"]
                expect = bool(chk.get("expect", True))
                ok = all(f == expect for f in flags) and len(flags) > 0
                entry.update({"pass": bool(ok), "flags": flags})
            else:
                entry.update({"pass": False, "error": "unknown check"})
        except Exception as exc:
            entry.update({"pass": False, "error": str(exc)})
        checks.append(entry)
    return checks


def _compute_slopes(cfg, rungs):
    reports = [r.report for r in rungs if r.report is not None]
    slopes = {}
    if len(reports) >= 4:
        lams = [r.lam for r in reports]
        def fit(vals):
            try:
                return quasimode.norm_scaling_fit(lams, 0.0, values=vals).slope
            except BicharLabError:
                return None
        slopes["ratio"] = fit([r.ratio for r in reports])
        slopes["residual_nu"] = fit([r.residual_nu for r in reports])
        slopes["cutoff_norm"] = fit([r.cutoff_norm for r in reports])
        for s in reports[0].norms:
            slopes[f"norm_{s:g}"] = fit([r.norms[s] for r in reports])
    return slopes


def run_experiment(cfg: ExperimentConfig, out_dir: str,
                   only_stage: str | None = None,
                   ladder_top: int | None = None) -> int:
    """Run the ladder, write norms.csv / curves.csv / report.json.

    Returns the exit code (0 pass, 1 check failure, 2 abort).
    """
    os.makedirs(out_dir, exist_ok=True)
    ladder = [float(l) for l in cfg.raw["ladder"]]
    if ladder_top is not None:
        ladder = [l for l in ladder if l <= 2.0 ** ladder_top]
        if not ladder:
            raise ConfigError("ladder-top removed every rung")
    last_stage = only_stage or "norms"
    if last_stage not in STAGES:
        raise ConfigError(f"unknown stage {last_stage!r}")

    max_threads = int(os.environ.get("BICHARLAB_MAX_THREADS", "1"))
    if max_threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=max_threads) as pool:
            rungs = list(pool.map(
                lambda lam: run_rung(cfg, lam, last_stage), ladder))
    else:
        rungs = [run_rung(cfg, lam, last_stage) for lam in ladder]

    slopes = _compute_slopes(cfg, rungs)
    checks = _evaluate_checks(cfg, rungs, slopes) \
        if last_stage == "norms" else []

    aborted = any(r.status == "error" for r in rungs)
    failed = any(c.get("pass") is False for c in checks)
    exit_code = 2 if aborted else (1 if failed else 0)

    _write_norms_csv(os.path.join(out_dir, "norms.csv"), cfg, rungs)
    if cfg.raw["toggles"]["write_curves"]:
        _write_curves_csv(os.path.join(out_dir, "curves.csv"), rungs)
    if cfg.raw["toggles"].get("write_phase") and any(
            r.phase is not None for r in rungs):
        _write_phase_csv(os.path.join(out_dir, "phase.csv"), rungs)

    report = {
        "config": _jsonable(cfg.raw),
        "ladder_used": ladder,
        "stage": last_stage,
        "rungs": [_rung_record(r) for r in rungs],
        "slopes": _jsonable(slopes),
        "checks": _jsonable(checks),
        "exit_code": exit_code,
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return exit_code


def _rung_record(r: RungResult) -> dict:
    rec = {"lambda": r.lam, "status": r.status,
           "stage_reached": r.stage_reached,
           "diagnostics": _jsonable(r.diagnostics),
           "warnings": list(r.warnings)}
    if r.error:
        rec["error"] = r.error
    if r.report is not None:
        rec["norms"] = _jsonable({f"{s:g}": v for s, v in r.report.norms.items()})
        rec["residual_nu"] = float(r.report.residual_nu)
        rec["cutoff_norm"] = float(r.report.cutoff_norm)
        rec["ratio"] = float(r.report.ratio)
    return rec


def _write_norms_csv(path, cfg, rungs):
    N = int(cfg.raw["N"])
    n = int(cfg.raw["model"].get("n", 2))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "s", "norm_minus_N", "residual_nu",
                    "cutoff_norm", "norm_minus_N_minus_n", "ratio"])
        for r in rungs:
            if r.report is None:
                continue
            rep = r.report
            w.writerow([_fmt(rep.lam), _fmt(-N), _fmt(rep.norms[-float(N)]),
                        _fmt(rep.residual_nu), _fmt(rep.cutoff_norm),
                        _fmt(rep.norms[-float(N + n)]), _fmt(rep.ratio)])


def _write_curves_csv(path, rungs):
    first = next((r for r in rungs if r.curve is not None), None)
    if first is None:
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(first.curve.csv_header())
        for row in first.curve.csv_rows():
            w.writerow([_fmt(v) for v in row])


def _write_phase_csv(path, rungs):
    first = next((r for r in rungs if r.phase is not None), None)
    if first is None:
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(first.phase.csv_header())
        for row in first.phase.csv_rows():
            w.writerow([_fmt(v) for v in row])
