"""Shared pipeline builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from bicharlab.catalog import make_model
from bicharlab.eikonal import (
    make_seeds,
    reconstruct_phase,
    scale_symbol,
    solve_characteristics,
)
from bicharlab.grids import Grid
from bicharlab.operator import ConeCutoff, PreparedOperator
from bicharlab.quasimode import assemble_quasimode
from bicharlab.transport import (
    AmplitudeChain,
    apply_time_cutoff,
    compute_coefficients,
    solve_corrections,
    solve_leading,
    straighten_drift,
)

EPS = 1.0 / 8.0
DELTA = 5.0 / 12.0
RHO = 1.0 / 24.0


def ladder_grid(lam: float, t_points: int = 1024, x_points: int = 2048,
                t_box=(-1.2, 1.2), factor: float = 6.0) -> Grid:
    return Grid.build(t_box, t_points, factor * lam ** (-DELTA), x_points)


def build_pipeline(model_cfg: dict, lam: float, M: int = 0,
                   grid: Grid | None = None, cutoff_target: float = 4.0,
                   adjoint: bool = True, strict_cutoff: bool = False):
    """Model -> (phase, chain, quasimode, operator, cone) at one rung."""
    if grid is None:
        grid = ladder_grid(lam)
    model_p = make_model(model_cfg, lam=lam)
    model = model_p.adjoint() if adjoint else model_p

    phase = None
    forms = model.grid_fns.get("forms")
    if forms is not None and forms.expr("r") != 0:
        scaled = scale_symbol(model, lam, EPS)
        fan = solve_characteristics(scaled, make_seeds(lam, EPS, DELTA),
                                    grid.t)
        phase = reconstruct_phase(fan, scaled, lam, EPS, grid)

    coeffs = compute_coefficients(model, phase, grid=grid, lam=lam)
    straighten = None
    if np.abs(coeffs.a_matrix).max() > 1e-12:
        straighten = straighten_drift(coeffs)
    B, phi0 = solve_leading(coeffs, lam, DELTA, straighten=straighten)
    phis, sizes = solve_corrections(model, phase, coeffs, B, lam, M, phi0,
                                    rho=RHO)
    chain = AmplitudeChain(grid=grid, lam=lam, delta=DELTA, rho=RHO,
                           phi=phis, B=B, coeffs=coeffs,
                           straighten=straighten, correction_sizes=sizes)
    chain = apply_time_cutoff(chain, target_exponent=cutoff_target,
                              strict=strict_cutoff)
    u = assemble_quasimode(phase, chain, lam, epsilon=EPS, delta=DELTA,
                           rho=RHO)
    op = PreparedOperator(model=model, lam=lam)
    cut = ConeCutoff(xi0=u.xi0, lam=lam, epsilon=EPS, angle_scale=1.5)
    return phase, chain, u, op, cut


HEADLINE_CFG = {
    "model_id": "pt_trivial", "n": 2, "parameters": {"g": "200*t"},
    "quantization_tag": "weyl",
}

CONTROL_CFG = {
    "model_id": "pt_trivial", "n": 2, "parameters": {"g": "1 + t**2"},
    "quantization_tag": "weyl",
}

LADDER_CFG = {
    "model_id": "pt_trivial", "n": 2,
    "parameters": {"g": "200*t", "r": "0.4*lam**(-1/24)*I*x1*z1"},
    "quantization_tag": "kohn_nirenberg",
}

LADDER = [2.0 ** k for k in range(8, 14)]


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260809)
