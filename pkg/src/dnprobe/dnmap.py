"""Variational DN functional, the DN-difference pairing, its boundary-restricted
form, and the flux map of the quasi-linear problem."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import DataError, ShapeError
from .fields import CoefficientSet
from .forward import QuasiLinearModel, Solution, solve_adjoint, solve_forward, solve_quasilinear
from .grid import EDGES, SpaceTimeGrid
from .report import write_csv

PAIRING_COLUMNS = ("probe_id", "rho", "omega_x", "omega_y", "xi_x", "xi_y", "tau", "re_value", "im_value")


def _grad(grid: SpaceTimeGrid, U: np.ndarray) -> np.ndarray:
    return np.stack(
        [np.gradient(U, grid.hx, axis=-2, edge_order=2), np.gradient(U, grid.hy, axis=-1, edge_order=2)]
    )


def integrate_weighted(grid: SpaceTimeGrid, values: np.ndarray) -> complex:
    """Tensor trapezoid as one weighted sum."""
    return complex(np.sum(grid.weights() * values))


def integrate_nested(grid: SpaceTimeGrid, values: np.ndarray) -> complex:
    """Tensor trapezoid as three nested one-dimensional rules."""
    inner = trapezoid(values, dx=grid.hy, axis=-1)
    mid = trapezoid(inner, dx=grid.hx, axis=-1)
    return complex(trapezoid(mid, dx=grid.dt, axis=-1))


def dn_form(c: CoefficientSet, u: np.ndarray, w: np.ndarray, f: Optional[np.ndarray] = None) -> complex:
    """Weak form of the DN functional for a computed solution ``u`` and test function ``w``.

    ``int_Q [-u w_t + grad u . grad w + (A . grad u) w - B . grad(u w) + q u w - f w] - int_Omega u(0) w(0)``.
    """
    grid = c.grid
    if np.max(np.abs(w[-1])) > 1e-12 * max(1.0, float(np.max(np.abs(w)))):
        raise DataError("test function must vanish on the top cap")
    gu, gw, guw = _grad(grid, u), _grad(grid, w), _grad(grid, u * w)
    wt = np.gradient(w, grid.dt, axis=0, edge_order=2)
    integrand = (
        -u * wt
        + gu[0] * gw[0]
        + gu[1] * gw[1]
        + (c.A[0] * gu[0] + c.A[1] * gu[1]) * w
        - (c.B[0] * guw[0] + c.B[1] * guw[1])
        + c.q * u * w
    )
    if f is not None:
        integrand = integrand - f * w
    cap = complex(np.sum(grid.space_weights() * u[0] * w[0]))
    return integrate_weighted(grid, integrand) - cap


def dn_apply(c: CoefficientSet, g, w: np.ndarray, u0: Optional[np.ndarray] = None, f=None) -> complex:
    """DN functional of the solution with lateral datum ``g`` tested against ``w``."""
    w = np.asarray(w)
    if w.shape != c.grid.shape:
        raise ShapeError(f"test function has shape {w.shape}")
    sol = solve_forward(c, g, u0=u0, f=f)
    fv = None if f is None else (c.grid.sample(f) if callable(f) else np.asarray(f))
    return dn_form(c, sol.values, w, fv)


@dataclass
class DNPairingSample:
    value: complex
    probe_id: str
    quadrature_residual: float
    terms: Dict[str, complex] = field(default_factory=dict)
    probe: Dict[str, float] = field(default_factory=dict)

    @property
    def scale(self) -> float:
        """Sum of the magnitudes of the three term integrals."""
        return float(sum(abs(v) for v in self.terms.values()))


def _weight_shift(sol1: Solution, sol2: Solution) -> np.ndarray:
    """Shift ``rho * omega`` that turns the gradient of the stored forward factor into
    the gradient of the true solution, divided by the weight."""
    lw1, lw2 = sol1.log_weight, sol2.log_weight
    if lw1 is None and lw2 is None:
        return np.zeros(2)
    if lw1 is None or lw2 is None or lw1.sign != 1 or lw2.sign != -1 or lw1.rho != lw2.rho or lw1.omega != lw2.omega:
        raise DataError("forward and adjoint solutions must carry opposite weights with equal (rho, omega)")
    return lw1.rho * np.asarray(lw1.omega)


def pairing_from_solutions(
    c1: CoefficientSet, c2: CoefficientSet, sol1: Solution, sol2: Solution, probe_id: str = "", probe=None
) -> DNPairingSample:
    """Three-term representation of the DN difference from a forward and an adjoint solution."""
    grid = c1.grid
    if c2.grid != grid or sol1.grid != grid or sol2.grid != grid:
        raise ShapeError("pairing inputs live on different grids")
    shift = _weight_shift(sol1, sol2)
    u1, u2 = sol1.values, sol2.values
    g1 = _grad(grid, u1)
    g1 = g1 + shift[:, None, None, None] * u1[None]
    g12 = _grad(grid, u1 * u2)
    dA, dB, dq = c1.A - c2.A, c1.B - c2.B, c1.q - c2.q
    integrands = {
        "convection": (dA[0] * g1[0] + dA[1] * g1[1]) * u2,
        "divergence": -(dB[0] * g12[0] + dB[1] * g12[1]),
        "potential": dq * u1 * u2,
    }
    total = sum(integrands.values())
    terms = {k: integrate_weighted(grid, v) for k, v in integrands.items()}
    v1 = integrate_weighted(grid, total)
    v2 = integrate_nested(grid, total)
    return DNPairingSample(v1, probe_id, float(abs(v1 - v2)), terms, dict(probe or {}))


def dn_pairing_difference(
    c1: CoefficientSet,
    c2: CoefficientSet,
    g_plus,
    g_minus,
    probe_id: str = "",
    theta: float = 1.0,
) -> DNPairingSample:
    """``(Lambda_1 - Lambda_2)`` tested on a forward datum and an adjoint datum."""
    sol1 = solve_forward(c1, g_plus, theta=theta)
    sol2 = solve_adjoint(c2, g_minus, theta=theta)
    return pairing_from_solutions(c1, c2, sol1, sol2, probe_id)


def edge_support_mask(grid: SpaceTimeGrid, edges: Iterable[str]) -> np.ndarray:
    """Spatial mask of the boundary nodes lying on any of the given edges."""
    mask = np.zeros(grid.spatial_shape, dtype=bool)
    for e in edges:
        if e not in EDGES:
            raise DataError(f"unknown boundary edge {e!r}")
        mask[grid.edge_index(e)] = True
    return mask


def _check_support(grid: SpaceTimeGrid, g: np.ndarray, allowed: np.ndarray, name: str) -> np.ndarray:
    outside = grid.boundary_mask() & ~allowed
    scale = max(1.0, float(np.max(np.abs(g))))
    leak = float(np.max(np.abs(g[:, outside]))) if outside.any() else 0.0
    if leak > 1e-14 * scale:
        raise DataError(f"{name} is not supported in the allowed boundary part (max {leak:.3e} outside)")
    out = np.array(g, copy=True)
    out[:, ~allowed] = 0.0
    return out


def dn_restrict(
    c1: CoefficientSet,
    c2: CoefficientSet,
    g_plus,
    g_minus,
    gamma1: Sequence[str],
    gamma2: Sequence[str],
    probe_id: str = "",
) -> DNPairingSample:
    """Pairing with the forward datum supported on ``gamma1`` and the test datum on ``gamma2``."""
    grid = c1.grid
    gp = grid.sample(g_plus) if callable(g_plus) else np.asarray(g_plus)
    gm = grid.sample(g_minus) if callable(g_minus) else np.asarray(g_minus)
    gp = _check_support(grid, gp, edge_support_mask(grid, gamma1), "forward datum")
    gm = _check_support(grid, gm, edge_support_mask(grid, gamma2), "test datum")
    return dn_pairing_difference(c1, c2, gp, gm, probe_id)


def nonlinear_dn(m: QuasiLinearModel, G, grid: SpaceTimeGrid, **kw) -> Dict[str, np.ndarray]:
    """Outward normal flux on each edge of the quasi-linear solution with datum ``G``."""
    return solve_quasilinear(m, G, grid, **kw).flux_trace


def write_pairings_csv(path, samples: Sequence[DNPairingSample]) -> None:
    rows = []
    for s in samples:
        p = s.probe
        om = p.get("omega", (np.nan, np.nan))
        xi = p.get("xi", (np.nan, np.nan))
        rows.append(
            (s.probe_id, p.get("rho", np.nan), om[0], om[1], xi[0], xi[1], p.get("tau", np.nan), s.value.real, s.value.imag)
        )
    write_csv(path, PAIRING_COLUMNS, rows)
