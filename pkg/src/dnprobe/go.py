"""Geometric-optics probes.

A probe for large ``rho`` and direction ``omega`` pairs a forward solution
``exp(rho^2 t + rho x . omega) (b1 + w1)`` with an adjoint solution
``exp(-rho^2 t - rho x . omega) (b2 + w2)``. The amplitudes solve transport
equations along ``omega`` with the mollified convection field. Exponential
factors are never formed: boundary data and solutions are stored as the
bounded factor together with ``(rho, omega)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.ndimage import map_coordinates

from .errors import AuditError, OverflowGuardError, ParameterError
from .fields import CoefficientSet, mollify
from .forward import Solution, l2_norm, solve_adjoint, solve_forward
from .grid import SpaceTimeGrid, check_unit
from .report import write_csv

OVERFLOW_LOG = 700.0
AUDIT_COLUMNS = ("rho", "norm_l2", "norm_weighted_h1", "normalization_log")


def _orthogonal(omega: np.ndarray) -> np.ndarray:
    return np.array([omega[1], -omega[0]])


def check_probe_direction(omega, xi) -> Tuple[np.ndarray, np.ndarray]:
    w = check_unit(omega)
    x = np.asarray(xi, dtype=float).reshape(2)
    if abs(w @ x) > 1e-12:
        raise ParameterError(f"frequency {tuple(x)} is not orthogonal to direction {tuple(w)}")
    return w, x


def half_line_integral(field2d: np.ndarray, origin: Tuple[float, float], steps: Tuple[float, float],
                       points: np.ndarray, omega: np.ndarray, spacing: Optional[float] = None) -> np.ndarray:
    """``int_0^inf f(x + s omega) ds`` for a field sampled on a box and zero outside.

    The field is resampled onto a lattice aligned with ``omega``; the tail
    integral along each line is a reverse cumulative trapezoid, interpolated
    back to ``points`` (shape ``(2, ...)``). The aligned lattice spacing defaults
    to half the finer grid spacing.
    """
    hx, hy = steps
    nxp, nyp = field2d.shape
    ox, oy = origin
    e = _orthogonal(omega)
    corners = np.array([[ox, oy], [ox + (nxp - 1) * hx, oy], [ox, oy + (nyp - 1) * hy],
                        [ox + (nxp - 1) * hx, oy + (nyp - 1) * hy]])
    h = 0.5 * min(hx, hy) if spacing is None else float(spacing)
    s_proj, y_proj = corners @ omega, corners @ e
    px, py = points[0], points[1]
    sp_pts, yp_pts = px * omega[0] + py * omega[1], px * e[0] + py * e[1]
    s0 = min(s_proj.min(), sp_pts.min()) - 2 * h
    y0 = min(y_proj.min(), yp_pts.min()) - 2 * h
    ns = int(np.ceil((max(s_proj.max(), sp_pts.max()) + 2 * h - s0) / h)) + 1
    ny_ = int(np.ceil((max(y_proj.max(), yp_pts.max()) + 2 * h - y0) / h)) + 1
    S, Yl = np.meshgrid(s0 + h * np.arange(ns), y0 + h * np.arange(ny_), indexing="ij")
    X = S * omega[0] + Yl * e[0]
    Y = S * omega[1] + Yl * e[1]
    vals = map_coordinates(field2d, [(X - ox) / hx, (Y - oy) / hy], order=1, mode="constant", cval=0.0)
    cum = cumulative_trapezoid(vals, dx=h, axis=0, initial=0.0)
    tail = cum[-1][None, :] - cum
    return map_coordinates(tail, [(sp_pts - s0) / h, (yp_pts - y0) / h], order=1, mode="nearest")


def padded_mollified(A: np.ndarray, grid: SpaceTimeGrid, rho: float):
    """Mollified field on the spatially enlarged box, restricted to the grid's time levels.

    Returns ``(field, (px, py))`` where ``px, py`` count the padding nodes.
    """
    Ap, (pt, px, py) = mollify(A, grid, rho, pad=True)
    return Ap[..., pt:pt + grid.nt + 1, :, :], (px, py)


def ray_exponent(A: np.ndarray, grid: SpaceTimeGrid, rho: float, omega, mollified: bool = True,
                 padded=None, spacing: Optional[float] = None) -> np.ndarray:
    """``I(x, t) = int_0^inf A_rho(x + s omega, t) . omega ds`` on every node of ``grid``.

    ``padded`` may carry a precomputed :func:`padded_mollified` result.
    """
    w = check_unit(omega)
    X, Y = grid.mesh()
    pts = np.stack([X, Y])
    if not mollified:
        Ap, (px, py) = np.asarray(A, dtype=float), (0, 0)
    elif padded is not None:
        Ap, (px, py) = padded
    else:
        Ap, (px, py) = padded_mollified(A, grid, rho)
    proj = w[0] * Ap[0] + w[1] * Ap[1]
    origin = (-px * grid.hx, -py * grid.hy)
    out = np.empty(grid.shape)
    for n in range(grid.nt + 1):
        if not np.any(proj[n]):
            out[n] = 0.0
            continue
        out[n] = half_line_integral(proj[n], origin, (grid.hx, grid.hy), pts, w, spacing)
    return out


def cap_factor(grid: SpaceTimeGrid, rho: float, at_start: bool = True) -> np.ndarray:
    """``1 - exp(-rho^{1/3} t)`` (or with ``T - t``), exactly zero at the matching cap."""
    tt = grid.t if at_start else grid.time_to_end()
    return -np.expm1(-rho ** (1.0 / 3.0) * tt)[:, None, None]


def phase(grid: SpaceTimeGrid, xi, tau: float) -> np.ndarray:
    T, X, Y = grid.mesh3()
    return np.exp(-1j * (tau * T + xi[0] * X + xi[1] * Y))


def amplitude_b1(grid: SpaceTimeGrid, rho: float, omega, xi, tau: float, A1: np.ndarray,
                 exponent: Optional[np.ndarray] = None) -> np.ndarray:
    w, x = check_probe_direction(omega, xi)
    I1 = ray_exponent(A1, grid, rho, w) if exponent is None else exponent
    return phase(grid, x, tau) * cap_factor(grid, rho, True) * np.exp(-0.5 * I1)


def amplitude_b2(grid: SpaceTimeGrid, rho: float, omega, A2: np.ndarray,
                 exponent: Optional[np.ndarray] = None) -> np.ndarray:
    w = check_unit(omega)
    I2 = ray_exponent(A2, grid, rho, w) if exponent is None else exponent
    return cap_factor(grid, rho, False) * np.exp(0.5 * I2)


@dataclass
class GOProbe:
    grid: SpaceTimeGrid
    rho: float
    omega: Tuple[float, float]
    xi: Tuple[float, float]
    tau: float
    b1: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        check_probe_direction(self.omega, self.xi)
        if not self.rho > 1.0:
            raise ParameterError("rho must exceed 1")

    @property
    def normalization_log(self) -> float:
        """Log of the largest weight factor carried implicitly by the stored data."""
        X, Y = self.grid.mesh()
        return float(self.rho**2 * self.grid.T + self.rho * np.max(self.omega[0] * X + self.omega[1] * Y))

    def as_dict(self) -> dict:
        return {"rho": self.rho, "omega": self.omega, "xi": self.xi, "tau": self.tau}


def build_probe(grid: SpaceTimeGrid, rho: float, omega, xi, tau: float, A1: np.ndarray, A2: np.ndarray) -> GOProbe:
    w, x = check_probe_direction(omega, xi)
    b1 = amplitude_b1(grid, rho, w, x, tau, A1)
    b2 = amplitude_b2(grid, rho, w, A2)
    return GOProbe(grid, float(rho), (float(w[0]), float(w[1])), (float(x[0]), float(x[1])), float(tau), b1, b2)


@dataclass
class GOData:
    """Lateral data of a probe pair in weighted form."""

    g_plus: np.ndarray
    g_minus: np.ndarray
    rho: float
    omega: Tuple[float, float]
    normalization_log: float

    @property
    def weight(self):
        return (self.rho, self.omega)

    def materialize(self, grid: SpaceTimeGrid) -> Tuple[np.ndarray, np.ndarray]:
        """True data ``exp(+-Phi) * factor``; refused once the exponent passes the guard."""
        if self.normalization_log > OVERFLOW_LOG:
            raise OverflowGuardError(
                f"weight exponent {self.normalization_log:.1f} exceeds {OVERFLOW_LOG}; use the weighted data"
            )
        T, X, Y = grid.mesh3()
        Phi = self.rho**2 * T + self.rho * (self.omega[0] * X + self.omega[1] * Y)
        return np.exp(Phi) * self.g_plus, np.exp(-Phi) * self.g_minus


def go_boundary_data(p: GOProbe) -> GOData:
    mask = p.grid.boundary_mask()
    gp = np.where(mask[None], p.b1, 0.0)
    gm = np.where(mask[None], p.b2, 0.0)
    return GOData(gp, gm, p.rho, p.omega, p.normalization_log)


def solve_probe(c1: CoefficientSet, c2: CoefficientSet, p: GOProbe, convection: str = "auto") -> Tuple[Solution, Solution]:
    """Forward solution for ``c1`` and adjoint solution for ``c2`` with the probe's data."""
    check_resolution(p.grid, p.rho)
    d = go_boundary_data(p)
    s1 = solve_forward(c1, d.g_plus, weight=d.weight, convection=convection)
    s2 = solve_adjoint(c2, d.g_minus, weight=d.weight, convection=convection)
    return s1, s2


def check_resolution(grid: SpaceTimeGrid, rho: float) -> None:
    if rho * grid.h > 0.5 + 1e-12:
        raise ParameterError(f"rho * h = {rho * grid.h:.3f} exceeds 1/2; refine the grid")


def transport_residual(b: np.ndarray, A: np.ndarray, omega, grid: SpaceTimeGrid, sign: int = 1) -> float:
    """L2(Q) norm of ``(-2 omega . grad + A . omega) b`` (sign +1) or ``(2 omega . grad + A . omega) b`` (sign -1)."""
    w = check_unit(omega)
    dbx = np.gradient(b, grid.hx, axis=1, edge_order=2)
    dby = np.gradient(b, grid.hy, axis=2, edge_order=2)
    r = -2.0 * sign * (w[0] * dbx + w[1] * dby) + (w[0] * A[0] + w[1] * A[1]) * b
    return l2_norm(grid, r)


def l2h1_norm(grid: SpaceTimeGrid, U: np.ndarray) -> float:
    gx = np.gradient(U, grid.hx, axis=1, edge_order=2)
    gy = np.gradient(U, grid.hy, axis=2, edge_order=2)
    return float(np.sqrt(np.sum(grid.weights() * (np.abs(U) ** 2 + np.abs(gx) ** 2 + np.abs(gy) ** 2))))


@dataclass
class RemainderAudit:
    rows: List[dict]
    passed: bool

    def write_csv(self, path) -> None:
        write_csv(path, AUDIT_COLUMNS, [[r[k] for k in AUDIT_COLUMNS] for r in self.rows])


def _non_increasing(vals: Sequence[float]) -> bool:
    return all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


def remainder_decay_audit(c: CoefficientSet, rho_list: Sequence[float], omega=(1.0, 0.0), xi=(0.0, 0.0),
                          tau: float = 0.0) -> RemainderAudit:
    """Norms of the forward remainder ``w = exp(-Phi) u - b1`` over a rho sweep.

    PASS when both columns are non-increasing from the second entry on.
    """
    rhos = [float(r) for r in rho_list]
    if len(rhos) < 3 or any(b <= a for a, b in zip(rhos, rhos[1:])):
        raise AuditError("rho_list must hold at least 3 increasing values")
    grid = c.grid
    rows = []
    for rho in rhos:
        check_resolution(grid, rho)
        w, x = check_probe_direction(omega, xi)
        b1 = amplitude_b1(grid, rho, w, x, tau, c.A)
        d = go_boundary_data(GOProbe(grid, rho, tuple(w), tuple(x), tau, b1, np.zeros_like(b1)))
        sol = solve_forward(c, d.g_plus, weight=d.weight)
        W = sol.values - b1
        rows.append({
            "rho": rho,
            "norm_l2": l2_norm(grid, W),
            "norm_weighted_h1": l2h1_norm(grid, W) / rho,
            "normalization_log": d.normalization_log,
        })
    ok = _non_increasing([r["norm_l2"] for r in rows][1:]) and _non_increasing([r["norm_weighted_h1"] for r in rows][1:])
    return RemainderAudit(rows, ok)
