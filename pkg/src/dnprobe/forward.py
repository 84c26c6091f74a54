"""Time-stepping solvers: forward and adjoint linear problems, the quasi-linear
problem with Newton steps, and its linearisation.

Spatial operator at interior nodes is the five-point Laplacian plus a
convection term that is centered where the cell Peclet number ``|a| h`` is at
most 2 and first-order upwind elsewhere. Each implicit step is a sparse LU
solve; the factorisation is reused while the stencil does not change.

Probe solves with exponential weights ``exp(+-(rho^2 t + rho x . omega))`` are
run on the conjugated equation, so only the bounded factor is stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DataError, ModelClassError, NonlinearSolverError, ParameterError, SingularSystemError
from .fields import CoefficientSet, flux_divergence
from .grid import EDGES, SpaceTimeGrid, check_unit

SOLVE_TOL = 1e-10
NEWTON_TOL = 1e-10
NEWTON_MAXIT = 50


@dataclass(frozen=True)
class LogWeight:
    """Stored values equal ``exp(-sign * (rho^2 t + rho x . omega))`` times the true solution."""

    rho: float
    omega: Tuple[float, float]
    sign: int

    def exponent(self, grid: SpaceTimeGrid) -> np.ndarray:
        T, X, Y = grid.mesh3()
        return self.sign * (self.rho**2 * T + self.rho * (self.omega[0] * X + self.omega[1] * Y))

    @property
    def normalization_log(self) -> float:
        return float(self.rho**2)


@dataclass
class Solution:
    grid: SpaceTimeGrid
    values: np.ndarray
    boundary_trace: Dict[str, np.ndarray]
    flux_trace: Dict[str, np.ndarray]
    log_weight: Optional[LogWeight] = None
    diagnostics: dict = field(default_factory=dict)


def boundary_trace(grid: SpaceTimeGrid, U: np.ndarray) -> Dict[str, np.ndarray]:
    return {e: U[(slice(None),) + grid.edge_index(e)].copy() for e in EDGES}


def normal_flux(grid: SpaceTimeGrid, U: np.ndarray) -> Dict[str, np.ndarray]:
    """Outward normal derivative on each edge by second-order one-sided differences."""
    hx, hy = grid.hx, grid.hy
    return {
        "left": (3 * U[:, 0, :] - 4 * U[:, 1, :] + U[:, 2, :]) / (2 * hx),
        "right": (3 * U[:, -1, :] - 4 * U[:, -2, :] + U[:, -3, :]) / (2 * hx),
        "bottom": (3 * U[:, :, 0] - 4 * U[:, :, 1] + U[:, :, 2]) / (2 * hy),
        "top": (3 * U[:, :, -1] - 4 * U[:, :, -2] + U[:, :, -3]) / (2 * hy),
    }


def _as_field(grid: SpaceTimeGrid, data, name: str, dtype=float) -> np.ndarray:
    if callable(data):
        data = grid.sample(data)
    arr = np.asarray(data)
    if arr.shape != grid.shape:
        raise DataError(f"{name} has shape {arr.shape}, expected {grid.shape}")
    return arr


@dataclass
class Stencil:
    """Five-point coefficients of ``-Lap + a . grad + pot`` at interior nodes."""

    c: np.ndarray
    e: np.ndarray
    w: np.ndarray
    n: np.ndarray
    s: np.ndarray

    def same_as(self, other: Optional["Stencil"]) -> bool:
        if other is None:
            return False
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "cewns")


def operator_stencil(
    grid: SpaceTimeGrid, a1: np.ndarray, a2: np.ndarray, pot: np.ndarray, convection: str = "auto"
) -> Stencil:
    hx, hy = grid.hx, grid.hy
    ax, ay, p = a1[1:-1, 1:-1], a2[1:-1, 1:-1], pot[1:-1, 1:-1]
    if convection == "auto":
        up_x, up_y = np.abs(ax) * hx > 2.0, np.abs(ay) * hy > 2.0
    elif convection == "centered":
        up_x = up_y = np.zeros(ax.shape, dtype=bool)
    elif convection == "upwind":
        up_x = up_y = np.ones(ax.shape, dtype=bool)
    else:
        raise ParameterError(f"unknown convection scheme {convection!r}")
    c = np.full(ax.shape, 2 / hx**2 + 2 / hy**2) + p
    e = np.full(ax.shape, -1 / hx**2)
    w = e.copy()
    n = np.full(ax.shape, -1 / hy**2)
    s = n.copy()
    e = e + np.where(up_x, np.minimum(ax, 0) / hx, ax / (2 * hx))
    w = w + np.where(up_x, -np.maximum(ax, 0) / hx, -ax / (2 * hx))
    c = c + np.where(up_x, np.abs(ax) / hx, 0.0)
    n = n + np.where(up_y, np.minimum(ay, 0) / hy, ay / (2 * hy))
    s = s + np.where(up_y, -np.maximum(ay, 0) / hy, -ay / (2 * hy))
    c = c + np.where(up_y, np.abs(ay) / hy, 0.0)
    return Stencil(c, e, w, n, s)


def apply_stencil(st: Stencil, U: np.ndarray) -> np.ndarray:
    return (
        st.c * U[1:-1, 1:-1]
        + st.e * U[2:, 1:-1]
        + st.w * U[:-2, 1:-1]
        + st.n * U[1:-1, 2:]
        + st.s * U[1:-1, :-2]
    )


def _index_pattern(grid: SpaceTimeGrid):
    nx, ny = grid.nx, grid.ny
    k = np.arange(nx * ny).reshape(nx, ny)
    return k, {
        "c": (k, k),
        "e": (k[:-1, :], k[1:, :]),
        "w": (k[1:, :], k[:-1, :]),
        "n": (k[:, :-1], k[:, 1:]),
        "s": (k[:, 1:], k[:, :-1]),
    }


def stencil_matrix(grid: SpaceTimeGrid, st: Stencil, diag_shift: float = 0.0) -> sp.csc_matrix:
    k, pat = _index_pattern(grid)
    vals = {
        "c": st.c + diag_shift,
        "e": st.e[:-1, :],
        "w": st.w[1:, :],
        "n": st.n[:, :-1],
        "s": st.s[:, 1:],
    }
    rows = np.concatenate([pat[key][0].ravel() for key in "cewns"])
    cols = np.concatenate([pat[key][1].ravel() for key in "cewns"])
    data = np.concatenate([vals[key].ravel() for key in "cewns"])
    N = grid.nx * grid.ny
    return sp.csc_matrix((data, (rows, cols)), shape=(N, N))


class _Factor:
    def __init__(self, M: sp.csc_matrix):
        try:
            self.lu = splu(M)
        except RuntimeError as exc:
            raise SingularSystemError(f"implicit step matrix is singular: {exc}") from exc
        self.M = M

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if np.iscomplexobj(rhs):
            x = self.lu.solve(np.ascontiguousarray(rhs.real)) + 1j * self.lu.solve(np.ascontiguousarray(rhs.imag))
        else:
            x = self.lu.solve(rhs)
        r = self.M @ x - rhs
        scale = max(1.0, float(np.max(np.abs(rhs))))
        if not np.all(np.isfinite(x)) or np.max(np.abs(r)) > SOLVE_TOL * scale:
            raise SingularSystemError(f"implicit step residual {np.max(np.abs(r)):.3e} above tolerance")
        return x


def march(
    grid: SpaceTimeGrid,
    coef: Callable[[int], Tuple[np.ndarray, np.ndarray, np.ndarray]],
    g: np.ndarray,
    u0: np.ndarray,
    source: Optional[np.ndarray] = None,
    theta: float = 1.0,
    convection: str = "auto",
) -> np.ndarray:
    """theta-scheme for ``du/dt - Lap u + a . grad u + pot u = source``.

    ``coef(n)`` returns ``(a1, a2, pot)`` at level ``n``; boundary values come
    from ``g`` and the interior of level 0 from ``u0``.
    """
    if not 0.0 <= theta <= 1.0:
        raise ParameterError("theta must lie in [0, 1]")
    dt = grid.dt
    dtype = np.result_type(g, u0, source if source is not None else 0.0, float)
    U = np.zeros(grid.shape, dtype=dtype)
    mask = grid.boundary_mask()
    U[0] = u0
    U[0][mask] = g[0][mask]
    st_old = operator_stencil(grid, *coef(0), convection)
    factor, st_fact = None, None
    for n in range(grid.nt):
        st_new = operator_stencil(grid, *coef(n + 1), convection)
        gb = np.zeros(grid.spatial_shape, dtype=dtype)
        gb[mask] = g[n + 1][mask]
        rhs = U[n][1:-1, 1:-1] / dt - theta * apply_stencil(st_new, gb)
        if theta < 1.0:
            rhs = rhs - (1.0 - theta) * apply_stencil(st_old, U[n])
        if source is not None:
            rhs = rhs + theta * source[n + 1][1:-1, 1:-1] + (1.0 - theta) * source[n][1:-1, 1:-1]
        if not st_new.same_as(st_fact):
            scaled = Stencil(*(theta * getattr(st_new, k) for k in "cewns"))
            factor = _Factor(stencil_matrix(grid, scaled, diag_shift=1.0 / dt))
            st_fact = st_new
        U[n + 1] = gb
        U[n + 1][1:-1, 1:-1] = factor.solve(rhs.ravel()).reshape(grid.nx, grid.ny)
        st_old = st_new
    return U


def _check_cap(grid: SpaceTimeGrid, g: np.ndarray, cap: np.ndarray, level: int, what: str) -> None:
    mask = grid.boundary_mask()
    gap = np.max(np.abs(g[level][mask] - cap[mask])) if mask.any() else 0.0
    scale = max(1.0, float(np.max(np.abs(cap))))
    if gap > 1e-10 * scale:
        raise DataError(f"boundary datum incompatible with the {what} cap (gap {gap:.3e})")


def _weighted(c: CoefficientSet, weight, sign: int):
    rho, omega = weight
    w = check_unit(omega)
    return float(rho), w, LogWeight(float(rho), (float(w[0]), float(w[1])), sign)


def solve_forward(
    c: CoefficientSet,
    g,
    u0: Optional[np.ndarray] = None,
    f=None,
    theta: float = 1.0,
    convection: str = "auto",
    weight: Optional[Tuple[float, Sequence[float]]] = None,
) -> Solution:
    """Solve ``du/dt - Lap u + A . grad u + (div B + q) u = f`` with ``u = g`` on the
    lateral boundary and ``u(., 0) = u0``.

    With ``weight=(rho, omega)`` the data and the returned values are the
    bounded factor ``exp(-(rho^2 t + rho x . omega)) u``.
    """
    grid = c.grid
    g = _as_field(grid, g, "boundary datum")
    src = None if f is None else _as_field(grid, f, "source")
    cap = np.zeros(grid.spatial_shape, dtype=g.dtype) if u0 is None else np.asarray(u0)
    _check_cap(grid, g, cap, 0, "initial")
    pot = c.div_B() + c.q
    A = c.A
    lw = None
    if weight is not None:
        rho, w, lw = _weighted(c, weight, +1)
        A = A - 2.0 * rho * w[:, None, None, None]
        pot = pot + rho * (w[0] * c.A[0] + w[1] * c.A[1])
    U = march(grid, lambda n: (A[0, n], A[1, n], pot[n]), g, cap, src, theta, convection)
    return Solution(grid, U, boundary_trace(grid, U), normal_flux(grid, U), lw)


def solve_adjoint(
    c: CoefficientSet,
    g,
    f=None,
    uT: Optional[np.ndarray] = None,
    theta: float = 1.0,
    convection: str = "auto",
    weight: Optional[Tuple[float, Sequence[float]]] = None,
) -> Solution:
    """Solve ``-du/dt - Lap u - A . grad u + (q + div(B - A)) u = f`` backward from
    ``u(., T) = uT`` (zero by default).

    With ``weight=(rho, omega)`` the stored values are
    ``exp(+(rho^2 t + rho x . omega)) u``.
    """
    grid = c.grid
    g = _as_field(grid, g, "boundary datum")
    src = None if f is None else _as_field(grid, f, "source")
    cap = np.zeros(grid.spatial_shape, dtype=g.dtype) if uT is None else np.asarray(uT)
    _check_cap(grid, g, cap, grid.nt, "final")
    pot = c.q + flux_divergence(c.B - c.A, grid)
    A = -c.A
    lw = None
    if weight is not None:
        rho, w, lw = _weighted(c, weight, -1)
        A = A + 2.0 * rho * w[:, None, None, None]
        pot = pot + rho * (w[0] * c.A[0] + w[1] * c.A[1])
    nt = grid.nt
    rev = lambda m: (A[0, nt - m], A[1, nt - m], pot[nt - m])
    U = march(grid, rev, g[::-1], cap, None if src is None else src[::-1], theta, convection)[::-1].copy()
    return Solution(grid, U, boundary_trace(grid, U), normal_flux(grid, U), lw)


# ---------------------------------------------------------------- quasi-linear


@dataclass
class QuasiLinearModel:
    """Nonlinearity ``F(x, t, u, v)`` with its partial derivatives.

    Callables take ``x`` of shape ``(2, ...)``, ``t`` and ``u`` broadcastable to
    ``x[0]``, and ``v`` of shape ``(2, ...)``. ``dF_dv`` returns shape ``(2, ...)``.
    """

    F: Callable
    dF_du: Callable
    dF_dv: Callable
    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = np.inf
    name: str = "custom"

    def validate(self, grid: SpaceTimeGrid, u_max: float = 2.0, v_max: float = 2.0, n: int = 5) -> Dict[str, bool]:
        """Check the sign, boundary and growth conditions on a sampling lattice."""
        xs = np.linspace(0.0, grid.Lx, n)
        ys = np.linspace(0.0, grid.Ly, n)
        ts = np.linspace(0.0, grid.T, 3)
        us = np.linspace(-u_max, u_max, n)
        vs = np.linspace(-v_max, v_max, n)
        X, Y, Tt, Uu, V1, V2 = np.meshgrid(xs, ys, ts, us, vs, vs, indexing="ij")
        x = np.stack([X, Y])
        v = np.stack([V1, V2])
        Fv = np.asarray(self.F(x, Tt, Uu, v), dtype=float) * np.ones_like(X)
        vn2 = V1**2 + V2**2
        sign_ok = bool(np.all(Uu * Fv >= -self.c0 * vn2 - self.c1 * Uu**2 - self.c2 - 1e-12))
        growth_ok = bool(np.all(np.abs(Fv) <= self.c3 * (1.0 + np.sqrt(vn2)) ** 2 + 1e-12))
        on_edge = (
            np.isclose(X, 0.0) | np.isclose(X, grid.Lx) | np.isclose(Y, 0.0) | np.isclose(Y, grid.Ly)
        ) & np.isclose(Tt, 0.0)
        edge_ok = bool(np.all(np.abs(Fv[on_edge]) <= 1e-12))
        return {"sign": sign_ok, "boundary_zero": edge_ok, "growth": growth_ok}


def _interior_points(grid: SpaceTimeGrid) -> np.ndarray:
    X, Y = grid.mesh()
    return np.stack([X[1:-1, 1:-1], Y[1:-1, 1:-1]])


def _grad_interior(grid: SpaceTimeGrid, U: np.ndarray) -> np.ndarray:
    return np.stack(
        [
            (U[2:, 1:-1] - U[:-2, 1:-1]) / (2 * grid.hx),
            (U[1:-1, 2:] - U[1:-1, :-2]) / (2 * grid.hy),
        ]
    )


def _lap_interior(grid: SpaceTimeGrid, U: np.ndarray) -> np.ndarray:
    return (U[2:, 1:-1] - 2 * U[1:-1, 1:-1] + U[:-2, 1:-1]) / grid.hx**2 + (
        U[1:-1, 2:] - 2 * U[1:-1, 1:-1] + U[1:-1, :-2]
    ) / grid.hy**2


def _difference_matrices(grid: SpaceTimeGrid):
    zero = np.zeros(grid.spatial_shape)
    lap = stencil_matrix(grid, operator_stencil(grid, zero, zero, zero, "centered"))
    nxny = (grid.nx, grid.ny)
    half_x, half_y = 1 / (2 * grid.hx), 1 / (2 * grid.hy)
    z = np.zeros(nxny)
    dx = stencil_matrix(grid, Stencil(z, np.full(nxny, half_x), np.full(nxny, -half_x), z, z))
    dy = stencil_matrix(grid, Stencil(z, z, z, np.full(nxny, half_y), np.full(nxny, -half_y)))
    return lap, dx, dy


def laplacian_full(grid: SpaceTimeGrid, U: np.ndarray) -> np.ndarray:
    """Second-order Laplacian on every node of one level (one-sided at the edge)."""
    d2x = np.gradient(np.gradient(U, grid.hx, axis=-2, edge_order=2), grid.hx, axis=-2, edge_order=2)
    d2y = np.gradient(np.gradient(U, grid.hy, axis=-1, edge_order=2), grid.hy, axis=-1, edge_order=2)
    return d2x + d2y


def check_compatibility(grid: SpaceTimeGrid, G: np.ndarray, tol: float = 1e-8) -> float:
    """Gap of ``dG/dt = Lap G`` at boundary nodes and t = 0; raises above ``tol``."""
    mask = grid.boundary_mask()
    dtG = (G[1] - G[0]) / grid.dt
    gap = float(np.max(np.abs(dtG[mask] - laplacian_full(grid, G[0])[mask])))
    if gap > tol:
        raise DataError(f"datum violates the corner compatibility condition (gap {gap:.3e})")
    return gap


def solve_quasilinear(
    m: QuasiLinearModel,
    G,
    grid: SpaceTimeGrid,
    f=None,
    strict: bool = False,
    check_compat: bool = True,
) -> Solution:
    """Implicit Euler with a damped Newton iteration per step for
    ``du/dt - Lap u + F(x, t, u, grad u) = f`` and ``u = G`` on the parabolic boundary.

    The Newton residual is measured as ``dt * max|R|``. With ``strict`` any
    failed model condition raises :class:`ModelClassError`; otherwise the
    check results are stored in ``diagnostics``.
    """
    G = _as_field(grid, G, "datum")
    src = None if f is None else _as_field(grid, f, "source")
    checks = m.validate(grid)
    if strict:
        for name, ok in checks.items():
            if not ok:
                raise ModelClassError(f"model {m.name!r} fails the {name} condition", name)
    gap = check_compatibility(grid, G) if check_compat else None
    lap, Dx, Dy = _difference_matrices(grid)
    eye = sp.identity(grid.nx * grid.ny, format="csc")
    xi = _interior_points(grid)
    dt = grid.dt
    U = np.zeros(grid.shape)
    U[0] = G[0]
    mask = grid.boundary_mask()
    iterations: List[int] = []
    worst = 0.0
    for n in range(grid.nt):
        t = (n + 1) * dt
        Un = U[n].copy()
        Un[mask] = G[n + 1][mask]
        fn = 0.0 if src is None else src[n + 1][1:-1, 1:-1]

        def residual(Ufull):
            ui = Ufull[1:-1, 1:-1]
            r = (ui - U[n][1:-1, 1:-1]) / dt - _lap_interior(grid, Ufull) + m.F(xi, t, ui, _grad_interior(grid, Ufull)) - fn
            return np.asarray(r, dtype=float) * np.ones_like(ui)

        R = residual(Un)
        res = dt * float(np.max(np.abs(R)))
        it = 0
        while res >= NEWTON_TOL:
            if it >= NEWTON_MAXIT:
                raise NonlinearSolverError(f"Newton failed at step {n + 1}: residual {res:.3e}", res)
            ui = Un[1:-1, 1:-1]
            gr = _grad_interior(grid, Un)
            fu = np.asarray(m.dF_du(xi, t, ui, gr), dtype=float) * np.ones_like(ui)
            fv = np.asarray(m.dF_dv(xi, t, ui, gr), dtype=float) * np.ones((2,) + ui.shape)
            J = eye / dt + lap + sp.diags(fu.ravel()) + sp.diags(fv[0].ravel()) @ Dx + sp.diags(fv[1].ravel()) @ Dy
            delta = _Factor(sp.csc_matrix(J)).solve(-R.ravel()).reshape(ui.shape)
            lam = 1.0
            while True:
                trial = Un.copy()
                trial[1:-1, 1:-1] += lam * delta
                Rt = residual(trial)
                if np.max(np.abs(Rt)) <= np.max(np.abs(R)) or lam < 1e-6:
                    break
                lam *= 0.5
            Un, R = trial, Rt
            res = dt * float(np.max(np.abs(R)))
            it += 1
        iterations.append(it)
        worst = max(worst, res)
        U[n + 1] = Un
    diag = {"model_checks": checks, "newton_iterations": iterations, "max_residual": worst, "compat_gap": gap}
    return Solution(grid, U, boundary_trace(grid, U), normal_flux(grid, U), None, diag)


@dataclass
class LinearizedProblem:
    A_FG: np.ndarray
    q_FG: np.ndarray
    H: np.ndarray


def linearized_coefficients(m: QuasiLinearModel, base: Solution) -> Tuple[np.ndarray, np.ndarray]:
    """``dF/dv`` and ``dF/du`` along the base solution (centered gradients)."""
    grid = base.grid
    U = base.values
    T, X, Y = grid.mesh3()
    gx = np.gradient(U, grid.hx, axis=1, edge_order=2)
    gy = np.gradient(U, grid.hy, axis=2, edge_order=2)
    x = np.stack([X, Y])
    v = np.stack([gx, gy])
    A = np.asarray(m.dF_dv(x, T, U, v), dtype=float) * np.ones((2,) + grid.shape)
    q = np.asarray(m.dF_du(x, T, U, v), dtype=float) * np.ones(grid.shape)
    return A, q


def solve_linearized(m: QuasiLinearModel, base: Solution, H) -> Solution:
    """Linear problem with coefficients frozen along ``base`` and datum ``H`` on the parabolic boundary."""
    grid = base.grid
    H = _as_field(grid, H, "datum")
    A, q = linearized_coefficients(m, base)
    c = CoefficientSet(grid, A, np.zeros_like(A), q)
    sol = solve_forward(c, H, u0=H[0], convection="centered")
    sol.diagnostics["problem"] = LinearizedProblem(A, q, H)
    return sol


@dataclass
class FrechetResult:
    epsilons: List[float]
    residuals: List[float]
    slope: Optional[float]
    linear_branch: bool
    passed: bool


def l2_norm(grid: SpaceTimeGrid, U: np.ndarray) -> float:
    return float(np.sqrt(np.sum(grid.weights() * np.abs(U) ** 2)))


def frechet_check(m: QuasiLinearModel, G, H, grid: SpaceTimeGrid, epsilons: Sequence[float]) -> FrechetResult:
    """Residual ``|u(G + eps H) - u(G) - eps w|`` in the discrete L2(Q) norm and its log-log slope."""
    eps = [float(e) for e in epsilons]
    if len(eps) < 3 or any(b >= a for a, b in zip(eps, eps[1:])) or eps[-1] <= 0:
        raise ParameterError("epsilons must hold at least 3 strictly decreasing positive values")
    G = _as_field(grid, G, "datum")
    H = _as_field(grid, H, "datum")
    base = solve_quasilinear(m, G, grid)
    w = solve_linearized(m, base, H)
    res = []
    for e in eps:
        u = solve_quasilinear(m, G + e * H, grid)
        res.append(l2_norm(grid, u.values - base.values - e * w.values))
    if max(res) <= 1e-9:
        return FrechetResult(eps, res, None, True, True)
    slope = float(np.polyfit(np.log(eps), np.log(res), 1)[0])
    return FrechetResult(eps, res, slope, False, 1.8 <= slope <= 2.2)
