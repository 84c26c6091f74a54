"""Weighted-estimate audit for the parabolic operator conjugated by the
perturbed linear weight.

The weight is ``phi = sign * (rho^2 t + rho d.x) - s ((x + x0).omega)^2 / 2``
where ``d`` is the linear direction (equal to ``omega`` unless a reflected
weight is requested). The conjugated operator splits into three parts that are
evaluated either with grid differences or with symbolic derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp

from .errors import AuditError, OverflowGuardError, ParameterError, PresetError
from .go import OVERFLOW_LOG
from .grid import SpaceTimeGrid, build_grid, check_unit, edge_normal, partition_boundary
from .report import write_csv

SHIFT_TOL = 1e-12
RATIO_BOUND = 3.0
SIDES = ("plus", "minus")

AUDIT_COLUMNS = (
    "preset", "side", "s", "rho",
    "boundary_lhs", "cap", "laplacian", "volume",
    "operator", "boundary_rhs",
    "lhs", "rhs", "ratio", "pass",
)

_x, _y, _t = sp.symbols("x y t", real=True)


def shift_target(Lx: float = 1.0, Ly: float = 1.0) -> float:
    """``2 + sup |x|`` over the rectangle ``[0, Lx] x [0, Ly]``."""
    return 2.0 + float(np.hypot(Lx, Ly))


@dataclass(frozen=True)
class WeightParams:
    s: float
    rho: float
    omega: Tuple[float, float]
    x0: Tuple[float, float]
    enforce_shift: bool = True
    domain: Tuple[float, float] = (1.0, 1.0)
    linear_direction: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not (self.s > 1.0 and self.rho > self.s):
            raise ParameterError(f"need rho > s > 1, got s={self.s}, rho={self.rho}")
        om = check_unit(self.omega)
        object.__setattr__(self, "omega", (float(om[0]), float(om[1])))
        object.__setattr__(self, "x0", (float(self.x0[0]), float(self.x0[1])))
        if self.linear_direction is not None:
            d = check_unit(self.linear_direction)
            object.__setattr__(self, "linear_direction", (float(d[0]), float(d[1])))
        if self.enforce_shift:
            gap = abs(np.dot(self.x0, self.omega) - shift_target(*self.domain))
            if gap > SHIFT_TOL:
                raise ParameterError(f"shift vector misses its target by {gap:.3e}")

    @classmethod
    def default(cls, s: float, rho: float, omega=(1.0, 0.0), Lx: float = 1.0, Ly: float = 1.0) -> "WeightParams":
        om = check_unit(omega)
        x0 = shift_target(Lx, Ly) * om
        return cls(s, rho, (om[0], om[1]), (x0[0], x0[1]), True, (Lx, Ly))

    @property
    def direction(self) -> Tuple[float, float]:
        return self.linear_direction if self.linear_direction is not None else self.omega

    def reflected(self) -> "WeightParams":
        """Weight whose linear part runs along ``-direction``; the quadratic part is kept."""
        d = self.direction
        return replace(self, linear_direction=(-d[0], -d[1]))

    def with_rho(self, rho: float) -> "WeightParams":
        return replace(self, rho=rho)


def _sign(side) -> int:
    if side in ("plus", 1, "+"):
        return 1
    if side in ("minus", -1, "-"):
        return -1
    raise ParameterError(f"side must be 'plus' or 'minus', got {side!r}")


def _z(p: WeightParams, x, y):
    return (x + p.x0[0]) * p.omega[0] + (y + p.x0[1]) * p.omega[1]


def rho_threshold(s: float, Lx: float = 1.0, Ly: float = 1.0) -> float:
    """Explicit lower bound on rho from the energy argument for fixed ``s``.

    Below it the linear and quadratic weight gradients nearly cancel and the
    empirical constant drifts; sweeps meant to test uniformity start here.
    """
    r = float(np.hypot(Lx, Ly))
    return s * (3.0 + r) ** 2 + float(np.sqrt(5.0 * s**2 * (2.0 + r) ** 2 + s))


def threshold_decade(s: float, count: int = 5, Lx: float = 1.0, Ly: float = 1.0) -> np.ndarray:
    """``count`` geometric rho values spanning one decade from the threshold."""
    r1 = rho_threshold(s, Lx, Ly)
    return np.geomspace(r1, 10.0 * r1, count)


def weight_phi(p: WeightParams, sign, x, y, t):
    """Perturbed weight at points ``(x, y, t)`` (arrays broadcast)."""
    sg = _sign(sign)
    d = p.direction
    z = _z(p, x, y)
    return sg * (p.rho**2 * t + p.rho * (d[0] * x + d[1] * y)) - 0.5 * p.s * z**2


def _weight_derivatives(p: WeightParams, sg: int, x, y):
    d, om = p.direction, p.omega
    z = _z(p, x, y)
    gx = sg * p.rho * d[0] - p.s * z * om[0]
    gy = sg * p.rho * d[1] - p.s * z * om[1]
    return sg * p.rho**2, gx, gy, -p.s  # phi_t, grad phi, laplacian phi


def _parts(p: WeightParams, sg: int, x, y, v, vt, vx, vy, lap, A=None, q=None):
    phit, gx, gy, lphi = _weight_derivatives(p, sg, x, y)
    p1 = -lap + (sg * phit - (gx**2 + gy**2) + lphi) * v
    p2 = sg * vt - 2.0 * (gx * vx + gy * vy) - 2.0 * lphi * v
    if A is None:
        p3 = np.zeros_like(np.asarray(p1, dtype=float))
    else:
        p3 = sg * (A[0] * vx + A[1] * vy + (A[0] * gx + A[1] * gy) * v)
    if q is not None:
        p3 = p3 + q * v
    return p1, p2, p3


@dataclass
class ConjugatedParts:
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    direct: np.ndarray
    mask: np.ndarray  # nodes where the direct conjugation is defined

    @property
    def total(self) -> np.ndarray:
        return self.p1 + self.p2 + self.p3

    def sum_gap(self) -> float:
        """Max deviation between the three-part sum and the direct conjugation."""
        if not self.mask.any():
            return 0.0
        return float(np.max(np.abs(self.total[self.mask] - self.direct[self.mask])))


def _lap_grid(grid: SpaceTimeGrid, v: np.ndarray) -> np.ndarray:
    hx, hy = grid.hx, grid.hy
    out = np.gradient(np.gradient(v, hx, axis=1, edge_order=2), hx, axis=1, edge_order=2)
    out = out + np.gradient(np.gradient(v, hy, axis=2, edge_order=2), hy, axis=2, edge_order=2)
    out[:, 1:-1, 1:-1] = (
        (v[:, 2:, 1:-1] - 2 * v[:, 1:-1, 1:-1] + v[:, :-2, 1:-1]) / hx**2
        + (v[:, 1:-1, 2:] - 2 * v[:, 1:-1, 1:-1] + v[:, 1:-1, :-2]) / hy**2
    )
    return out


def _guard(*diffs: np.ndarray) -> None:
    worst = max(float(np.max(d)) for d in diffs)
    if worst > OVERFLOW_LOG:
        raise OverflowGuardError(f"relative weight exponent {worst:.1f} exceeds {OVERFLOW_LOG}")


def direct_conjugation(p: WeightParams, grid: SpaceTimeGrid, v: np.ndarray, sign="plus", A=None, q=None):
    """``exp(-phi) L (exp(phi) v)`` with grid differences, using only weight ratios.

    Backward difference in time (forward at the first level), five-point
    Laplacian, centred convection; defined on interior spatial nodes.
    """
    sg = _sign(sign)
    v = np.asarray(v)
    X, Y = grid.mesh()
    phi = weight_phi(p, sg, X[None], Y[None], grid.t[:, None, None])
    c = (slice(None), slice(1, -1), slice(1, -1))
    pc = phi[c]
    dE = phi[:, 2:, 1:-1] - pc
    dW = phi[:, :-2, 1:-1] - pc
    dN = phi[:, 1:-1, 2:] - pc
    dS = phi[:, 1:-1, :-2] - pc
    dPrev = phi[:-1, 1:-1, 1:-1] - pc[1:]
    dNext = phi[1:, 1:-1, 1:-1] - pc[:-1]
    _guard(dE, dW, dN, dS, dPrev, dNext[:1])
    vc = v[c]
    vE, vW = np.exp(dE) * v[:, 2:, 1:-1], np.exp(dW) * v[:, :-2, 1:-1]
    vN, vS = np.exp(dN) * v[:, 1:-1, 2:], np.exp(dS) * v[:, 1:-1, :-2]
    lap = (vE - 2 * vc + vW) / grid.hx**2 + (vN - 2 * vc + vS) / grid.hy**2
    dtv = np.empty_like(vc)
    dtv[1:] = (vc[1:] - np.exp(dPrev) * vc[:-1]) / grid.dt
    dtv[0] = (np.exp(dNext[0]) * vc[1] - vc[0]) / grid.dt
    out = sg * dtv - lap
    if A is not None:
        ax, ay = (np.broadcast_to(a, v.shape)[c] for a in A)
        out = out + sg * (ax * (vE - vW) / (2 * grid.hx) + ay * (vN - vS) / (2 * grid.hy))
    if q is not None:
        out = out + np.broadcast_to(q, v.shape)[c] * vc
    full = np.zeros(v.shape, dtype=np.result_type(v, float))
    full[c] = out
    return full


def conjugated_apply(
    p: WeightParams, A, v: np.ndarray, grid: SpaceTimeGrid, sign="plus", q=None
) -> ConjugatedParts:
    """Three-part application of the conjugated operator to grid samples ``v``.

    ``A`` is None or a pair of arrays (or scalars) broadcastable to the grid shape.
    """
    sg = _sign(sign)
    v = np.asarray(v)
    if v.shape != grid.shape:
        raise ParameterError(f"test field has shape {v.shape}, expected {grid.shape}")
    X, Y = grid.mesh()
    vt = np.gradient(v, grid.dt, axis=0, edge_order=2)
    vx = np.gradient(v, grid.hx, axis=1, edge_order=2)
    vy = np.gradient(v, grid.hy, axis=2, edge_order=2)
    Ab = None if A is None else tuple(np.broadcast_to(a, v.shape) for a in A)
    qb = None if q is None else np.broadcast_to(q, v.shape)
    p1, p2, p3 = _parts(p, sg, X[None], Y[None], v, vt, vx, vy, _lap_grid(grid, v), Ab, qb)
    direct = direct_conjugation(p, grid, v, sg, Ab, qb)
    mask = np.zeros(v.shape, dtype=bool)
    mask[:, 1:-1, 1:-1] = True
    return ConjugatedParts(p1, p2, np.broadcast_to(p3, v.shape).copy(), direct, mask)


# ---------------------------------------------------------------- presets

def _preset_exprs(T: float) -> Dict[str, sp.Expr]:
    pi = sp.pi
    return {
        "zero": sp.Integer(0),
        "t_sinsin": _t * sp.sin(pi * _x) * sp.sin(pi * _y),
        "t2_sin2sin": _t**2 * sp.sin(2 * pi * _x) * sp.sin(pi * _y),
        "sinsin": sp.sin(pi * _x) * sp.sin(pi * _y),
    }


AUDIT_PRESETS = ("zero", "t_sinsin", "t2_sin2sin", "sinsin")


def audit_preset(name: str, side="plus", T: float = 1.0, Lx: float = 1.0, Ly: float = 1.0) -> sp.Expr:
    """Named test function, oriented for ``side``: the minus side uses ``t -> T - t``.

    Presets are written for the unit square and rescaled to ``[0, Lx] x [0, Ly]``.
    """
    table = _preset_exprs(T)
    if name not in table:
        raise PresetError(f"unknown audit preset {name!r}; known: {', '.join(AUDIT_PRESETS)}")
    e = table[name].subs({_x: _x / Lx, _y: _y / Ly}, simultaneous=True)
    if _sign(side) < 0:
        e = e.subs(_t, T - _t)
    return e


@dataclass
class _Compiled:
    v: object
    vt: object
    vx: object
    vy: object
    lap: object


def _compile(expr: sp.Expr) -> _Compiled:
    def f(e):
        g = sp.lambdify((_x, _y, _t), e, "numpy")
        return lambda X, Y, Tt: np.broadcast_to(np.asarray(g(X, Y, Tt), dtype=float), np.broadcast(X, Y, Tt).shape)

    return _Compiled(
        f(expr),
        f(sp.diff(expr, _t)),
        f(sp.diff(expr, _x)),
        f(sp.diff(expr, _y)),
        f(sp.diff(expr, _x, 2) + sp.diff(expr, _y, 2)),
    )


def _gauss(n: int, a: float, b: float):
    z, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * z + 0.5 * (a + b), 0.5 * (b - a) * w


def check_audit_preset(expr: sp.Expr, side, Lx: float = 1.0, Ly: float = 1.0, T: float = 1.0, tol: float = 1e-12) -> None:
    """Raise PresetError unless the preset vanishes on the lateral boundary and on the side's cap."""
    c = _compile(sp.sympify(expr)).v
    s = np.linspace(0.0, 1.0, 17)
    xs, ys, ts = s * Lx, s * Ly, s * T
    scale = max(1.0, float(np.max(np.abs(c(*np.meshgrid(xs, ys, ts, indexing="ij"))))))
    Y, Tt = np.meshgrid(ys, ts, indexing="ij")
    X, T2 = np.meshgrid(xs, ts, indexing="ij")
    lateral = max(
        float(np.max(np.abs(c(0.0 * Y, Y, Tt)))),
        float(np.max(np.abs(c(Lx + 0.0 * Y, Y, Tt)))),
        float(np.max(np.abs(c(X, 0.0 * X, T2)))),
        float(np.max(np.abs(c(X, Ly + 0.0 * X, T2)))),
    )
    if lateral > tol * scale:
        raise PresetError(f"test function does not vanish on the lateral boundary (max {lateral:.3e})")
    cap_t = 0.0 if _sign(side) > 0 else T
    Xc, Yc = np.meshgrid(xs, ys, indexing="ij")
    cap = float(np.max(np.abs(c(Xc, Yc, cap_t + 0.0 * Xc))))
    if cap > tol * scale:
        which = "bottom" if cap_t == 0.0 else "top"
        raise PresetError(f"test function does not vanish on the {which} cap (max {cap:.3e})")


@dataclass
class AuditRow:
    preset: str
    side: str
    s: float
    rho: float
    terms: Dict[str, float]
    lhs: float
    rhs: float
    ratio: float
    passed: bool = True

    def as_tuple(self):
        t = self.terms
        return (
            self.preset, self.side, self.s, self.rho,
            t["boundary_lhs"], t["cap"], t["laplacian"], t["volume"],
            t["operator"], t["boundary_rhs"],
            self.lhs, self.rhs, self.ratio, self.passed,
        )


def audit_terms(
    p: WeightParams,
    expr: sp.Expr,
    side="plus",
    T: float = 1.0,
    A=None,
    q=None,
    nodes: int = 24,
    compiled: Optional[_Compiled] = None,
) -> Dict[str, float]:
    """Every integral of the weighted estimate for one test function, by Gauss-Legendre quadrature.

    ``A`` and ``q`` are None, constants, or sympy expressions in ``x, y, t``.
    """
    sg = _sign(side)
    Lx, Ly = p.domain
    cv = compiled or _compile(sp.sympify(expr))
    xs, wx = _gauss(nodes, 0.0, Lx)
    ys, wy = _gauss(nodes, 0.0, Ly)
    ts, wt = _gauss(nodes, 0.0, T)
    X, Y, Tt = np.meshgrid(xs, ys, ts, indexing="ij")
    W = wx[:, None, None] * wy[None, :, None] * wt[None, None, :]

    def coef(c):
        if c is None:
            return None
        if isinstance(c, sp.Expr):
            return sp.lambdify((_x, _y, _t), c, "numpy")(X, Y, Tt) + 0.0 * X
        return np.asarray(c, dtype=float) + 0.0 * X

    Ab = None if A is None else tuple(coef(sp.sympify(a) if isinstance(a, str) else a) for a in A)
    qb = coef(q)
    v = cv.v(X, Y, Tt)
    lap = cv.lap(X, Y, Tt)
    p1, p2, p3 = _parts(p, sg, X, Y, v, cv.vt(X, Y, Tt), cv.vx(X, Y, Tt), cv.vy(X, Y, Tt), lap, Ab, qb)
    Pv = p1 + p2 + p3

    part = partition_boundary(build_grid(1, 1, 1, Lx, Ly, T), p.direction)
    Tb, Wt = ts, wt
    bnd = {"plus": 0.0, "minus": 0.0}
    for names, key in ((part.sigma_plus, "plus"), (part.sigma_minus, "minus")):
        for name in names:
            face = part.faces[name]
            nu = edge_normal(name)
            if name in ("left", "right"):
                xc = 0.0 if name == "left" else Lx
                S, Tq = np.meshgrid(ys, Tb, indexing="ij")
                Wf = wy[:, None] * Wt[None, :]
                dn = nu[0] * cv.vx(xc + 0.0 * S, S, Tq)
            else:
                yc = 0.0 if name == "bottom" else Ly
                S, Tq = np.meshgrid(xs, Tb, indexing="ij")
                Wf = wx[:, None] * Wt[None, :]
                dn = nu[1] * cv.vy(S, yc + 0.0 * S, Tq)
            bnd[key] += face.weight * float(np.sum(Wf * dn**2))

    cap_t = T if sg > 0 else 0.0
    Xc, Yc = np.meshgrid(xs, ys, indexing="ij")
    cap = float(np.sum(wx[:, None] * wy[None, :] * cv.v(Xc, Yc, cap_t + 0.0 * Xc) ** 2))
    lit, dark = ("plus", "minus") if sg > 0 else ("minus", "plus")
    return {
        "boundary_lhs": p.rho * bnd[lit],
        "cap": p.s * p.rho * cap,
        "laplacian": float(np.sum(W * lap**2)) / p.s,
        "volume": p.s * p.rho**2 * float(np.sum(W * v**2)),
        "operator": float(np.sum(W * Pv**2)),
        "boundary_rhs": p.rho * bnd[dark],
    }


@dataclass
class CarlemanAudit:
    rows: List[AuditRow]
    spread: Dict[Tuple[str, str, float], float] = field(default_factory=dict)
    passed: bool = True

    def write_csv(self, path) -> None:
        write_csv(path, AUDIT_COLUMNS, [r.as_tuple() for r in self.rows])


PresetLike = Union[str, sp.Expr]


def estimate_audit(
    s_list: Sequence[float],
    rho_list: Sequence[float],
    presets: Sequence[PresetLike] = ("t_sinsin", "t2_sin2sin"),
    side="plus",
    omega=(1.0, 0.0),
    Lx: float = 1.0,
    Ly: float = 1.0,
    T: float = 1.0,
    A=None,
    q=None,
    nodes: int = 24,
    bound: float = RATIO_BOUND,
) -> CarlemanAudit:
    """Sweep ``rho`` at each fixed ``s`` and tabulate both sides of the weighted estimate.

    Named presets are oriented for ``side``; raw expressions are used as given.
    A group (preset, s) passes when ``max ratio / min ratio <= bound``; all-zero
    test functions are skipped.
    """
    sg = _sign(side)
    side_name = "plus" if sg > 0 else "minus"
    rhos = [float(r) for r in rho_list]
    if len(rhos) < 2 or any(b <= a for a, b in zip(rhos, rhos[1:])):
        raise AuditError("rho sweep needs at least two increasing values")
    rows: List[AuditRow] = []
    spread: Dict[Tuple[str, str, float], float] = {}
    ok = True
    for pr in presets:
        if isinstance(pr, str):
            label, expr = pr, audit_preset(pr, side_name, T, Lx, Ly)
        else:
            label, expr = str(pr), sp.sympify(pr)
        check_audit_preset(expr, side_name, Lx, Ly, T)
        cv = _compile(expr)
        for s in s_list:
            group: List[AuditRow] = []
            for rho in rhos:
                p = WeightParams.default(float(s), rho, omega, Lx, Ly)
                terms = audit_terms(p, expr, side_name, T, A, q, nodes, cv)
                lhs = terms["boundary_lhs"] + terms["cap"] + terms["laplacian"] + terms["volume"]
                rhs = terms["operator"] + terms["boundary_rhs"]
                ratio = lhs / rhs if rhs > 0 else float("nan")
                group.append(AuditRow(label, side_name, float(s), rho, terms, lhs, rhs, ratio))
            ratios = np.array([r.ratio for r in group])
            if np.all(np.isnan(ratios)):
                sp_val, good = float("nan"), True
            else:
                sp_val = float(np.nanmax(ratios) / np.nanmin(ratios))
                good = bool(np.all(np.isfinite(ratios)) and sp_val <= bound)
            for r in group:
                r.passed = good
            spread[(label, side_name, float(s))] = sp_val
            ok = ok and good
            rows.extend(group)
    return CarlemanAudit(rows, spread, ok)


def reflect_preset(expr: sp.Expr, T: float = 1.0) -> sp.Expr:
    """``v(x, T - t)``."""
    return sp.sympify(expr).subs(_t, T - _t)


def sample_expr(expr: sp.Expr, grid: SpaceTimeGrid) -> np.ndarray:
    """Grid samples of a symbolic test function."""
    Tt, X, Y = grid.mesh3()
    return _compile(sp.sympify(expr)).v(X, Y, Tt).copy()
