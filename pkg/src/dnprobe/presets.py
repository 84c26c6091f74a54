"""Named coefficient fields, gauge functions, quasi-linear models and boundary data.

Every coefficient preset is a function ``(grid, **params) -> CoefficientSet``.
Convection presets place their support inside a collar-free disc so that the
fields vanish near the lateral boundary.
"""

from __future__ import annotations

import csv
from typing import Callable, Dict, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigurationError, DataError
from .fields import CoefficientSet, GaugeFunction, bump, bump_gradient
from .forward import QuasiLinearModel
from .grid import SpaceTimeGrid


def _center(grid: SpaceTimeGrid):
    return (0.5 * grid.Lx, 0.5 * grid.Ly)


def _radius(grid: SpaceTimeGrid, radius: Optional[float]) -> float:
    return 0.4 * min(grid.Lx, grid.Ly) if radius is None else float(radius)


def time_envelope(t: np.ndarray, T: float) -> np.ndarray:
    """Smooth compactly supported profile in ``(0, T)`` with peak 1 at ``T / 2``."""
    s = 2.0 * np.asarray(t, dtype=float) / T - 1.0
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def _vec(grid: SpaceTimeGrid, ax: np.ndarray, ay: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.stack([ax, ay]), (2,) + grid.shape).copy()


def preset_zero(grid: SpaceTimeGrid, **_) -> CoefficientSet:
    return CoefficientSet.zeros(grid)


def preset_constant(grid: SpaceTimeGrid, ax: float = 1.0, ay: float = 0.0, bx: float = 0.0, by: float = 0.0,
                    q: float = 0.0, **_) -> CoefficientSet:
    shape = grid.shape
    A = np.stack([np.full(shape, ax), np.full(shape, ay)])
    B = np.stack([np.full(shape, bx), np.full(shape, by)])
    return CoefficientSet(grid, A, B, np.full(shape, q))


def preset_bump(grid: SpaceTimeGrid, amplitude: float = 1.0, radius: Optional[float] = None, **_) -> CoefficientSet:
    """Potential ``q`` equal to a spatial bump; A = B = 0."""
    T, X, Y = grid.mesh3()
    q = amplitude * bump(X, Y, _center(grid), _radius(grid, radius))
    z = np.zeros((2,) + grid.shape)
    return CoefficientSet(grid, z, z.copy(), q)


def preset_vortex(grid: SpaceTimeGrid, amplitude: float = 1.0, radius: Optional[float] = None, **_) -> CoefficientSet:
    """Rotational convection ``amplitude * bump(x) * (-(y - y_c), x - x_c)``."""
    T, X, Y = grid.mesh3()
    cx, cy = _center(grid)
    b = amplitude * bump(X, Y, (cx, cy), _radius(grid, radius))
    A = np.stack([-(Y - cy) * b, (X - cx) * b])
    return CoefficientSet(grid, A, np.zeros_like(A), np.zeros(grid.shape))


def preset_bump_vortex(grid: SpaceTimeGrid, amplitude: float = 4.0, radius: Optional[float] = None, **_) -> CoefficientSet:
    """Vortex with a smooth compact time envelope, so it vanishes near both caps."""
    c = preset_vortex(grid, amplitude, radius)
    env = time_envelope(grid.t, grid.T)[None, :, None, None]
    return c.replace(A=c.A * env)


def preset_gradient_of_bump(grid: SpaceTimeGrid, amplitude: float = 0.5, radius: Optional[float] = None,
                            **_) -> CoefficientSet:
    """Curl-free convection ``A = grad(amplitude * bump)``."""
    T, X, Y = grid.mesh3()
    gx, gy = bump_gradient(X, Y, _center(grid), _radius(grid, radius))
    A = amplitude * np.stack([gx, gy])
    return CoefficientSet(grid, A, np.zeros_like(A), np.zeros(grid.shape))


def preset_step(grid: SpaceTimeGrid, amplitude: float = 1.0, cut: Optional[float] = None, **_) -> CoefficientSet:
    """Discontinuous convection ``amplitude * 1{x > cut} e_x``; a bounded field with a jump."""
    T, X, Y = grid.mesh3()
    xc = 0.5 * grid.Lx if cut is None else float(cut)
    ax = amplitude * (X > xc).astype(float)
    A = np.stack([ax, np.zeros_like(ax)])
    return CoefficientSet(grid, A, np.zeros_like(A), np.zeros(grid.shape))


COEFFICIENT_PRESETS: Dict[str, Callable[..., CoefficientSet]] = {
    "zero": preset_zero,
    "constant": preset_constant,
    "bump": preset_bump,
    "vortex": preset_vortex,
    "bump-vortex": preset_bump_vortex,
    "gradient-of-bump": preset_gradient_of_bump,
    "step": preset_step,
}


def coefficient_preset(name: str, grid: SpaceTimeGrid, **params) -> CoefficientSet:
    try:
        factory = COEFFICIENT_PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown coefficient preset {name!r}") from None
    return factory(grid, **params)


def random_gauge(grid: SpaceTimeGrid, rng: np.random.Generator, modes: int = 3, amplitude: float = 0.5) -> GaugeFunction:
    """Smooth gauge function: a random sine series in space times ``sin(pi t / T)``.

    Derivatives are evaluated analytically, so the only discretisation error in a
    gauge-invariance test comes from the solvers.
    """
    T, X, Y = grid.mesh3()
    coef = rng.normal(size=(modes, modes)) / (1.0 + np.add.outer(np.arange(modes), np.arange(modes))) ** 2
    coef *= amplitude / np.sum(np.abs(coef))
    kx, ky = np.pi / grid.Lx, np.pi / grid.Ly
    S = np.zeros(grid.shape)
    Sx, Sy = np.zeros(grid.shape), np.zeros(grid.shape)
    for j in range(modes):
        for k in range(modes):
            a, b = (j + 1) * kx, (k + 1) * ky
            S += coef[j, k] * np.sin(a * X) * np.sin(b * Y)
            Sx += coef[j, k] * a * np.cos(a * X) * np.sin(b * Y)
            Sy += coef[j, k] * b * np.sin(a * X) * np.cos(b * Y)
    w = np.pi / grid.T
    tp, dtp = np.sin(w * T), w * np.cos(w * T)
    phi = S * tp
    mask = grid.boundary_mask()
    phi[:, mask] = 0.0
    return GaugeFunction(grid, phi, np.stack([Sx * tp, Sy * tp]), S * dtp)


def load_field_csv(path: str, grid: SpaceTimeGrid) -> np.ndarray:
    """Read a tabulated scalar field with columns ``x, y, t, value`` on a tensor lattice
    and interpolate it linearly onto the grid (zero outside the table)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"x", "y", "t", "value"} - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for r in reader:
            rows.append((float(r["x"]), float(r["y"]), float(r["t"]), float(r["value"])))
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray(rows)
    xs, ys, ts = (np.unique(arr[:, k]) for k in range(3))
    if xs.size * ys.size * ts.size != arr.shape[0]:
        raise DataError(f"{path}: samples do not form a tensor lattice")
    vals = np.full((ts.size, xs.size, ys.size), np.nan)
    ix = np.searchsorted(xs, arr[:, 0])
    iy = np.searchsorted(ys, arr[:, 1])
    it = np.searchsorted(ts, arr[:, 2])
    vals[it, ix, iy] = arr[:, 3]
    axes = [a if a.size > 1 else np.array([a[0], a[0] + 1.0]) for a in (ts, xs, ys)]
    for k, a in enumerate((ts, xs, ys)):
        if a.size == 1:
            vals = np.repeat(vals, 2, axis=k)
    interp = RegularGridInterpolator(axes, vals, bounds_error=False, fill_value=0.0)
    T, X, Y = grid.mesh3()
    return interp(np.stack([T, X, Y], axis=-1))


# ------------------------------------------------------------ quasi-linear models


def _zeros_v(u):
    return np.zeros((2,) + np.shape(u))


def model_zero() -> QuasiLinearModel:
    return QuasiLinearModel(lambda x, t, u, v: 0.0 * u, lambda x, t, u, v: 0.0 * u, lambda x, t, u, v: _zeros_v(u),
                            c3=1.0, name="zero")


def model_sin() -> QuasiLinearModel:
    return QuasiLinearModel(
        lambda x, t, u, v: np.sin(u),
        lambda x, t, u, v: np.cos(u),
        lambda x, t, u, v: _zeros_v(u),
        c1=1.0, c2=1.0, c3=1.0, name="sin",
    )


def model_linear(a: Callable, q: Callable, name: str = "linear") -> QuasiLinearModel:
    """``F = a(x, t) . v + q(x, t) u`` with ``a`` returning shape ``(2, ...)``."""
    return QuasiLinearModel(
        lambda x, t, u, v: a(x, t)[0] * v[0] + a(x, t)[1] * v[1] + q(x, t) * u,
        lambda x, t, u, v: q(x, t) * np.ones(np.shape(u)),
        lambda x, t, u, v: np.broadcast_to(a(x, t), (2,) + np.shape(u)),
        c0=1.0, c1=1.0, c2=1.0, c3=10.0, name=name,
    )


def model_potential(q: float = 1.0) -> QuasiLinearModel:
    return model_linear(lambda x, t: np.zeros((2,) + np.shape(x[0])), lambda x, t: q + 0.0 * x[0], "potential")


MODEL_PRESETS: Dict[str, Callable[[], QuasiLinearModel]] = {
    "zero": model_zero,
    "sin": model_sin,
    "potential": model_potential,
}


def model_preset(name: str) -> QuasiLinearModel:
    try:
        return MODEL_PRESETS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown quasi-linear model {name!r}") from None


# ------------------------------------------------------------------------- data


def affine_datum(grid: SpaceTimeGrid, v, a: float = 0.0) -> np.ndarray:
    """``x . v + a`` on every node (an exact caloric function)."""
    T, X, Y = grid.mesh3()
    return v[0] * X + v[1] * Y + a + 0.0 * T


def late_profile(t: np.ndarray, t1: float) -> np.ndarray:
    """Smooth ramp that vanishes identically on ``t <= t1``."""
    s = np.maximum(np.asarray(t, dtype=float) - t1, 0.0)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def lateral_bump_datum(grid: SpaceTimeGrid, t1: float = 0.2, amplitude: float = 1.0) -> np.ndarray:
    """Smooth datum on the lateral boundary, zero in the interior and for ``t <= t1``."""
    T, X, Y = grid.mesh3()
    spatial = 1.0 + 0.5 * np.cos(np.pi * X / grid.Lx) * np.cos(np.pi * Y / grid.Ly)
    H = amplitude * late_profile(T, t1 * grid.T) * spatial
    H[:, 1:-1, 1:-1] = 0.0
    return H


def random_boundary_datum(grid: SpaceTimeGrid, rng: np.random.Generator, modes: int = 3,
                          vanish_at: str = "start") -> np.ndarray:
    """Smooth random lateral datum vanishing at ``t = 0`` (``vanish_at="start"``,
    forward data) or at ``t = T`` (``"end"``, adjoint data)."""
    T, X, Y = grid.mesh3()
    if vanish_at == "end":
        T = grid.time_to_end()[:, None, None] + 0.0 * X
    out = np.zeros(grid.shape)
    for k in range(modes):
        a, b, c, d = rng.normal(size=4)
        out += a * np.cos((k + 1) * np.pi * X / grid.Lx + b) * np.cos(k * np.pi * Y / grid.Ly + c) * np.sin(
            (k + 1) * np.pi * T / (2 * grid.T)) * (1 + 0.2 * d)
    out[:, 1:-1, 1:-1] = 0.0
    return out


def _bump_x(x, center=(0.5, 0.5), radius=0.4):
    return bump(x[0], x[1], center, radius)


def _bump_grad_x(x, center=(0.5, 0.5), radius=0.4):
    return np.stack(bump_gradient(x[0], x[1], center, radius))


def model_pair_solenoidal(amplitude: float = 0.1, radius: float = 0.4):
    """Pair ``F1 = a0(x) . v + q0(x) u`` and ``F2 = F1 + amplitude * rot grad psi(x) . v``.

    ``psi`` is a bump, so the convection difference is divergence free and
    compactly supported; the hypotheses for pointwise recovery hold.
    """
    a0 = lambda x, t: 0.5 * _bump_x(x) * np.stack([np.ones_like(x[0]), np.zeros_like(x[0])])
    q0 = lambda x, t: _bump_x(x)
    m1 = model_linear(a0, q0, "solenoidal-base")

    def a2(x, t):
        gx, gy = _bump_grad_x(x, radius=radius)
        return a0(x, t) + amplitude * np.stack([-gy, gx])

    m2 = model_linear(a2, q0, "solenoidal-shifted")
    return m1, m2


def model_pair_gauge(amplitude: float = 0.2, radius: float = 0.4, beta: float = 0.5):
    """Pair whose convection difference is a gradient ``2 grad phi0``, with a ``u^2``
    term that breaks the affine-in-``u`` hypothesis."""
    def F1(x, t, u, v):
        return beta * _bump_x(x) * u**2 + _bump_x(x) * u

    def dF1_du(x, t, u, v):
        return 2 * beta * _bump_x(x) * u + _bump_x(x)

    def grad_phi0(x):
        return amplitude * _bump_grad_x(x, radius=radius)

    m1 = QuasiLinearModel(F1, dF1_du, lambda x, t, u, v: np.zeros((2,) + np.shape(u)) + 0.0 * x,
                          c1=2.0, c2=1.0, c3=10.0, name="gauge-base")
    m2 = QuasiLinearModel(
        lambda x, t, u, v: F1(x, t, u, v) + 2 * (grad_phi0(x)[0] * v[0] + grad_phi0(x)[1] * v[1]),
        dF1_du,
        lambda x, t, u, v: np.broadcast_to(2 * grad_phi0(x), (2,) + np.shape(u)),
        c0=1.0, c1=2.0, c2=1.0, c3=10.0, name="gauge-shifted",
    )
    return m1, m2, lambda x: amplitude * _bump_x(x, radius=radius)
