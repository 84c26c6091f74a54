"""Coefficient triples, gauge maps, the parabolic mollifier, the curl 2-form
and the gauge potential of a curl-free convection field.

Vector fields are stored with the component axis first, i.e. shape
``(2, nt + 1, nx + 2, ny + 2)``; scalars drop the leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.ndimage import convolve1d, map_coordinates

from .errors import AuditError, NotCurlFreeError, ParameterError, ShapeError
from .grid import SpaceTimeGrid


def _check_shape(name: str, arr: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.shape != shape:
        raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite values")
    return arr


def flux_divergence(V: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Divergence of a vector field from face-averaged fluxes.

    Interior nodes use ``(V_{i+1/2} - V_{i-1/2}) / h`` with face values taken as
    the mean of the two neighbouring nodes; boundary nodes use second-order
    one-sided differences.
    """
    out = np.gradient(V[0], grid.hx, axis=-2, edge_order=2) + np.gradient(V[1], grid.hy, axis=-1, edge_order=2)
    fx = 0.5 * (V[0][..., 1:, :] + V[0][..., :-1, :])
    fy = 0.5 * (V[1][..., :, 1:] + V[1][..., :, :-1])
    out[..., 1:-1, 1:-1] = (fx[..., 1:, 1:-1] - fx[..., :-1, 1:-1]) / grid.hx + (
        fy[..., 1:-1, 1:] - fy[..., 1:-1, :-1]
    ) / grid.hy
    return out


@dataclass(frozen=True)
class CoefficientSet:
    """Convection field A, divergence field B and potential q on the grid."""

    grid: SpaceTimeGrid
    A: np.ndarray
    B: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        shape = self.grid.shape
        object.__setattr__(self, "A", _check_shape("A", self.A, (2,) + shape))
        object.__setattr__(self, "B", _check_shape("B", self.B, (2,) + shape))
        object.__setattr__(self, "q", _check_shape("q", self.q, shape))

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid) -> "CoefficientSet":
        return cls(grid, np.zeros((2,) + grid.shape), np.zeros((2,) + grid.shape), np.zeros(grid.shape))

    def replace(self, **kw) -> "CoefficientSet":
        args = dict(A=self.A, B=self.B, q=self.q)
        args.update(kw)
        return CoefficientSet(self.grid, **args)

    def sup_norms(self) -> dict:
        return {
            "A": float(np.max(np.hypot(self.A[0], self.A[1]))),
            "B": float(np.max(np.hypot(self.B[0], self.B[1]))),
            "q": float(np.max(np.abs(self.q))),
        }

    def div_B(self) -> np.ndarray:
        return flux_divergence(self.B, self.grid)

    def __sub__(self, other: "CoefficientSet") -> "CoefficientSet":
        return CoefficientSet(self.grid, self.A - other.A, self.B - other.B, self.q - other.q)


@dataclass(frozen=True)
class GaugeFunction:
    """Scalar gauge field with its spatial gradient and time derivative."""

    grid: SpaceTimeGrid
    phi: np.ndarray
    grad_phi: np.ndarray
    dt_phi: np.ndarray
    boundary_tol: float = 1e-10

    def __post_init__(self):
        shape = self.grid.shape
        _check_shape("phi", self.phi, shape)
        _check_shape("grad_phi", self.grad_phi, (2,) + shape)
        _check_shape("dt_phi", self.dt_phi, shape)
        edge = self.boundary_values()
        scale = max(1.0, float(np.max(np.abs(self.phi))))
        if np.max(np.abs(edge)) > self.boundary_tol * scale:
            raise ParameterError(
                f"gauge function does not vanish on the lateral boundary (max {np.max(np.abs(edge)):.3e})"
            )

    def boundary_values(self) -> np.ndarray:
        return self.phi[:, self.grid.boundary_mask()]

    @classmethod
    def from_samples(cls, grid: SpaceTimeGrid, phi: np.ndarray, **kw) -> "GaugeFunction":
        """Derivatives by second-order differences of the sampled potential."""
        grad = np.stack(
            [
                np.gradient(phi, grid.hx, axis=1, edge_order=2),
                np.gradient(phi, grid.hy, axis=2, edge_order=2),
            ]
        )
        dtp = np.gradient(phi, grid.dt, axis=0, edge_order=2)
        return cls(grid, phi, grad, dtp, **kw)

    @classmethod
    def zero(cls, grid: SpaceTimeGrid) -> "GaugeFunction":
        z = np.zeros(grid.shape)
        return cls(grid, z, np.zeros((2,) + grid.shape), z.copy())

    def negated(self) -> "GaugeFunction":
        return GaugeFunction(self.grid, -self.phi, -self.grad_phi, -self.dt_phi, self.boundary_tol)


def gauge_transform(
    c: CoefficientSet, g: GaugeFunction, a1_for_q: Optional[np.ndarray] = None
) -> CoefficientSet:
    """Apply ``(A, B, q) -> (A + 2 grad phi, B + grad phi, q - dt phi - |grad phi|^2 - A1 . grad phi)``.

    ``a1_for_q`` defaults to ``c.A``.
    """
    if c.grid != g.grid:
        raise ShapeError("coefficient set and gauge function live on different grids")
    a1 = c.A if a1_for_q is None else np.asarray(a1_for_q, dtype=float)
    if a1.shape != c.A.shape:
        raise ShapeError(f"a1_for_q has shape {a1.shape}, expected {c.A.shape}")
    gp = g.grad_phi
    q = c.q - g.dt_phi - (gp[0] ** 2 + gp[1] ** 2) - (a1[0] * gp[0] + a1[1] * gp[1])
    return CoefficientSet(c.grid, c.A + 2.0 * gp, c.B + gp, q)


def bump_profile(r: np.ndarray) -> np.ndarray:
    """``exp(-1 / (1 - r^2))`` on ``|r| < 1``, zero outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


_BUMP_MASS = integrate.quad(lambda s: float(bump_profile(np.array(s))), -1.0, 1.0, epsabs=1e-14, epsrel=1e-14)[0]


@dataclass(frozen=True)
class MollifierKernel:
    """Tensor-product bump of radius ``rho**(-1/3)`` in every variable."""

    rho: float
    support_radius: float = field(init=False)

    def __post_init__(self):
        if not self.rho > 1.0:
            raise ParameterError(f"mollifier parameter must exceed 1, got {self.rho}")
        object.__setattr__(self, "support_radius", self.rho ** (-1.0 / 3.0))

    def profile(self, s: np.ndarray) -> np.ndarray:
        """Continuous 1-D factor with unit integral."""
        r = self.support_radius
        return bump_profile(np.asarray(s) / r) / (r * _BUMP_MASS)

    def weights(self, h: float) -> np.ndarray:
        """Discrete 1-D weights on spacing ``h``, normalised to unit mass."""
        m = int(np.floor(self.support_radius / h))
        s = np.arange(-m, m + 1) * h
        w = self.profile(s) * h
        if w.sum() <= 0.0:
            return np.ones(1)
        return w / w.sum()

    def half_width(self, h: float) -> int:
        return (self.weights(h).size - 1) // 2

    def mass(self, h: float) -> float:
        """Quadrature of the continuous 1-D factor on spacing ``h``; unnormalised."""
        m = int(np.ceil(self.support_radius / h)) + 1
        s = np.arange(-m, m + 1) * h
        return float(np.sum(self.profile(s)) * h)


def mollify(field_values: np.ndarray, grid: SpaceTimeGrid, rho: float, pad: bool = False):
    """Convolve a field on Q (zero outside) with the mollifier at scale ``rho``.

    The last three axes are ``(t, x, y)``. With ``pad=True`` the result lives on
    an enlarged grid that contains the whole support and the padding counts
    ``(pt, px, py)`` are returned alongside.
    """
    kernel = MollifierKernel(rho)
    arr = np.asarray(field_values, dtype=float)
    spacings = (grid.dt, grid.hx, grid.hy)
    pads = tuple(kernel.half_width(h) for h in spacings)
    width = [(0, 0)] * (arr.ndim - 3) + [(p, p) for p in pads]
    out = np.pad(arr, width)
    for k, h in enumerate(spacings):
        out = convolve1d(out, kernel.weights(h), axis=arr.ndim - 3 + k, mode="constant", cval=0.0)
    if pad:
        return out, pads
    sl = (Ellipsis,) + tuple(slice(p, p + n) for p, n in zip(pads, grid.shape))
    return out[sl]


@dataclass
class MollifierAudit:
    rows: List[dict]
    slopes: dict
    l1_errors: List[float]
    passed: bool


def _wk_norms(arr: np.ndarray, spacings: Sequence[float]) -> Tuple[float, float, float]:
    axes = range(arr.ndim - 3, arr.ndim)
    first = [np.gradient(arr, h, axis=a) for a, h in zip(axes, spacings)]
    second = [np.gradient(d, h, axis=a) for d in first for a, h in zip(axes, spacings)]
    n0 = float(np.max(np.abs(arr)))
    n1 = max(n0, max(float(np.max(np.abs(d))) for d in first))
    n2 = max(n1, max(float(np.max(np.abs(d))) for d in second))
    return n0, n1, n2


def mollifier_norm_audit(field_values: np.ndarray, grid: SpaceTimeGrid, rho_list: Sequence[float]) -> MollifierAudit:
    """Measure ``W^{k,inf}`` norms of the mollified field and fit exponents in rho."""
    rhos = sorted(float(r) for r in rho_list)
    if len(rhos) < 3 or rhos[-1] / rhos[0] < 4.0:
        raise AuditError("need at least 3 rho values spanning a factor of 4")
    spacings = (grid.dt, grid.hx, grid.hy)
    cell = grid.dt * grid.hx * grid.hy
    rows, l1 = [], []
    norms = {0: [], 1: [], 2: []}
    for rho in rhos:
        sm, pads = mollify(field_values, grid, rho, pad=True)
        width = [(0, 0)] * (np.ndim(field_values) - 3) + [(p, p) for p in pads]
        base = np.pad(np.asarray(field_values, dtype=float), width)
        err = float(np.sum(np.abs(sm - base)) * cell)
        l1.append(err)
        n = _wk_norms(sm, spacings)
        for k in (0, 1, 2):
            norms[k].append(n[k])
        rows.append({"rho": rho, "W0": n[0], "W1": n[1], "W2": n[2], "l1_error": err})
    logr = np.log(rhos)
    slopes = {}
    for k in (1, 2):
        vals = np.asarray(norms[k])
        slopes[k] = float(np.polyfit(logr, np.log(vals), 1)[0]) if np.all(vals > 0) else 0.0
    passed = all(slopes[k] <= k / 3.0 + 0.1 for k in (1, 2))
    return MollifierAudit(rows, slopes, l1, passed)


def curl_2form(A: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """``d a2/dx - d a1/dy``: centered inside, second-order one-sided on the edge."""
    A = np.asarray(A)
    return np.gradient(A[1], grid.hx, axis=-2, edge_order=2) - np.gradient(A[0], grid.hy, axis=-1, edge_order=2)


def simpson_weights(n_nodes: int) -> np.ndarray:
    """Composite Simpson weights on ``[0, 1]`` with an odd node count."""
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise ParameterError("Simpson's rule needs an odd node count >= 3")
    w = np.ones(n_nodes)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * (n_nodes - 1))


@dataclass
class GaugeSlice:
    phi: np.ndarray
    grad_phi: np.ndarray
    curl_residual: float
    boundary_offset: float
    boundary_spread: float


def gauge_potential_from_curl_free(
    A: np.ndarray,
    grid: SpaceTimeGrid,
    t_index: Optional[int] = None,
    threshold: Optional[float] = None,
    origin: Tuple[float, float] = (0.0, 0.0),
    n_nodes: Optional[int] = None,
    normalize: bool = True,
) -> GaugeSlice:
    """Potential ``phi(x) = -1/2 int_0^1 A(o + s(x - o)) . (x - o) ds`` of one time slice.

    ``A`` is either a full vector field (then ``t_index`` picks the slice) or a
    single slice of shape ``(2, nx + 2, ny + 2)``. The Simpson node count along
    each ray defaults to ``4 max(nx, ny) + 1`` (at least 65). With ``normalize`` the mean
    boundary value is subtracted and the boundary nodes are set to zero, so that
    phi vanishes outside the domain.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 4:
        if t_index is None:
            raise ParameterError("t_index is required for a space-time field")
        A = A[:, t_index]
    if A.shape != (2,) + grid.spatial_shape:
        raise ShapeError(f"field slice has shape {A.shape}")
    if n_nodes is None:
        # ray quadrature error must stay below the O(h^2) interpolation error
        n_nodes = max(65, 4 * max(grid.nx, grid.ny) + 1)
    if n_nodes < 64:
        raise ParameterError("ray quadrature needs at least 64 nodes")
    if n_nodes % 2 == 0:
        n_nodes += 1
    threshold = 10.0 * grid.h if threshold is None else threshold
    curl = curl_2form(A, grid)
    residual = float(np.max(np.abs(curl[1:-1, 1:-1]))) if curl[1:-1, 1:-1].size else 0.0
    if residual > threshold:
        raise NotCurlFreeError(f"field is not curl free: max |dA| = {residual:.3e} > {threshold:.3e}", residual)
    X, Y = grid.mesh()
    ox, oy = origin
    dx, dy = X - ox, Y - oy
    s = np.linspace(0.0, 1.0, n_nodes)
    w = simpson_weights(n_nodes)
    px = (ox + s[:, None, None] * dx[None]) / grid.hx
    py = (oy + s[:, None, None] * dy[None]) / grid.hy
    coords = np.stack([px.ravel(), py.ravel()])
    a1 = map_coordinates(A[0], coords, order=1, mode="nearest").reshape(px.shape)
    a2 = map_coordinates(A[1], coords, order=1, mode="nearest").reshape(px.shape)
    phi = -0.5 * np.tensordot(w, a1 * dx[None] + a2 * dy[None], axes=1)
    offset, spread = 0.0, 0.0
    if normalize:
        edge = phi[grid.boundary_mask()]
        offset = float(np.mean(edge))
        spread = float(np.max(edge) - np.min(edge))
        phi = phi - offset
        phi[grid.boundary_mask()] = 0.0
    grad = np.stack(
        [np.gradient(phi, grid.hx, axis=0, edge_order=2), np.gradient(phi, grid.hy, axis=1, edge_order=2)]
    )
    return GaugeSlice(phi, grad, residual, offset, spread)


def gauge_potential(A: np.ndarray, grid: SpaceTimeGrid, **kw) -> GaugeFunction:
    """Gauge potential on every time slice, assembled into a GaugeFunction."""
    phi = np.stack([gauge_potential_from_curl_free(A, grid, n, **kw).phi for n in range(grid.nt + 1)])
    return GaugeFunction.from_samples(grid, phi)


BUMP_POWER = 6


def bump(X: np.ndarray, Y: np.ndarray, center: Tuple[float, float], radius: float) -> np.ndarray:
    """Compactly supported ``(1 - r^2)^6`` bump with peak value 1 (C^5, moderate derivatives)."""
    r2 = ((X - center[0]) ** 2 + (Y - center[1]) ** 2) / radius**2
    return np.where(r2 < 1.0, np.clip(1.0 - r2, 0.0, None) ** BUMP_POWER, 0.0)


def bump_gradient(X, Y, center, radius):
    """Analytic gradient of :func:`bump`."""
    r2 = ((X - center[0]) ** 2 + (Y - center[1]) ** 2) / radius**2
    fac = np.where(r2 < 1.0, -2.0 * BUMP_POWER * np.clip(1.0 - r2, 0.0, None) ** (BUMP_POWER - 1) / radius**2, 0.0)
    return fac * (X - center[0]), fac * (Y - center[1])
