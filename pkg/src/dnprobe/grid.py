"""Space-time grid on a rectangle times an interval, and the lateral boundary
split into illuminated and shadowed parts for a direction omega.

Node layout: every field on the grid is an array of shape
``(nt + 1, nx + 2, ny + 2)`` indexed ``[time level, x index, y index]``.
Spatial index 0 and ``nx + 1`` (resp. ``ny + 1``) are boundary nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

from .errors import ConfigurationError, NormalizationError

EDGES = ("left", "right", "bottom", "top")

_NORMALS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
}


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform tensor grid on ``(0, Lx) x (0, Ly) x (0, T)``."""

    nx: int
    ny: int
    nt: int
    Lx: float = 1.0
    Ly: float = 1.0
    T: float = 1.0
    n: int = field(default=2, init=False)

    @property
    def hx(self) -> float:
        return self.Lx / (self.nx + 1)

    @property
    def hy(self) -> float:
        return self.Ly / (self.ny + 1)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.nt + 1, self.nx + 2, self.ny + 2)

    @property
    def spatial_shape(self) -> Tuple[int, int]:
        return (self.nx + 2, self.ny + 2)

    @property
    def n_unknowns(self) -> int:
        return self.nx * self.ny

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx + 2) * self.hx

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.ny + 2) * self.hy

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def time_to_end(self) -> np.ndarray:
        """``T - t_n`` computed from indices, so it is exactly 0 at the top cap."""
        return (self.nt - np.arange(self.nt + 1)) * self.dt

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def mesh3(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.t, self.x, self.y, indexing="ij")

    def sample(self, func: Callable, *args) -> np.ndarray:
        """Evaluate ``func(x, y, t, *args)`` on all nodes."""
        T, X, Y = self.mesh3()
        out = np.asarray(func(X, Y, T, *args))
        return np.broadcast_to(out, out.shape[:-3] + self.shape).copy()

    def refine(self, factor: int = 2) -> "SpaceTimeGrid":
        """Grid with all spacings divided by ``factor``."""
        return SpaceTimeGrid(
            factor * (self.nx + 1) - 1,
            factor * (self.ny + 1) - 1,
            factor * self.nt,
            self.Lx,
            self.Ly,
            self.T,
        )

    def space_weights(self) -> np.ndarray:
        wx = np.full(self.nx + 2, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny + 2, self.hy)
        wy[[0, -1]] *= 0.5
        return np.outer(wx, wy)

    def time_weights(self) -> np.ndarray:
        wt = np.full(self.nt + 1, self.dt)
        wt[[0, -1]] *= 0.5
        return wt

    def weights(self) -> np.ndarray:
        """Tensor trapezoid weights on the full space-time node set."""
        return self.time_weights()[:, None, None] * self.space_weights()[None]

    def integrate(self, values: np.ndarray) -> complex:
        return np.sum(self.weights() * values)

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.spatial_shape, dtype=bool)
        m[[0, -1], :] = True
        m[:, [0, -1]] = True
        return m

    def edge_index(self, edge: str) -> Tuple[object, object]:
        """Index pair selecting the nodes of one edge (corners included)."""
        if edge == "left":
            return 0, slice(None)
        if edge == "right":
            return self.nx + 1, slice(None)
        if edge == "bottom":
            return slice(None), 0
        if edge == "top":
            return slice(None), self.ny + 1
        raise ConfigurationError(f"unknown edge {edge!r}")

    def edge_coords(self, edge: str) -> np.ndarray:
        """Tangential coordinate of the nodes along an edge."""
        return self.y if edge in ("left", "right") else self.x

    def edge_length(self, edge: str) -> float:
        return self.Ly if edge in ("left", "right") else self.Lx

    def edge_weights(self, edge: str) -> np.ndarray:
        h = self.hy if edge in ("left", "right") else self.hx
        w = np.full(self.edge_coords(edge).size, h)
        w[[0, -1]] *= 0.5
        return w


def build_grid(nx: int, ny: int, nt: int, Lx: float = 1.0, Ly: float = 1.0, T: float = 1.0) -> SpaceTimeGrid:
    for name, value in (("nx", nx), ("ny", ny), ("nt", nt)):
        if int(value) != value or value < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
    for name, value in (("Lx", Lx), ("Ly", Ly), ("T", T)):
        if not (np.isfinite(value) and value > 0):
            raise ConfigurationError(f"{name} must be positive, got {value!r}")
    return SpaceTimeGrid(int(nx), int(ny), int(nt), float(Lx), float(Ly), float(T))


@dataclass(frozen=True)
class Face:
    name: str
    normal: Tuple[float, float]
    weight: float  # |omega . nu|
    length: float


@dataclass(frozen=True)
class BoundaryPartition:
    omega: Tuple[float, float]
    faces: Dict[str, Face]
    sigma_plus: Tuple[str, ...]
    sigma_minus: Tuple[str, ...]
    omega0: Tuple[np.ndarray, np.ndarray, np.ndarray]  # (time level, i, j) of the bottom cap
    omegaT: Tuple[np.ndarray, np.ndarray, np.ndarray]

    def weighted_measure(self, part: str) -> float:
        names = self.sigma_plus if part == "plus" else self.sigma_minus
        return sum(self.faces[n].weight * self.faces[n].length for n in names)


def check_unit(omega, tol: float = 1e-12) -> np.ndarray:
    w = np.asarray(omega, dtype=float).reshape(2)
    if abs(np.hypot(w[0], w[1]) - 1.0) > tol:
        raise NormalizationError(f"direction {tuple(w)} is not a unit vector")
    return w


def partition_boundary(grid: SpaceTimeGrid, omega) -> BoundaryPartition:
    w = check_unit(omega)
    faces, plus, minus = {}, [], []
    for name in EDGES:
        nu = _NORMALS[name]
        dot = w[0] * nu[0] + w[1] * nu[1]
        faces[name] = Face(name, nu, abs(dot), grid.edge_length(name))
        if dot > 0:
            plus.append(name)
        elif dot < 0:
            minus.append(name)
    ii, jj = np.meshgrid(np.arange(1, grid.nx + 1), np.arange(1, grid.ny + 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    bottom = (np.zeros_like(ii), ii, jj)
    top = (np.full_like(ii, grid.nt), ii, jj)
    return BoundaryPartition((float(w[0]), float(w[1])), faces, tuple(plus), tuple(minus), bottom, top)


def edge_normal(edge: str) -> Tuple[float, float]:
    return _NORMALS[edge]
