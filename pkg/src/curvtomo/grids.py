"""Spatial and phase-space grids, source images and phase functions.

The spatial grid is cell-centered over the bounding box of the enclosing
domain Omega_1; arrays are indexed ``[iy, ix]``. Functions on the grid are
extended by zero outside their support mask, and all interpolation respects
that extension.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Geometry

__all__ = ["SpatialGrid", "PhaseGrid", "SourceImage", "PhaseFunction", "bilinear_stencil",
           "angular_stencil"]


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Uniform cell-centered grid of ``ny x nx`` cells over ``bounds``."""

    nx: int
    ny: int
    bounds: tuple

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 cells per axis")
        b = tuple(float(v) for v in self.bounds)
        if not (b[1] > b[0] and b[3] > b[2]):
            raise ValueError("empty grid bounds")
        object.__setattr__(self, "bounds", b)

    @property
    def shape(self) -> tuple:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def spacing(self) -> tuple:
        xmin, xmax, ymin, ymax = self.bounds
        return (xmax - xmin) / self.nx, (ymax - ymin) / self.ny

    @property
    def cell_area(self) -> float:
        dx, dy = self.spacing
        return dx * dy

    @property
    def xs(self) -> np.ndarray:
        dx, _ = self.spacing
        return self.bounds[0] + (np.arange(self.nx) + 0.5) * dx

    @property
    def ys(self) -> np.ndarray:
        _, dy = self.spacing
        return self.bounds[2] + (np.arange(self.ny) + 0.5) * dy

    @property
    def points(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.stack([X, Y], axis=-1)

    def mask(self, domain) -> np.ndarray:
        """Cells whose centers lie in the open domain."""
        return domain.level(self.points) < 0

    @classmethod
    def covering(cls, domain, nx: int, ny: Optional[int] = None) -> "SpatialGrid":
        return cls(nx, nx if ny is None else ny, domain.bounding_box)

    def same_as(self, other: "SpatialGrid") -> bool:
        return self.nx == other.nx and self.ny == other.ny and np.allclose(self.bounds, other.bounds)


def bilinear_stencil(grid: SpatialGrid, x: np.ndarray, col_map: np.ndarray):
    """Bilinear stencils of the cell-centered grid at points ``x``.

    Parameters
    ----------
    col_map : ndarray of int, shape (ny, nx)
        Column index of each cell, ``-1`` for cells treated as zero.

    Returns
    -------
    cols : ndarray of int, shape (..., 4)
        Column indices, ``-1`` where the neighbor is outside or masked.
    wts : ndarray, shape (..., 4)
        Weights, zero wherever ``cols`` is ``-1``.
    """
    dx, dy = grid.spacing
    gx = (x[..., 0] - grid.bounds[0]) / dx - 0.5
    gy = (x[..., 1] - grid.bounds[2]) / dy - 0.5
    fx = np.floor(gx)
    fy = np.floor(gy)
    tx = gx - fx
    ty = gy - fy
    i0 = fx.astype(np.int64)
    j0 = fy.astype(np.int64)
    cols = np.empty(x.shape[:-1] + (4,), dtype=np.int64)
    wts = np.empty(x.shape[:-1] + (4,))
    for k, (di, dj, w) in enumerate(((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                                     (0, 1, (1 - tx) * ty), (1, 1, tx * ty))):
        ii = i0 + di
        jj = j0 + dj
        ok = (ii >= 0) & (ii < grid.nx) & (jj >= 0) & (jj < grid.ny)
        c = np.where(ok, col_map[np.clip(jj, 0, grid.ny - 1), np.clip(ii, 0, grid.nx - 1)], -1)
        cols[..., k] = c
        wts[..., k] = np.where(c >= 0, w, 0.0)
    return cols, wts


def angular_stencil(v: np.ndarray, n_theta: int):
    """Periodic linear interpolation weights in the direction angle of ``v``."""
    beta = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2 * np.pi) * (n_theta / (2 * np.pi))
    j0 = np.floor(beta)
    t = beta - j0
    j0 = j0.astype(np.int64) % n_theta
    return j0, (j0 + 1) % n_theta, t


class PhaseGrid:
    """Spatial cells inside Omega_1 times ``n_theta`` equispaced directions.

    Physical velocities at cell ``c`` are ``theta = p(x_c) (cos b_j, sin b_j)``
    with ``b_j = 2 pi j / n_theta``. Phase nodes are ordered cell-major:
    node ``c * n_theta + j``.
    """

    def __init__(self, geom: Geometry, nx: int, ny: Optional[int] = None, n_theta: int = 16,
                 grid: Optional[SpatialGrid] = None):
        if n_theta < 4 or n_theta % 2:
            raise ValueError("n_theta must be even and >= 4")
        self.geom = geom
        self.grid = grid if grid is not None else SpatialGrid.covering(geom.outer, nx, ny)
        self.n_theta = int(n_theta)
        self.mask = self.grid.mask(geom.outer)
        self.inner_mask = self.grid.mask(geom.domain) & self.mask
        flat = np.nonzero(self.mask.ravel())[0]
        self.cells = flat
        self.col_map = np.full(self.grid.shape, -1, dtype=np.int64)
        self.col_map.ravel()[flat] = np.arange(flat.size)
        self.x = self.grid.points.reshape(-1, 2)[flat]
        self.p = geom.shell.p(self.x)
        self.beta = np.arange(self.n_theta) * (2 * np.pi / self.n_theta)
        self.v = np.stack([np.cos(self.beta), np.sin(self.beta)], axis=-1)

    def __repr__(self):
        return (f"PhaseGrid({self.grid.nx}x{self.grid.ny} cells, {self.n_cells} active, "
                f"n_theta={self.n_theta})")

    @property
    def n_cells(self) -> int:
        return self.cells.size

    @property
    def n_nodes(self) -> int:
        return self.n_cells * self.n_theta

    @property
    def dv(self) -> float:
        return 2 * np.pi / self.n_theta

    def velocities(self, cells=None) -> np.ndarray:
        """Physical velocities, shape (n_cells, n_theta, 2)."""
        p = self.p if cells is None else self.p[cells]
        return p[:, None, None] * self.v[None, :, :]

    def l2_weights(self) -> np.ndarray:
        """Quadrature weights ``area * p(x) * dv`` per phase node, shape (n_cells, n_theta)."""
        w = self.grid.cell_area * self.p * self.dv
        return np.repeat(w[:, None], self.n_theta, axis=1)

    def compatible(self, other: "PhaseGrid") -> bool:
        return other is self or (self.grid.same_as(other.grid) and self.n_theta == other.n_theta
                                 and np.array_equal(self.cells, other.cells))


@dataclass(eq=False)
class SourceImage:
    """Source f on the spatial grid, zero outside its support mask."""

    values: np.ndarray
    grid: SpatialGrid
    support: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"image shape {v.shape} does not match grid {self.grid.shape}")
        if self.support is None:
            self.support = np.ones(self.grid.shape, dtype=bool)
        self.support = np.asarray(self.support, dtype=bool)
        v[~self.support] = 0.0
        if not np.all(np.isfinite(v)):
            raise ValueError("source values must be finite")
        self.values = v

    @classmethod
    def zeros(cls, grid: SpatialGrid, support=None) -> "SourceImage":
        return cls(np.zeros(grid.shape), grid, support)

    @classmethod
    def from_function(cls, fn, grid: SpatialGrid, support=None) -> "SourceImage":
        return cls(np.asarray(fn(grid.points), dtype=float), grid, support)

    def norm(self) -> float:
        return float(np.sqrt(self.grid.cell_area * np.sum(self.values ** 2)))

    def dot(self, other: "SourceImage") -> float:
        return float(self.grid.cell_area * np.sum(self.values * other.values))

    def with_values(self, values) -> "SourceImage":
        return SourceImage(values, self.grid, self.support)


class PhaseFunction:
    """Values ``u(x_c, theta_j)`` on a :class:`PhaseGrid`, shape (n_cells, n_theta)."""

    def __init__(self, values, pgrid: PhaseGrid):
        v = np.asarray(values, dtype=float)
        if v.shape != (pgrid.n_cells, pgrid.n_theta):
            raise ValueError(f"phase values shape {v.shape} != {(pgrid.n_cells, pgrid.n_theta)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("phase function values must be finite")
        self.values = v
        self.pgrid = pgrid

    @classmethod
    def zeros(cls, pgrid: PhaseGrid) -> "PhaseFunction":
        return cls(np.zeros((pgrid.n_cells, pgrid.n_theta)), pgrid)

    @classmethod
    def from_function(cls, fn, pgrid: PhaseGrid) -> "PhaseFunction":
        th = pgrid.velocities()
        x = np.broadcast_to(pgrid.x[:, None, :], th.shape)
        return cls(np.asarray(fn(x, th), dtype=float), pgrid)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.pgrid.l2_weights() * self.values ** 2)))

    def evaluate(self, x, theta) -> np.ndarray:
        """Bilinear in space (zero outside Omega_1) and periodic linear in angle."""
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        g = self.pgrid
        cols, wts = bilinear_stencil(g.grid, x, g.col_map)
        j0, j1, t = angular_stencil(theta, g.n_theta)
        cc = np.maximum(cols, 0)
        a = self.values[cc, j0[..., None]]
        b = self.values[cc, j1[..., None]]
        return np.sum(wts * ((1 - t)[..., None] * a + t[..., None] * b), axis=-1)

    def angular_average(self) -> np.ndarray:
        return self.values.mean(axis=1)

    def __add__(self, other):
        return PhaseFunction(self.values + other.values, self.pgrid)

    def __sub__(self, other):
        return PhaseFunction(self.values - other.values, self.pgrid)

    def __mul__(self, a: float):
        return PhaseFunction(self.values * a, self.pgrid)

    __rmul__ = __mul__
