"""Domains, force fields and the energy shell.

Arrays of points have shape ``(..., 2)``. Fields are evaluated vectorized;
catalog fields additionally pack their parameters into flat arrays so that
the jitted kernels can evaluate them without Python callbacks.

In two dimensions the skew-symmetric matrix Y(x) is ``[[0, b], [-b, 0]]``
for a scalar magnetic strength b(x), so ``Y(x) theta = b (theta_y, -theta_x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _layout as L
from .errors import DomainError, ShellError

_SPARE_POT = np.zeros((6, 1, 1))
_SPARE_MAG = np.zeros((3, 1, 1))


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError(f"points must have trailing dimension 2, got shape {x.shape}")
    return x


# -- gridded scalar fields ---------------------------------------------------

def _d4(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order finite difference along ``axis`` (one-sided near the ends)."""
    f = np.moveaxis(f, axis, 0)
    n = f.shape[0]
    if n < 5:
        raise ValueError("gridded fields need at least 5 nodes per axis")
    d = np.empty_like(f)
    d[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h)
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h)
    d[-1] = -(-25.0 * f[-1] + 48.0 * f[-2] - 36.0 * f[-3] + 16.0 * f[-4] - 3.0 * f[-5]) / (12.0 * h)
    d[-2] = -(-3.0 * f[-1] - 10.0 * f[-2] + 18.0 * f[-3] - 6.0 * f[-4] + f[-5]) / (12.0 * h)
    return np.moveaxis(d, 0, axis)


def _keys(t: np.ndarray):
    return (((-0.5 * t + 1.0) * t - 0.5) * t,
            (1.5 * t - 2.5) * t * t + 1.0,
            ((-1.5 * t + 2.0) * t + 0.5) * t,
            (0.5 * t - 0.5) * t * t)


def cubic_convolution(grid: np.ndarray, x: np.ndarray, y: np.ndarray,
                      x0: float, y0: float, dx: float, dy: float) -> np.ndarray:
    """Keys cubic convolution (a = -1/2) of node values ``grid[ny, nx]``; NaN outside."""
    ny, nx = grid.shape
    gx = (np.asarray(x, dtype=float) - x0) / dx
    gy = (np.asarray(y, dtype=float) - y0) / dy
    inside = (gx >= 0.0) & (gx <= nx - 1) & (gy >= 0.0) & (gy <= ny - 1)
    gx = np.where(inside, gx, 0.0)
    gy = np.where(inside, gy, 0.0)
    i = np.minimum(gx.astype(np.int64), nx - 2)
    j = np.minimum(gy.astype(np.int64), ny - 2)
    wx = _keys(gx - i)
    wy = _keys(gy - j)
    acc = np.zeros(gx.shape)
    for b in range(4):
        jj = np.clip(j - 1 + b, 0, ny - 1)
        row = np.zeros(gx.shape)
        for a in range(4):
            ii = np.clip(i - 1 + a, 0, nx - 1)
            row += wx[a] * grid[jj, ii]
        acc += wy[b] * row
    return np.where(inside, acc, np.nan)


@dataclass(frozen=True, eq=False)
class GriddedField:
    """Scalar field sampled at the nodes of a uniform grid.

    Parameters
    ----------
    values : ndarray, shape (ny, nx)
        Node values; ``values[j, i]`` sits at ``(xmin + i*dx, ymin + j*dy)``.
    bounds : tuple
        ``(xmin, xmax, ymin, ymax)`` of the node lattice.
    """

    values: np.ndarray
    bounds: tuple
    channels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ValueError("gridded field values must be a finite 2-D array")
        object.__setattr__(self, "values", v)
        xmin, xmax, ymin, ymax = (float(b) for b in self.bounds)
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("empty grid bounds")
        object.__setattr__(self, "bounds", (xmin, xmax, ymin, ymax))
        hx, hy = self.spacing
        fx = _d4(v, hx, 1)
        fy = _d4(v, hy, 0)
        ch = np.stack([v, fx, fy, _d4(fx, hx, 1), _d4(fx, hy, 0), _d4(fy, hy, 0)])
        object.__setattr__(self, "channels", ch)

    @property
    def spacing(self) -> tuple:
        ny, nx = self.values.shape
        xmin, xmax, ymin, ymax = self.bounds
        return (xmax - xmin) / (nx - 1), (ymax - ymin) / (ny - 1)

    @property
    def lattice(self) -> tuple:
        hx, hy = self.spacing
        return self.bounds[0], self.bounds[2], hx, hy

    def eval(self, x, channel: int = 0) -> np.ndarray:
        x = _as_points(x)
        x0, y0, hx, hy = self.lattice
        return cubic_convolution(self.channels[channel], x[..., 0], x[..., 1], x0, y0, hx, hy)

    @classmethod
    def sample(cls, fn: Callable, bounds: tuple, shape: tuple) -> "GriddedField":
        """Sample ``fn(points) -> values`` on an ``(ny, nx)`` node lattice."""
        ny, nx = shape
        xs = np.linspace(bounds[0], bounds[1], nx)
        ys = np.linspace(bounds[2], bounds[3], ny)
        X, Y = np.meshgrid(xs, ys)
        return cls(np.asarray(fn(np.stack([X, Y], axis=-1)), dtype=float), bounds)


def _fd_gradient(fn: Callable, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    ex = np.array([step, 0.0])
    ey = np.array([0.0, step])
    return np.stack([(fn(x + ex) - fn(x - ex)) / (2 * step),
                     (fn(x + ey) - fn(x - ey)) / (2 * step)], axis=-1)


# -- potential -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Potential:
    """Scalar potential phi.

    Use the constructors: :meth:`zero`, :meth:`harmonic` (``kappa |x-c|^2``),
    :meth:`gaussian` (``a exp(-|x-c|^2 / w^2)``), :meth:`grid` and
    :meth:`from_callable`.
    """

    kind: str = "zero"
    a: float = 0.0
    w: float = 1.0
    center: tuple = (0.0, 0.0)
    grid_field: Optional[GriddedField] = None
    fn: Optional[Callable] = None
    grad_fn: Optional[Callable] = None
    hess_fn: Optional[Callable] = None

    @classmethod
    def zero(cls) -> "Potential":
        return cls("zero")

    @classmethod
    def harmonic(cls, kappa: float, center=(0.0, 0.0)) -> "Potential":
        return cls("harmonic", a=float(kappa), center=tuple(map(float, center)))

    @classmethod
    def gaussian(cls, amplitude: float, width: float = 1.0, center=(0.0, 0.0)) -> "Potential":
        if width <= 0:
            raise ValueError("gaussian width must be positive")
        return cls("gaussian", a=float(amplitude), w=float(width), center=tuple(map(float, center)))

    @classmethod
    def grid(cls, gf: GriddedField) -> "Potential":
        return cls("grid", grid_field=gf)

    @classmethod
    def from_callable(cls, fn, grad_fn=None, hess_fn=None) -> "Potential":
        """Wrap ``fn(points) -> values``; missing derivatives use central differences."""
        return cls("callable", fn=fn, grad_fn=grad_fn, hess_fn=hess_fn)

    def value(self, x) -> np.ndarray:
        x = _as_points(x)
        if self.kind == "zero":
            return np.zeros(x.shape[:-1])
        if self.kind == "grid":
            return self.grid_field.eval(x, 0)
        if self.kind == "callable":
            return np.asarray(self.fn(x), dtype=float)
        d = x - np.asarray(self.center)
        r2 = np.einsum("...i,...i->...", d, d)
        if self.kind == "harmonic":
            return self.a * r2
        return self.a * np.exp(-r2 / self.w ** 2)

    def grad(self, x) -> np.ndarray:
        x = _as_points(x)
        if self.kind == "zero":
            return np.zeros(x.shape)
        if self.kind == "grid":
            return np.stack([self.grid_field.eval(x, 1), self.grid_field.eval(x, 2)], axis=-1)
        if self.kind == "callable":
            if self.grad_fn is not None:
                return np.asarray(self.grad_fn(x), dtype=float)
            return _fd_gradient(self.value, x)
        d = x - np.asarray(self.center)
        if self.kind == "harmonic":
            return 2.0 * self.a * d
        w2 = self.w ** 2
        e = self.a * np.exp(-np.einsum("...i,...i->...", d, d) / w2)
        return (-2.0 / w2) * d * e[..., None]

    def hessian(self, x) -> tuple:
        """Return ``(phi_xx, phi_xy, phi_yy)``."""
        x = _as_points(x)
        shape = x.shape[:-1]
        if self.kind == "zero":
            z = np.zeros(shape)
            return z, z, z
        if self.kind == "grid":
            g = self.grid_field
            return g.eval(x, 3), g.eval(x, 4), g.eval(x, 5)
        if self.kind == "callable":
            if self.hess_fn is not None:
                return tuple(np.asarray(h, dtype=float) for h in self.hess_fn(x))
            gx = _fd_gradient(lambda q: self.grad(q)[..., 0], x)
            gy = _fd_gradient(lambda q: self.grad(q)[..., 1], x)
            return gx[..., 0], 0.5 * (gx[..., 1] + gy[..., 0]), gy[..., 1]
        d = x - np.asarray(self.center)
        if self.kind == "harmonic":
            k2 = np.full(shape, 2.0 * self.a)
            return k2, np.zeros(shape), k2
        w2 = self.w ** 2
        e = self.a * np.exp(-np.einsum("...i,...i->...", d, d) / w2)
        q = 4.0 / w2 ** 2
        dx, dy = d[..., 0], d[..., 1]
        return (q * dx * dx - 2.0 / w2) * e, q * dx * dy * e, (q * dy * dy - 2.0 / w2) * e

    def _pack(self, fp: np.ndarray):
        code = {"zero": L.POT_ZERO, "harmonic": L.POT_HARMONIC,
                "gaussian": L.POT_GAUSSIAN, "grid": L.POT_GRID}.get(self.kind)
        if code is None:
            return None
        fp[L.F_POT_KIND] = code
        fp[L.F_POT_A] = self.a
        fp[L.F_POT_W] = self.w
        fp[L.F_POT_CX], fp[L.F_POT_CY] = self.center
        if self.kind == "grid":
            fp[L.F_PG_X0], fp[L.F_PG_Y0], fp[L.F_PG_DX], fp[L.F_PG_DY] = self.grid_field.lattice
            return self.grid_field.channels
        return _SPARE_POT


# -- magnetic strength -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Magnetic:
    """Scalar magnetic strength b(x) defining ``Y(x) = [[0, b], [-b, 0]]``.

    Constructors: :meth:`none`, :meth:`constant`, :meth:`radial`
    (``b0 + b2 |x-c|^2``), :meth:`grid` and :meth:`from_callable`.
    """

    kind: str = "none"
    b0: float = 0.0
    b2: float = 0.0
    center: tuple = (0.0, 0.0)
    grid_field: Optional[GriddedField] = None
    fn: Optional[Callable] = None
    grad_fn: Optional[Callable] = None

    @classmethod
    def none(cls) -> "Magnetic":
        return cls("none")

    @classmethod
    def constant(cls, b: float) -> "Magnetic":
        return cls("constant", b0=float(b))

    @classmethod
    def radial(cls, b0: float, b2: float, center=(0.0, 0.0)) -> "Magnetic":
        return cls("radial", b0=float(b0), b2=float(b2), center=tuple(map(float, center)))

    @classmethod
    def grid(cls, gf: GriddedField) -> "Magnetic":
        return cls("grid", grid_field=gf)

    @classmethod
    def from_callable(cls, fn, grad_fn=None) -> "Magnetic":
        return cls("callable", fn=fn, grad_fn=grad_fn)

    def strength(self, x) -> tuple:
        """Return ``(b, b_x, b_y)`` at the points ``x``."""
        x = _as_points(x)
        shape = x.shape[:-1]
        if self.kind == "none":
            z = np.zeros(shape)
            return z, z, z
        if self.kind == "constant":
            z = np.zeros(shape)
            return np.full(shape, self.b0), z, z
        if self.kind == "radial":
            d = x - np.asarray(self.center)
            r2 = np.einsum("...i,...i->...", d, d)
            return self.b0 + self.b2 * r2, 2 * self.b2 * d[..., 0], 2 * self.b2 * d[..., 1]
        if self.kind == "grid":
            g = self.grid_field
            return g.eval(x, 0), g.eval(x, 1), g.eval(x, 2)
        b = np.asarray(self.fn(x), dtype=float)
        g = self.grad_fn(x) if self.grad_fn is not None else _fd_gradient(
            lambda q: np.asarray(self.fn(q), dtype=float), x)
        return b, g[..., 0], g[..., 1]

    def _pack(self, fp: np.ndarray):
        code = {"none": L.MAG_NONE, "constant": L.MAG_CONSTANT,
                "radial": L.MAG_RADIAL, "grid": L.MAG_GRID}.get(self.kind)
        if code is None:
            return None
        fp[L.F_MAG_KIND] = code
        fp[L.F_MAG_B0] = self.b0
        fp[L.F_MAG_B2] = self.b2
        fp[L.F_MAG_CX], fp[L.F_MAG_CY] = self.center
        if self.kind == "grid":
            g = self.grid_field
            fp[L.F_MG_X0], fp[L.F_MG_Y0], fp[L.F_MG_DX], fp[L.F_MG_DY] = g.lattice
            return np.ascontiguousarray(g.channels[:3])
        return _SPARE_MAG


@dataclass(frozen=True, eq=False)
class ForceField:
    """Lorentz-type force ``F(x, theta) = -grad phi(x) + Y(x) theta``."""

    potential: Potential = field(default_factory=Potential.zero)
    magnetic: Magnetic = field(default_factory=Magnetic.none)

    def phi(self, x) -> np.ndarray:
        return self.potential.value(x)

    def grad_phi(self, x) -> np.ndarray:
        return self.potential.grad(x)

    def hess_phi(self, x) -> tuple:
        return self.potential.hessian(x)

    def bfield(self, x) -> tuple:
        return self.magnetic.strength(x)

    def Y(self, x) -> np.ndarray:
        """Skew-symmetric matrices, shape ``(..., 2, 2)``."""
        b = self.magnetic.strength(x)[0]
        out = np.zeros(b.shape + (2, 2))
        out[..., 0, 1] = b
        out[..., 1, 0] = -b
        return out

    def accel(self, x, v) -> np.ndarray:
        g = self.potential.grad(x)
        b = self.magnetic.strength(x)[0]
        v = np.asarray(v, dtype=float)
        return np.stack([-g[..., 0] + b * v[..., 1], -g[..., 1] - b * v[..., 0]], axis=-1)

    @property
    def is_zero(self) -> bool:
        return self.potential.kind == "zero" and self.magnetic.kind == "none"

    def packed(self):
        """``(fp, pot_grid, mag_grid)`` for the jitted kernels, or None for callables."""
        fp = np.zeros(L.F_SIZE)
        pg = self.potential._pack(fp)
        mg = self.magnetic._pack(fp)
        if pg is None or mg is None:
            return None
        return fp, pg, mg


# -- domains -------------------------------------------------------------------------

class Domain:
    """Bounded domain star-shaped about ``center`` with a level-set description.

    Subclasses provide ``level`` (negative inside), ``grad_level`` and
    ``radius_at(omega)``, the distance from ``center`` to the boundary along
    polar angle ``omega``.
    """

    center: np.ndarray

    def level(self, x) -> np.ndarray:
        raise NotImplementedError

    def grad_level(self, x) -> np.ndarray:
        raise NotImplementedError

    def radius_at(self, omega) -> np.ndarray:
        raise NotImplementedError

    def packed(self):
        return None

    def normal(self, x) -> np.ndarray:
        g = self.grad_level(x)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def contains(self, x, closed: bool = True) -> np.ndarray:
        lv = self.level(x)
        return lv <= 0 if closed else lv < 0

    def boundary_point(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        r = self.radius_at(omega)
        return self.center + r[..., None] * np.stack([np.cos(omega), np.sin(omega)], axis=-1)

    def _arc_table(self, n_fine: int = 8192):
        om = np.linspace(0.0, 2 * np.pi, n_fine + 1)
        pts = self.boundary_point(om)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        return om, np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def perimeter(self) -> float:
        return float(self._arc_table()[1][-1])

    def boundary_samples(self, n: int):
        """``n`` boundary points equispaced in arc length.

        Returns
        -------
        points, normals : ndarray, shape (n, 2)
        arc : ndarray, shape (n,)
            Arc-length coordinate of each point, starting at polar angle 0.
        weight : float
            Arc-length quadrature weight (periodic trapezoid).
        """
        om, cum = self._arc_table()
        total = cum[-1]
        arc = np.arange(n) * (total / n)
        omega = np.interp(arc, cum, om)
        pts = self.boundary_point(omega)
        return pts, self.normal(pts), arc, total / n

    def arc_coordinate(self, x) -> np.ndarray:
        """Arc-length coordinate of boundary points ``x``."""
        x = _as_points(x)
        om, cum = self._arc_table()
        d = x - self.center
        w = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2 * np.pi)
        return np.interp(w, om, cum)

    @property
    def diameter(self) -> float:
        pts = self.boundary_point(np.linspace(0, 2 * np.pi, 720, endpoint=False))
        d = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt(np.einsum("ijk,ijk->ij", d, d).max()))

    @property
    def bounding_box(self) -> tuple:
        pts = self.boundary_point(np.linspace(0, 2 * np.pi, 2048, endpoint=False))
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


class Disc(Domain):
    def __init__(self, center=(0.0, 0.0), radius: float = 1.0):
        if radius <= 0:
            raise ValueError("disc radius must be positive")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def __repr__(self):
        return f"Disc(center={tuple(self.center)}, radius={self.radius})"

    def level(self, x):
        x = _as_points(x)
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def grad_level(self, x):
        d = _as_points(x) - self.center
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def radius_at(self, omega):
        return np.full(np.shape(omega), self.radius)

    def packed(self):
        dp = np.zeros(L.D_SIZE)
        dp[L.D_KIND] = L.DOM_DISC
        dp[L.D_CX], dp[L.D_CY] = self.center
        dp[L.D_A] = self.radius
        dp[L.D_B] = self.radius
        return dp

    @property
    def perimeter(self):
        return 2 * np.pi * self.radius

    def boundary_samples(self, n):
        arc = np.arange(n) * (2 * np.pi * self.radius / n)
        om = arc / self.radius
        nrm = np.stack([np.cos(om), np.sin(om)], axis=-1)
        return self.center + self.radius * nrm, nrm, arc, 2 * np.pi * self.radius / n

    def arc_coordinate(self, x):
        d = _as_points(x) - self.center
        return self.radius * np.mod(np.arctan2(d[..., 1], d[..., 0]), 2 * np.pi)

    @property
    def diameter(self):
        return 2 * self.radius

    @property
    def bounding_box(self):
        cx, cy = self.center
        r = self.radius
        return cx - r, cx + r, cy - r, cy + r


class Ellipse(Domain):
    """Ellipse with semi-axes ``a``, ``b`` rotated by ``rotation`` radians.

    The level set ``|A^{-1} R^T (x - c)| - 1`` is not a distance function;
    only its sign and gradient direction matter.
    """

    def __init__(self, center=(0.0, 0.0), a: float = 1.0, b: float = 0.5, rotation: float = 0.0):
        if a <= 0 or b <= 0:
            raise ValueError("ellipse semi-axes must be positive")
        self.center = np.asarray(center, dtype=float)
        self.a, self.b, self.rotation = float(a), float(b), float(rotation)

    def __repr__(self):
        return f"Ellipse(center={tuple(self.center)}, a={self.a}, b={self.b}, rotation={self.rotation})"

    def _local(self, x):
        d = _as_points(x) - self.center
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return (c * d[..., 0] + s * d[..., 1]) / self.a, (-s * d[..., 0] + c * d[..., 1]) / self.b

    def level(self, x):
        u, w = self._local(x)
        return np.sqrt(u * u + w * w) - 1.0

    def grad_level(self, x):
        u, w = self._local(x)
        r = np.sqrt(u * u + w * w)
        gu, gw = u / (r * self.a), w / (r * self.b)
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.stack([c * gu - s * gw, s * gu + c * gw], axis=-1)

    def radius_at(self, omega):
        t = np.asarray(omega, dtype=float) - self.rotation
        return 1.0 / np.sqrt((np.cos(t) / self.a) ** 2 + (np.sin(t) / self.b) ** 2)

    def packed(self):
        dp = np.zeros(L.D_SIZE)
        dp[L.D_KIND] = L.DOM_ELLIPSE
        dp[L.D_CX], dp[L.D_CY] = self.center
        dp[L.D_A], dp[L.D_B], dp[L.D_ROT] = self.a, self.b, self.rotation
        return dp


class LevelSetDomain(Domain):
    """Smooth domain given by a level-set function ``psi`` (negative inside).

    The domain must be star-shaped about ``center``; boundary radii are found
    by bisection along rays out to ``r_max``.
    """

    def __init__(self, psi: Callable, grad_psi: Optional[Callable] = None,
                 center=(0.0, 0.0), r_max: float = 10.0):
        self.psi = psi
        self.grad_psi = grad_psi
        self.center = np.asarray(center, dtype=float)
        self.r_max = float(r_max)
        if np.any(np.asarray(psi(self.center)) >= 0):
            raise ValueError("level-set center must lie inside the domain")

    def level(self, x):
        return np.asarray(self.psi(_as_points(x)), dtype=float)

    def grad_level(self, x):
        x = _as_points(x)
        if self.grad_psi is not None:
            return np.asarray(self.grad_psi(x), dtype=float)
        return _fd_gradient(self.level, x, 1e-6)

    def radius_at(self, omega):
        omega = np.asarray(omega, dtype=float)
        e = np.stack([np.cos(omega), np.sin(omega)], axis=-1)
        lo = np.zeros(omega.shape)
        hi = np.full(omega.shape, self.r_max)
        if np.any(self.level(self.center + hi[..., None] * e) <= 0):
            raise ValueError("domain extends beyond r_max")
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            out = self.level(self.center + mid[..., None] * e) > 0
            hi = np.where(out, mid, hi)
            lo = np.where(out, lo, mid)
        return 0.5 * (lo + hi)


# -- energy shell ---------------------------------------------------------------------

def _region_samples(region: Domain, n: int = 64) -> np.ndarray:
    xmin, xmax, ymin, ymax = region.bounding_box
    X, Y = np.meshgrid(np.linspace(xmin, xmax, n), np.linspace(ymin, ymax, n))
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    pts = pts[region.contains(pts)]
    bdry = region.boundary_point(np.linspace(0, 2 * np.pi, 4 * n, endpoint=False))
    return np.concatenate([pts, bdry])


@dataclass(frozen=True, eq=False)
class EnergyShell:
    """Energy level ``tau`` with speed ``p(x) = sqrt(2 (tau - phi(x)))``.

    Construction samples phi over the closed ``region`` and fails unless
    ``tau`` exceeds its maximum there.
    """

    tau: float
    force: ForceField
    region: Domain
    phi_max: float = field(init=False)
    p_min: float = field(init=False)
    p_max: float = field(init=False)

    def __post_init__(self):
        tau = float(self.tau)
        if not tau > 0:
            raise ShellError(f"energy level must be positive, got {tau}")
        object.__setattr__(self, "tau", tau)
        phi = self.force.phi(_region_samples(self.region))
        if not np.all(np.isfinite(phi)):
            raise ShellError("potential is undefined somewhere on the enclosing domain")
        pmax = float(phi.max())
        if not tau > pmax:
            raise ShellError(f"tau={tau} does not exceed max phi={pmax:.6g} on the enclosing domain")
        object.__setattr__(self, "phi_max", pmax)
        object.__setattr__(self, "p_min", math.sqrt(2 * (tau - pmax)))
        object.__setattr__(self, "p_max", math.sqrt(2 * (tau - float(phi.min()))))

    def P(self, x) -> np.ndarray:
        return 2.0 * (self.tau - self.force.phi(x))

    def p(self, x) -> np.ndarray:
        P = self.P(x)
        if np.any(~(P > 0)):
            raise DomainError("point outside the allowed region of the energy shell")
        return np.sqrt(P)

    def energy(self, x, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return 0.5 * np.einsum("...i,...i->...", theta, theta) + self.force.phi(x)


SHELL_TOL = 1e-8
RENORM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PhaseState:
    """Point ``(x, theta)`` of the energy shell."""

    x: np.ndarray
    theta: np.ndarray

    @classmethod
    def on_shell(cls, x, theta, shell: EnergyShell) -> "PhaseState":
        """Validate ``|theta| = p(x)``; renormalize small mismatches.

        Mismatches up to ``SHELL_TOL`` (relative) are accepted as is, up to
        ``RENORM_TOL`` are rescaled onto the shell, larger ones are rejected.
        """
        x = np.array(x, dtype=float)
        theta = np.array(theta, dtype=float)
        p = float(shell.p(x))
        nrm = float(np.linalg.norm(theta))
        rel = abs(nrm - p) / p
        if rel > RENORM_TOL:
            raise ShellError(f"|theta|={nrm:.6g} differs from p(x)={p:.6g} (relative {rel:.2e})")
        if rel > SHELL_TOL:
            theta = theta * (p / nrm)
        return cls(x, theta)

    @classmethod
    def from_angle(cls, x, alpha: float, shell: EnergyShell) -> "PhaseState":
        x = np.array(x, dtype=float)
        p = float(shell.p(x))
        return cls(x, p * np.array([math.cos(alpha), math.sin(alpha)]))


@dataclass(frozen=True)
class IntegratorOptions:
    """RK4 settings; ``None`` entries take defaults scaled by the geometry.

    Defaults: ``h = 1e-3 * diam``, ``eps_bdry = 1e-10 * diam``,
    ``budget = 50 * diam / min p`` and ``eps_tangent = 1e-8``.
    """

    h: Optional[float] = None
    eps_bdry: Optional[float] = None
    budget: Optional[float] = None
    eps_tangent: float = 1e-8

    def __post_init__(self):
        for name in ("h", "eps_bdry", "budget"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"integrator option {name} must be positive, got {v}")

    def resolved(self, diameter: float, p_min: float) -> "IntegratorOptions":
        return IntegratorOptions(
            h=self.h if self.h is not None else 1e-3 * diameter,
            eps_bdry=self.eps_bdry if self.eps_bdry is not None else 1e-10 * diameter,
            budget=self.budget if self.budget is not None else 50.0 * diameter / p_min,
            eps_tangent=self.eps_tangent,
        )


class Geometry:
    """Domain Omega, enclosing domain Omega_1, force field and energy shell.

    Parameters
    ----------
    domain : Domain
        Support of the source, Omega.
    force : ForceField
    tau : float
        Energy level.
    outer : Domain, optional
        Enclosing domain Omega_1 (defaults to ``domain``). Measurements and
        reconstructions live on Omega_1; Omega must sit strictly inside it.
    options : IntegratorOptions, optional
    """

    def __init__(self, domain: Domain, force: Optional[ForceField] = None, tau: float = 0.5,
                 outer: Optional[Domain] = None, options: Optional[IntegratorOptions] = None):
        self.domain = domain
        self.outer = outer if outer is not None else domain
        self.force = force if force is not None else ForceField()
        if outer is not None:
            bd = domain.boundary_point(np.linspace(0, 2 * np.pi, 1024, endpoint=False))
            if np.any(outer.level(bd) >= 0):
                raise ValueError("the domain must lie strictly inside the enclosing domain")
        self.shell = EnergyShell(tau, self.force, self.outer)
        opts = options if options is not None else IntegratorOptions()
        self.options = opts.resolved(self.outer.diameter, self.shell.p_min)

    def __repr__(self):
        return (f"Geometry(domain={self.domain!r}, outer={self.outer!r}, "
                f"tau={self.shell.tau}, options={self.options})")

    def with_options(self, **kw) -> "Geometry":
        base = dict(h=self.options.h, eps_bdry=self.options.eps_bdry,
                    budget=self.options.budget, eps_tangent=self.options.eps_tangent)
        base.update(kw)
        outer = None if self.outer is self.domain else self.outer
        return Geometry(self.domain, self.force, self.shell.tau, outer, IntegratorOptions(**base))

    def region(self, which: str = "outer") -> Domain:
        if which not in ("inner", "outer"):
            raise ValueError("which must be 'inner' or 'outer'")
        return self.domain if which == "inner" else self.outer
