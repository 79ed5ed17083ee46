"""Attenuated ray transform along force-field trajectories.

Measurements live on the outgoing boundary of the enclosing domain Omega_1.
The value at a node ``(x, theta)`` is the backward integral
``int_{ell_-}^0 W(s) f(gamma(s)) ds``; the discrete operator is a sparse
matrix ``A`` (rows: boundary nodes, columns: grid cells inside Omega_1).

Inner products: sinograms use the ``dxi`` node weights, images use the
cell area. The transpose adjoint ``A^T (w g) / area`` is therefore exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tracing
from .characteristics import assemble, iter_rays
from .dynamics import BoundaryNodes, boundary_measure_nodes
from .errors import DomainError
from .grids import PhaseGrid, SourceImage, SpatialGrid

__all__ = ["BoundarySinogram", "RayOperator", "build_ray_operator", "exit_jacobian",
           "continuous_adjoint", "interpolate_sinogram", "adjoint_dot_test"]


@dataclass(eq=False)
class BoundarySinogram:
    """Values on boundary quadrature nodes with their ``dxi`` weights."""

    nodes: BoundaryNodes
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.nodes),):
            raise ValueError(f"sinogram has {v.shape} values for {len(self.nodes)} nodes")
        self.values = v

    @property
    def weights(self) -> np.ndarray:
        return self.nodes.weight

    @property
    def domain_tag(self) -> str:
        return self.nodes.which

    def dot(self, other: "BoundarySinogram") -> float:
        return float(np.sum(self.weights * self.values * other.values))

    def norm(self) -> float:
        return math.sqrt(max(self.dot(self), 0.0))

    def with_values(self, values) -> "BoundarySinogram":
        return BoundarySinogram(self.nodes, values)

    def grid_view(self) -> np.ndarray:
        """Values as an ``(n_bdry, n_angle)`` table."""
        return self.values.reshape(self.nodes.n_bdry, self.nodes.n_angle)


def _same_nodes(a: BoundaryNodes, b: BoundaryNodes) -> bool:
    return a is b or (len(a) == len(b) and np.array_equal(a.x, b.x)
                      and np.array_equal(a.theta, b.theta) and np.array_equal(a.weight, b.weight))


class RayOperator:
    """Cached discrete ray transform ``I_{sigma,F}`` on a spatial grid.

    Parameters
    ----------
    geom : Geometry
    grid : SpatialGrid or PhaseGrid
        Image grid; columns are the cells inside Omega_1.
    sigma : AttenuationField, optional
    n_bdry, n_angle : int
        Boundary positions and outgoing directions per position.
    n_samples : int, optional
        Trapezoid intervals per ray (default ``2 * max(nx, ny)``).
    """

    def __init__(self, geom, grid, sigma=None, n_bdry: int = 180, n_angle: int = 90,
                 n_samples: Optional[int] = None, nodes: Optional[BoundaryNodes] = None,
                 backend: Optional[str] = None):
        self.geom = geom
        if isinstance(grid, PhaseGrid):
            self.pgrid = grid
        else:
            self.pgrid = PhaseGrid(geom, grid.nx, grid.ny, n_theta=4, grid=grid)
        self.grid = self.pgrid.grid
        self.sigma = sigma
        self.nodes = nodes if nodes is not None else boundary_measure_nodes(
            geom, n_bdry, n_angle, which="outer")
        self.n_samples = int(n_samples) if n_samples else 2 * max(self.grid.nx, self.grid.ny)
        self.backend = backend
        self.matrix = assemble(self.pgrid, self.rays(), len(self.nodes))
        self._matrix_T = self.matrix.T.tocsr()

    def __repr__(self):
        return (f"RayOperator({len(self.nodes)} nodes, grid {self.grid.nx}x{self.grid.ny}, "
                f"{self.n_samples} samples/ray, nnz={self.matrix.nnz})")

    def rays(self):
        return iter_rays(self.geom, self.nodes.x, self.nodes.theta, self.sigma, self.n_samples,
                         what="boundary node", backend=self.backend)

    @property
    def support(self) -> np.ndarray:
        return self.pgrid.mask

    def _check_image(self, f: SourceImage):
        if not f.grid.same_as(self.grid):
            raise ValueError("image grid does not match the operator grid")

    def _check_sino(self, g: BoundarySinogram):
        if not _same_nodes(g.nodes, self.nodes):
            raise ValueError("sinogram node set does not match the operator")

    def cells_of(self, f: SourceImage) -> np.ndarray:
        self._check_image(f)
        return f.values.ravel()[self.pgrid.cells]

    def image_from_cells(self, vals: np.ndarray, support=None) -> SourceImage:
        full = np.zeros(self.grid.size)
        full[self.pgrid.cells] = vals
        return SourceImage(full.reshape(self.grid.shape), self.grid,
                           self.pgrid.mask if support is None else support)

    def forward(self, f: SourceImage) -> BoundarySinogram:
        return BoundarySinogram(self.nodes, self.matrix @ self.cells_of(f))

    def adjoint(self, g: BoundarySinogram) -> SourceImage:
        """Exact transpose of :meth:`forward` in the weighted inner products."""
        self._check_sino(g)
        vals = self._matrix_T @ (self.nodes.weight * g.values) / self.grid.cell_area
        return self.image_from_cells(vals)

    def normal(self, f: SourceImage) -> SourceImage:
        return self.adjoint(self.forward(f))

    def sinogram(self, values) -> BoundarySinogram:
        return BoundarySinogram(self.nodes, values)


def build_ray_operator(geom, grid, sigma=None, n_bdry: int = 180, n_angle: int = 90,
                       n_samples: Optional[int] = None, backend: Optional[str] = None) -> RayOperator:
    return RayOperator(geom, grid, sigma, n_bdry, n_angle, n_samples, backend=backend)


# -- exit Jacobian ------------------------------------------------------------------

def _exit_tangent_columns(geom, x, theta):
    """Initial tangents for perturbing x (two columns) and the direction angle."""
    p = np.linalg.norm(theta, axis=-1)
    gphi = geom.force.grad_phi(x)
    u = theta / p[:, None]
    z0 = np.zeros((len(x), 4, 3))
    z0[:, 0, 0] = 1.0
    z0[:, 1, 1] = 1.0
    # moving x along the shell rescales theta by dp = -grad(phi) / p
    z0[:, 2:, 0] = (-gphi[:, 0] / p)[:, None] * u
    z0[:, 2:, 1] = (-gphi[:, 1] / p)[:, None] * u
    z0[:, 2, 2] = -theta[:, 1]
    z0[:, 3, 2] = theta[:, 0]
    return z0


def _jacobian_from_flow(geom, x, theta, r, ze):
    dom = geom.outer
    z, tz = r.x_exit, r.v_exit
    nz = dom.grad_level(z)
    az = geom.force.accel(z, tz)
    dX, dT = ze[:, :2, :], ze[:, 2:, :]
    denom = np.einsum("mi,mi->m", nz, tz)
    dt = -np.einsum("mi,mij->mj", nz, dX) / denom[:, None]
    dz = dX + tz[:, :, None] * dt[:, None, :]
    dth = dT + az[:, :, None] * dt[:, None, :]
    nu = nz / np.linalg.norm(nz, axis=-1, keepdims=True)
    tang = np.stack([-nu[:, 1], nu[:, 0]], axis=-1)
    pz2 = np.einsum("mi,mi->m", tz, tz)
    dmu = np.einsum("mi,mij->mj", tang, dz)
    dal = (tz[:, 0, None] * dth[:, 1, :] - tz[:, 1, None] * dth[:, 0, :]) / pz2[:, None]
    M = np.stack([dmu, dal, -dt], axis=1)
    det = np.abs(np.linalg.det(M))
    pz = np.sqrt(pz2)
    px = np.linalg.norm(theta, axis=-1)
    ndot = np.abs(np.einsum("mi,mi->m", nu, tz))
    return ndot * pz * det / px


def _fd_exit_coords(geom, x, theta, backend):
    r = tracing.trace_exit(geom, x, theta, 1, "outer", backend=backend)
    r.require_exited("phase point")
    dom = geom.outer
    al = np.arctan2(r.v_exit[:, 1], r.v_exit[:, 0])
    return dom.arc_coordinate(r.x_exit), al, -r.ell, r


def exit_jacobian(geom, x, theta, method: str = "variational", fd_step: float = 1e-5,
                  backend: Optional[str] = None):
    """Jacobian ``J^b = det d(z, theta_z, s) / d(x, theta')`` of the exit map.

    ``(x, theta')`` is an interior shell point, ``z`` its forward exit point
    on the boundary of Omega_1 with velocity ``theta_z``, and ``s <= 0`` the
    time of ``x`` on the trajectory parameterized from ``z``. Measures are
    ``dxi ds`` on the left and ``dtheta' dx`` on the right, so the result
    converts ``int_{dxi} int ds`` into ``int dx int dtheta'``.

    Parameters
    ----------
    method : {"variational", "fd"}
        Linearized flow integrated alongside the trajectory, or central
        finite differences of the exit coordinates with step ``fd_step``.

    Returns
    -------
    jb : ndarray (m,)
    exit : TraceResult
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if method == "variational":
        z0 = _exit_tangent_columns(geom, x, theta)
        r, ze = tracing.trace_variational(geom, x, theta, z0, 1, "outer", backend=backend)
        r.require_exited("phase point")
        return _jacobian_from_flow(geom, x, theta, r, ze), r
    if method != "fd":
        raise ValueError(f"unknown method {method!r}")
    mu0, al0, s0, r = _fd_exit_coords(geom, x, theta, backend)
    p = np.linalg.norm(theta, axis=-1)
    beta = np.arctan2(theta[:, 1], theta[:, 0])
    per = geom.outer.perimeter
    cols = []
    for k in range(3):
        coords = []
        for sgn in (1.0, -1.0):
            xx, bb = x.copy(), beta.copy()
            if k < 2:
                xx[:, k] += sgn * fd_step
            else:
                bb = bb + sgn * fd_step
            pp = geom.shell.p(xx)
            th = pp[:, None] * np.stack([np.cos(bb), np.sin(bb)], axis=-1)
            coords.append(_fd_exit_coords(geom, xx, th, backend)[:3])
        (m1, a1, s1), (m2, a2, s2) = coords
        dmu = np.mod(m1 - m2 + 0.5 * per, per) - 0.5 * per
        dal = np.mod(a1 - a2 + np.pi, 2 * np.pi) - np.pi
        cols.append(np.stack([dmu, dal, s1 - s2], axis=1) / (2 * fd_step))
    M = np.stack(cols, axis=2)
    det = np.abs(np.linalg.det(M))
    pz = np.linalg.norm(r.v_exit, axis=-1)
    nu = geom.outer.normal(r.x_exit)
    ndot = np.abs(np.einsum("mi,mi->m", nu, r.v_exit))
    return ndot * pz * det / p, r


# -- continuous adjoint ----------------------------------------------------------------

def interpolate_sinogram(g: BoundarySinogram, arc, alpha_rel) -> np.ndarray:
    """Bilinear interpolation on the node table: periodic in arc length,
    clamped in the angle from the normal."""
    nodes = g.nodes
    nb, na = nodes.n_bdry, nodes.n_angle
    table = g.grid_view()
    arcs = nodes.arc.reshape(nb, na)[:, 0]
    per = arcs[1] - arcs[0]
    total = per * nb
    alphas = nodes.alpha[:na]
    if nodes.side != "outgoing":
        raise ValueError("continuous adjoint needs an outgoing-boundary sinogram")
    ga = np.mod(np.asarray(arc, dtype=float) - arcs[0], total) / per
    i0 = np.floor(ga).astype(np.int64) % nb
    ta = ga - np.floor(ga)
    i1 = (i0 + 1) % nb
    da = alphas[1] - alphas[0]
    gb = np.clip((np.asarray(alpha_rel, dtype=float) - alphas[0]) / da, 0.0, na - 1)
    j0 = np.minimum(np.floor(gb).astype(np.int64), na - 2)
    tb = gb - j0
    j1 = j0 + 1
    return ((1 - ta) * ((1 - tb) * table[i0, j0] + tb * table[i0, j1])
            + ta * ((1 - tb) * table[i1, j0] + tb * table[i1, j1]))


def continuous_adjoint(geom, sigma, g: BoundarySinogram, grid, n_dir: int = 64,
                       jacobian: str = "variational", n_samples: int = 64,
                       chunk: int = 4096, backend: Optional[str] = None) -> SourceImage:
    """Adjoint by the integral formula ``int_{S_x} W J^b g# dtheta'``.

    For each cell center x inside Omega_1 and direction ``theta'`` on the
    radius-p(x) circle (``n_dir`` equispaced angles, ``dtheta' = p dbeta``),
    the trajectory is traced forward to its exit ``(z, theta_z)``;
    ``g#(x, theta') = g(z, theta_z)`` is interpolated from the node table,
    ``W = exp(-int_0^{ell_+} sigma)`` is the attenuation between x and z,
    and ``J^b`` comes from :func:`exit_jacobian` (``jacobian="variational"``
    or ``"fd"``) or, with ``jacobian="closed-form"``, from ``p(z) / p(x)``.
    """
    if g.nodes.which != "outer":
        raise ValueError("sinogram must live on the enclosing domain boundary")
    pg = grid if isinstance(grid, PhaseGrid) else PhaseGrid(geom, grid.nx, grid.ny, 4, grid=grid)
    dom = geom.outer
    xc = pg.x
    beta = np.arange(n_dir) * (2 * np.pi / n_dir)
    e = np.stack([np.cos(beta), np.sin(beta)], axis=-1)
    X = np.repeat(xc, n_dir, axis=0)
    TH = (pg.p[:, None, None] * e[None]).reshape(-1, 2)
    vals = np.empty(len(X))
    tw = np.ones(n_samples + 1)
    tw[[0, -1]] = 0.5
    for s in range(0, len(X), chunk):
        x, th = X[s:s + chunk], TH[s:s + chunk]
        if jacobian == "closed-form":
            r = tracing.trace_exit(geom, x, th, 1, "outer", backend=backend)
            r.require_exited("phase point", offset=s)
            jb = np.sqrt(geom.shell.P(r.x_exit) / geom.shell.P(x))
        else:
            jb, r = exit_jacobian(geom, x, th, method=jacobian, backend=backend)
        if sigma is None or sigma.is_zero:
            W = 1.0
        else:
            xs, vs = tracing.sample_arcs(geom, x, th, r.ell, n_samples, backend=backend)
            W = np.exp(-(sigma(xs, vs) @ tw) * (r.ell / n_samples))
        nz = dom.normal(r.x_exit)
        rel = np.arctan2(nz[:, 0] * r.v_exit[:, 1] - nz[:, 1] * r.v_exit[:, 0],
                         np.einsum("mi,mi->m", nz, r.v_exit))
        gs = interpolate_sinogram(g, dom.arc_coordinate(r.x_exit), rel)
        vals[s:s + chunk] = W * jb * gs
    out = (vals.reshape(-1, n_dir).sum(axis=1)) * pg.p * (2 * np.pi / n_dir)
    full = np.zeros(pg.grid.size)
    full[pg.cells] = out
    if not np.all(np.isfinite(full)):
        raise DomainError("continuous adjoint produced non-finite values")
    return SourceImage(full.reshape(pg.grid.shape), pg.grid, pg.mask)


def adjoint_dot_test(op, n_pairs: int = 20, seed: int = 0, support=None) -> np.ndarray:
    """Relative mismatch ``|<A f, g> - <f, A* g>| / (||A f|| ||g||)`` on random pairs.

    ``op`` provides ``forward(SourceImage) -> BoundarySinogram`` and
    ``adjoint(BoundarySinogram) -> SourceImage`` (a :class:`RayOperator` or a
    measurement operator). ``f`` is standard normal on the operator support
    (or ``support``) and ``g`` standard normal on the nodes.
    """
    rng = np.random.default_rng(seed)
    grid = op.grid if hasattr(op, "grid") and isinstance(op.grid, SpatialGrid) else op.setup.grid
    if support is None:
        support = op.support
    out = np.empty(n_pairs)
    for k in range(n_pairs):
        f = SourceImage(rng.normal(size=grid.shape), grid, support)
        g = BoundarySinogram(op.nodes, rng.normal(size=len(op.nodes)))
        lhs = op.forward(f).dot(g)
        rhs = op.adjoint(g).dot(f)
        out[k] = abs(lhs - rhs) / (op.forward(f).norm() * g.norm())
    return out
