"""Forward transport solver by fixed-point iteration on characteristics.

The discrete problem on a :class:`PhaseGrid` over Omega_1 is

    u = T1inv (K u + f),

with ``T1inv`` the attenuated backward characteristic integral (trapezoid
along each traced ray; bilinear in space and periodic-linear in angle for
phase-function arguments) and ``(K u)(x_c, theta_j) =
sum_j' k(x_c, theta_j, theta_j') u(x_c, theta_j') p(x_c) dv``.

Two exactly equivalent code paths exist:

* ``general``: sparse phase-to-phase matrix for ``T1inv`` and the iteration
  ``u <- T1inv K u + T1inv f`` on all phase nodes.
* ``separable``: for ``k = kappa1 kappa2`` the iteration is carried out on
  the angular moment ``g(x) = sum_j kappa2 u p dv`` through the reduced
  cell-to-cell matrices ``G = S T_kappa1`` and ``H = S T_src``. ``T_kappa1``
  applies the same angular interpolation of ``kappa1`` as the general path,
  so both paths agree to round-off.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .characteristics import assemble, iter_rays
from .errors import DivergenceError
from .fields import AttenuationField, ScatteringKernel
from .grids import PhaseFunction, PhaseGrid, SourceImage
from .raytransform import BoundarySinogram, RayOperator

log = logging.getLogger(__name__)

__all__ = ["TransportModel", "TransportSolution", "FixedPointResult", "fixed_point"]

# iterates growing by this factor over the first residual are declared divergent
BLOWUP = 1e8


@dataclass
class FixedPointResult:
    x: np.ndarray
    iterations: int
    residual_history: list
    converged: bool
    diverged: bool


def fixed_point(step, x0: np.ndarray, weights, tol: float = 1e-10, max_iter: int = 500,
                what: str = "fixed-point iteration") -> FixedPointResult:
    """Iterate ``x <- step(x)`` until ``||x_new - x|| <= tol ||x||``.

    ``residual_history[m]`` is ``||x^{m+1} - x^m||`` in the weighted norm.
    Divergence (residual growth by ``BLOWUP`` over the first residual, or
    growth over the second half of an unconverged run) sets ``diverged``;
    non-finite iterates raise :class:`DivergenceError`.
    """
    x = x0
    hist = []
    converged = diverged = False
    nrm = lambda v: math.sqrt(float(np.sum(weights * v * v)))
    it = 0
    for it in range(1, max_iter + 1):
        xn = step(x)
        if not np.all(np.isfinite(xn)):
            raise DivergenceError(f"{what} produced non-finite values at iteration {it}", it)
        r = nrm(xn - x)
        hist.append(r)
        ref = nrm(x)
        x = xn
        if r <= tol * ref or r == 0.0:
            converged = True
            break
        if hist[0] > 0 and r > BLOWUP * hist[0]:
            diverged = True
            break
    if not converged and not diverged and len(hist) >= 4:
        half = len(hist) // 2
        diverged = hist[-1] > hist[half]
    return FixedPointResult(x, it, hist, converged, diverged)


@dataclass
class TransportSolution:
    """Result of :meth:`TransportModel.solve`.

    ``moment`` is the angular moment ``g = S u`` used by the separable path
    (None for the general path).
    """

    u: PhaseFunction
    source: SourceImage
    iterations: int
    residual_history: list
    converged: bool
    diverged: bool = False
    moment: Optional[np.ndarray] = field(default=None, repr=False)


class TransportModel:
    """Discretized transport problem on a phase grid over Omega_1.

    Parameters
    ----------
    geom : Geometry
    pgrid : PhaseGrid
    sigma : AttenuationField, optional
    kernel : ScatteringKernel, optional
    n_samples : int, optional
        Trapezoid intervals per characteristic (default ``2 max(nx, ny)``).
    mode : {"auto", "general", "separable"}
        ``auto`` picks ``separable`` for separable (or zero) kernels.
    """

    def __init__(self, geom, pgrid: PhaseGrid, sigma: Optional[AttenuationField] = None,
                 kernel: Optional[ScatteringKernel] = None, n_samples: Optional[int] = None,
                 mode: str = "auto", backend: Optional[str] = None):
        self.geom = geom
        self.pgrid = pgrid
        self.sigma = sigma if sigma is not None else AttenuationField.zero()
        self.kernel = kernel if kernel is not None else ScatteringKernel.zero()
        g = pgrid.grid
        self.n_samples = int(n_samples) if n_samples else 2 * max(g.nx, g.ny)
        if mode == "auto":
            mode = "separable" if self.kernel.is_separable else "general"
        if mode not in ("general", "separable"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "separable" and not self.kernel.is_separable:
            raise ValueError("separable mode needs a separable kernel")
        self.mode = mode
        self.backend = backend
        kind, *tabs = self.kernel.tables(pgrid)
        if kind == "separable":
            self.kappa1, self.kappa2 = tabs
            self.ktable = None
        else:
            self.kappa1 = self.kappa2 = None
            self.ktable = tabs[0]
        if mode == "general" and self.ktable is None:
            self.ktable = self.kappa1[:, :, None] * self.kappa2[:, None, :]
        self._angle = {}
        self._src = None
        self._phase = None
        self._G = None
        self._H = None
        self._bdry = {}

    def __repr__(self):
        return f"TransportModel({self.pgrid!r}, mode={self.mode}, n_samples={self.n_samples})"

    def rescaled(self, lam: float) -> "TransportModel":
        """The model for the kernel scaled by ``lam``, sharing assembled matrices.

        Everything built with ``kappa1`` (or the full kernel table) is linear
        in the scale. The source and phase characteristic matrices, the
        boundary ray operators and ``R_phase`` do not depend on the kernel.
        """
        import copy

        lam = float(lam)
        new = copy.copy(self)
        new.kernel = self.kernel.scaled(lam)
        if self.kappa1 is not None:
            new.kappa1 = lam * self.kappa1
        if self.ktable is not None:
            new.ktable = lam * self.ktable
        new._angle = {j: (ts, None if tk is None else lam * tk)
                      for j, (ts, tk) in self._angle.items()}
        new._G = None if self._G is None else lam * self._G
        # R_kappa1 carries the scale; the general path's R_phase does not
        sep = self.mode == "separable"
        new._bdry = {k: {n: (lam * m if n == "scat" and sep else m) for n, m in e.items()}
                     for k, e in self._bdry.items()}
        return new

    # -- characteristic matrices -------------------------------------------------

    def _angle_rays(self, j: int):
        pg = self.pgrid
        v0 = pg.p[:, None] * pg.v[j][None, :]
        return list(iter_rays(self.geom, pg.x, v0, self.sigma, self.n_samples,
                              what=f"phase node (angle {j}) cell", backend=self.backend))

    def _angle_mats(self, j: int):
        """Cell-to-cell matrices for angle j: (T_src_j, T_kappa1_j or None)."""
        if j in self._angle:
            return self._angle[j]
        pg = self.pgrid
        rays = self._angle_rays(j)
        ts = assemble(pg, rays, pg.n_cells)
        tk = assemble(pg, rays, pg.n_cells, kappa1=self.kappa1) if self.kappa1 is not None else None
        if self._keep_angles:
            self._angle[j] = (ts, tk)
        return ts, tk

    @property
    def _keep_angles(self) -> bool:
        pg = self.pgrid
        return pg.n_nodes * self.n_samples <= 4_000_000

    def _build_general(self):
        pg = self.pgrid
        nt = pg.n_theta
        src, ph = [], []
        for j in range(nt):
            rays = self._angle_rays(j)
            rows = np.arange(pg.n_cells) * nt + j
            src.append(assemble(pg, rays, pg.n_nodes, row_ids=rows))
            ph.append(assemble(pg, rays, pg.n_nodes, row_ids=rows, phase=True))
        self._src = sum(src[1:], src[0]).tocsr()
        self._phase = sum(ph[1:], ph[0]).tocsr()

    @property
    def T_src(self) -> sp.csr_matrix:
        """``T1inv`` applied to cell sources, shape (n_nodes, n_cells)."""
        if self._src is None:
            self._build_general()
        return self._src

    @property
    def T_phase(self) -> sp.csr_matrix:
        """``T1inv`` applied to phase functions, shape (n_nodes, n_nodes)."""
        if self._phase is None:
            self._build_general()
        return self._phase

    def _moment_weights(self) -> np.ndarray:
        pg = self.pgrid
        return self.kappa2 * (pg.p * pg.dv)[:, None]

    def _build_reduced(self):
        pg = self.pgrid
        n = pg.n_cells
        G = np.zeros((n, n))
        H = np.zeros((n, n))
        mw = self._moment_weights()
        for j in range(pg.n_theta):
            ts, tk = self._angle_mats(j)
            D = sp.diags(mw[:, j])
            G += (D @ tk).toarray()
            H += (D @ ts).toarray()
        self._G, self._H = G, H

    @property
    def G(self) -> np.ndarray:
        """Reduced scattering matrix ``S T_kappa1`` (separable path)."""
        if self._G is None:
            self._build_reduced()
        return self._G

    @property
    def H(self) -> np.ndarray:
        """Reduced source matrix ``S T_src`` (separable path)."""
        if self._H is None:
            self._build_reduced()
        return self._H

    # -- operators ---------------------------------------------------------------

    def _check(self, u: PhaseFunction):
        if not self.pgrid.compatible(u.pgrid):
            raise ValueError("phase function lives on a different phase grid")

    def _cells(self, f: SourceImage) -> np.ndarray:
        if not f.grid.same_as(self.pgrid.grid):
            raise ValueError("source image grid does not match the phase grid")
        return f.values.ravel()[self.pgrid.cells]

    def apply_K(self, u: PhaseFunction) -> PhaseFunction:
        self._check(u)
        pw = (self.pgrid.p * self.pgrid.dv)[:, None]
        if self.mode == "general":
            out = np.einsum("cjk,ck->cj", self.ktable, u.values * pw)
        else:
            out = self.kappa1 * np.sum(self.kappa2 * u.values * pw, axis=1)[:, None]
        return PhaseFunction(out, self.pgrid)

    def moment(self, u: PhaseFunction) -> np.ndarray:
        """Angular moment ``g(x_c) = sum_j kappa2 u p dv`` (separable kernels)."""
        self._check(u)
        return np.sum(self._moment_weights() * u.values, axis=1)

    def _T_src_apply(self, fc: np.ndarray) -> np.ndarray:
        pg = self.pgrid
        if self.mode == "general" or self._src is not None:
            return (self.T_src @ fc).reshape(pg.n_cells, pg.n_theta)
        return np.stack([self._angle_mats(j)[0] @ fc for j in range(pg.n_theta)], axis=1)

    def _T_kappa_apply(self, g: np.ndarray) -> np.ndarray:
        pg = self.pgrid
        return np.stack([self._angle_mats(j)[1] @ g for j in range(pg.n_theta)], axis=1)

    def apply_T1_inverse(self, q) -> PhaseFunction:
        """Backward characteristic integral of a source image or phase function."""
        if isinstance(q, SourceImage):
            return PhaseFunction(self._T_src_apply(self._cells(q)), self.pgrid)
        self._check(q)
        return PhaseFunction((self.T_phase @ q.values.ravel()).reshape(q.values.shape), self.pgrid)

    # -- solve -------------------------------------------------------------------------

    def solve(self, f: SourceImage, tol: float = 1e-10, max_iter: int = 500) -> TransportSolution:
        """Fixed-point iteration ``u^{m+1} = T1inv (K u^m + f)`` from ``u^0 = T1inv f``.

        In separable mode the same iteration runs on ``g^m = S u^m`` and the
        stopping test uses ``||g^{m+1} - g^m|| <= tol ||g^m||`` (cell-area
        weights).
        """
        pg = self.pgrid
        fc = self._cells(f)
        if self.kernel.is_zero:
            u0 = self._T_src_apply(fc)
            return TransportSolution(PhaseFunction(u0, pg), f, 1, [0.0], True, False,
                                     np.zeros(pg.n_cells) if self.mode == "separable" else None)
        if self.mode == "general":
            u0 = (self.T_src @ fc)
            Tp = self.T_phase
            pw = (pg.p * pg.dv)[:, None]
            K = self.ktable

            def step(u):
                ku = np.einsum("cjk,ck->cj", K, u.reshape(pg.n_cells, pg.n_theta) * pw)
                return Tp @ ku.ravel() + u0

            w = pg.l2_weights().ravel()
            res = fixed_point(step, u0, w, tol, max_iter, "transport iteration")
            u = PhaseFunction(res.x.reshape(pg.n_cells, pg.n_theta), pg)
            return TransportSolution(u, f, res.iterations, res.residual_history, res.converged,
                                     res.diverged)
        G, H = self.G, self.H
        b = H @ fc
        res = fixed_point(lambda g: G @ g + b, b, np.full(pg.n_cells, pg.grid.cell_area),
                          tol, max_iter, "transport iteration")
        # u^{m+1} = T_src f + T_kappa1 g^m
        u = self._T_src_apply(fc) + self._T_kappa_apply(res.x)
        return TransportSolution(PhaseFunction(u, pg), f, res.iterations, res.residual_history,
                                 res.converged, res.diverged, moment=res.x)

    # -- dense cross-checks ------------------------------------------------------------

    def K_matrix(self) -> sp.csr_matrix:
        """Block-diagonal sparse matrix of ``K`` on phase nodes."""
        pg = self.pgrid
        pw = pg.p * pg.dv
        if self.mode == "general":
            blocks = self.ktable * pw[:, None, None]
        else:
            blocks = self.kappa1[:, :, None] * (self.kappa2 * pw[:, None])[:, None, :]
        return sp.block_diag(list(blocks), format="csr")

    def dense_system(self) -> np.ndarray:
        """``Id - T1inv K`` assembled densely (coarse grids only)."""
        n = self.pgrid.n_nodes
        if n > 6000:
            raise MemoryError(f"dense assembly of {n} phase nodes refused")
        A = (self.T_phase @ self.K_matrix()).toarray()
        return np.eye(n) - A

    def dense_solve(self, f: SourceImage) -> PhaseFunction:
        """Direct LU solve of the assembled system."""
        import scipy.linalg as sla

        A = self.dense_system()
        rhs = self.T_src @ self._cells(f)
        u = sla.lu_solve(sla.lu_factor(A), rhs)
        return PhaseFunction(u.reshape(self.pgrid.n_cells, self.pgrid.n_theta), self.pgrid)

    def spectral_radius(self, method: str = "dense", n_iter: int = 200, seed: int = 0) -> float:
        """Spectral radius of the discrete ``K T1inv`` (same as ``T1inv K``).

        ``dense`` takes all eigenvalues of the assembled phase matrix;
        ``power`` runs power iteration on the reduced matrix G (separable
        path) or on ``T1inv K``.
        """
        if method == "dense":
            A = np.eye(self.pgrid.n_nodes) - self.dense_system()
            return float(np.max(np.abs(np.linalg.eigvals(A))))
        if method != "power":
            raise ValueError(f"unknown method {method!r}")
        rng = np.random.default_rng(seed)
        if self.mode == "separable":
            apply = lambda v: self.G @ v
            v = rng.normal(size=self.pgrid.n_cells)
        else:
            Km = self.K_matrix()
            apply = lambda v: self.T_phase @ (Km @ v)
            v = rng.normal(size=self.pgrid.n_nodes)
        lam = 0.0
        for _ in range(n_iter):
            w = apply(apply(v))
            nv = np.linalg.norm(v)
            nw = np.linalg.norm(w)
            if nw == 0:
                return 0.0
            lam = math.sqrt(nw / nv)
            v = w / nw
        return lam

    # -- measurement ---------------------------------------------------------------------

    def boundary_operator(self, n_bdry: int = 180, n_angle: int = 90, nodes=None) -> RayOperator:
        key = (n_bdry, n_angle) if nodes is None else id(nodes)
        if key not in self._bdry:
            self._bdry[key] = {"ray": RayOperator(self.geom, self.pgrid, self.sigma, n_bdry, n_angle,
                                                  self.n_samples, nodes=nodes, backend=self.backend)}
        return self._bdry[key]["ray"]

    def _bdry_scatter(self, ray: RayOperator):
        """Boundary-node integrals of scattered radiation: ``R_kappa1`` or ``R_phase``."""
        entry = next(e for e in self._bdry.values() if e["ray"] is ray)
        if "scat" not in entry:
            nodes = ray.nodes
            rays = list(ray.rays())
            if self.mode == "separable":
                entry["scat"] = assemble(self.pgrid, rays, len(nodes), kappa1=self.kappa1)
            else:
                entry["scat"] = assemble(self.pgrid, rays, len(nodes), phase=True)
        return entry["scat"]

    def measure(self, data, n_bdry: int = 180, n_angle: int = 90, nodes=None,
                tol: float = 1e-10, max_iter: int = 500) -> BoundarySinogram:
        """Boundary values ``u|_{outgoing boundary of Omega_1}``.

        Each boundary node is traced backward through the volume: the
        direct term integrates the source and the scattered term integrates
        ``K u`` of the volume solution along the same characteristic.
        ``data`` is a :class:`TransportSolution` or a :class:`SourceImage`
        (solved first). Incoming-side nodes get exactly zero.
        """
        sol = data if isinstance(data, TransportSolution) else self.solve(data, tol, max_iter)
        if not sol.converged:
            raise DivergenceError("transport iteration did not converge; measurement undefined",
                                  sol.iterations)
        ray = self.boundary_operator(n_bdry, n_angle, nodes)
        if ray.nodes.side != "outgoing":
            return BoundarySinogram(ray.nodes, np.zeros(len(ray.nodes)))
        y = ray.forward(sol.source).values
        if not self.kernel.is_zero:
            R = self._bdry_scatter(ray)
            if self.mode == "separable":
                y = y + R @ sol.moment
            else:
                y = y + R @ self.apply_K(sol.u).values.ravel()
        return BoundarySinogram(ray.nodes, y)
