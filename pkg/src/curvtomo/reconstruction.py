"""Source reconstruction from boundary measurements.

The measurement operator maps a source ``f`` supported in Omega to the
outgoing boundary values of the transport solution on Omega_1. Without
scattering it is the ray transform. With a separable kernel it is

    A f = R_src f + R_kappa1 (Id - G)^{-1} H f,

where ``G`` and ``H`` are the reduced matrices of :class:`TransportModel`
and ``R_src``, ``R_kappa1`` the boundary integrals of the source and of the
scattered moment. Its adjoint in the weighted inner products (``dxi`` node
weights on sinograms, cell area on images) is

    A* y = (R_src^T + H^T (Id - G^T)^{-1} R_kappa1^T)(w y) / area,

and both inverses are applied by the same fixed-point iteration as the
forward solver.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DivergenceError
from .fields import AttenuationField, ScatteringKernel
from .grids import PhaseGrid, SourceImage, SpatialGrid
from .raytransform import BoundarySinogram, RayOperator
from .transport import TransportModel, fixed_point

log = logging.getLogger(__name__)

__all__ = ["InverseProblemSetup", "MeasurementOperator", "ReconstructionResult",
           "reconstruct_cgne", "reconstruct_landweber", "operator_norm", "h1_norm",
           "StabilityReport", "stability_probe", "InjectivityReport", "injectivity_probe"]


@dataclass(eq=False)
class InverseProblemSetup:
    """Everything needed to build the measurement operator.

    Parameters
    ----------
    geom : Geometry
    grid : SpatialGrid
        Image grid covering Omega_1.
    sigma : AttenuationField, optional
    kernel : ScatteringKernel, optional
        A nonzero kernel requires ``separable=True`` and a separable kernel.
    separable : bool
        Declares the kernel separable; mandatory when scattering is present.
    support : ndarray of bool, optional
        Cells carrying unknowns; must lie inside Omega (default: the cells
        whose centers are in Omega).
    eps : float
        Tikhonov weight added to the normal equations.
    n_theta : int
        Angular nodes of the transport phase grid (scattering only).
    inner : {"fixed-point", "direct"}
        How ``(Id - G)^{-1}`` is applied. ``direct`` factors the dense
        matrix once after checking that the iteration would contract.
    """

    geom: object
    grid: SpatialGrid
    sigma: Optional[AttenuationField] = None
    kernel: Optional[ScatteringKernel] = None
    separable: bool = False
    support: Optional[np.ndarray] = field(default=None, repr=False)
    eps: float = 0.0
    n_bdry: int = 180
    n_angle: int = 90
    n_theta: int = 32
    n_samples: Optional[int] = None
    inner: str = "fixed-point"
    inner_tol: float = 1e-14
    inner_max_iter: int = 1000
    backend: Optional[str] = None

    def __post_init__(self):
        if self.sigma is None:
            self.sigma = AttenuationField.zero()
        if self.kernel is None:
            self.kernel = ScatteringKernel.zero()
        if not self.kernel.is_zero:
            if not self.separable:
                raise ValueError("reconstruction with scattering needs separable=True")
            if not self.kernel.is_separable:
                raise ValueError("separable=True was set but the kernel is not separable")
        inside = self.grid.mask(self.geom.domain)
        if self.support is None:
            self.support = inside
        else:
            s = np.asarray(self.support, dtype=bool)
            if s.shape != self.grid.shape:
                raise ValueError("support mask does not match the grid")
            if np.any(s & ~inside):
                raise ValueError("support mask extends outside Omega")
            self.support = s
        if not self.support.any():
            raise ValueError("support mask is empty")
        if self.eps < 0:
            raise ValueError("regularization weight must be nonnegative")
        if self.inner not in ("fixed-point", "direct"):
            raise ValueError(f"unknown inner solver {self.inner!r}")

    @property
    def scattering(self) -> bool:
        return not self.kernel.is_zero


class MeasurementOperator:
    """Forward map ``f -> u|_{outgoing boundary}`` and its adjoint.

    Unknowns are the values on ``setup.support`` cells. ``forward_cells``
    and ``adjoint_cells`` work on plain vectors; :meth:`forward` and
    :meth:`adjoint` wrap them with :class:`SourceImage` and
    :class:`BoundarySinogram`.
    """

    def __init__(self, setup: InverseProblemSetup):
        self.setup = setup
        geom, grid = setup.geom, setup.grid
        nt = setup.n_theta if setup.scattering else 4
        self.pgrid = PhaseGrid(geom, grid.nx, grid.ny, nt, grid=grid)
        if setup.scattering:
            self.model = TransportModel(geom, self.pgrid, setup.sigma, setup.kernel,
                                        setup.n_samples, mode="separable", backend=setup.backend)
            self.ray = self.model.boundary_operator(setup.n_bdry, setup.n_angle)
            self.R_kappa = self.model._bdry_scatter(self.ray)
            self.R_kappa_T = self.R_kappa.T.tocsr()
            self.G, self.H = self.model.G, self.model.H
            self._lu = None
            if setup.inner == "direct":
                self._factor()
        else:
            self.model = None
            self.ray = RayOperator(geom, self.pgrid, setup.sigma, setup.n_bdry, setup.n_angle,
                                   setup.n_samples, backend=setup.backend)
        self.grid = grid
        self.support = setup.support
        self.nodes = self.ray.nodes
        self.weights = self.nodes.weight
        self.area = grid.cell_area
        self.unknowns = self.pgrid.col_map.ravel()[setup.support.ravel()]
        if np.any(self.unknowns < 0):
            raise ValueError("support cells must lie inside Omega_1")
        self.n_unknowns = len(self.unknowns)
        self.n_data = len(self.nodes)

    def __repr__(self):
        kind = "scattering" if self.setup.scattering else "ray transform"
        return f"MeasurementOperator({kind}, {self.n_unknowns} unknowns, {self.n_data} data)"

    def rescaled(self, lam: float, inner: Optional[str] = None) -> "MeasurementOperator":
        """The operator for the kernel scaled by ``lam``.

        ``G`` and ``R_kappa1`` are linear in the kappa1 scale while ``H`` and
        the direct ray matrix do not depend on it, so the assembled matrices
        are reused. ``lam = 0`` gives the plain ray transform on the same
        nodes and samples. ``inner`` switches the inner solver.
        """
        import copy

        if inner not in (None, "fixed-point", "direct"):
            raise ValueError(f"unknown inner solver {inner!r}")
        if self.model is None:
            if lam != 0.0 and lam != 1.0:
                raise ValueError("an operator without scattering cannot be rescaled")
            return self
        new = copy.copy(self)
        new.setup = copy.copy(self.setup)
        new.setup.kernel = self.setup.kernel.scaled(lam)
        if inner is not None:
            new.setup.inner = inner
        if lam == 0.0:
            new.model = None
            new.G = new.R_kappa = new.R_kappa_T = None
            new._lu = None
            return new
        new.model = self.model.rescaled(lam)
        new.G = new.model.G
        new.R_kappa = lam * self.R_kappa
        new.R_kappa_T = lam * self.R_kappa_T
        new._lu = None
        if new.setup.inner == "direct":
            new._factor()
        return new

    def spectral_radius(self) -> float:
        """Power-iteration estimate of the spectral radius of ``G``."""
        if self.model is None:
            return 0.0
        v = np.random.default_rng(0).normal(size=len(self.G))
        lam = 0.0
        for _ in range(200):
            w = self.G @ (self.G @ v)
            nw, nv = np.linalg.norm(w), np.linalg.norm(v)
            if nw == 0:
                return 0.0
            new = math.sqrt(nw / nv)
            v = w / nw
            if abs(new - lam) <= 1e-10 * new:
                return new
            lam = new
        return lam

    # -- inner solves -------------------------------------------------------------

    def _factor(self):
        import scipy.linalg as sla

        rho = self.spectral_radius()
        if rho >= 1.0:
            raise DivergenceError(f"transport iteration does not contract (rho ~ {rho:.4g})", 0)
        self._lu = sla.lu_factor(np.eye(len(self.G)) - self.G)

    def _solve_inner(self, b: np.ndarray, transpose: bool) -> np.ndarray:
        if not np.any(b):
            return np.zeros_like(b)
        if self._lu is not None:
            import scipy.linalg as sla

            return sla.lu_solve(self._lu, b, trans=1 if transpose else 0)
        M = self.G.T if transpose else self.G
        w = np.full(len(b), self.area)
        res = fixed_point(lambda g: M @ g + b, b, w, self.setup.inner_tol,
                          self.setup.inner_max_iter, "transport iteration")
        if not res.converged:
            raise DivergenceError("transport iteration inside the measurement operator did not "
                                  f"converge after {res.iterations} iterations", res.iterations)
        return res.x

    # -- operator ----------------------------------------------------------------------

    def embed(self, fs: np.ndarray) -> np.ndarray:
        """Support-cell vector to an Omega_1-cell vector (zero elsewhere)."""
        full = np.zeros(self.pgrid.n_cells)
        full[self.unknowns] = fs
        return full

    def forward_cells(self, fs: np.ndarray) -> np.ndarray:
        full = self.embed(fs)
        y = self.ray.matrix @ full
        if self.model is not None:
            y = y + self.R_kappa @ self._solve_inner(self.H @ full, False)
        return y

    def adjoint_full(self, y: np.ndarray) -> np.ndarray:
        """Adjoint image on all Omega_1 cells."""
        z = self.weights * y
        a = self.ray._matrix_T @ z
        if self.model is not None:
            a = a + self.H.T @ self._solve_inner(self.R_kappa_T @ z, True)
        return a / self.area

    def adjoint_cells(self, y: np.ndarray) -> np.ndarray:
        return self.adjoint_full(y)[self.unknowns]

    def cells_of(self, f: SourceImage) -> np.ndarray:
        if not f.grid.same_as(self.setup.grid):
            raise ValueError("image grid does not match the operator grid")
        return f.values.ravel()[self.pgrid.cells][self.unknowns]

    def image(self, fs: np.ndarray, support=None) -> SourceImage:
        return self.ray.image_from_cells(self.embed(fs), self.setup.support if support is None
                                         else support)

    def forward(self, f: SourceImage) -> BoundarySinogram:
        return BoundarySinogram(self.nodes, self.forward_cells(self.cells_of(f)))

    def adjoint(self, g: BoundarySinogram) -> SourceImage:
        if len(g.values) != self.n_data:
            raise ValueError("sinogram node set does not match the operator")
        return self.ray.image_from_cells(self.adjoint_full(g.values))

    def normal(self, f: SourceImage) -> SourceImage:
        """``A* A f`` on all Omega_1 cells."""
        return self.ray.image_from_cells(self.adjoint_full(self.forward_cells(self.cells_of(f))))

    def data_norm(self, y: np.ndarray) -> float:
        return math.sqrt(float(np.sum(self.weights * y * y)))

    def image_norm(self, fs: np.ndarray) -> float:
        return math.sqrt(float(np.sum(fs * fs)) * self.area)


def operator_norm(op: MeasurementOperator, n_iter: int = 50, seed: int = 0,
                  rtol: float = 1e-6) -> float:
    """Largest singular value of ``A`` on the support by power iteration on ``A* A``."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=op.n_unknowns)
    v /= op.image_norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = op.adjoint_cells(op.forward_cells(v))
        new = op.image_norm(w)
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - lam) <= rtol * new:
            lam = new
            break
        lam = new
    return math.sqrt(lam)


@dataclass
class ReconstructionResult:
    """Output of an iterative reconstruction.

    ``residual_history[m]`` is the weighted data residual ``||d - A f^m||``
    for ``m = 0, ..., iterations``; ``normal_history`` holds the normal
    equation residual ``||A*(d - A f^m) - eps f^m||`` that drives the
    stopping test.
    """

    f: SourceImage
    iterations: int
    residual_history: list
    normal_history: list
    converged: bool
    diverged: bool
    method: str
    rel_data_residual: float

    def error_vs(self, truth: SourceImage) -> float:
        """Relative L2 error against a reference image (cell-area norm)."""
        d = self.f.values - truth.values
        return float(np.linalg.norm(d) / np.linalg.norm(truth.values))


def _data_vector(op: MeasurementOperator, data) -> np.ndarray:
    if isinstance(data, BoundarySinogram):
        if len(data.values) != op.n_data:
            raise ValueError("sinogram node set does not match the operator")
        y = data.values
    else:
        y = np.asarray(data, dtype=float)
        if y.shape != (op.n_data,):
            raise ValueError(f"data has shape {y.shape}, expected ({op.n_data},)")
    if not np.all(np.isfinite(y)):
        raise ValueError("data contains non-finite values")
    return y


def reconstruct_cgne(op: MeasurementOperator, data, tol: float = 1e-6, max_iter: int = 200,
                     eps: Optional[float] = None) -> ReconstructionResult:
    """Conjugate gradients on ``(A* A + eps Id) f = A* d`` (CGLS form).

    Stops when the normal-equation residual falls below ``tol`` times its
    initial value. Zero data returns ``f = 0`` after zero iterations.
    """
    eps = op.setup.eps if eps is None else float(eps)
    d = _data_vector(op, data)
    n = op.n_unknowns
    x = np.zeros(n)
    dn = op.data_norm(d)
    if dn == 0.0:
        return ReconstructionResult(op.image(x), 0, [0.0], [0.0], True, False, "cgne", 0.0)
    ip = lambda a, b: float(np.dot(a, b)) * op.area
    r = d.copy()
    s = op.adjoint_cells(r)
    p = s.copy()
    gamma = ip(s, s)
    s0 = math.sqrt(gamma)
    hist, nhist = [dn], [s0]
    converged = s0 == 0.0
    it = 0
    while not converged and it < max_iter:
        it += 1
        q = op.forward_cells(p)
        denom = float(np.sum(op.weights * q * q)) + eps * ip(p, p)
        if denom <= 0.0:
            break
        alpha = gamma / denom
        x = x + alpha * p
        r = r - alpha * q
        s = op.adjoint_cells(r) - eps * x
        gnew = ip(s, s)
        if not (np.isfinite(gnew) and np.all(np.isfinite(x))):
            raise DivergenceError(f"CGNE produced non-finite values at iteration {it}", it)
        hist.append(op.data_norm(r))
        nhist.append(math.sqrt(gnew))
        if math.sqrt(gnew) <= tol * s0:
            converged = True
            break
        p = s + (gnew / gamma) * p
        gamma = gnew
    return ReconstructionResult(op.image(x), it, hist, nhist, converged, False, "cgne",
                                hist[-1] / dn)


def reconstruct_landweber(op: MeasurementOperator, data, step: Optional[float] = None,
                          tol: float = 1e-6, max_iter: int = 500, eps: Optional[float] = None,
                          f0: Optional[SourceImage] = None) -> ReconstructionResult:
    """Landweber iteration ``f <- f + step (A*(d - A f) - eps f)``.

    The default step is ``1 / (||A||^2 + eps)``. Steps at or beyond
    ``2 / (||A||^2 + eps)`` are run as requested but logged, and growth of
    the data residual by a factor 1e3 stops the run with ``diverged=True``.
    """
    eps = op.setup.eps if eps is None else float(eps)
    d = _data_vector(op, data)
    x = np.zeros(op.n_unknowns) if f0 is None else op.cells_of(f0).copy()
    dn = op.data_norm(d)
    r = d - op.forward_cells(x)
    hist = [op.data_norm(r)]
    if step is None:
        step = 1.0 / (operator_norm(op) ** 2 + eps)
    elif step < 0:
        raise ValueError("Landweber step must be nonnegative")
    else:
        bound = 2.0 / (operator_norm(op) ** 2 + eps)
        if step >= bound:
            log.warning("Landweber step %.4g exceeds the stability bound %.4g", step, bound)
    if step == 0.0 or dn == 0.0 and not np.any(x):
        rel = hist[0] / dn if dn > 0 else 0.0
        return ReconstructionResult(op.image(x), 0, hist, [], dn == 0.0, False, "landweber", rel)
    s = op.adjoint_cells(r) - eps * x
    s0 = op.image_norm(s)
    nhist = [s0]
    converged = s0 == 0.0
    diverged = False
    it = 0
    while not converged and it < max_iter:
        it += 1
        x = x + step * s
        r = d - op.forward_cells(x)
        rn = op.data_norm(r)
        if not np.isfinite(rn) or rn > 1e3 * max(hist[0], dn):
            diverged = True
            hist.append(rn)
            break
        hist.append(rn)
        s = op.adjoint_cells(r) - eps * x
        nhist.append(op.image_norm(s))
        converged = nhist[-1] <= tol * s0
    rel = hist[-1] / dn if dn > 0 else 0.0
    return ReconstructionResult(op.image(x), it, hist, nhist, converged, diverged, "landweber", rel)


# -- stability and injectivity probes -------------------------------------------------------

def _masked_diff(v: np.ndarray, m: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centered difference inside the mask, one-sided where a neighbor is outside."""
    vp = np.roll(v, -1, axis)
    vm = np.roll(v, 1, axis)
    mp = np.roll(m, -1, axis)
    mm = np.roll(m, 1, axis)
    n = v.shape[axis]
    idx = np.arange(n)
    edge_hi = (idx == n - 1).reshape([-1 if a == axis else 1 for a in range(v.ndim)])
    edge_lo = (idx == 0).reshape([-1 if a == axis else 1 for a in range(v.ndim)])
    mp = mp & ~edge_hi
    mm = mm & ~edge_lo
    out = np.where(mp & mm, (vp - vm) / (2 * h),
                   np.where(mp, (vp - v) / h, np.where(mm, (v - vm) / h, 0.0)))
    return np.where(m, out, 0.0)


def h1_norm(values: np.ndarray, mask: np.ndarray, grid: SpatialGrid) -> float:
    """Discrete ``H^1`` norm over the masked cells.

    ``||g||^2 + ||dg/dx||^2 + ||dg/dy||^2`` with cell-area quadrature;
    derivatives are centered where both neighbors are in the mask and
    one-sided otherwise.
    """
    v = np.where(mask, values, 0.0)
    hx, hy = grid.spacing
    gx = _masked_diff(v, mask, hx, axis=1)
    gy = _masked_diff(v, mask, hy, axis=0)
    return math.sqrt(float(np.sum(v * v + gx * gx + gy * gy)) * grid.cell_area)


@dataclass
class StabilityReport:
    """Ratios ``||f||_{L2(Omega)} / ||A* A f||_{H1(Omega_1)}`` over phantoms."""

    ratios: np.ndarray
    l2_norms: np.ndarray
    h1_norms: np.ndarray

    @property
    def constant(self) -> float:
        return float(np.max(self.ratios))

    @property
    def spread(self) -> float:
        return float(np.max(self.ratios) / np.min(self.ratios))

    def summary(self) -> str:
        return (f"{len(self.ratios)} phantoms: C = {self.constant:.4g}, "
                f"min ratio {np.min(self.ratios):.4g}, spread {self.spread:.3f}")


def stability_probe(op: MeasurementOperator, phantoms: Sequence[SourceImage]) -> StabilityReport:
    """Evaluate the normal-operator stability ratio for each nonzero phantom."""
    mask = op.pgrid.mask
    grid = op.setup.grid
    ratios, l2s, h1s = [], [], []
    for f in phantoms:
        fs = op.cells_of(f)
        l2 = op.image_norm(fs)
        if l2 == 0.0:
            continue
        nf = op.normal(f).values
        h1 = h1_norm(nf, mask, grid)
        if h1 == 0.0:
            raise ValueError("normal operator annihilated a nonzero phantom")
        ratios.append(l2 / h1)
        l2s.append(l2)
        h1s.append(h1)
    if not ratios:
        raise ValueError("stability probe needs at least one nonzero phantom")
    return StabilityReport(np.array(ratios), np.array(l2s), np.array(h1s))


@dataclass
class InjectivityReport:
    """Spectrum summary of the discrete Gram matrix ``A* A`` on the support."""

    n_unknowns: int
    eig_min: float
    eig_max: float

    @property
    def condition(self) -> float:
        return math.inf if self.eig_min <= 0 else self.eig_max / self.eig_min

    @property
    def injective(self) -> bool:
        return self.eig_min > 1e-12 * self.eig_max


def injectivity_probe(op: MeasurementOperator, max_unknowns: int = 2000) -> InjectivityReport:
    """Assemble ``A* A`` column by column (coarse grids) and report its spectrum."""
    n = op.n_unknowns
    if n > max_unknowns:
        raise MemoryError(f"injectivity probe with {n} unknowns refused (limit {max_unknowns})")
    if op.model is None:
        M = op.ray.matrix[:, op.unknowns].toarray()
    else:
        M = np.stack([op.forward_cells(e) for e in np.eye(n)], axis=1)
    gram = (M.T * op.weights) @ M / op.area
    gram = 0.5 * (gram + gram.T)
    ev = np.linalg.eigvalsh(gram)
    return InjectivityReport(n, float(ev[0]), float(ev[-1]))
