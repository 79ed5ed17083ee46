"""Discretized backward characteristics.

Each ray starts at a phase point ``(x, theta)``, is traced backward to its
entry time ``ell_- <= 0`` on the boundary of Omega_1, and is sampled at
``n + 1`` equispaced times. Sample ``k`` carries the weight
``trapezoid_k * W_k`` with ``W_k = exp(-int_{s_k}^0 sigma)``, the attenuation
integral itself being the cumulative trapezoid of sigma over the same
samples. Matrices built from these rays are exact compositions of the
sample weights with bilinear (space) and periodic-linear (angle) stencils,
so their transposes are the exact discrete adjoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
import scipy.sparse as sp

from . import tracing
from .grids import PhaseGrid, angular_stencil, bilinear_stencil

__all__ = ["RayChunk", "iter_rays", "assemble"]

DEFAULT_CHUNK = 2048


@dataclass
class RayChunk:
    start: int
    ell: np.ndarray
    xs: np.ndarray
    vs: np.ndarray
    weights: np.ndarray


def iter_rays(geom, x0: np.ndarray, v0: np.ndarray, sigma, n_samples: int,
              chunk: int = DEFAULT_CHUNK, what: str = "node",
              backend: Optional[str] = None) -> Iterator[RayChunk]:
    """Yield sampled backward rays in chunks of at most ``chunk`` rays."""
    tw = np.ones(n_samples + 1)
    tw[[0, -1]] = 0.5
    for s in range(0, len(x0), chunk):
        xa, va = x0[s:s + chunk], v0[s:s + chunk]
        r = tracing.trace_exit(geom, xa, va, -1, "outer", backend=backend)
        r.require_exited(what, offset=s)
        xs, vs = tracing.sample_arcs(geom, xa, va, r.ell, n_samples, backend=backend)
        ds = (np.abs(r.ell) / n_samples)[:, None]
        if sigma is None or sigma.is_zero:
            W = np.ones(xs.shape[:2])
        else:
            sig = sigma(xs, vs)
            acc = np.concatenate([np.zeros((len(xa), 1)),
                                  np.cumsum(0.5 * (sig[:, 1:] + sig[:, :-1]), axis=1)], axis=1)
            W = np.exp(-acc * ds)
        yield RayChunk(s, r.ell, xs, vs, tw[None, :] * ds * W)


def _coo_rows(rc: RayChunk, row_ids: Optional[np.ndarray], per: int):
    m, ns = rc.weights.shape
    rows = np.arange(rc.start, rc.start + m) if row_ids is None else row_ids[rc.start:rc.start + m]
    return np.broadcast_to(rows[:, None, None], (m, ns, per))


def assemble(pg: PhaseGrid, chunks, n_rows: int, row_ids: Optional[np.ndarray] = None,
             kappa1: Optional[np.ndarray] = None, phase: bool = False) -> sp.csr_matrix:
    """Sparse matrix of ray integrals over grid functions.

    Parameters
    ----------
    pg : PhaseGrid
        Supplies the spatial grid and the active-cell column map.
    chunks : iterable of RayChunk
    n_rows : int
        Number of matrix rows; ray ``i`` fills row ``row_ids[i]`` (or ``i``).
    kappa1 : ndarray (n_cells, n_theta), optional
        Multiply each spatial stencil entry by the angular interpolant of
        ``kappa1`` at that cell, giving the integral of ``kappa1 * g`` for a
        cell function ``g``.
    phase : bool
        Columns index phase nodes ``c * n_theta + j`` (bilinear x angular
        stencil) instead of cells.
    """
    nt = pg.n_theta
    n_cols = pg.n_nodes if phase else pg.n_cells
    parts = []
    for rc in chunks:
        cols, wts = bilinear_stencil(pg.grid, rc.xs, pg.col_map)
        data = rc.weights[..., None] * wts
        if phase or kappa1 is not None:
            j0, j1, t = angular_stencil(rc.vs, nt)
        if kappa1 is not None:
            cc = np.maximum(cols, 0)
            data = data * ((1 - t)[..., None] * kappa1[cc, j0[..., None]]
                           + t[..., None] * kappa1[cc, j1[..., None]])
        if phase:
            valid = cols >= 0
            base = np.maximum(cols, 0) * nt
            cols = np.concatenate([np.where(valid, base + j0[..., None], -1),
                                   np.where(valid, base + j1[..., None], -1)], axis=-1)
            data = np.concatenate([data * (1 - t)[..., None], data * t[..., None]], axis=-1)
        rows = _coo_rows(rc, row_ids, cols.shape[-1])
        keep = (cols >= 0) & (data != 0)
        parts.append(sp.csr_matrix((data[keep], (rows[keep], cols[keep])), shape=(n_rows, n_cols)))
    if not parts:
        return sp.csr_matrix((n_rows, n_cols))
    coo = [p.tocoo() for p in parts]
    out = sp.csr_matrix((np.concatenate([c.data for c in coo]),
                         (np.concatenate([c.row for c in coo]), np.concatenate([c.col for c in coo]))),
                        shape=(n_rows, n_cols))
    out.sum_duplicates()
    out.sort_indices()
    return out
