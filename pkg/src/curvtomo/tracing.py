"""Backend dispatch for batched trajectory tracing.

The jitted kernels run when numba is enabled and both the force field and
the domain are catalog types; otherwise the vectorized numpy kernels run
with the field objects' own methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from . import _kernels_numpy as knp
from ._layout import EXITED, INVALID, TRAPPED
from .errors import DomainError, TrappedTrajectoryError
from .geometry import Geometry

__all__ = ["TraceResult", "trace_exit", "sample_arcs", "trace_variational",
           "EXITED", "TRAPPED", "INVALID"]


@dataclass
class TraceResult:
    """Batch of exits; ``ell`` is signed (negative for backward tracing)."""

    ell: np.ndarray
    x_exit: np.ndarray
    v_exit: np.ndarray
    status: np.ndarray
    drift: np.ndarray

    def require_exited(self, what: str = "node", offset: int = 0) -> "TraceResult":
        bad = np.nonzero(self.status == INVALID)[0]
        if bad.size:
            raise DomainError(f"field undefined along the trajectory of {what} "
                              f"{int(bad[0]) + offset} ({bad.size} affected)")
        trapped = np.nonzero(self.status == TRAPPED)[0]
        if trapped.size:
            ids = trapped + offset
            raise TrappedTrajectoryError(
                f"{what} {int(ids[0])} did not exit within the travel-time budget "
                f"({trapped.size} trapped)", nodes=ids)
        return self


def _jit(geom: Geometry, dom, backend):
    if _backend.resolve(backend) != "numba":
        return None
    fpk = geom.force.packed()
    dp = dom.packed()
    if fpk is None or dp is None:
        return None
    from . import _kernels_numba
    return _kernels_numba, dp, fpk


def _prep(x0, v0):
    x0 = np.ascontiguousarray(np.atleast_2d(x0), dtype=float)
    v0 = np.ascontiguousarray(np.atleast_2d(v0), dtype=float)
    if x0.shape != v0.shape or x0.shape[1] != 2:
        raise ValueError("x0 and v0 must both have shape (m, 2)")
    return x0, v0


def trace_exit(geom: Geometry, x0, v0, sign: int = 1, which: str = "outer",
               track_energy: bool = False, h: Optional[float] = None,
               budget: Optional[float] = None, backend: Optional[str] = None) -> TraceResult:
    """Integrate each state until it leaves the chosen domain.

    Parameters
    ----------
    sign : {+1, -1}
        Forward or backward in time.
    which : {"outer", "inner"}
        Exit from Omega_1 or Omega.
    track_energy : bool
        Record max |H(s) - H(0)| along each trajectory.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    opts = geom.options
    h = opts.h if h is None else float(h)
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    budget = opts.budget if budget is None else float(budget)
    max_steps = max(1, int(math.ceil(budget / h)))
    dom = geom.region(which)
    x0, v0 = _prep(x0, v0)
    hs = sign * h
    jit = _jit(geom, dom, backend)
    if jit is not None:
        kn, dp, (fp, pg, mg) = jit
        out = kn.trace_exit(x0, v0, hs, max_steps, opts.eps_bdry, dp, fp, pg, mg, track_energy)
    else:
        f = geom.force
        out = knp.trace_exit(x0, v0, hs, max_steps, opts.eps_bdry, dom.level, f.accel,
                             f.phi if track_energy else None, f.grad_phi)
    return TraceResult(*out)


def sample_arcs(geom: Geometry, x0, v0, ell, n: int, backend: Optional[str] = None):
    """States at ``n + 1`` equispaced times from 0 to ``ell`` (signed) per ray.

    Each interval is a single RK4 step, so ``n`` also sets the accuracy.
    """
    if n < 1:
        raise ValueError("need at least one step per arc")
    x0, v0 = _prep(x0, v0)
    ell = np.ascontiguousarray(ell, dtype=float)
    jit = _jit(geom, geom.outer, backend)
    if jit is not None:
        kn, _, (fp, pg, mg) = jit
        xs, vs, ok = kn.sample_arcs(x0, v0, ell, int(n), fp, pg, mg)
    else:
        xs, vs, ok = knp.sample_arcs(x0, v0, ell, int(n), geom.force.accel)
    if not ok.all():
        i = int(np.nonzero(~ok)[0][0])
        raise DomainError(f"field undefined along sampled arc {i}")
    return xs, vs


def trace_variational(geom: Geometry, x0, v0, z0, sign: int = 1, which: str = "outer",
                      backend: Optional[str] = None):
    """Exit search carrying tangent vectors ``z0`` of shape (m, 4, k).

    Returns ``(TraceResult, z_exit)`` where ``z_exit`` is the linearized flow
    applied to ``z0`` at the (uncorrected) exit time.
    """
    opts = geom.options
    max_steps = max(1, int(math.ceil(opts.budget / opts.h)))
    dom = geom.region(which)
    x0, v0 = _prep(x0, v0)
    z0 = np.ascontiguousarray(z0, dtype=float)
    hs = sign * opts.h
    jit = _jit(geom, dom, backend)
    if jit is not None:
        kn, dp, (fp, pg, mg) = jit
        ell, xe, ve, ze, st = kn.trace_exit_variational(
            x0, v0, z0, hs, max_steps, opts.eps_bdry, dp, fp, pg, mg)
    else:
        f = geom.force
        ell, xe, ve, ze, st = knp.trace_exit_variational(
            x0, v0, z0, hs, max_steps, opts.eps_bdry, dom.level, f.accel, f.hess_phi, f.bfield)
    return TraceResult(ell, xe, ve, st, np.zeros(len(ell))), ze
