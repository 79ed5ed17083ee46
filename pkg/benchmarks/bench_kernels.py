"""Benchmark the trajectory kernels: numba vs pure numpy.

Usage::

    python3 benchmarks/bench_kernels.py [--rays N] [--repeat R]

Times exit tracing, arc sampling, the variational flow and a full ray
operator build on a mixed potential + magnetic field, checks that both
backends agree, and prints the speedup.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from curvtomo import Disc, ForceField, Geometry, Magnetic, Potential, RayOperator, SpatialGrid
from curvtomo import tracing


def _geometry() -> Geometry:
    force = ForceField(Potential.gaussian(0.3, 1.0), Magnetic.constant(0.2))
    return Geometry(Disc(radius=0.8), force, 1.0, outer=Disc(radius=1.0))


def _states(geom: Geometry, n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 2 * np.pi, n)
    r = 0.7 * np.sqrt(rng.uniform(0, 1, n))
    x = np.stack([r * np.cos(a), r * np.sin(a)], axis=-1)
    b = rng.uniform(0, 2 * np.pi, n)
    return x, geom.shell.p(x)[:, None] * np.stack([np.cos(b), np.sin(b)], axis=-1)


def _time(fn, repeat: int) -> float:
    fn()  # warm-up (compiles the numba kernels)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rays", type=int, default=4000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    geom = _geometry()
    x, v = _states(geom, args.rays)
    ell = tracing.trace_exit(geom, x, v, 1, "outer").ell
    z0 = np.broadcast_to(np.eye(4)[None, :, :2], (len(x), 4, 2)).copy()
    grid = SpatialGrid.covering(geom.outer, 32)

    cases = {
        "trace_exit": lambda b: tracing.trace_exit(geom, x, v, 1, "outer", backend=b).ell,
        "sample_arcs(64)": lambda b: tracing.sample_arcs(geom, x, v, ell, 64, backend=b)[0],
        "trace_variational": lambda b: tracing.trace_variational(geom, x, v, z0, backend=b)[1],
        "RayOperator 32^2, 64x32": lambda b: RayOperator(geom, grid, None, 64, 32,
                                                         backend=b).matrix.data,
    }
    print(f"{'kernel':<26}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases.items():
        t_np = _time(lambda: fn("numpy"), args.repeat)
        t_nb = _time(lambda: fn("numba"), args.repeat)
        diff = float(np.max(np.abs(np.asarray(fn("numpy")) - np.asarray(fn("numba")))))
        print(f"{name:<26}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x{diff:>12.1e}")


if __name__ == "__main__":
    main()
