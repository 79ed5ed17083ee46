import os
import subprocess
import sys

import numpy as np
import pytest

from curvtomo import (Ellipse, ForceField, Geometry, GriddedField, Magnetic, Potential,
                      RayOperator, SpatialGrid, SourceImage)
from curvtomo import _backend, tracing

from conftest import make_geom


def _grid_geom():
    xs = np.linspace(-1.2, 1.2, 49)
    X, Y = np.meshgrid(xs, xs)
    phi = GriddedField(0.1 * np.exp(-(X ** 2 + Y ** 2)), (-1.2, 1.2, -1.2, 1.2))
    return Geometry(Ellipse(a=0.7, b=0.5), ForceField(Potential.grid(phi),
                                                         Magnetic.constant(0.15)),
                    0.6, outer=Ellipse(a=1.0, b=0.8))


GEOMS = {
    "mixed": lambda: make_geom(b=0.2, phi=Potential.gaussian(0.3, 1.0), tau=1.0, inner=0.8),
    "harmonic": lambda: make_geom(b=-0.1, phi=Potential.harmonic(0.2), tau=0.6),
    "grid-field": _grid_geom,
}


def _states(geom, n=64, seed=0):
    r = np.random.default_rng(seed)
    a = r.uniform(0, 2 * np.pi, n)
    rad = 0.4 * np.sqrt(r.uniform(0, 1, n))
    x = np.stack([rad * np.cos(a), rad * np.sin(a)], -1)
    b = r.uniform(0, 2 * np.pi, n)
    return x, geom.shell.p(x)[:, None] * np.stack([np.cos(b), np.sin(b)], -1)


@pytest.mark.parametrize("name", sorted(GEOMS))
def test_trace_exit_backends_agree(name):
    geom = GEOMS[name]()
    x, v = _states(geom)
    for sign, which in ((1, "outer"), (-1, "inner")):
        a = tracing.trace_exit(geom, x, v, sign, which, track_energy=True, backend="numba")
        b = tracing.trace_exit(geom, x, v, sign, which, track_energy=True, backend="numpy")
        assert np.array_equal(a.status, b.status)
        assert np.allclose(a.ell, b.ell, rtol=0, atol=1e-12)
        assert np.allclose(a.x_exit, b.x_exit, rtol=0, atol=1e-12)
        assert np.allclose(a.v_exit, b.v_exit, rtol=0, atol=1e-12)
        assert np.allclose(a.drift, b.drift, rtol=0, atol=1e-14)


@pytest.mark.parametrize("name", sorted(GEOMS))
def test_sample_arcs_backends_agree(name):
    geom = GEOMS[name]()
    x, v = _states(geom)
    ell = tracing.trace_exit(geom, x, v, 1, "outer").ell
    a = tracing.sample_arcs(geom, x, v, ell, 32, backend="numba")
    b = tracing.sample_arcs(geom, x, v, ell, 32, backend="numpy")
    assert np.allclose(a[0], b[0], rtol=0, atol=1e-13)
    assert np.allclose(a[1], b[1], rtol=0, atol=1e-13)


@pytest.mark.parametrize("name", sorted(GEOMS))
def test_variational_backends_agree(name):
    geom = GEOMS[name]()
    x, v = _states(geom, n=16)
    z0 = np.broadcast_to(np.eye(4)[None, :, :2], (16, 4, 2)).copy()
    ra, za = tracing.trace_variational(geom, x, v, z0, backend="numba")
    rb, zb = tracing.trace_variational(geom, x, v, z0, backend="numpy")
    assert np.allclose(ra.ell, rb.ell, rtol=0, atol=1e-12)
    assert np.allclose(za, zb, rtol=0, atol=1e-10)


def test_ray_operator_backends_agree():
    geom = GEOMS["mixed"]()
    grid = SpatialGrid.covering(geom.outer, 16)
    f = SourceImage.from_function(lambda P: np.exp(-np.sum(P * P, -1) / 0.1), grid,
                                  grid.mask(geom.domain))
    a = RayOperator(geom, grid, n_bdry=24, n_angle=12, backend="numba").forward(f).values
    b = RayOperator(geom, grid, n_bdry=24, n_angle=12, backend="numpy").forward(f).values
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


def test_backend_selection(monkeypatch):
    monkeypatch.setenv("CURVTOMO_NUMBA", "0")
    _backend.set_backend(None)
    assert _backend.resolve() == "numpy"
    monkeypatch.setenv("CURVTOMO_NUMBA", "1")
    assert _backend.resolve() == "numba"
    _backend.set_backend("numpy")
    try:
        assert _backend.resolve() == "numpy"
        assert _backend.resolve("numba") == "numba"
    finally:
        _backend.set_backend(None)
    with pytest.raises(ValueError):
        _backend.resolve("cuda")
    with pytest.raises(ValueError):
        _backend.set_threads(0)


def test_env_flag_in_fresh_process():
    code = ("from curvtomo import _backend; print(_backend.resolve())")
    env = dict(os.environ, CURVTOMO_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "numpy"
