import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvtomo import (AttenuationField, DivergenceError, InverseProblemSetup, MeasurementOperator,
                      ScatteringKernel, SourceImage, SpatialGrid)
from curvtomo.phantoms import band_limited_ensemble, make_phantom
from curvtomo.reconstruction import (h1_norm, injectivity_probe, operator_norm,
                                     reconstruct_cgne, reconstruct_landweber, stability_probe)

from conftest import make_geom

K1 = lambda x, t: 1 + 0.3 * x[..., 0] + 0.1 * t[..., 1]
K2 = lambda x, t: 0.5 + 0.2 * t[..., 0] ** 2


@pytest.fixture(scope="module")
def small():
    g = make_geom(b=0.3, tau=0.5)
    grid = SpatialGrid.covering(g.domain, 12)
    op = MeasurementOperator(InverseProblemSetup(g, grid, n_bdry=48, n_angle=24))
    return g, grid, op


@pytest.fixture(scope="module")
def medium():
    g = make_geom(b=0.3, tau=0.5)
    grid = SpatialGrid.covering(g.domain, 24)
    op = MeasurementOperator(InverseProblemSetup(g, grid, n_bdry=90, n_angle=45))
    return g, grid, op


@pytest.fixture(scope="module")
def scattering():
    g = make_geom(b=0.3, tau=0.5, inner=0.8)
    grid = SpatialGrid.covering(g.outer, 12)
    ker = ScatteringKernel.separable(K1, K2).scaled(0.05)
    op = MeasurementOperator(InverseProblemSetup(g, grid, AttenuationField.constant(0.2), ker,
                                                 separable=True, n_bdry=40, n_angle=20,
                                                 n_theta=8))
    return g, grid, op


def test_setup_validation():
    g = make_geom(inner=0.8)
    grid = SpatialGrid.covering(g.outer, 8)
    ker = ScatteringKernel.separable(K1, K2)
    with pytest.raises(ValueError, match="separable=True"):
        InverseProblemSetup(g, grid, kernel=ker)
    with pytest.raises(ValueError, match="not separable"):
        InverseProblemSetup(g, grid, kernel=ker.as_general(), separable=True)
    with pytest.raises(ValueError, match="outside"):
        InverseProblemSetup(g, grid, support=np.ones(grid.shape, bool))
    with pytest.raises(ValueError, match="empty"):
        InverseProblemSetup(g, grid, support=np.zeros(grid.shape, bool))
    with pytest.raises(ValueError, match="inner"):
        InverseProblemSetup(g, grid, inner="gmres")


def test_zero_data_gives_zero_image(small):
    _, _, op = small
    res = reconstruct_cgne(op, np.zeros(op.n_data))
    assert res.iterations == 0 and res.converged and not np.any(res.f.values)


def test_bad_data_rejected(small):
    _, _, op = small
    with pytest.raises(ValueError):
        reconstruct_cgne(op, np.zeros(op.n_data + 1))
    d = np.zeros(op.n_data)
    d[0] = np.nan
    with pytest.raises(ValueError):
        reconstruct_cgne(op, d)


def test_operator_norm_against_dense_svd(small):
    _, _, op = small
    M = op.ray.matrix[:, op.unknowns].toarray()
    # same inner products: weighted data, cell-area images
    s = np.linalg.svd(np.sqrt(op.weights)[:, None] * M / np.sqrt(op.area), compute_uv=False)
    assert operator_norm(op, n_iter=500, rtol=1e-12) == pytest.approx(s[0], rel=0.05)


def test_landweber_matches_cgne(small):
    g, grid, op = small
    f = make_phantom("gaussian-bump", grid, g.domain)
    d = op.forward(f)
    cg = reconstruct_cgne(op, d, tol=1e-12, max_iter=500)
    lw = reconstruct_landweber(op, d, tol=1e-10, max_iter=200000)
    assert lw.converged
    assert np.linalg.norm(lw.f.values - cg.f.values) <= 1e-4 * np.linalg.norm(cg.f.values)


def test_landweber_zero_step_is_identity(small):
    g, grid, op = small
    f = make_phantom("gaussian-bump", grid, g.domain)
    f0 = make_phantom("two-discs", grid, g.domain)
    res = reconstruct_landweber(op, op.forward(f), step=0.0, f0=f0)
    assert res.iterations == 0
    assert np.array_equal(res.f.values, np.where(op.support, f0.values, 0.0))


def test_landweber_large_step_diverges(small, caplog):
    g, grid, op = small
    f = make_phantom("gaussian-bump", grid, g.domain)
    step = 3.0 / operator_norm(op) ** 2
    res = reconstruct_landweber(op, op.forward(f), step=step, max_iter=2000)
    assert res.diverged and not res.converged
    assert "stability bound" in caplog.text


def test_cgne_data_residual_monotone(medium):
    g, grid, op = medium
    f = make_phantom("two-discs", grid, g.domain)
    res = reconstruct_cgne(op, op.forward(f), tol=1e-10, max_iter=300)
    h = np.array(res.residual_history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])
    assert len(res.normal_history) == len(h)


def test_exact_data_recovered(medium):
    g, grid, op = medium
    f = make_phantom("gaussian-bump", grid, g.domain)
    res = reconstruct_cgne(op, op.forward(f), tol=1e-10, max_iter=500)
    assert res.converged
    assert res.error_vs(f) < 1e-4


def test_tikhonov_error_is_u_shaped(small):
    g, grid, op = small
    f = make_phantom("gaussian-bump", grid, g.domain)
    y = op.forward(f).values
    noise = np.random.default_rng(3).normal(size=op.n_data)
    y = y + 0.05 * op.data_norm(y) / op.data_norm(noise) * noise
    eps = [0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0]
    errs = [reconstruct_cgne(op, y, tol=1e-10, max_iter=1000, eps=e).error_vs(f) for e in eps]
    k = int(np.argmin(errs))
    assert 0 < k < len(eps) - 1
    assert errs[-1] > errs[k] and errs[0] > errs[k]


@settings(max_examples=10, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10))
def test_forward_linearity(small, a, b):
    g, grid, op = small
    f1 = make_phantom("gaussian-bump", grid, g.domain)
    f2 = make_phantom("smooth-ring", grid, g.domain)
    lhs = op.forward(f1.with_values(a * f1.values + b * f2.values)).values
    rhs = a * op.forward(f1).values + b * op.forward(f2).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * (abs(a) + abs(b)))


def test_scattering_forward_linear_and_adjoint(scattering):
    g, grid, op = scattering
    r = np.random.default_rng(5)
    f1, f2 = r.normal(size=(2, op.n_unknowns))
    assert np.allclose(op.forward_cells(2 * f1 - f2),
                       2 * op.forward_cells(f1) - op.forward_cells(f2), rtol=1e-11, atol=1e-13)
    y = r.normal(size=op.n_data)
    Af = op.forward_cells(f1)
    lhs = float(np.sum(op.weights * Af * y))
    rhs = float(np.dot(f1, op.adjoint_cells(y))) * op.area
    assert abs(lhs - rhs) <= 1e-12 * op.data_norm(Af) * op.data_norm(y)


def test_direct_and_fixed_point_inner_agree(scattering):
    g, grid, op = scattering
    import dataclasses
    d = MeasurementOperator(dataclasses.replace(op.setup, inner="direct"))
    f = np.random.default_rng(6).normal(size=op.n_unknowns)
    a, b = op.forward_cells(f), d.forward_cells(f)
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


def test_rescaled_matches_rebuild(scattering):
    g, grid, op = scattering
    import dataclasses
    half = op.rescaled(0.5)
    rebuilt = MeasurementOperator(dataclasses.replace(op.setup,
                                                      kernel=op.setup.kernel.scaled(0.5)))
    f = np.random.default_rng(8).normal(size=op.n_unknowns)
    a, b = half.forward_cells(f), rebuilt.forward_cells(f)
    assert np.max(np.abs(a - b)) <= 1e-13 * np.max(np.abs(a))
    zero = op.rescaled(0.0)
    assert np.array_equal(zero.forward_cells(f), op.ray.matrix @ op.embed(f))


def test_rescaled_beyond_contraction_raises(scattering):
    g, grid, op = scattering
    big = op.rescaled(1.5 / op.spectral_radius())
    with pytest.raises(DivergenceError):
        big.forward_cells(np.ones(op.n_unknowns))


def test_injectivity_on_coarse_grid(small):
    _, _, op = small
    rep = injectivity_probe(op)
    assert rep.injective and rep.eig_min > 0
    with pytest.raises(MemoryError):
        injectivity_probe(op, max_unknowns=10)


def test_h1_norm_of_linear_function():
    grid = SpatialGrid(40, 40, (-1, 1, -1, 1))
    P = grid.points
    mask = np.ones(grid.shape, bool)
    v = 2 * P[..., 0] - P[..., 1]
    # ||v||^2 + |grad v|^2 * area(square)
    ref = np.sqrt(np.sum(v * v) * grid.cell_area + 5 * 4.0)
    assert h1_norm(v, mask, grid) == pytest.approx(ref, rel=1e-12)


def test_stability_probe_scaling_and_zero(small):
    g, grid, op = small
    ens = band_limited_ensemble(grid, g.domain, n=4)
    rep = stability_probe(op, ens)
    rep2 = stability_probe(op, [f.with_values(2 * f.values) for f in ens])
    assert np.allclose(rep.ratios, rep2.ratios, rtol=1e-10)
    zero = SourceImage.zeros(grid, op.support)
    rep3 = stability_probe(op, [zero] + ens)
    assert len(rep3.ratios) == 4
    with pytest.raises(ValueError):
        stability_probe(op, [zero])


def test_rescaled_operator_matches_its_transport_model(scattering):
    g, grid, op = scattering
    half = op.rescaled(0.5, inner="direct")
    assert half.setup.inner == "direct" and op.setup.inner == "fixed-point"
    f = make_phantom("gaussian-bump", grid, g.domain)
    y = half.model.measure(f, op.setup.n_bdry, op.setup.n_angle, tol=1e-14)
    assert y.nodes is op.nodes
    assert np.max(np.abs(y.values - half.forward(f).values)) <= 1e-12 * np.max(np.abs(y.values))
