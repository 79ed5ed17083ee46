"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Tolerances are the stated ones; see the README for the measured values.
"""

import time

import numpy as np
import pytest

from curvtomo import (AttenuationField, InverseProblemSetup, MeasurementOperator, PhaseGrid,
                      Potential, RayOperator, ScatteringKernel, SourceImage, SpatialGrid,
                      TransportModel, adjoint_dot_test, continuous_adjoint)
from curvtomo.dynamics import (check_nontrapping, check_strict_convexity, energy_drift_sweep,
                               santalo_check, santalo_volume)
from curvtomo.phantoms import band_limited_ensemble, make_phantom
from curvtomo.reconstruction import operator_norm, reconstruct_cgne, stability_probe

from conftest import ACCEPTANCE_LINES, make_geom


def report(n: int, title: str, ok: bool, detail: str):
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _mixed_disc():
    return make_geom(b=0.2, phi=Potential.gaussian(0.3, 1.0), tau=1.0)


def _gauss_x(x):
    return np.exp(-np.sum((x - [0.1, 0.0]) ** 2, -1) / 0.2)


def _beta(t):
    return np.arctan2(t[..., 1], t[..., 0])


# -- 1 ----------------------------------------------------------------------------------------------

def test_1_energy_conservation():
    sw = energy_drift_sweep(_mixed_disc(), [1e-3, 5e-4], n_traj=1000, seed=0)
    d, ratio = sw.max_drift[0], float(sw.ratios[0])
    report(1, "energy conservation", d <= 1e-8 and ratio >= 8.0,
           f"max relative drift {d:.2e} at h=1e-3 (<= 1e-8), halving h reduces it "
           f"{ratio:.1f}x (>= 8)")


# -- 2 ----------------------------------------------------------------------------------------------

def test_2_santalo_formula():
    geom = _mixed_disc()
    tests = {
        "f=1": lambda x, t: np.ones(x.shape[:-1]),
        "gaussian": lambda x, t: _gauss_x(x),
        "gaussian*cos": lambda x, t: _gauss_x(x) * np.cos(_beta(t)),
    }
    ok, parts = True, []
    for name, f in tests.items():
        # the third function integrates to zero, so its error is measured
        # against the integral of |f| instead of |lhs|
        scale = abs(santalo_volume(lambda x, t: np.abs(f(x, t)), geom))
        errs = []
        for nb, na, ns in ((100, 64, 128), (200, 128, 256)):
            r = santalo_check(f, geom, nb, na, ns)
            errs.append(abs(r.lhs - r.rhs) / max(abs(r.lhs), 1e-300)
                        if name != "gaussian*cos" else abs(r.lhs - r.rhs) / scale)
        gain = errs[0] / errs[1]
        ok &= errs[1] <= 1e-3 and gain >= 4.0
        parts.append(f"{name} err {errs[1]:.1e} gain {gain:.1f}x")
    report(2, "Santalo formula", ok, "; ".join(parts) + " (err <= 1e-3, gain >= 4)")


# -- 3 ----------------------------------------------------------------------------------------------

K1 = lambda x, t: 1 + 0.3 * x[..., 0] + 0.1 * t[..., 1]
K2 = lambda x, t: 0.5 + 0.2 * t[..., 0] ** 2


def test_3_adjoint_exactness():
    configs = []
    g = make_geom()
    configs.append(("free disc", RayOperator(g, SpatialGrid.covering(g.outer, 32), None, 64, 32)))
    g = make_geom(b=0.2, phi=Potential.gaussian(0.3, 1.0), tau=1.0, inner=0.8)
    configs.append(("mixed nested, sigma", RayOperator(g, SpatialGrid.covering(g.outer, 32),
                                                       AttenuationField.gaussian(0.6, 0.5),
                                                       64, 32)))
    grid = SpatialGrid.covering(g.outer, 16)
    for inner in ("fixed-point", "direct"):
        setup = InverseProblemSetup(g, grid, AttenuationField.constant(0.2),
                                    ScatteringKernel.separable(K1, K2).scaled(0.05),
                                    separable=True, n_bdry=48, n_angle=24, n_theta=8, inner=inner)
        configs.append((f"scattering ({inner})", MeasurementOperator(setup)))
    worst, parts = 0.0, []
    for name, op in configs:
        e = float(adjoint_dot_test(op, n_pairs=20, seed=1).max())
        worst = max(worst, e)
        parts.append(f"{name} {e:.1e}")
    report(3, "adjoint exactness", worst <= 1e-12,
           f"max relative mismatch over 20 pairs: {'; '.join(parts)} (<= 1e-12)")


# -- 4 ----------------------------------------------------------------------------------------------

def test_4_continuous_vs_transpose_adjoint():
    ok, parts = True, []
    for name, g in (("F=0", make_geom(inner=0.8)), ("weak magnetic", make_geom(b=0.2, inner=0.8))):
        diffs, full = [], []
        for n in (32, 64):
            grid = SpatialGrid.covering(g.outer, n)
            op = RayOperator(g, grid, None, 4 * n, 2 * n)
            f = SourceImage.from_function(
                lambda P: np.exp(-np.sum((P - [0.15, -0.1]) ** 2, -1) / 0.35 ** 2), grid)
            sino = op.forward(f)
            at = op.adjoint(sino).values
            ac = continuous_adjoint(g, None, sino, grid, n_dir=n).values
            m, m1 = grid.mask(g.domain), grid.mask(g.outer)
            diffs.append(np.linalg.norm((at - ac)[m]) / np.linalg.norm(at[m]))
            full.append(np.linalg.norm((at - ac)[m1]) / np.linalg.norm(at[m1]))
        ok &= diffs[1] <= 0.03 and diffs[1] < diffs[0]
        parts.append(f"{name} {100 * diffs[0]:.2f}% -> {100 * diffs[1]:.2f}% on Omega "
                     f"({100 * full[0]:.1f}% -> {100 * full[1]:.1f}% on Omega_1)")
    report(4, "continuous vs transpose adjoint", ok,
           "32^2 -> 64^2 relative L2 difference: " + "; ".join(parts) + " (<= 3%, decreasing)")


# -- 5 ----------------------------------------------------------------------------------------------

def test_5_fixed_point_vs_dense_lu():
    g = make_geom(b=0.2, phi=Potential.gaussian(0.3, 1.0), tau=1.0, inner=0.8)
    pg = PhaseGrid(g, 12, n_theta=8)
    ker = ScatteringKernel.separable(K1, K2).scaled(0.05)
    f = SourceImage.from_function(lambda P: np.exp(-np.sum((P - [0.1, 0]) ** 2, -1) / 0.1),
                                  pg.grid, pg.inner_mask)
    parts, worst = [], 0.0
    for mode in ("general", "separable"):
        m = TransportModel(g, pg, AttenuationField.constant(0.3), ker, mode=mode)
        sol = m.solve(f)
        ref = m.dense_solve(f)
        e = (sol.u - ref).norm() / ref.norm()
        worst = max(worst, e)
        parts.append(f"{mode} {e:.1e} ({sol.iterations} iterations)")
    report(5, "fixed point vs dense LU", worst <= 1e-6,
           "12x12x8 relative difference: " + "; ".join(parts) + " (<= 1e-6)")


# -- 6 ----------------------------------------------------------------------------------------------

def test_6_well_posedness_boundary():
    g = make_geom(b=0.2, phi=Potential.gaussian(0.3, 1.0), tau=1.0, inner=0.8)
    pg = PhaseGrid(g, 12, n_theta=8)
    ker = ScatteringKernel.separable(K1, K2)
    rho1 = TransportModel(g, pg, None, ker).spectral_radius("dense")
    f = SourceImage.from_function(lambda P: np.exp(-np.sum(P * P, -1) / 0.1), pg.grid,
                                  pg.inner_mask)
    lams = np.linspace(0.3, 1.7, 10) / rho1
    disagree, verdicts = [], []
    for lam in lams:
        m = TransportModel(g, pg, None, ker.scaled(lam))
        rho = m.spectral_radius("dense")
        sol = m.solve(f, tol=1e-10, max_iter=3000)
        predicted = rho > 1.0
        observed = not sol.converged
        verdicts.append(f"{rho:.2f}:{'D' if observed else 'C'}")
        if predicted != observed:
            disagree.append(float(rho))
    report(6, "well-posedness boundary", len(disagree) <= 1,
           f"rho:verdict {' '.join(verdicts)}; {len(disagree)} disagreement(s) (<= 1)")


# -- 7 ----------------------------------------------------------------------------------------------

@pytest.mark.parametrize("name,b", [("F=0", 0.0), ("weak magnetic", 0.2)])
def test_7_reconstruction_without_scattering(name, b):
    g = make_geom(b=b)
    grid = SpatialGrid.covering(g.domain, 64)
    op = MeasurementOperator(InverseProblemSetup(g, grid, n_bdry=180, n_angle=90))
    f = make_phantom("gaussian-bump", grid, g.domain)
    res = reconstruct_cgne(op, op.forward(f), tol=1e-8, max_iter=200)
    err = res.error_vs(f)
    report(7, f"reconstruction without scattering [{name}]", err <= 0.05 and res.iterations <= 200,
           f"64^2, 180x90 nodes: relative L2 error {err:.1e} after {res.iterations} CGNE "
           f"iterations (<= 5% within 200)")


# -- 8 and 9 share one scattering operator -----------------------------------------------------------

@pytest.fixture(scope="module")
def scattering_problem():
    g = make_geom(b=0.3, tau=0.5, inner=0.8)
    grid = SpatialGrid.covering(g.outer, 64)
    t = time.perf_counter()
    unit = MeasurementOperator(InverseProblemSetup(
        g, grid, AttenuationField.constant(0.2), ScatteringKernel.separable(K1, K2),
        separable=True, n_bdry=180, n_angle=90, n_theta=32))
    build = time.perf_counter() - t
    # the contraction ratio is linear in the kernel scale, so this sets it to 0.3
    op = unit.rescaled(0.3 / unit.spectral_radius())
    return g, grid, op, build


def test_8_reconstruction_with_scattering(scattering_problem):
    g, grid, op, build = scattering_problem
    rho = op.spectral_radius()
    f = make_phantom("gaussian-bump", grid, g.domain)
    # data from the forward transport solve, not from the reconstruction operator
    sol = op.model.solve(f, tol=1e-13, max_iter=1000)
    data = op.model.measure(sol, op.setup.n_bdry, op.setup.n_angle)
    assert data.nodes is op.nodes
    res = reconstruct_cgne(op, data, tol=1e-8, max_iter=200)
    err = res.error_vs(f)
    # lambda sweep on reused matrices: the same 1% noise vector and a fixed
    # Tikhonov weight make each reconstruction a smooth function of lambda
    eps = 1e-3 * operator_norm(op) ** 2
    noise = np.random.default_rng(0).normal(size=op.n_data)
    lams = (1.0, 0.5, 0.25, 0.1, 0.0)
    recs, errs = {}, {}
    for lam in lams:
        opl = op.rescaled(lam, inner="direct")
        y = opl.forward(f).values
        y = y + 0.01 * opl.data_norm(y) / opl.data_norm(noise) * noise
        r = reconstruct_cgne(opl, y, tol=1e-12, max_iter=1000, eps=eps)
        recs[lam], errs[lam] = r.f.values, r.error_vs(f)
    dist = [np.linalg.norm(recs[lam] - recs[0.0]) / np.linalg.norm(recs[0.0]) for lam in lams[:-1]]
    gap = [abs(errs[lam] - errs[0.0]) for lam in lams[:-1]]
    monotone = all(a > b for a, b in zip(dist, dist[1:])) and all(
        a > b for a, b in zip(gap, gap[1:]))
    report(8, "reconstruction with scattering",
           rho <= 0.3 + 1e-9 and err <= 0.10 and monotone,
           f"contraction {rho:.3f} (<= 0.3), relative L2 error {err:.1e} after {res.iterations} "
           f"iterations (<= 10%); lam=1,.5,.25,.1 with 1% noise: |f_lam - f_0|/|f_0| "
           f"{', '.join(f'{d:.1e}' for d in dist)}, |err_lam - err_0| "
           f"{', '.join(f'{d:.1e}' for d in gap)} (monotone); build {build:.0f}s")


def test_9_stability_probe(scattering_problem):
    g, grid, op, _ = scattering_problem
    opd = op.rescaled(1.0, inner="direct")
    ens = band_limited_ensemble(grid, g.domain, n=20, seed=0)
    rep = stability_probe(opd, ens)
    rep2 = stability_probe(opd, [f.with_values(2 * f.values) for f in ens])
    inv = float(np.max(np.abs(rep2.ratios - rep.ratios) / rep.ratios))
    ok = np.all(np.isfinite(rep.ratios)) and rep.spread <= 50 and inv <= 1e-10
    report(9, "stability probe", ok,
           f"20 phantoms: ratio in [{rep.ratios.min():.3g}, {rep.ratios.max():.3g}], spread "
           f"{rep.spread:.2f} (<= 50); f -> 2f change {inv:.1e} (<= 1e-10)")


# -- 10 ---------------------------------------------------------------------------------------------

def test_10_convexity_and_nontrapping_diagnostics():
    t = time.perf_counter()
    weak = make_geom(b=0.2, phi=Potential.gaussian(0.3, 1.0), tau=1.0)
    c1, n1 = check_strict_convexity(weak), check_nontrapping(weak, 1000)
    strong = make_geom(b=2.0)  # 1/b = 0.5 < radius 1
    c2 = check_strict_convexity(strong)
    elapsed = time.perf_counter() - t
    named = bool(c2.violations) and all(v["name"] for v in c2.violations)
    ok = c1.passed and n1.passed and not c2.passed and named and elapsed <= 10.0
    first = c2.violations[0]["name"] if c2.violations else "none"
    report(10, "convexity / non-trapping diagnostics", ok,
           f"weak field passes ({c1.n_checked} convexity samples, {n1.n_samples} trajectories); "
           f"b=2 fails with {len(c2.violations)} named samples (first {first}); "
           f"{elapsed:.1f}s (<= 10s)")
