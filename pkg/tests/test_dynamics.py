import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvtomo import (DomainError, ForceField, Magnetic, PhaseState, Potential, ShellError,
                      TrappedTrajectoryError,
                      boundary_measure_nodes, check_nontrapping, check_strict_convexity,
                      energy_drift, energy_drift_sweep, santalo_check, shoot_trajectory)
from curvtomo import tracing
from curvtomo.dynamics import rhs

from conftest import make_geom


# -- Newton right-hand side -------------------------------------------------------------

def test_rhs_free_motion():
    v, a = rhs(PhaseState(np.array([0.0, 0.0]), np.array([1.0, 0.0])), ForceField())
    assert np.allclose(v, [1, 0]) and np.allclose(a, [0, 0])


def test_rhs_harmonic_gradient():
    f = ForceField(Potential.harmonic(0.5))
    _, a = rhs(PhaseState(np.array([1.0, 0.0]), np.array([0.0, 1.0])), f)
    assert np.allclose(a, [-1, 0])


def test_rhs_magnetic_matrix_product():
    f = ForceField(magnetic=Magnetic.constant(2.0))
    _, a = rhs(PhaseState(np.array([0.0, 0.0]), np.array([1.0, 0.0])), f)
    assert np.allclose(a, [0, -2])


@settings(max_examples=50, deadline=None)
@given(b=st.floats(-5, 5), tx=st.floats(-3, 3), ty=st.floats(-3, 3),
       x=st.floats(-1, 1), y=st.floats(-1, 1))
def test_magnetic_term_is_skew(b, tx, ty, x, y):
    f = ForceField(magnetic=Magnetic.radial(b, 0.3 * b))
    th = np.array([[tx, ty]])
    Ymat = np.asarray(f.Y(np.array([[x, y]])))[0]
    assert np.allclose(Ymat, -Ymat.T)
    assert abs(float(th[0] @ Ymat @ th[0])) <= 1e-12 * (1 + th[0] @ th[0])


# -- trajectories ---------------------------------------------------------------------------

def test_straight_chord(free_disc):
    tr = shoot_trajectory(PhaseState(np.zeros(2), np.array([1.0, 0.0])), free_disc)
    assert tr.exited
    assert tr.ell_plus == pytest.approx(1.0, abs=1e-9)
    assert tr.ell_minus == pytest.approx(-1.0, abs=1e-9)
    assert np.allclose(tr.x[:, 1], 0.0, atol=1e-14)
    assert np.allclose(tr.x[:, 0], tr.s, atol=1e-12)


def test_magnetic_circle_matches_closed_form():
    b = 0.7
    geom = make_geom(b=b)
    x0 = np.array([-0.2, 0.1])
    tr = shoot_trajectory(PhaseState(x0, np.array([1.0, 0.0])), geom)
    s = tr.s
    # x'' = b (x2', -x1') from theta(0) = (1, 0): clockwise circle of radius 1/b
    exact = x0 + np.stack([np.sin(b * s) / b, (np.cos(b * s) - 1) / b], axis=-1)
    assert np.max(np.abs(tr.x - exact)) < 1e-10
    assert np.allclose(tr.theta, np.stack([np.cos(b * s), -np.sin(b * s)], -1), atol=1e-10)


def test_harmonic_circular_orbit_is_trapped():
    # phi = kappa |x|^2 with tau just above max phi: the circular orbit of
    # radius sqrt(tau / (2 kappa)) ~ 0.71 never reaches the unit circle
    kappa, tau = 1.0, 1.0 + 1e-3
    geom = make_geom(phi=Potential.harmonic(kappa), tau=tau)
    r = math.sqrt(tau / (2 * kappa))
    v = r * math.sqrt(2 * kappa)
    for budget in (5.0, 20.0, 80.0):
        g = geom.with_options(budget=budget)
        res = tracing.trace_exit(g, np.array([[r, 0.0]]), np.array([[0.0, v]]), 1, "inner")
        assert res.status[0] == tracing.TRAPPED
    tr = shoot_trajectory(PhaseState(np.array([r, 0.0]), np.array([0.0, v])),
                          geom.with_options(budget=5.0), "forward")
    assert tr.status == "trapped"


def test_shell_check_on_start(free_disc):
    with pytest.raises(ShellError):
        shoot_trajectory(PhaseState(np.zeros(2), np.array([2.0, 0.0])), free_disc)


def test_nonpositive_step_rejected(free_disc):
    with pytest.raises(ValueError):
        free_disc.with_options(h=0.0)


def test_trapped_budget_raises_with_node_ids():
    geom = make_geom(phi=Potential.harmonic(1.0), tau=1.001).with_options(budget=3.0)
    r = math.sqrt(1.001 / 2)
    res = tracing.trace_exit(geom, np.array([[0.0, 0.0], [r, 0.0]]),
                             np.array([[math.sqrt(2.002), 0.0], [0.0, r * math.sqrt(2)]]), 1,
                             "inner")
    with pytest.raises(TrappedTrajectoryError) as ei:
        res.require_exited("node")
    assert ei.value.nodes == (1,)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-0.5, 0.5), y=st.floats(-0.5, 0.5), a=st.floats(0, 2 * math.pi),
       b=st.floats(-0.5, 0.5))
def test_reversal_with_flip(x, y, a, b):
    # forward to the exit, then back from (z, -eta) under -Y lands on (x, -theta)
    geom = make_geom(b=b, phi=Potential.gaussian(0.2, 0.7), tau=0.8)
    back = make_geom(b=-b, phi=Potential.gaussian(0.2, 0.7), tau=0.8)
    x0 = np.array([[x, y]])
    th = geom.shell.p(x0)[:, None] * np.array([[math.cos(a), math.sin(a)]])
    r = tracing.trace_exit(geom, x0, th, 1, "inner")
    n = int(np.ceil(r.ell[0] / geom.options.h))
    xs, vs = tracing.sample_arcs(back, r.x_exit, -r.v_exit, r.ell, n)
    tol = 10 * geom.options.eps_bdry + 1e-10
    assert np.allclose(xs[0, -1], x0[0], atol=tol)
    assert np.allclose(vs[0, -1], -th[0], atol=tol)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0, 2 * math.pi), frac=st.floats(0.1, 0.9))
def test_flow_semigroup(a, frac):
    geom = make_geom(b=0.4, phi=Potential.gaussian(0.3, 1.0), tau=1.0)
    x0 = np.array([[0.1, -0.2]])
    th = geom.shell.p(x0)[:, None] * np.array([[math.cos(a), math.sin(a)]])
    r = tracing.trace_exit(geom, x0, th, 1, "inner")
    s = frac * r.ell
    n = lambda t: int(np.ceil(abs(t[0]) / geom.options.h))
    xs, vs = tracing.sample_arcs(geom, x0, th, s, n(s))
    x1, v1 = xs[:, -1], vs[:, -1]
    rest = r.ell - s
    xe, ve = tracing.sample_arcs(geom, x1, v1, rest, n(rest))
    assert np.allclose(xe[0, -1], r.x_exit[0], atol=1e-9)
    assert np.allclose(ve[0, -1], r.v_exit[0], atol=1e-9)


# -- diagnostics ----------------------------------------------------------------------------

def test_convexity_free_disc_passes(free_disc):
    assert check_strict_convexity(free_disc).passed


def test_convexity_weak_field_passes():
    # trajectory curvature b = 0.2 is below the boundary curvature 1
    rep = check_strict_convexity(make_geom(b=0.2))
    assert rep.passed and rep.n_checked > 0


def test_convexity_strong_field_names_violations():
    rep = check_strict_convexity(make_geom(b=2.0))
    assert not rep.passed
    assert rep.violations and all(":" in v["name"] for v in rep.violations)
    assert "FAIL" in rep.summary()


def test_convexity_rejects_bad_counts(free_disc):
    with pytest.raises(ValueError):
        check_strict_convexity(free_disc, n_boundary=0)


def test_nontrapping_free_chords(free_disc):
    rep = check_nontrapping(free_disc, 400)
    assert rep.passed and rep.max_travel <= 2.0 + 1e-9


def test_nontrapping_weak_field_arc_bound():
    b = 0.3
    rep = check_nontrapping(make_geom(b=b), 400, seed=3)
    # longest arc of a radius-1/b circle inside the unit disc spans a diameter chord
    arc = 2 * math.asin(min(1.0, b)) / b
    assert rep.passed
    assert rep.max_ell_plus + rep.max_ell_minus <= 2 * arc + 1e-9
    assert rep.max_travel <= arc + 1e-9


def test_trap_excluded_at_construction():
    with pytest.raises(ShellError):
        make_geom(phi=Potential.harmonic(1.0), tau=0.9)


def test_nontrapping_reports_trapped():
    geom = make_geom(phi=Potential.harmonic(1.0), tau=1.001)
    rep = check_nontrapping(geom, 200, budget=5.0)
    assert rep.max_travel <= 5.0 + 1e-12
    if not rep.passed:
        assert rep.trapped


# -- boundary measure -----------------------------------------------------------------------

def test_boundary_measure_total_unit_disc(free_disc):
    n = boundary_measure_nodes(free_disc, 200, 90)
    assert np.all(n.weight >= 0)
    assert n.total == pytest.approx(4 * math.pi, rel=1e-3)


@pytest.mark.parametrize("c", [0.5, 2.0, 3.0])
def test_boundary_measure_speed_scaling(c):
    n = boundary_measure_nodes(make_geom(tau=0.5 * c * c), 200, 90)
    assert n.total == pytest.approx(4 * math.pi * c * c, rel=1e-3)


def test_boundary_measure_tangential_zero(free_disc):
    n = boundary_measure_nodes(free_disc, 16, 9, rule="endpoint")
    tangential = np.abs(np.einsum("ij,ij->i", n.normal, n.theta)) < 1e-12
    assert tangential.any()
    assert np.all(n.weight[tangential] == 0.0)
    assert np.all(np.einsum("ij,ij->i", n.normal, n.theta)[n.weight > 0] > 0)


# -- Santalo ----------------------------------------------------------------------------------

def test_santalo_constant_free(free_disc):
    rep = santalo_check(lambda x, t: np.ones(x.shape[:-1]), free_disc, 100, 64, 64)
    assert rep.lhs == pytest.approx(2 * math.pi ** 2, rel=1e-10)
    assert rep.rel_err < 1e-6


def test_santalo_odd_in_direction(free_disc):
    rep = santalo_check(lambda x, t: t[..., 0], free_disc, 100, 64, 64)
    assert abs(rep.lhs) < 1e-10
    assert abs(rep.rhs) < 1e-8


def test_santalo_harmonic_gaussian():
    geom = make_geom(phi=Potential.harmonic(0.3), tau=1.0)
    f = lambda x, t: np.exp(-np.sum((x - [0.2, 0.1]) ** 2, -1) / 0.3)
    rep = santalo_check(f, geom, 120, 96, 128)
    assert rep.rel_err < 1e-4


# -- energy -----------------------------------------------------------------------------------

def test_energy_drift_small_and_fourth_order():
    geom = make_geom(b=0.2, phi=Potential.gaussian(0.3, 1.0), tau=1.0)
    sw = energy_drift_sweep(geom, [4e-3, 2e-3], n_traj=100)
    assert sw.max_drift[0] < 1e-10
    assert sw.ratios[0] >= 8.0


def test_energy_drift_zero_force_is_roundoff(free_disc):
    assert energy_drift(free_disc, 50).max() < 1e-14


def test_grid_field_outside_domain_is_error():
    from curvtomo import GriddedField

    gf = GriddedField.sample(lambda P: 0.1 * np.sum(P * P, -1), (-0.5, 0.5, -0.5, 0.5), (21, 21))
    with pytest.raises((DomainError, ShellError)):
        make_geom(phi=Potential.grid(gf), tau=1.0)
