import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import eigh_tridiagonal

from atomtunnel import cooling
from atomtunnel.grid import Grid
from atomtunnel.units import K_B, SPECIES_MASS

M = SPECIES_MASS["Rb87"]
T_CLOUD, SX0, T_FREE = 9e-6, 1e-4, 10e-3


@pytest.fixture(scope="module")
def cloud():
    return cooling.sample_thermal(T_CLOUD, SX0, 100_000, seed=2)


def test_thermal_velocity_spread(cloud):
    sv = math.sqrt(K_B * T_CLOUD / M)
    assert sv == pytest.approx(29.343e-3, rel=1e-4)
    # sampling error of a standard deviation is sigma / sqrt(2 n)
    assert cloud.sigma_v == pytest.approx(sv, abs=4 * sv / math.sqrt(2e5))
    assert cloud.sigma_x == pytest.approx(SX0, abs=4 * SX0 / math.sqrt(2e5))


def test_kick_matches_closed_form(cloud):
    kick = cooling.optimize_kick(cloud, T_FREE)
    cooled = cooling.delta_kick(cloud, T_FREE, kick)
    ratio = cooled.temperature / cloud.temperature
    expect = cooling.cooling_ratio_closed_form(cloud.sigma_x, cloud.sigma_v, T_FREE)
    assert ratio == pytest.approx(expect, rel=0.02)


def test_optimizer_agrees_with_regression(cloud):
    kick = cooling.optimize_kick(cloud, T_FREE)
    reg = cooling.regression_strength(cloud, T_FREE)
    assert kick.strength == pytest.approx(reg, rel=1e-6)
    # Gaussian cloud: optimum is sigma_v^2 t / (sigma_x0^2 + sigma_v^2 t^2) = (1 - ratio) / t
    r = cooling.cooling_ratio_closed_form(cloud.sigma_x, cloud.sigma_v, T_FREE)
    assert reg == pytest.approx((1 - r) / T_FREE, rel=0.02)


def test_point_source_cools_to_zero():
    ens = cooling.sample_thermal(T_CLOUD, 0.0, 5000, seed=1)
    kick = cooling.optimize_kick(ens, T_FREE)
    out = cooling.delta_kick(ens, T_FREE, kick)
    assert cooling.cooling_ratio_closed_form(0.0, ens.sigma_v, T_FREE) == 0.0
    assert out.temperature == pytest.approx(0.0, abs=1e-12 * ens.temperature)


def test_seed_determinism_and_prefix():
    a = cooling.sample_thermal(1e-6, 1e-4, 20_000, seed=7)
    b = cooling.sample_thermal(1e-6, 1e-4, 20_000, seed=7)
    c = cooling.sample_thermal(1e-6, 1e-4, 9000, seed=7)
    d = cooling.sample_thermal(1e-6, 1e-4, 20_000, seed=8)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)
    assert np.array_equal(a.x[:9000], c.x) and np.array_equal(a.v[:9000], c.v)
    assert not np.array_equal(a.v, d.v)


def test_long_kick_warns(cloud):
    kick = cooling.KickSpec("harmonic", 100.0, duration=5e-3)
    with pytest.warns(cooling.ImpulseApproximationWarning):
        cooling.delta_kick(cloud, T_FREE, kick)


def test_quadrupole_kick_cools(cloud):
    kick = cooling.optimize_kick(cloud, T_FREE, kind="quadrupole")
    out = cooling.delta_kick(cloud, T_FREE, kick)
    assert kick.strength > 0
    assert out.temperature < 0.5 * cloud.temperature


def test_bad_inputs():
    with pytest.raises(ValueError):
        cooling.KickSpec("linear", 1.0)
    with pytest.raises(ValueError):
        cooling.sample_thermal(-1.0, 1e-4, 10, seed=0)
    with pytest.raises(ValueError):
        cooling.Ensemble(np.zeros(2), np.zeros(2), np.array([0.2, 0.2]))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 20.0), st.integers(0, 2**31))
def test_gravity_leaves_temperature_alone(g, seed):
    ens = cooling.sample_thermal(2e-6, 5e-5, 500, seed=seed)
    a = cooling.free_drift(ens, 5e-3, 0.0)
    b = cooling.free_drift(ens, 5e-3, g)
    assert b.temperature == pytest.approx(a.temperature, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1e-3), st.floats(1e-4, 0.1), st.floats(1e-4, 0.1), st.floats(1.1, 3.0))
def test_closed_form_ratio_bounds(sx, sv, t, factor):
    r1 = cooling.cooling_ratio_closed_form(sx, sv, t)
    r2 = cooling.cooling_ratio_closed_form(sx, sv, t * factor)
    assert 0.0 < r2 < r1 <= 1.0


def test_vee_levels_against_finite_differences():
    # second-order finite differences on a fine box, an independent route
    a, h = 2.0, 0.004
    x = np.arange(-12.0, 12.0 + h / 2, h)
    w = eigh_tridiagonal(1 / h**2 + a * np.abs(x), np.full(len(x) - 1, -0.5 / h**2),
                         select="i", select_range=(0, 5))[0]
    np.testing.assert_allclose(cooling.vee_spectrum(a, 6), w, rtol=2e-5)


def test_vee_ground_level_airy():
    # ground level is the first zero of Ai' scaled by (a^2 / 2)^(1/3)
    assert cooling.vee_spectrum(1.0, 1)[0] == pytest.approx(1.0187929716 * 0.5 ** (1 / 3), rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.2, 20.0), st.floats(1.05, 3.0))
def test_vee_partition_grows_with_temperature(a, kT, factor):
    assert cooling.vee_partition(a, kT * factor) > cooling.vee_partition(a, kT) > 0


def test_kinetic_matrix_spectrum():
    g = Grid(-8.0, 8.0, 256)
    E = np.linalg.eigvalsh(cooling.kinetic_matrix(g))
    np.testing.assert_allclose(E, np.sort(0.5 * g.k**2), atol=1e-9)


# sweep capture on the documented trap, swept fast so each run takes about a second
FAST = cooling.SweepGeometry(5.374852469352484, 53.7485, 7.0711, 5.0, n_points=512)


@pytest.fixture(scope="module")
def fast_capture():
    return cooling.sweep_capture(FAST, 161.2)


def test_trap_levels_match_airy():
    g = cooling.SweepGeometry(5.374852469352484, 53.7485, 7.0711, 0.68, n_points=1024)
    grid = g.grid()
    V = np.minimum(cooling.evaluate(g.trap(), grid.x), g.v_ceiling)
    E, _ = cooling.lowest_states(cooling.kinetic_matrix(grid) + np.diag(V), 10)
    np.testing.assert_allclose(E, cooling.vee_spectrum(g.slope, 10), rtol=2e-3)


def test_final_well_counts_agree(fast_capture):
    w = fast_capture.well
    assert w.n_bound == w.n_numerov == fast_capture.n_bound
    assert np.all(np.diff(w.energies) > 0)
    assert np.all(w.energies < w.rim)


def test_transfer_is_bounded(fast_capture):
    P = fast_capture.p_transfer
    assert np.all((P >= 0) & (P <= 1 + 1e-9))
    # orthonormal trap states cannot put more than one unit into each final level
    assert P.sum() <= fast_capture.n_bound + 1e-9
    assert 0 <= fast_capture.capture_fraction <= 1


def test_capture_at_reproduces_run_temperature(fast_capture):
    assert fast_capture.capture_at(161.2) == pytest.approx(fast_capture.capture_fraction, rel=1e-12)


def test_nonadiabatic_sweep_is_flagged(fast_capture):
    # at this speed high trap states still transfer, so the state count is too small
    assert fast_capture.flagged is not None


def test_no_well_without_barrier():
    res = cooling.sweep_capture(dataclasses.replace(FAST, V0=0.0), 161.2)
    assert res.capture_fraction == 0.0 and res.n_bound == 0
    assert res.flagged == "no well at sweep end"


def test_staircase_report():
    pts = [cooling.StaircasePoint(v, d, n, c) for v, d, n, c in
           [(1, 1.0, 1, 0.00), (2, 2.0, 1, 0.01), (3, 3.0, 2, 0.05), (4, 4.0, 2, 0.06)]]
    rep = cooling.staircase_report(pts)
    assert rep == {"n_big_steps": 1, "bound_change": 1, "monotone": True,
                   "steps_at_count_changes": True}
    pts[3] = cooling.StaircasePoint(4, 4.0, 2, 0.01)
    assert not cooling.staircase_report(pts)["monotone"]
