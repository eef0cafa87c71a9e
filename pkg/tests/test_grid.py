import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atomtunnel.grid import (Grid, GridError, SpinorWaveFunction, WaveFunction, dump_wavefunction,
                             gaussian_packet, load_wavefunction, observables, region_probability)

G = Grid(-64.0, 64.0, 1024)


def test_grid_validation():
    with pytest.raises(GridError):
        Grid(0, 1, 1000)
    with pytest.raises(GridError):
        Grid(0, 1, 128)
    with pytest.raises(GridError):
        Grid(1, 0, 256)


def test_packet_at_rest_is_symmetric_in_momentum():
    obs = observables(gaussian_packet(G, 0.0, 4.0, 0.0))
    assert abs(obs.mean_p) < 1e-10
    assert obs.kinetic_energy == pytest.approx(1 / (8 * 16.0), rel=1e-10)


def test_moving_packet_kinetic_energy():
    # k0^2/2 + 1/(8 sigma^2) with sigma = 5, k0 = 2
    obs = observables(gaussian_packet(G, 0.0, 5.0, 2.0))
    assert obs.kinetic_energy == pytest.approx(2.005, rel=1e-10)
    assert obs.mean_p == pytest.approx(2.0, rel=1e-10)


def test_packet_moments():
    psi = gaussian_packet(G, 3.0, 5.0, 1.0)
    obs = observables(psi)
    assert obs.norm2 == pytest.approx(1.0, abs=1e-12)
    assert abs(obs.mean_x - 3.0) < G.dx
    assert np.sqrt(obs.var_x) == pytest.approx(5.0, rel=1e-2)


def test_packet_rejections():
    with pytest.raises(GridError):
        gaussian_packet(G, 0.0, 0.1, 0.0)
    with pytest.raises(GridError):
        gaussian_packet(G, 0.0, 4.0, G.k_max)
    with pytest.raises(GridError):
        gaussian_packet(G, 100.0, 4.0, 0.0)


def test_scaling_and_translation():
    psi = gaussian_packet(G, 1.0, 4.0, 0.5)
    a, b = observables(psi), observables(psi.scaled(2.0))
    assert b.mean_x == pytest.approx(a.mean_x, abs=1e-12)
    c = observables(gaussian_packet(G, 6.0, 4.0, 0.5))
    assert c.mean_x - a.mean_x == pytest.approx(5.0, abs=1e-9)
    assert c.var_x == pytest.approx(a.var_x, rel=1e-9)


def test_region_probabilities():
    psi = gaussian_packet(G, 0.0, 4.0, 0.0)
    assert region_probability(psi, -np.inf, np.inf) == pytest.approx(1.0, abs=1e-12)
    assert region_probability(psi, 0.0, np.inf) == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(GridError):
        region_probability(psi, 1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-70, 70), min_size=1, max_size=6), st.floats(-20, 20),
       st.floats(3, 10), st.floats(-2, 2))
def test_region_additivity_and_monotonicity(cuts, x0, sigma, k0):
    psi = gaussian_packet(G, x0, sigma, k0)
    edges = [-np.inf] + sorted(cuts) + [np.inf]
    parts = [region_probability(psi, a, b) for a, b in zip(edges[:-1], edges[1:]) if a < b]
    assert sum(parts) == pytest.approx(1.0, abs=1e-12)
    a = sorted(cuts)[0]
    assert region_probability(psi, a - 5, np.inf) >= region_probability(psi, a, np.inf) - 1e-15


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_parseval(seed):
    rng = np.random.default_rng(seed)
    psi = WaveFunction(G, rng.normal(size=G.n_points) + 1j * rng.normal(size=G.n_points))
    _, dens = psi.momentum_density()
    assert np.sum(dens) * G.dk == pytest.approx(psi.norm2, rel=1e-12)


def test_spinor_norm_and_spin():
    s = SpinorWaveFunction.polarized_x(gaussian_packet(G, 0.0, 4.0, 0.0))
    assert s.norm2 == pytest.approx(1.0, abs=1e-12)
    sx, sy, sz = s.spin()
    assert sx == pytest.approx(1.0, abs=1e-12) and abs(sy) < 1e-12 and abs(sz) < 1e-12


def test_dump_round_trip(tmp_path):
    psi = gaussian_packet(G, 2.0, 4.0, 1.0)
    dump_wavefunction(psi, tmp_path / "psi.txt")
    back = load_wavefunction(tmp_path / "psi.txt")
    assert back.grid == G
    assert np.max(np.abs(back.psi - psi.psi)) < 1e-15
