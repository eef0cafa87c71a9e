import numpy as np
import pytest

from atomtunnel import larmor
from atomtunnel.grid import Grid, gaussian_packet
from atomtunnel.potentials import Gaussian, PotentialSchedule, Rectangular
from atomtunnel.propagator import Absorber, PropagatorConfig

G = Grid(-51.2, 51.2, 512)
OMEGAS = [0.005, 0.01, 0.015]
EDGES = np.linspace(-1.0, 1.0, 5)


def make_setup(V0=0.6, width=2.0, t_end=130.0, center=0.0):
    sched = PotentialSchedule([Rectangular(V0, center, width)])
    psi = gaussian_packet(G, -18.0, 4.0, 1.0)
    return larmor.TunnellingSetup(G, sched, psi, PropagatorConfig(0.02, Absorber(10.0, 2.0)), t_end)


@pytest.fixture(scope="module")
def setup():
    return make_setup()


@pytest.fixture(scope="module")
def dmap(setup):
    return larmor.dwell_map(setup, EDGES, OMEGAS)


def test_probabilities(dmap):
    T, R = dmap.probability("transmitted"), dmap.probability("reflected")
    assert 0.3 < T < 0.4
    assert T + R == pytest.approx(1.0, abs=5e-3)
    assert dmap.probability("all") == pytest.approx(1.0, abs=1e-9)


def test_whole_ensemble_matches_stationary_dwell(setup, dmap):
    oracle = larmor.packet_dwell_time(setup, (-1.0, 1.0), -40.0, 40.0)
    assert dmap.tau_y0("all").sum() == pytest.approx(oracle, rel=1e-2)


def test_bins_add_up_to_whole_region(setup, dmap):
    whole = larmor.larmor_times(setup, (-1.0, 1.0), OMEGAS)
    for sub in larmor.SUBENSEMBLES:
        assert dmap.tau_y0(sub).sum() == pytest.approx(whole[sub].tau_y0, rel=1e-3)


def test_subensembles_average_to_whole(dmap):
    T, R = dmap.probability("transmitted"), dmap.probability("reflected")
    mixed = T * dmap.tau_y0("transmitted") + R * dmap.tau_y0("reflected")
    np.testing.assert_allclose(mixed, dmap.tau_y0("all"), rtol=0.02, atol=2e-3)


def test_transmitted_map_is_symmetric(dmap):
    tau = dmap.tau_y0("transmitted")
    np.testing.assert_allclose(tau, tau[::-1], rtol=1e-3)
    # dwell piles up at the edges of the barrier, not in its middle
    assert tau[0] > 1.5 * tau[1]


def test_reflected_dwell_concentrated_at_entrance(dmap):
    tau = dmap.tau_y0("reflected")
    assert tau[0] > 10 * abs(tau[-1])


def test_linear_extrapolation_is_tight(dmap):
    for rec in dmap.times:
        assert rec["transmitted"].residual < 1e-3


def test_strong_field_rejected(setup):
    with pytest.raises(ValueError, match="weak regime"):
        larmor.larmor_times(setup, (-1.0, 1.0), [0.5, 1.0, 1.5])


def test_needs_three_nonzero_fields(setup):
    with pytest.raises(ValueError):
        larmor.larmor_times(setup, (-1.0, 1.0), [0.01, 0.02])
    with pytest.raises(ValueError):
        larmor.larmor_times(setup, (-1.0, 1.0), [0.0, 0.01, 0.02])


def test_opaque_barrier_fails_post_selection():
    # smooth, tall and far from the packet; a strong absorber stops the
    # reflected wave wrapping round the periodic grid into the right layer
    sched = PotentialSchedule([Gaussian(20.0, 28.0, 3.0)])
    psi = gaussian_packet(G, -10.0, 2.0, 1.0)
    setup = larmor.TunnellingSetup(G, sched, psi, PropagatorConfig(0.02, Absorber(10.0, 5.0)), 60.0)
    with pytest.raises(larmor.PostSelectionError):
        larmor.larmor_times(setup, (25.0, 31.0), [0.001, 0.002, 0.003])


def test_absorber_required():
    psi = gaussian_packet(G, -18.0, 4.0, 1.0)
    with pytest.raises(ValueError, match="absorber"):
        larmor.TunnellingSetup(G, PotentialSchedule([]), psi, PropagatorConfig(0.02), 10.0)
