import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atomtunnel import _pykernels, kernels

compiled = kernels.compiled_backend
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")

potentials = st.lists(st.floats(-5.0, 10.0), min_size=1, max_size=60)
energies = st.lists(st.floats(0.01, 8.0), min_size=1, max_size=8)


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(potentials, st.floats(0.01, 0.5), energies)
def test_transfer_matrices_agree(V, h, E):
    V, E = np.array(V), np.array(E)
    a = compiled.transfer_matrices(V, h, E)
    b = _pykernels.transfer_matrices(V, h, E)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-10 * max(1.0, np.max(np.abs(y))))


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5.0, 10.0), min_size=3, max_size=400), st.floats(0.005, 0.1),
       st.floats(-5.0, 10.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_numerov_agrees(V, h, E, p0, p1):
    V = np.ascontiguousarray(V, dtype=float)
    n1, pm1, pc1 = compiled.numerov_shoot(V, h, E, p0, p1)
    n2, pm2, pc2 = _pykernels.numerov_shoot(V, h, E, p0, p1)
    assert n1 == n2
    scale = max(abs(pm2), abs(pc2), 1e-300)
    assert abs(pm1 - pm2) <= 1e-9 * scale and abs(pc1 - pc2) <= 1e-9 * scale


def test_free_slab_is_rotation():
    # V = 0: the transfer matrix is the free propagator [[cos, sin/k], [-k sin, cos]]
    E = np.array([0.5, 2.0])
    k = np.sqrt(2 * E)
    a11, a12, a21, a22 = kernels.transfer_matrices(np.zeros(10), 0.3, E)
    np.testing.assert_allclose(a11, np.cos(3 * k), atol=1e-12)
    np.testing.assert_allclose(a12, np.sin(3 * k) / k, atol=1e-12)
    np.testing.assert_allclose(a21, -k * np.sin(3 * k), atol=1e-12)
    np.testing.assert_allclose(a11 * a22 - a12 * a21, 1.0, atol=1e-12)


def test_numerov_counts_box_nodes():
    # hard box of length 1: the n-th level has n - 1 interior nodes
    n_pts = 2001
    h = 1.0 / (n_pts - 1)
    V = np.zeros(n_pts)
    for n in (1, 2, 5):
        E = 0.5 * (n * np.pi) ** 2
        below, _, _ = kernels.numerov_shoot(V, h, E * 0.99, 0.0, h)
        above, _, _ = kernels.numerov_shoot(V, h, E * 1.01, 0.0, h)
        assert (below, above) == (n - 1, n)


def test_env_switch_forces_python():
    env = dict(os.environ, ATOMTUNNEL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import atomtunnel.kernels as k; print(k.BACKEND_NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
