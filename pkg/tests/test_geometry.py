import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dipsync.geometry import (MAGIC_ANGLE, Collective, GeometryError, LatticeSpec, PowerLaw, angular_factors,
                              build_lattice, coupling_matrices, kernel_f, kernel_g, read_matrix_csv,
                              write_matrix_csv)

mp.mp.dps = 50


def f_oracle(z, t):
    z, t = mp.mpf(z), mp.mpf(t)
    s2, p2 = mp.sin(t) ** 2, 3 * mp.cos(t) ** 2 - 1
    return mp.mpf(1.5) * (s2 * mp.sin(z) / z + p2 * (mp.sin(z) / z**3 - mp.cos(z) / z**2))


def g_oracle(z, t):
    z, t = mp.mpf(z), mp.mpf(t)
    s2, p2 = mp.sin(t) ** 2, 3 * mp.cos(t) ** 2 - 1
    return -mp.mpf(1.5) * (s2 * mp.cos(z) / z + p2 * (mp.cos(z) / z**3 + mp.sin(z) / z**2))


def test_kernel_values_frozen():
    # 50-digit oracle values
    assert kernel_f(0.5, np.pi / 2) == pytest.approx(0.9506655239044095, rel=1e-15)
    assert kernel_f(0.5, np.pi / 2) == pytest.approx(float(f_oracle(0.5, np.pi / 2)), rel=1e-15)
    assert kernel_g(1.0, 0.3) == pytest.approx(float(g_oracle(1.0, 0.3)), rel=1e-14)


def test_kernels_near_series_switch():
    z = np.array([0.4999999, 0.5, 0.5000001, 1e-3, 0.1])
    for t in (0.0, 0.7, np.pi / 2):
        ref = np.array([float(f_oracle(v, t)) for v in z])
        assert np.max(np.abs(kernel_f(z, t) / ref - 1)) < 1e-13


def test_small_separation_limit():
    for t in (0.0, MAGIC_ANGLE, 1.2, np.pi / 2):
        assert abs(kernel_f(1e-7, t) - 1.0) < 1e-10


def test_magic_angle_factor_exact():
    s2, p2 = angular_factors(MAGIC_ANGLE)
    assert p2 == 0.0
    assert s2 == pytest.approx(2 / 3, rel=1e-15)


def test_kernel_rejects_zero_separation():
    with pytest.raises(GeometryError):
        kernel_f(0.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 9), st.floats(0.01, 0.5), st.floats(0.0, np.pi))
def test_coupling_matrices_symmetric(n, a, theta):
    cm = coupling_matrices(build_lattice(LatticeSpec(n, 1, a, theta)))
    assert np.allclose(cm.f, cm.f.T) and np.allclose(cm.g, cm.g.T)
    assert np.all(np.diag(cm.f) == 1.0)
    # the dipolar dissipative matrix is a Gram matrix of far-field amplitudes
    assert cm.min_eigenvalue() > -1e-10


def test_collective_diagonals():
    arr = build_lattice(LatticeSpec(5))
    g = coupling_matrices(arr, Collective(10.0))
    a = coupling_matrices(arr, Collective(10.0, "additive"))
    assert g.f[0, 1] == 2.0 and g.f[0, 0] == 1.0
    assert a.f[0, 0] == 3.0
    assert g.min_eigenvalue() < 0 < a.min_eigenvalue() + 1e-12
    assert g.f_eff == pytest.approx(10.0)


def test_powerlaw_and_2d_lattice():
    arr = build_lattice(LatticeSpec(9, 2))
    cm = coupling_matrices(arr, PowerLaw(1.0))
    assert cm.f[0, 1] == pytest.approx(0.25)
    assert cm.f[0, 4] == pytest.approx(0.25 / np.sqrt(2))
    with pytest.raises(GeometryError):
        build_lattice(LatticeSpec(8, 2))


def test_matrix_csv_round_trip(tmp_path):
    m = np.random.default_rng(0).normal(size=(4, 4))
    write_matrix_csv(tmp_path / "f.csv", m)
    assert np.array_equal(read_matrix_csv(tmp_path / "f.csv"), m)
