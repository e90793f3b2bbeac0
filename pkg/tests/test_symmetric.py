import numpy as np
import pytest
from scipy import integrate

from dipsync import master, spins, symmetric as sym
from dipsync.geometry import Collective, LatticeSpec, build_lattice, coupling_matrices


def exact(n, f_eff, W, diagonal="gamma"):
    cm = coupling_matrices(build_lattice(LatticeSpec(n)), Collective(f_eff, diagonal))
    return master.Liouvillian(cm, W)


@pytest.mark.parametrize("n", [2, 3, 5])
@pytest.mark.parametrize("diagonal", ["gamma", "additive"])
def test_steady_state_matches_master(n, diagonal):
    L = exact(n, 6.0, 3.0, diagonal)
    # f_eff / N > Gamma makes the "gamma" generator non-positive for small N; the comparison is algebraic
    rho = master.steady_state(L, check=False)
    st = sym.steady_state_symmetric(sym.symmetric_generator(n, 6.0, 3.0, diagonal=diagonal), check=False)
    C = master.pair_correlators(rho, n)
    assert abs(st.pair_correlator() - C[0, 1]) < 1e-10
    assert abs(st.sz() - master.site_sz(rho, n).mean()) < 1e-10
    assert np.max(np.abs(sym.reduced_pair_state(st) - master.reduced_state(rho, n, [0, 1]))) < 1e-10
    assert np.max(np.abs(sym.to_dense(st) - rho)) < 1e-10


def test_collective_two_time_matches_master():
    n, f, W = 4, 6.0, 3.0
    L = exact(n, f, W)
    rho = master.steady_state(L)
    st = sym.steady_state_symmetric(sym.symmetric_generator(n, f, W))
    tau = np.linspace(0, 3, 16)
    Jm = spins.collective_lowering(n)
    d = L.dim
    sol = integrate.solve_ivp(lambda _, y: L.apply(y.reshape(d, d)).ravel(), (0, 3), (Jm @ rho).ravel(),
                              t_eval=tau, rtol=1e-11, atol=1e-13, method="DOP853")
    ref = np.array([np.trace(Jm.conj().T @ y.reshape(d, d)) for y in sol.y.T]) / n
    got = sym.collective_two_time(st, f, W, tau)
    assert np.max(np.abs(got - ref)) < 1e-8


def test_trace_and_validity_large_n():
    st = sym.steady_state_symmetric(sym.symmetric_generator(70, 15.0, 7.5))
    assert abs(st.trace() - 1) < 1e-10
    lam = np.linalg.eigvalsh(sym.reduced_pair_state(st))
    assert lam[0] > -1e-8
    assert 0.2 < st.zq() < 0.3


def test_single_site_limit():
    st = sym.steady_state_symmetric(sym.symmetric_generator(1, 0.0, 2.0))
    assert st.sz() == pytest.approx(1 / 3, abs=1e-13)


def test_bad_diagonal():
    with pytest.raises(sym.SymmetricError):
        sym.symmetric_generator(3, 1.0, 1.0, diagonal="other")
