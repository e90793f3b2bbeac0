import numpy as np
import pytest

from dipsync import cumulant as cu, master
from dipsync.geometry import Collective, LatticeSpec, PowerLaw, build_lattice, coupling_matrices


def op_on(P, a, n):
    out = np.eye(1)
    for k in range(n):
        out = np.kron(out, P if k == a else np.eye(2))
    return out


def test_product_state_derivative_is_exact():
    # on product states the closure is exact, so the moment derivatives equal the Lindblad ones
    rng = np.random.default_rng(0)
    n = 3
    arr = build_lattice(LatticeSpec(n, 1, 0.1, 0.7, rng.normal(size=n) * 0.5))
    cm = coupling_matrices(arr)
    W = 0.8
    L = master.Liouvillian(cm, W, arr.detunings)
    eng = cu.PauliCumulant(cu.CumulantParams.from_couplings(cm, W, arr.detunings))
    bl = rng.normal(size=(n, 3))
    bl *= rng.uniform(0.3, 1, size=(n, 1)) / np.linalg.norm(bl, axis=1)[:, None]
    rho = np.eye(1)
    for b in bl:
        rho = np.kron(rho, 0.5 * (np.eye(2) + sum(b[k] * cu.PAULI[k + 1] for k in range(3))))
    drho = L.apply(rho)
    dy = eng.rhs(eng.product_state(bl))
    single = [np.trace(op_on(cu.PAULI[k], a, n) @ drho).real for a in range(n) for k in (1, 2, 3)]
    assert np.max(np.abs(np.array(single) - dy[:3 * n])) < 1e-13
    i, j = eng.iu
    pair = [np.trace(op_on(cu.PAULI[k], a, n) @ op_on(cu.PAULI[l], b, n) @ drho).real
            for a, b in zip(i, j) for k in (1, 2, 3) for l in (1, 2, 3)]
    assert np.max(np.abs(np.array(pair) - dy[3 * n:])) < 1e-13


def test_three_site_closure_against_loops():
    rng = np.random.default_rng(3)
    n = 4
    f = rng.normal(size=(n, n))
    f = f + f.T
    np.fill_diagonal(f, 0)
    g = rng.normal(size=(n, n))
    g = g + g.T
    np.fill_diagonal(g, 0)
    p = cu.CumulantParams(f, g, rng.uniform(0.5, 1.5, n), 0.7, rng.normal(size=n))
    eng = cu.PauliCumulant(p)
    y = rng.normal(size=eng.size) * 0.3
    mt, Mt = eng.unpack(y)
    F4, G4, lam = cu._F4, cu._G4, eng.lam

    def trip(a, b, c, m, k, l):
        # third moment with the third cumulant dropped
        return (Mt[a, b, m, k] * mt[c, l] + mt[a, m] * Mt[b, c, k, l] + Mt[a, c, m, l] * mt[b, k]
                - 2 * mt[a, m] * mt[b, k] * mt[c, l])

    dM = np.zeros((n, n, 4, 4))
    for c in range(n):
        for d in range(n):
            if c == d:
                continue
            for k in range(1, 4):
                for l in range(1, 4):
                    s = sum(lam[c][m, k] * Mt[c, d, m, l] + lam[d][m, l] * Mt[c, d, k, m] for m in range(4))
                    s += sum((f[c, d] * F4[m, q, k, l] + g[c, d] * G4[m, q, k, l]) * Mt[c, d, m, q]
                             for m in range(4) for q in range(4))
                    for a in range(n):
                        if a in (c, d):
                            continue
                        for m in range(4):
                            for q in range(4):
                                s += (f[a, c] * F4[m, q, 0, k] + g[a, c] * G4[m, q, 0, k]) * trip(a, c, d, m, q, l)
                                s += (f[a, d] * F4[m, q, 0, l] + g[a, d] * G4[m, q, 0, l]) * trip(a, d, c, m, q, k)
                    dM[c, d, k, l] = s
    i, j = eng.iu
    assert np.max(np.abs(eng.rhs(y)[3 * n:] - dM[i, j, 1:, 1:].ravel())) < 1e-12


@pytest.mark.parametrize("mode", [Collective(6.0, "additive"), None, PowerLaw(1.0)])
def test_u1_reduction_matches_full(mode):
    n = 5
    arr = build_lattice(LatticeSpec(n, 1, 0.08, 0.3))
    cm = coupling_matrices(arr, mode)
    p = cu.CumulantParams.from_couplings(cm, 3.0, np.random.default_rng(1).normal(size=n) * 0.3)
    tg = np.linspace(0, 5, 11)
    r1 = cu.evolve_cumulant(p, tg, truncation="full")
    r2 = cu.evolve_cumulant(p, tg, truncation="u1")
    for k in range(tg.size):
        a, b = r1.state(k), r2.state(k)
        assert np.max(np.abs(a.sz - b.sz)) < 1e-8
        assert np.max(np.abs(a.C - b.C)) < 1e-8


@pytest.mark.parametrize("W", [0.5, 2.0, 8.0])
def test_two_dipoles_exact(W):
    arr = build_lattice(LatticeSpec(2, 1, 0.1, 0.5, [0.3, -0.2]))
    cm = coupling_matrices(arr)
    L = master.Liouvillian(cm, W, arr.detunings)
    rho = master.steady_state(L)
    p = cu.CumulantParams.from_couplings(cm, W, arr.detunings)
    st = cu.steady_state_cumulant(p).final
    assert abs(st.C[0, 1] - master.pair_correlators(rho, 2)[0, 1]) < 1e-9
    assert np.max(np.abs(st.sz - master.site_sz(rho, 2))) < 1e-9
    assert np.max(np.abs(st.pair_state(0, 1) - master.reduced_state(rho, 2, [0, 1]))) < 1e-9


def test_single_dipole_two_time_exact():
    cm = coupling_matrices(build_lattice(LatticeSpec(1)))
    W, d = 3.0, 0.7
    L = master.Liouvillian(cm, W, [d])
    rho = master.steady_state(L)
    p = cu.CumulantParams.from_couplings(cm, W, [d])
    st = cu.steady_state_cumulant(p).final
    tau = np.linspace(0, 4, 9)
    got = cu.two_time_cumulant(st, p, 0, None, tau)
    assert np.max(np.abs(got - master.two_time_exact(rho, L, 0, None, tau))) < 1e-9


def test_two_time_initial_value():
    n = 6
    cm = coupling_matrices(build_lattice(LatticeSpec(n)), Collective(6.0, "additive"))
    p = cu.CumulantParams.from_couplings(cm, 3.0)
    st = cu.steady_state_cumulant(p).final
    z0 = cu.two_time_cumulant(st, p, 1, 3, [0.0])[0]
    na, nb = 0.5 * (1 + st.sz[1]), 0.5 * (1 + st.sz[3])
    assert z0 == pytest.approx(na + nb + st.C[1, 3] + st.C[3, 1], abs=1e-12)
    g0 = cu.collective_two_time_cumulant(st, p, [0.0])[0]
    assert g0 == pytest.approx(np.mean(0.5 * (1 + st.sz)) + (st.C.sum() - np.trace(st.C)) / n, abs=1e-12)


def test_collective_steady_state_is_permutation_symmetric():
    n = 12
    cm = coupling_matrices(build_lattice(LatticeSpec(n)), Collective(15.0))
    st = cu.steady_state_cumulant(cu.CumulantParams.from_couplings(cm, 7.5)).final
    off = st.C[~np.eye(n, dtype=bool)]
    assert np.ptp(off.real) < 1e-9 and np.ptp(st.sz) < 1e-9
    assert st.zq() == pytest.approx(np.sqrt(off.real.mean()), rel=1e-9)


def test_steady_state_residual():
    cm = coupling_matrices(build_lattice(LatticeSpec(8, 1, 0.1, 0.4)))
    run = cu.steady_state_cumulant(cu.CumulantParams.from_couplings(cm, 4.0))
    assert run.residual < 1e-10


def test_steady_state_independent_of_start():
    cm = coupling_matrices(build_lattice(LatticeSpec(6, 1, 0.1, 0.5)))
    p = cu.CumulantParams.from_couplings(cm, 3.0, [0.2, -0.1, 0.0, 0.3, -0.2, 0.1])
    a = cu.steady_state_cumulant(p).final
    eng = cu.make_engine(p, "u1")
    b = cu.steady_state_cumulant(p, y0=eng.product_state(np.full(6, 0.5))).final
    assert np.max(np.abs(a.C - b.C)) < 1e-8 and np.max(np.abs(a.sz - b.sz)) < 1e-8
