import numpy as np
import pytest

from dipsync import master, trajectories as tr
from dipsync.geometry import Collective, LatticeSpec, build_lattice, coupling_matrices


@pytest.fixture(scope="module")
def pair_system():
    arr = build_lattice(LatticeSpec(2, 1, 0.1, 0.4, [0.3, -0.1]))
    cm = coupling_matrices(arr)
    return arr, cm


def test_emission_channels_reconstruct_f(pair_system):
    _, cm = pair_system
    rates, vecs = tr.emission_channels(cm.f)
    assert np.allclose((vecs * rates) @ vecs.T, cm.f, atol=1e-12)
    with pytest.raises(tr.TrajectoryError):
        tr.emission_channels(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_single_emitter_decay():
    cm = coupling_matrices(build_lattice(LatticeSpec(1)))
    js = tr.JumpSystem(cm, 0.0, dt=0.05)
    t = np.array([0.5, 1.0, 2.0])
    sz = np.array([js.run(t, tr.trajectory_rng(4, i), pair=None, k0=1)[0][:, 0] for i in range(3000)])
    ref = 2 * np.exp(-t) - 1
    se = sz.std(axis=0, ddof=1) / np.sqrt(len(sz))
    assert np.all(np.abs(sz.mean(axis=0) - ref) < 4 * se)


def test_jump_ensemble_matches_master(pair_system):
    arr, cm = pair_system
    W = 1.5
    L = master.Liouvillian(cm, W, arr.detunings)
    t = np.array([0.5, 1.5, 3.0])
    ex = master.evolve(master.all_down(2), L, np.concatenate([[0.0], t]))
    ens = tr.run_jump_ensemble(tr.JumpSystem(cm, W, arr.detunings, dt=0.02), t, 2000, seed=5)
    for i in range(t.size):
        ref_sz = master.site_sz(ex.rhos[i + 1], 2)
        samp = ens.sz[:, i]
        se = samp.std(axis=0, ddof=1) / np.sqrt(ens.size)
        assert np.all(np.abs(samp.mean(axis=0) - ref_sz) < 4 * se + 1e-12)
        c = ens.correlators[:, i, 0, 1]
        ref_c = master.pair_correlators(ex.rhos[i + 1], 2)[0, 1]
        se_c = c.real.std(ddof=1) / np.sqrt(ens.size)
        assert abs(c.real.mean() - ref_c.real) < 4 * se_c + 1e-12


def test_seeded_runs_reproduce(pair_system):
    arr, cm = pair_system
    js = tr.JumpSystem(cm, 1.0, arr.detunings, dt=0.05)
    a = tr.run_jump_ensemble(js, [1.0, 2.0], 5, seed=9)
    b = tr.run_jump_ensemble(js, [1.0, 2.0], 5, seed=9)
    assert np.array_equal(a.sz, b.sz) and np.array_equal(a.jumps, b.jumps)


def test_qsd_matches_master():
    n, W = 3, 4.0
    cm = coupling_matrices(build_lattice(LatticeSpec(n)), Collective(2.4, "additive"))
    q = tr.QSDSystem(cm, W)
    t = np.array([0.5, 1.0])
    res = tr.run_qsd(q, t, 400, seed=3, dt=q.default_dt(2e-3))
    L = master.Liouvillian(cm, W)
    ex = master.evolve(master.all_down(n), L, [0.0, 0.5, 1.0])
    for i in range(t.size):
        ref = master.site_sz(ex.rhos[i + 1], n).mean()
        se = res.sz[:, i].std(ddof=1) / np.sqrt(400)
        assert abs(res.sz[:, i].mean() - ref) < 4 * se
        C = master.pair_correlators(ex.rhos[i + 1], n)
        se = res.zq2[:, i].std(ddof=1) / np.sqrt(400)
        assert abs(res.zq2[:, i].mean() - C[0, 1].real) < 4 * se


def test_qsd_rejects_indefinite_channels():
    cm = coupling_matrices(build_lattice(LatticeSpec(4)), Collective(10.0))
    with pytest.raises(tr.TrajectoryError):
        tr.QSDSystem(cm, 1.0)


def test_conditional_qfi_product_state():
    psi = np.zeros(2**4)
    psi[-1] = 1
    assert tr.conditional_qfi(psi) == pytest.approx(8 / 3)


def test_bootstrap_error_shrinks():
    rng = np.random.default_rng(0)

    def samples(m):
        v = rng.normal(size=(m, 2)) + 1j * rng.normal(size=(m, 2))
        v /= np.linalg.norm(v, axis=1)[:, None]
        return np.einsum("mi,mj->mij", v, v.conj())

    s1 = tr.bootstrap_trace_distance(samples(100))
    s2 = tr.bootstrap_trace_distance(samples(1600))
    assert 2.5 < s1 / s2 < 6.5
