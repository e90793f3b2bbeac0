"""Stochastic unravelings of the master equation.

Two unravelings are provided:

* quantum jumps, with the collective emission split into orthogonal channels
  from the eigendecomposition of ``f``, propagating the state inside a single
  excitation-number block between jumps;
* quantum state diffusion (complex Wiener noise on every channel), used for
  conditional states, integrated with Euler-Maruyama on a batch of
  trajectories at once.

Each trajectory draws from its own counter-based stream seeded by
``(seed, trajectory index)``, so results do not depend on batching or on
the number of workers.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.sparse.linalg import eigsh

from . import spins
from .geometry import CouplingMatrices
from .observables import collective_spin_ops, qfi_mixed, qfi_pure

TRAJ_CAP = 20


class TrajectoryError(RuntimeError):
    pass


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def emission_channels(f, clip: float = 1e-12, reject: float = 1e-9):
    """Orthogonal emission channels of the decay matrix ``f``.

    Returns ``(rates, vectors)`` with ``f = sum_k rates[k] v_k v_k^T``;
    channel ``k`` has jump operator ``sqrt(rates[k]) sum_a v_k[a] s-_a``.
    """
    lam, vec = np.linalg.eigh(np.asarray(f, dtype=float))
    scale = max(1.0, float(np.max(np.abs(lam))))
    if lam[0] < -reject * scale:
        raise TrajectoryError(f"decay matrix has eigenvalue {lam[0]:.3e} < 0; not a valid Lindblad form")
    lam = np.where(lam < clip * scale, 0.0, lam)
    keep = lam > 0
    return lam[keep], vec[:, keep]


def _site_maps(n: int):
    """For each site, (source, target) full-space indices of ``s-_a``."""
    idx = np.arange(2**n)
    out = []
    for a in range(n):
        bit = 1 << (n - 1 - a)
        src = idx[(idx & bit) == 0]
        out.append((src, src | bit))
    return out


def heff_matrix(cm: CouplingMatrices, W: float, detunings) -> sp.csr_matrix:
    """``H - i/2 (sum f_ab s+_a s-_b + W sum_a s-_a s+_a)`` on the full space."""
    n = cm.n
    H = spins.hamiltonian(detunings, cm.g)
    M = spins.decay_matrix(cm.f)
    pump = sp.diags(W * spins.site_bits(n).sum(1).astype(float))
    return (H - 0.5j * (M + pump)).tocsr()


# ---------------------------------------------------------------------------
# jump unraveling


class JumpSystem:
    """Block-diagonal no-jump propagators and jump maps for ``N <= TRAJ_CAP`` dipoles.

    Parameters
    ----------
    cm : CouplingMatrices
    W : float
    detunings : array_like, optional
    dt : float
        Base step; jump times are resolved to ``dt / 2**levels``.
    levels : int
    """

    def __init__(self, cm: CouplingMatrices, W: float, detunings=None, dt: float = 0.01, levels: int = 6):
        n = cm.n
        if n > TRAJ_CAP:
            raise TrajectoryError(f"N={n} exceeds the trajectory cap {TRAJ_CAP}")
        self.n, self.W, self.dt, self.levels = n, float(W), float(dt), int(levels)
        self.det = np.zeros(n) if detunings is None else np.asarray(detunings, dtype=float)
        self.f = cm.f
        self.rates, self.vecs = emission_channels(cm.f)
        self.amp = self.vecs * np.sqrt(self.rates)          # (N, channels)
        exc = spins.excitation_number(n)
        self.blocks = [np.flatnonzero(exc == k) for k in range(n + 1)]
        pos = np.empty(2**n, dtype=np.int64)
        for b in self.blocks:
            pos[b] = np.arange(b.size)
        self.pos = pos
        self.exc = exc
        heff = heff_matrix(cm, W, self.det)
        self.U = []
        for k, b in enumerate(self.blocks):
            hk = heff[b][:, b].toarray()
            finest = linalg.expm(-1j * hk * (self.dt / 2**self.levels))
            us = [finest]
            for _ in range(self.levels):
                us.append(us[-1] @ us[-1])
            self.U.append(us[::-1])                          # U[k][j]: step dt / 2**j
        # lowering maps block k -> k-1 for each site: positions within blocks
        self.lower = []
        for k, b in enumerate(self.blocks):
            maps = []
            for a in range(n):
                bit = 1 << (n - 1 - a)
                up = (b & bit) == 0
                maps.append((np.flatnonzero(up), pos[b[up] | bit]))
            self.lower.append(maps)
        self.bits = spins.site_bits(n)

    # -- pieces -------------------------------------------------------------
    def lowered(self, k, psi):
        """``S[a] = s-_a psi`` for ``psi`` in block ``k`` (rows live in block ``k-1``)."""
        if k == 0:
            return np.zeros((self.n, 0), dtype=complex)
        out = np.zeros((self.n, self.blocks[k - 1].size), dtype=complex)
        for a, (src, tgt) in enumerate(self.lower[k]):
            out[a, tgt] = psi[src]
        return out

    def raised(self, k, psi):
        """``s+_a psi`` for each site (rows live in block ``k+1``)."""
        if k == self.n:
            return np.zeros((self.n, 0), dtype=complex)
        out = np.zeros((self.n, self.blocks[k + 1].size), dtype=complex)
        for a, (src, tgt) in enumerate(self.lower[k + 1]):
            out[a, src] = psi[tgt]
        return out

    def full_vector(self, k, psi):
        v = np.zeros(2**self.n, dtype=complex)
        v[self.blocks[k]] = psi
        return v

    def correlators(self, k, psi):
        S = self.lowered(k, psi)
        return S.conj() @ S.T

    def sz(self, k, psi):
        p = np.abs(psi) ** 2
        return (1.0 - 2.0 * self.bits[self.blocks[k]]).T @ p

    # -- one trajectory -------------------------------------------------------
    def run(self, t_record, rng: np.random.Generator, pair=(0, 1), k0: int = 0):
        """Run from the basis state with ``k0`` excitations (all down for 0).

        Returns per-record ``sz`` (N), correlators (N, N), pair states (4, 4)
        and the number of jumps.  Pair states are NaN when ``pair`` is None
        or ``N = 1``.
        """
        t_record = np.asarray(t_record, dtype=float)
        unit = self.dt / 2**self.levels
        marks = np.rint(t_record / unit).astype(np.int64)
        full = 2**self.levels
        k = k0
        psi = np.zeros(self.blocks[k].size, dtype=complex)
        psi[0] = 1.0
        r = rng.random()
        now = 0
        n_rec = t_record.size
        out_sz = np.empty((n_rec, self.n))
        out_c = np.empty((n_rec, self.n, self.n), dtype=complex)
        out_pair = np.empty((n_rec, 4, 4), dtype=complex)
        jumps = 0
        cap = full
        for i, m in enumerate(marks):
            while now < m:
                rem = m - now
                chunk = min(cap, 1 << (int(rem).bit_length() - 1))
                j = self.levels - (chunk.bit_length() - 1)
                cand = self.U[k][j] @ psi
                nrm = np.vdot(cand, cand).real
                if nrm > r:
                    psi = cand
                    now += chunk
                    continue
                if chunk > 1:
                    cap = chunk // 2
                    continue
                # jump at the end of the finest sub-step
                psi = cand
                now += chunk
                k, psi = self._jump(k, psi, rng)
                jumps += 1
                r = rng.random()
                cap = full
            phi = psi / np.sqrt(np.vdot(psi, psi).real)
            out_sz[i] = self.sz(k, phi)
            out_c[i] = self.correlators(k, phi)
            if pair is not None and self.n > 1:
                out_pair[i] = pair_state_from_vector(self.full_vector(k, phi), self.n, pair)
            else:
                out_pair[i] = np.nan
        return out_sz, out_c, out_pair, jumps

    def _jump(self, k, psi, rng):
        psi = psi / np.sqrt(np.vdot(psi, psi).real)
        S = self.lowered(k, psi)                      # (N, d_{k-1})
        Lc = self.amp.T @ S                           # channel amplitudes
        p_dec = np.sum(np.abs(Lc) ** 2, axis=1)
        R = self.raised(k, psi)
        p_pump = self.W * np.sum(np.abs(R) ** 2, axis=1)
        p = np.concatenate([p_dec, p_pump])
        tot = p.sum()
        if tot <= 0:
            raise TrajectoryError("jump requested with zero total rate")
        c = int(np.searchsorted(np.cumsum(p), rng.random() * tot, side="right"))
        c = min(c, p.size - 1)
        if c < p_dec.size:
            new, k_new = Lc[c], k - 1
        else:
            new, k_new = R[c - p_dec.size], k + 1
        return k_new, new / np.sqrt(np.vdot(new, new).real)


def pair_state_from_vector(psi, n, pair=(0, 1)) -> np.ndarray:
    """Reduced two-site density matrix of a pure state (basis ``uu, ud, du, dd``)."""
    a, b = pair
    t = np.asarray(psi).reshape([2] * n)
    rest = [s for s in range(n) if s not in (a, b)]
    t = t.transpose([a, b] + rest).reshape(4, -1)
    return t @ t.conj().T


@dataclass
class JumpEnsemble:
    t: np.ndarray
    seeds: list
    sz: np.ndarray          # (M, n_rec, N)
    correlators: np.ndarray  # (M, n_rec, N, N)
    pair_states: np.ndarray  # (M, n_rec, 4, 4)
    jumps: np.ndarray

    @property
    def size(self) -> int:
        return self.sz.shape[0]

    def mean_pair_state(self, rec=-1) -> np.ndarray:
        return _pairwise_mean(self.pair_states[:, rec])

    def zq_samples(self, rec=slice(None)):
        """Per-trajectory pair-averaged ``Re <s+ s->`` averaged over the selected records."""
        C = self.correlators[:, rec]
        n = C.shape[-1]
        off = (C.sum(axis=(-1, -2)) - np.einsum("...ii->...", C)).real / (n * (n - 1))
        return off.mean(axis=-1) if off.ndim > 1 else off


def _pairwise_mean(x):
    return np.add.reduce(np.asarray(x), axis=0) / len(x)


def _run_chunk(args):
    system, t_record, seed, indices, pair = args
    res = [system.run(t_record, trajectory_rng(seed, i), pair) for i in indices]
    return res


def run_jump_ensemble(system: JumpSystem, t_record, n_traj: int, seed: int = 0, pair=(0, 1),
                      workers: int = 1) -> JumpEnsemble:
    """Run ``n_traj`` independent jump trajectories; ``workers > 1`` uses processes."""
    idx = list(range(n_traj))
    if workers > 1:
        chunks = [idx[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_chunk, [(system, t_record, seed, c, pair) for c in chunks]))
        res = [None] * n_traj
        for c, part in zip(chunks, parts):
            for i, r in zip(c, part):
                res[i] = r
    else:
        res = _run_chunk((system, t_record, seed, idx, pair))
    return JumpEnsemble(np.asarray(t_record, dtype=float), [(seed, i) for i in idx],
                        np.array([r[0] for r in res]), np.array([r[1] for r in res]),
                        np.array([r[2] for r in res]), np.array([r[3] for r in res]))


def trace_distance(r1, r2) -> float:
    ev = np.linalg.eigvalsh(0.5 * ((r1 - r2) + (r1 - r2).conj().T))
    return float(0.5 * np.sum(np.abs(ev)))


def bootstrap_trace_distance(samples, n_boot: int = 200, seed: int = 0) -> float:
    """RMS trace distance between bootstrap means and the sample mean."""
    samples = np.asarray(samples)
    m = samples.shape[0]
    mean = _pairwise_mean(samples)
    rng = np.random.default_rng(seed)
    tds = [trace_distance(_pairwise_mean(samples[rng.integers(0, m, m)]), mean) for _ in range(n_boot)]
    return float(np.sqrt(np.mean(np.square(tds))))


# ---------------------------------------------------------------------------
# quantum state diffusion


class QSDSystem:
    """Batched Euler-Maruyama integration of the diffusive unraveling.

    Noise is unitary-invariant across channels, so emission channels can be
    taken from any decomposition of ``f``; the eigen-channels are used.
    """

    def __init__(self, cm: CouplingMatrices, W: float, detunings=None):
        n = cm.n
        if n > TRAJ_CAP:
            raise TrajectoryError(f"N={n} exceeds the trajectory cap {TRAJ_CAP}")
        self.n, self.W = n, float(W)
        self.det = np.zeros(n) if detunings is None else np.asarray(detunings, dtype=float)
        self.rates, self.vecs = emission_channels(cm.f)
        self.amp = self.vecs * np.sqrt(self.rates)
        self.heff = heff_matrix(cm, W, self.det)
        self.maps = _site_maps(n)
        self.n_noise = self.amp.shape[1] + (n if W > 0 else 0)

    def max_rate(self) -> float:
        """Largest eigenvalue of ``sum_k L_k^dagger L_k``."""
        A = -2 * ((self.heff - self.heff.conj().T) / 2j)   # anti-Hermitian part
        A = 0.5 * (A + A.conj().T)
        if A.shape[0] <= 64:
            return float(np.linalg.eigvalsh(A.toarray())[-1])
        return float(eigsh(A, k=1, which="LA", return_eigenvectors=False)[0])

    def default_dt(self, target: float = 5e-3) -> float:
        return target / self.max_rate()

    def _lower(self, Psi):
        """``s-_a Psi`` for all sites; ``Psi`` has shape ``(2**N, M)``."""
        out = np.zeros((self.n,) + Psi.shape, dtype=complex)
        for a, (src, tgt) in enumerate(self.maps):
            out[a, tgt] = Psi[src]
        return out

    def _raise(self, Psi):
        out = np.zeros((self.n,) + Psi.shape, dtype=complex)
        for a, (src, tgt) in enumerate(self.maps):
            out[a, src] = Psi[tgt]
        return out

    def _halves(self, X, a):
        """Views of ``X`` (shape ``(2**N, M)``) with site ``a`` up and down."""
        v = X.reshape(2**a, 2, -1, X.shape[1])
        return v[:, 0], v[:, 1]

    def step(self, Psi, dt, dxi):
        """One Euler-Maruyama step for the batch ``Psi`` (columns normalised).

        ``dxi`` has shape ``(channels, M)``: complex increments with
        ``E|dxi|^2 = dt``.  Terms proportional to ``Psi`` only change norm and
        phase and are removed by the renormalisation.
        """
        nch = self.amp.shape[1]
        n = self.n
        sm = np.empty((n, Psi.shape[1]), dtype=complex)         # <s-_a>
        for a in range(n):
            up, dn = self._halves(Psi, a)
            sm[a] = np.einsum("ijm,ijm->m", dn.conj(), up)
        ell = self.amp.T @ sm
        beta = self.amp @ (np.conj(ell) * dt + dxi[:nch])         # (N, M)
        d = (self.heff @ Psi) * (-1j * dt)
        if self.W > 0:
            sw = np.sqrt(self.W)
            beta_p = sw * (sw * sm * dt + dxi[nch:])              # conj(<s+>) = <s->
        for a in range(n):
            up, dn = self._halves(Psi, a)
            dup, ddn = self._halves(d, a)
            ddn += beta[a] * up
            if self.W > 0:
                dup += beta_p[a] * dn
        Psi = Psi + d
        nrm = np.sqrt(np.einsum("dm,dm->m", Psi.conj(), Psi).real)
        if np.any(nrm < 1e-12):
            raise TrajectoryError("state norm collapsed")
        return Psi / nrm


@dataclass
class QSDResult:
    t: np.ndarray
    qfi: np.ndarray                 # (M, n_rec) conditional QFI
    zq2: np.ndarray                 # (M, n_rec) pair-averaged Re <s+ s->
    sz: np.ndarray                  # (M, n_rec) mean <sz>
    final_states: np.ndarray        # (2**N, M)
    seeds: list = field(default_factory=list)
    dt: float = 0.0


def run_qsd(system: QSDSystem, t_record, n_traj: int, seed: int = 0, dt: float | None = None,
            psi0=None, chunk_steps: int = 256) -> QSDResult:
    """Integrate ``n_traj`` diffusive trajectories from ``psi0`` (default all down)."""
    n, dim = system.n, 2**system.n
    dt = system.default_dt() if dt is None else float(dt)
    t_record = np.asarray(t_record, dtype=float)
    marks = np.rint(t_record / dt).astype(np.int64)
    if psi0 is None:
        psi0 = np.zeros(dim, dtype=complex)
        psi0[-1] = 1.0
    Psi = np.repeat(np.asarray(psi0, dtype=complex)[:, None], n_traj, axis=1)
    rngs = [trajectory_rng(seed, i) for i in range(n_traj)]
    ops = collective_spin_ops(n)
    bits = spins.site_bits(n)
    zsign = (1.0 - 2.0 * bits).mean(axis=1)
    nch = system.n_noise
    qfi = np.empty((n_traj, marks.size))
    zq2 = np.empty((n_traj, marks.size))
    szm = np.empty((n_traj, marks.size))
    step, rec = 0, 0
    buf = None
    while rec < marks.size:
        while rec < marks.size and marks[rec] == step:
            for m in range(n_traj):
                qfi[m, rec] = qfi_pure(Psi[:, m], ops)
            S = system._lower(Psi)
            C = np.einsum("adm,bdm->mab", S.conj(), S)
            off = (C.sum(axis=(1, 2)) - np.einsum("mii->m", C)).real / (n * (n - 1))
            zq2[:, rec] = off
            szm[:, rec] = zsign @ (np.abs(Psi) ** 2)
            rec += 1
        if rec == marks.size:
            break
        k = step % chunk_steps
        if k == 0:
            # each trajectory draws its own noise for the next chunk of steps
            buf = np.empty((chunk_steps, nch, n_traj), dtype=complex)
            s = np.sqrt(dt / 2)
            for m, g in enumerate(rngs):
                z = g.standard_normal((chunk_steps, nch, 2))
                buf[:, :, m] = s * (z[..., 0] + 1j * z[..., 1])
        Psi = system.step(Psi, dt, buf[k])
        step += 1
    return QSDResult(t_record, qfi, zq2, szm, Psi, [(seed, i) for i in range(n_traj)], dt)


def conditional_qfi(psi, n: int | None = None) -> float:
    """Averaged QFI ``(F_x + F_y + F_z) / 3`` of a pure state with ``J_k = sum sigma^k / 2``."""
    psi = np.asarray(psi)
    n = int(round(np.log2(psi.size))) if n is None else n
    return qfi_pure(psi, collective_spin_ops(n))


def ensemble_qfi_mixed(rho, n: int | None = None, eps: float = 1e-12) -> float:
    rho = np.asarray(rho)
    n = int(round(np.log2(rho.shape[0]))) if n is None else n
    return qfi_mixed(rho, collective_spin_ops(n), eps)
