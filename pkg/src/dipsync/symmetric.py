"""Exact dynamics of identical all-to-all coupled dipoles in the permutation-symmetric sector.

A permutation-invariant operator on ``N`` sites is expanded as

    rho = sum_n a_n S_n / sqrt(M_n),

where ``S_n`` is the sum of all ``M_n`` distinct tensor products of single-site
matrix units with multiplicities ``n = (n_uu, n_ud, n_du, n_dd)``
(``E_ud = |up><down|``, ``M_n`` the multinomial coefficient).  The basis
``S_n / sqrt(M_n)`` is orthonormal in the Hilbert-Schmidt inner product, so
``|a_n| <= 1`` for any density matrix and the generator is well scaled.  In
terms of the class weights ``w_n = a_n sqrt(M_n)``:

* the trace is the sum of ``w_n`` over classes with ``n_ud = n_du = 0``;
* the one-site amplitude of unit ``x`` is ``sum w_n n_x / N`` over classes for
  which ``n - e_x`` is diagonal-only, and the two-site amplitude of ``(x, y)``
  is ``sum w_n n_x (n_y - [x = y]) / (N (N - 1))`` likewise;
* a map acting on one site moves weight from ``n`` to ``n'`` with factor
  ``m * n_p``, and a map on an ordered pair with ``m * n_p (n_q - [p = q])``.

The basis has ``C(N+3, 3)`` elements.
The generator is block diagonal in the charge ``n_ud - n_du``; steady states
live in the zero-charge block.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate
from scipy.special import gammaln

UU, UD, DU, DD = range(4)
_UNITS = [(0, 0), (0, 1), (1, 0), (1, 1)]  # (ket, bra), 0 = up


class SymmetricError(RuntimeError):
    pass


def _unit(k):
    m = np.zeros((2, 2), dtype=complex)
    m[_UNITS[k]] = 1.0
    return m


_SM = np.array([[0, 0], [1, 0]], dtype=complex)  # |down><up|
_SP = _SM.T.copy()


def _dissipator(L, X):
    Ld = L.conj().T
    return L @ X @ Ld - 0.5 * (Ld @ L @ X + X @ Ld @ L)


def local_map(gamma_d: float, W: float) -> np.ndarray:
    """``M[k, i]``: coefficient of unit ``k`` in the single-site generator applied to unit ``i``."""
    M = np.zeros((4, 4), dtype=complex)
    for i in range(4):
        out = gamma_d * _dissipator(_SM, _unit(i)) + W * _dissipator(_SP, _unit(i))
        for k in range(4):
            M[k, i] = out[_UNITS[k]]
    return M


def cross_map() -> np.ndarray:
    """Two-site map for one ordered pair ``(a, b)``:

    ``X -> 1/2 (2 s-_b X s+_a - s+_a s-_b X - X s+_a s-_b)``, with index
    ``T[(p', q'), (p, q)]`` (``p`` on site ``a``).
    """
    sa = np.kron(_SP, np.eye(2))   # s+_a
    smb = np.kron(np.eye(2), _SM)  # s-_b
    T = np.zeros((16, 16), dtype=complex)
    for p in range(4):
        for q in range(4):
            X = np.kron(_unit(p), _unit(q))
            Y = 0.5 * (2 * smb @ X @ sa - sa @ smb @ X - X @ sa @ smb)
            Y = Y.reshape(2, 2, 2, 2)  # (ket_a, ket_b, bra_a, bra_b)
            for pp in range(4):
                for qq in range(4):
                    ka, ba = _UNITS[pp]
                    kb, bb = _UNITS[qq]
                    T[pp * 4 + qq, p * 4 + q] = Y[ka, kb, ba, bb]
    return T


@dataclass
class Basis:
    """Enumeration of multiplicity vectors ``(n_uu, n_ud, n_du, n_dd)``."""

    n: int
    counts: np.ndarray          # (size, 4)
    lookup: np.ndarray          # (N+1, N+1, N+1) -> position or -1

    @property
    def size(self) -> int:
        return self.counts.shape[0]

    def index(self, counts) -> np.ndarray:
        c = np.asarray(counts)
        return self.lookup[c[..., 0], c[..., 1], c[..., 2]]

    def charge(self) -> np.ndarray:
        return self.counts[:, UD] - self.counts[:, DU]

    @property
    def half_log_mult(self) -> np.ndarray:
        """``log(sqrt(M_n))`` for every class."""
        h = self.__dict__.get("_hlm")
        if h is None:
            h = 0.5 * (gammaln(self.n + 1) - gammaln(self.counts + 1).sum(axis=1))
            self.__dict__["_hlm"] = h
        return h


@lru_cache(maxsize=16)
def make_basis(n: int, charge: int | None = None) -> Basis:
    rows = []
    for a in range(n + 1):
        for b in range(n + 1 - a):
            for c in range(n + 1 - a - b):
                if charge is None or b - c == charge:
                    rows.append((a, b, c, n - a - b - c))
    counts = np.array(rows, dtype=np.int64).reshape(-1, 4)
    lookup = -np.ones((n + 1, n + 1, n + 1), dtype=np.int64)
    lookup[counts[:, 0], counts[:, 1], counts[:, 2]] = np.arange(counts.shape[0])
    return Basis(n, counts, lookup)


def _assemble(basis: Basis, M1: np.ndarray, T2: np.ndarray, rate2: float) -> sp.csr_matrix:
    cnt = basis.counts
    size = basis.size
    rows, cols, vals = [], [], []
    src = np.arange(size)
    hlm = basis.half_log_mult
    eye = np.eye(4, dtype=np.int64)
    for p in range(4):
        for pp in range(4):
            m = M1[pp, p]
            if m == 0:
                continue
            tgt = cnt - eye[p] + eye[pp]
            ok = (cnt[:, p] >= 1)
            t = tgt[ok]
            idx = basis.index(t)
            good = idx >= 0
            j, i = src[ok][good], idx[good]
            coef = m * cnt[j, p] * np.exp(hlm[j] - hlm[i])
            rows.append(i); cols.append(j); vals.append(coef)
    if rate2 != 0:
        for p in range(4):
            for q in range(4):
                for pp in range(4):
                    for qq in range(4):
                        m = T2[pp * 4 + qq, p * 4 + q]
                        if m == 0:
                            continue
                        need = eye[p] + eye[q]
                        ok = np.all(cnt >= need, axis=1)
                        tgt = cnt[ok] - need + eye[pp] + eye[qq]
                        idx = basis.index(tgt)
                        good = idx >= 0
                        j, i = src[ok][good], idx[good]
                        coef = rate2 * m * cnt[j, p] * (cnt[j, q] - (1 if p == q else 0))
                        coef = coef * np.exp(hlm[j] - hlm[i])
                        rows.append(i); cols.append(j); vals.append(coef)
    rows = np.concatenate(rows); cols = np.concatenate(cols); vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))


@dataclass
class SymmetricGenerator:
    n: int
    f_eff: float
    W: float
    gamma: float
    diagonal: str
    basis: Basis
    matrix: sp.csr_matrix

    @property
    def pair_rate(self) -> float:
        return self.f_eff / self.n

    def __matmul__(self, c):
        return self.matrix @ c


def symmetric_generator(n: int, f_eff: float, W: float, gamma: float = 1.0, diagonal: str = "gamma",
                        charge: int | None = 0) -> SymmetricGenerator:
    """Generator for ``f_ab = f_eff/N`` (``a != b``) on the given charge block.

    ``diagonal="gamma"`` uses local decay ``Gamma``; ``"additive"`` uses
    ``Gamma + f_eff/N`` (see :class:`dipsync.geometry.Collective`).
    ``charge=None`` builds the full ``C(N+3, 3)`` space.
    """
    if n < 1:
        raise SymmetricError("need N >= 1")
    c = f_eff / n
    if diagonal == "gamma":
        gd = gamma
    elif diagonal == "additive":
        gd = gamma + c
    else:
        raise SymmetricError(f"unknown diagonal convention {diagonal!r}")
    basis = make_basis(n, charge)
    L = _assemble(basis, local_map(gd, W), cross_map(), c if n > 1 else 0.0)
    return SymmetricGenerator(n, f_eff, W, gamma, diagonal, basis, L)


# -- states and observables ---------------------------------------------------

@dataclass
class SymmetricState:
    basis: Basis
    coeffs: np.ndarray

    @property
    def n(self) -> int:
        return self.basis.n

    def trace(self) -> complex:
        return complex(trace_functional(self.basis) @ self.coeffs)

    def one_site(self) -> np.ndarray:
        return _reduced(self.basis, 1) @ self.coeffs

    def pair_units(self) -> np.ndarray:
        return _reduced(self.basis, 2) @ self.coeffs

    def sz(self) -> float:
        r = self.one_site()
        return float(np.real(r[UU] - r[DD]))

    def pair_correlator(self) -> complex:
        """``<s+_a s-_b>`` for any pair ``a != b``."""
        return complex(self.pair_units()[DU * 4 + UD])

    def zq(self) -> float:
        c2 = np.real(self.pair_correlator())
        return float(np.sqrt(max(c2, 0.0)))


def trace_functional(basis: Basis) -> np.ndarray:
    cnt = basis.counts
    diag = (cnt[:, UD] == 0) & (cnt[:, DU] == 0)
    return np.where(diag, np.exp(basis.half_log_mult), 0.0)


def _reduced(basis: Basis, k: int) -> np.ndarray:
    """Rows map coefficients to the ``4**k`` unit amplitudes of ``k`` kept sites."""
    cache = basis.__dict__.setdefault("_reduced_cache", {})
    if k in cache:
        return cache[k]
    cnt = basis.counts
    n = basis.n
    out = np.zeros((4**k, basis.size))
    eye = np.eye(4, dtype=np.int64)
    if n < k:
        raise SymmetricError(f"cannot keep {k} sites of {n}")
    for flat in range(4**k):
        units = [(flat // 4 ** (k - 1 - j)) % 4 for j in range(k)]
        rest = cnt - sum(eye[u] for u in units)
        ok = np.all(rest >= 0, axis=1) & (rest[:, UD] == 0) & (rest[:, DU] == 0)
        w = np.ones(ok.sum())
        sub = cnt[ok].copy()
        for u in units:
            w *= sub[:, u]
            sub[:, u] -= 1
        out[flat, ok] = w / np.prod(np.arange(n, n - k, -1), dtype=float) * np.exp(basis.half_log_mult[ok])
    cache[k] = out
    return out


def units_to_matrix(r: np.ndarray, k: int) -> np.ndarray:
    """Turn unit amplitudes of ``k`` sites into a ``2^k x 2^k`` density matrix."""
    r = np.asarray(r).reshape([4] * k)
    rho = np.zeros((2**k, 2**k), dtype=complex)
    for idx in np.ndindex(*([4] * k)):
        ket = 0
        bra = 0
        for u in idx:
            i, j = _UNITS[u]
            ket = 2 * ket + i
            bra = 2 * bra + j
        rho[ket, bra] += r[idx]
    return rho


def reduced_pair_state(state: SymmetricState) -> np.ndarray:
    """Two-site density matrix in the basis ``(uu, ud, du, dd)`` of kets."""
    return units_to_matrix(state.pair_units(), 2)


def reduced_one_site(state: SymmetricState) -> np.ndarray:
    return units_to_matrix(state.one_site(), 1)


def all_down_state(basis: Basis) -> SymmetricState:
    c = np.zeros(basis.size, dtype=complex)
    c[basis.index(np.array([0, 0, 0]))] = 1.0
    return SymmetricState(basis, c)


@dataclass
class SymmetricSeries:
    t: np.ndarray
    states: list
    sz: np.ndarray
    zq: np.ndarray
    correlator: np.ndarray


def evolve_symmetric(state0: SymmetricState, gen: SymmetricGenerator, t_grid, rtol=1e-10, atol=1e-13,
                     method="DOP853") -> SymmetricSeries:
    t_grid = np.asarray(t_grid, dtype=float)
    L = gen.matrix

    def fun(_, y):
        return L @ y

    sol = integrate.solve_ivp(fun, (t_grid[0], t_grid[-1]), state0.coeffs.astype(complex), method=method,
                              rtol=rtol, atol=atol, t_eval=t_grid)
    if not sol.success:
        raise SymmetricError(f"integration failed: {sol.message}")
    states = [SymmetricState(gen.basis, y) for y in sol.y.T]
    corr = np.array([s.pair_correlator() for s in states]) if gen.n > 1 else np.zeros(len(states), complex)
    return SymmetricSeries(sol.t, states, np.array([s.sz() for s in states]),
                           np.sqrt(np.clip(corr.real, 0, None)), corr)


def steady_state_symmetric(gen: SymmetricGenerator, check=True) -> SymmetricState:
    """Null vector of the zero-charge generator normalised by the trace functional."""
    basis = gen.basis
    if np.any(basis.charge() != 0):
        raise SymmetricError("steady state requires the zero-charge generator")
    tr = trace_functional(basis)
    scale = tr.max()
    # replace the row where the trace functional (the left null vector) is largest
    k = int(np.argmax(tr))
    A = gen.matrix.tolil(copy=True).astype(complex)
    A[k, :] = tr / scale
    rhs = np.zeros(basis.size, dtype=complex)
    rhs[k] = 1.0 / scale
    c = spla.spsolve(A.tocsc(), rhs)
    state = SymmetricState(basis, c)
    if check:
        res = float(np.max(np.abs(gen.matrix @ c)))
        if res > 1e-10 * max(1.0, gen.W + gen.gamma + gen.f_eff):
            raise SymmetricError(f"steady-state residual {res:.3e}")
        rho_k = reduced_pair_state(state) if basis.n > 1 else reduced_one_site(state)
        lam = np.linalg.eigvalsh(0.5 * (rho_k + rho_k.conj().T))
        if lam[0] < -1e-8 or abs(np.trace(rho_k) - 1) > 1e-10:
            raise SymmetricError(f"reduced state invalid: eigenvalues {lam}")
    return state


def collective_two_time(state: SymmetricState, f_eff: float, W: float, tau_grid, gamma: float = 1.0,
                        diagonal: str = "gamma", rtol=1e-10, atol=1e-13) -> np.ndarray:
    """``<J+(tau) J-(0)> / N`` in the steady state by quantum regression.

    ``J- rho`` stays permutation symmetric, so it is propagated in the charge
    ``-1`` block; the result is ``<s+_a s-_a> + (N-1) <s+_a(tau) s-_b(0)>``.
    """
    n = state.n
    gen = symmetric_generator(n, f_eff, W, gamma, diagonal, charge=-1)
    src, tgt = state.basis, gen.basis
    x0 = np.zeros(tgt.size, dtype=complex)
    cnt = src.counts
    eye = np.eye(4, dtype=np.int64)
    # J- acting from the left: E_uu -> E_du and E_ud -> E_dd on one site
    for p, pp in ((UU, DU), (UD, DD)):
        ok = cnt[:, p] >= 1
        t = cnt[ok] - eye[p] + eye[pp]
        idx = tgt.index(t)
        good = idx >= 0
        j = np.flatnonzero(ok)[good]
        i = idx[good]
        np.add.at(x0, i, state.coeffs[j] * cnt[j, p] * np.exp(src.half_log_mult[j] - tgt.half_log_mult[i]))
    sol = integrate.solve_ivp(lambda _, y: gen.matrix @ y, (tau_grid[0], tau_grid[-1]), x0, method="DOP853",
                              rtol=rtol, atol=atol, t_eval=tau_grid)
    if not sol.success:
        raise SymmetricError(f"regression propagation failed: {sol.message}")
    # <J+> of X: n * (one-site amplitude of E_du), one-site amplitudes from the charge -1 block
    red = _reduced(tgt, 1)[DU]
    return red @ sol.y


def to_dense(state: SymmetricState, cap: int = 12) -> np.ndarray:
    """Full ``2^N x 2^N`` density matrix of a zero-charge symmetric state."""
    from .spins import excitation_number, site_bits

    n = state.n
    if n > cap:
        raise SymmetricError(f"dense reconstruction limited to N <= {cap}")
    basis = state.basis
    bits = site_bits(n)
    exc = excitation_number(n)
    rho = np.zeros((2**n, 2**n), dtype=complex)
    scale = np.exp(-basis.half_log_mult)
    for k in range(n + 1):
        b = np.flatnonzero(exc == k)
        I, J = np.meshgrid(b, b, indexing="ij")
        unit = 2 * bits[I] + bits[J]                        # (|b|, |b|, N)
        counts = np.stack([(unit == u).sum(-1) for u in range(4)], axis=-1)
        idx = basis.index(counts)
        if np.any(idx < 0):
            raise SymmetricError("state has components outside its basis")
        rho[I, J] = state.coeffs[idx] * scale[idx]
    return rho
