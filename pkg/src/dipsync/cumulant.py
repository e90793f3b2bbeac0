"""Second-order cumulant (pair-correlation) dynamics for large arrays.

Moments are kept up to two sites.  Three-site expectation values are closed with

    <ABC> ~ <AB><C> + <A><BC> + <AC><B> - 2<A><B><C>,

which is exact for product states.  Two engines share this closure:

* the generic engine works with Pauli moments ``<P_a>`` and ``<P_a P_b>``
  (``P`` in ``X, Y, Z``) and covers every operator family;
* the U(1) engine keeps only ``<sz_a>``, ``<s+_a s-_b>`` and ``<sz_a sz_b>``,
  which is closed whenever the initial state carries no coherence (e.g. the
  all-down state), since the dynamics conserve excitation number.

Two-time correlations use the quantum-regression equations with
``<s+_a(tau) sz_c(tau) s-_b(0)>`` factorised as ``<sz_c> <s+_a(tau) s-_b(0)>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg

from .geometry import CouplingMatrices


class CumulantError(RuntimeError):
    pass


_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = [_I2, _X, _Y, _Z]
_SM = np.array([[0, 0], [1, 0]], dtype=complex)   # |down><up| with up = index 0
_SP = _SM.T.copy()


def _adj_dissipator(L, O):
    Ld = L.conj().T
    return Ld @ O @ L - 0.5 * (Ld @ L @ O + O @ Ld @ L)


def local_pauli_map(delta: float, gamma: float, W: float) -> np.ndarray:
    """``Lam[mu, kappa]`` with ``L^dagger(P_kappa) = sum_mu Lam[mu, kappa] P_mu`` for one site."""
    H = 0.5 * delta * _Z
    lam = np.zeros((4, 4))
    for k, P in enumerate(PAULI):
        out = 1j * (H @ P - P @ H) + gamma * _adj_dissipator(_SM, P) + W * _adj_dissipator(_SP, P)
        for m, Pm in enumerate(PAULI):
            lam[m, k] = np.real(np.trace(Pm @ out)) / 2
    return lam


def pair_pauli_maps():
    """Two-site adjoint maps for unit ``f`` and unit ``g`` on an unordered pair.

    Returns ``(F, G)`` of shape ``(4, 4, 4, 4)`` indexed ``[mu, nu, kappa, lam]``
    so that ``L^dagger(P_kappa P_lam) = sum F[mu, nu, kappa, lam] P_mu P_nu``.
    """
    s1p, s2p = np.kron(_SP, _I2), np.kron(_I2, _SP)
    s1m, s2m = np.kron(_SM, _I2), np.kron(_I2, _SM)
    h = 0.5 * (s1p @ s2m + s2p @ s1m)

    def fdag(O):
        out = np.zeros_like(O)
        for xp, ym in ((s1p, s2m), (s2p, s1m)):
            out += 0.5 * (2 * xp @ O @ ym - O @ xp @ ym - xp @ ym @ O)
        return out

    def gdag(O):
        return 1j * (h @ O - O @ h)

    F = np.zeros((4, 4, 4, 4))
    G = np.zeros((4, 4, 4, 4))
    for k in range(4):
        for l in range(4):
            O = np.kron(PAULI[k], PAULI[l])
            fo, go = fdag(O), gdag(O)
            for m in range(4):
                for n in range(4):
                    Pmn = np.kron(PAULI[m], PAULI[n])
                    F[m, n, k, l] = np.real(np.trace(Pmn @ fo)) / 4
                    G[m, n, k, l] = np.real(np.trace(Pmn @ go)) / 4
    return F, G


_F4, _G4 = pair_pauli_maps()


@dataclass
class CumulantParams:
    f: np.ndarray            # pair couplings, zero diagonal
    g: np.ndarray
    gamma_local: np.ndarray
    W: float
    detunings: np.ndarray

    @property
    def n(self) -> int:
        return self.f.shape[0]

    @classmethod
    def from_couplings(cls, cm: CouplingMatrices, W, detunings=None) -> "CumulantParams":
        det = np.zeros(cm.n) if detunings is None else np.asarray(detunings, dtype=float)
        return cls(cm.pair_f(), cm.pair_g(), np.diag(cm.f).copy(), float(W), det)


@dataclass
class CumulantState:
    """Truncated moments of an ``N``-dipole state.

    ``sz[a] = <sz_a>``, ``sp[a] = <s+_a>``, ``C[a, b] = <s+_a s-_b>``,
    ``D[a, b] = <s+_a s+_b>``, ``Zz[a, b] = <sz_a sz_b>``, ``E[a, b] = <s+_a sz_b>``;
    pair arrays have meaningless diagonals (set to zero).
    """

    sz: np.ndarray
    sp: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Zz: np.ndarray
    E: np.ndarray

    @property
    def n(self) -> int:
        return self.sz.size

    def zq(self) -> float:
        return zq_from_correlators(self.C)

    def zq_raw(self) -> float:
        """Pair-averaged ``Re <s+_a s-_b>`` before clipping."""
        n = self.n
        return float(np.real(self.C.sum() - np.trace(self.C)) / (n * (n - 1))) if n > 1 else 0.0

    def pair_state(self, a: int, b: int) -> np.ndarray:
        """Two-site density matrix reconstructed from the one- and two-site moments."""
        m = np.zeros((4, 4))
        x = 2 * self.sp.real       # s+ = (X + iY)/2
        y = 2 * self.sp.imag
        one = lambda s: np.array([1.0, x[s], y[s], self.sz[s]])
        ma, mb = one(a), one(b)
        m[0, :] = mb
        m[:, 0] = ma
        pa = _pair_pauli(self, a, b)
        m[1:, 1:] = pa
        rho = np.zeros((4, 4), dtype=complex)
        for i in range(4):
            for j in range(4):
                rho += m[i, j] * np.kron(PAULI[i], PAULI[j])
        return rho / 4


def _pair_pauli(st: CumulantState, a, b):
    """``<P_a P_b>`` for ``P`` in ``X, Y, Z`` from the complex families."""
    C, D, E, Zz = st.C[a, b], st.D[a, b], st.E, st.Zz[a, b]
    # s+ = (X + iY)/2:  C = (XX + YY + i(YX - XY))/4,  D = (XX - YY + i(XY + YX))/4
    xx_plus_yy = 4 * C.real
    xx_minus_yy = 4 * D.real
    yx_minus_xy = 4 * C.imag
    xy_plus_yx = 4 * D.imag
    xx = 0.5 * (xx_plus_yy + xx_minus_yy)
    yy = 0.5 * (xx_plus_yy - xx_minus_yy)
    yx = 0.5 * (yx_minus_xy + xy_plus_yx)
    xy = 0.5 * (xy_plus_yx - yx_minus_xy)
    xz, yz = 2 * E[a, b].real, 2 * E[a, b].imag
    zx, zy = 2 * E[b, a].real, 2 * E[b, a].imag
    return np.array([[xx, xy, xz], [yx, yy, yz], [zx, zy, Zz]])


def zq_from_correlators(C) -> float:
    """``sqrt`` of the mean of ``Re <s+_a s-_b>`` over ordered pairs (clipped at zero)."""
    n = C.shape[0]
    if n < 2:
        return 0.0
    s = np.real(C.sum() - np.trace(C)) / (n * (n - 1))
    return float(np.sqrt(max(s, 0.0)))


# ---------------------------------------------------------------------------
# generic Pauli engine


class PauliCumulant:
    """Full second-order cumulant equations in the Pauli basis."""

    def __init__(self, params: CumulantParams):
        self.p = params
        n = params.n
        self.n = n
        self.iu = np.triu_indices(n, 1)
        self.lam = np.array([local_pauli_map(params.detunings[a], params.gamma_local[a], params.W)
                             for a in range(n)])
        self.F0 = _F4[:, :, 0, :]
        self.G0 = _G4[:, :, 0, :]
        self.size = 3 * n + 9 * len(self.iu[0])

    # packing -----------------------------------------------------------------
    def unpack(self, y):
        n = self.n
        mt = np.ones((n, 4))
        mt[:, 1:] = y[: 3 * n].reshape(n, 3)
        Mt = np.einsum("am,bn->abmn", mt, mt)
        pairs = y[3 * n:].reshape(-1, 3, 3)
        i, j = self.iu
        Mt[i, j, 1:, 1:] = pairs
        Mt[j, i, 1:, 1:] = pairs.transpose(0, 2, 1)
        return mt, Mt

    def pack(self, mt, Mt):
        i, j = self.iu
        return np.concatenate([mt[:, 1:].ravel(), Mt[i, j, 1:, 1:].ravel()])

    # equations ---------------------------------------------------------------
    def rhs(self, y):
        p = self.p
        f, g = p.f, p.g
        F0, G0, F4, G4 = self.F0, self.G0, _F4, _G4
        n = self.n
        mt, Mt = self.unpack(y)

        dm = np.einsum("amk,am->ak", self.lam, mt)
        TF = np.einsum("acmn,mnk->ack", Mt, F0)
        TG = np.einsum("acmn,mnk->ack", Mt, G0)
        B = np.einsum("ac,ack->ck", f, TF) + np.einsum("ac,ack->ck", g, TG)
        dm = dm + B

        # pair equations for all ordered (c, d); local parts
        dM = np.einsum("cmk,cdml->cdkl", self.lam, Mt) + np.einsum("dnl,cdkn->cdkl", self.lam, Mt)
        dM += f[:, :, None, None] * np.einsum("cdmn,mnkl->cdkl", Mt, F4)
        dM += g[:, :, None, None] * np.einsum("cdmn,mnkl->cdkl", Mt, G4)

        # third-site terms: sum over a != c (a = d subtracted below)
        fm, gm = f @ mt, g @ mt
        R = np.einsum("cm,mnk->cnk", fm, F0) + np.einsum("cm,mnk->cnk", gm, G0)
        Xf = (f @ Mt.reshape(n, -1)).reshape(n, n, 4, 4)
        Xg = (g @ Mt.reshape(n, -1)).reshape(n, n, 4, 4)
        YF = np.einsum("cn,mnk->cmk", mt, F0)
        YG = np.einsum("cn,mnk->cmk", mt, G0)
        S1 = B[:, None, :, None] * mt[None, :, None, :]
        S1 += np.einsum("cnk,cdnl->cdkl", R, Mt)
        S1 += np.einsum("cmk,cdml->cdkl", YF, Xf) + np.einsum("cmk,cdml->cdkl", YG, Xg)
        Rm = np.einsum("cnk,cn->ck", R, mt)
        S1 -= 2 * Rm[:, None, :, None] * mt[None, :, None, :]

        # remove the a = d contribution
        HF = np.einsum("dm,mnk->dnk", mt, F0)
        HG = np.einsum("dm,mnk->dnk", mt, G0)
        fT, gT = f.T, g.T   # [c, d] -> f_dc
        t1 = (fT[:, :, None] * TF.transpose(1, 0, 2) + gT[:, :, None] * TG.transpose(1, 0, 2))
        sub = t1[:, :, :, None] * mt[None, :, None, :]
        sub += fT[:, :, None, None] * np.einsum("dnk,cdnl->cdkl", HF, Mt)
        sub += gT[:, :, None, None] * np.einsum("dnk,cdnl->cdkl", HG, Mt)
        t3 = fT[:, :, None] * np.einsum("dnk,cn->cdk", HF, mt) + gT[:, :, None] * np.einsum("dnk,cn->cdk", HG, mt)
        sub -= t3[:, :, :, None] * mt[None, :, None, :]
        S1 -= sub

        dM += S1 + S1.transpose(1, 0, 3, 2)
        i, j = self.iu
        return np.concatenate([dm[:, 1:].ravel(), dM[i, j, 1:, 1:].ravel()])

    # conversions ---------------------------------------------------------------
    def to_state(self, y) -> CumulantState:
        mt, Mt = self.unpack(y)
        x, yy, z = mt[:, 1], mt[:, 2], mt[:, 3]
        sp = 0.5 * (x + 1j * yy)
        XX, YY, XY, YX = Mt[:, :, 1, 1], Mt[:, :, 2, 2], Mt[:, :, 1, 2], Mt[:, :, 2, 1]
        C = 0.25 * (XX + YY + 1j * (YX - XY))
        D = 0.25 * (XX - YY + 1j * (XY + YX))
        E = 0.5 * (Mt[:, :, 1, 3] + 1j * Mt[:, :, 2, 3])
        Zz = Mt[:, :, 3, 3].copy()
        for arr in (C, D, E, Zz):
            np.fill_diagonal(arr, 0)
        return CumulantState(z.copy(), sp, C, D, Zz, E)

    def from_state(self, st: CumulantState):
        n = self.n
        mt = np.ones((n, 4))
        mt[:, 1] = 2 * st.sp.real
        mt[:, 2] = 2 * st.sp.imag
        mt[:, 3] = st.sz
        Mt = np.einsum("am,bn->abmn", mt, mt)
        for a in range(n):
            for b in range(n):
                if a != b:
                    Mt[a, b, 1:, 1:] = _pair_pauli(st, a, b)
        return self.pack(mt, Mt)

    def product_state(self, bloch) -> np.ndarray:
        """State vector of a product state with Pauli vectors ``bloch[a] = (<X>, <Y>, <Z>)``."""
        mt = np.ones((self.n, 4))
        mt[:, 1:] = bloch
        return self.pack(mt, np.einsum("am,bn->abmn", mt, mt))


# ---------------------------------------------------------------------------
# U(1) engine


class U1Cumulant:
    """Cumulant equations restricted to ``sz``, ``<s+ s->`` and ``<sz sz>``.

    With ``K = f - i g`` (zero diagonal), ``Q_a = Gamma_a + W``, ``P_a = W - Gamma_a``:

    * ``dz_c = P_c - Q_c z_c - 2 sum_a Re(K_ac C_ac)``
    * ``dC_cd = [i(delta_c - delta_d) - (Q_c + Q_d)/2] C_cd + f_cd (z_c + z_d + 2 Z_cd)/4
      + i g_cd (z_d - z_c)/4 + z_c/2 sum_{a != c,d} K_ac C_ad
      + z_d/2 sum_{a != c,d} conj(K_ad) C_ca``
    * ``dZ_cd = P_c z_d + P_d z_c - (Q_c + Q_d) Z_cd + 4 f_cd Re C_cd
      - 2 z_d sum_{a != c,d} Re(K_ac C_ac) - 2 z_c sum_{a != c,d} Re(K_ad C_ad)``
    """

    def __init__(self, params: CumulantParams):
        self.p = params
        n = params.n
        self.n = n
        self.iu = np.triu_indices(n, 1)
        self.K = params.f - 1j * params.g
        self.Q = params.gamma_local + params.W
        self.P = params.W - params.gamma_local
        self.size = n + 3 * len(self.iu[0])

    def unpack(self, y):
        n = self.n
        z = y[:n]
        npair = len(self.iu[0])
        cr = y[n:n + npair]
        ci = y[n + npair:n + 2 * npair]
        zz = y[n + 2 * npair:]
        C = np.zeros((n, n), dtype=complex)
        Zz = np.zeros((n, n))
        i, j = self.iu
        C[i, j] = cr + 1j * ci
        C[j, i] = cr - 1j * ci
        Zz[i, j] = zz
        Zz[j, i] = zz
        return z, C, Zz

    def pack(self, z, C, Zz):
        i, j = self.iu
        c = C[i, j]
        return np.concatenate([z, c.real, c.imag, Zz[i, j]])

    def rhs(self, y):
        p = self.p
        z, C, Zz = self.unpack(y)
        K = self.K
        f, g = p.f, p.g
        Q, P, det = self.Q, self.P, p.detunings
        KC = K * C                       # K_ac C_ac, indexed [a, c]
        s = np.real(KC.sum(axis=0))      # s_c = sum_a Re K_ac C_ac
        dz = P - Q * z - 2 * s

        KCm = K.T @ C                    # sum_a K_ac C_ad -> [c, d]
        CKc = C @ np.conj(K)             # sum_a C_ca conj(K_ad) -> [c, d]
        dC = ((1j * (det[:, None] - det[None, :]) - 0.5 * (Q[:, None] + Q[None, :])) * C
              + 0.25 * f * (z[:, None] + z[None, :] + 2 * Zz)
              + 0.25j * g * (z[None, :] - z[:, None])
              + 0.5 * z[:, None] * KCm + 0.5 * z[None, :] * CKc)
        # a != c, d: the a = c / a = d terms vanish because K and C have zero diagonals

        sr = np.real(KC)                 # [a, c]
        s_cd = s[:, None] - sr.T         # sum_{a != c,d} Re K_ac C_ac = s_c - Re K_dc C_dc
        dZ = (P[:, None] * z[None, :] + P[None, :] * z[:, None] - (Q[:, None] + Q[None, :]) * Zz
              + 4 * f * np.real(C) - 2 * z[None, :] * s_cd - 2 * z[:, None] * s_cd.T)
        i, j = self.iu
        dc = dC[i, j]
        return np.concatenate([dz, dc.real, dc.imag, dZ[i, j]])

    def to_state(self, y) -> CumulantState:
        z, C, Zz = self.unpack(y)
        n = self.n
        zero = np.zeros((n, n), dtype=complex)
        return CumulantState(z.copy(), np.zeros(n, dtype=complex), C, zero.copy(), Zz, zero.copy())

    def from_state(self, st: CumulantState):
        return self.pack(st.sz, st.C, st.Zz)

    def product_state(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.pack(z, np.zeros((self.n, self.n), dtype=complex), np.outer(z, z))


def make_engine(params: CumulantParams, truncation: str = "full"):
    if truncation == "full":
        return PauliCumulant(params)
    if truncation == "u1":
        return U1Cumulant(params)
    raise CumulantError(f"unknown truncation {truncation!r}")


def cumulant_rhs(state_vec, params: CumulantParams, truncation="full"):
    """Time derivative of a packed moment vector."""
    return make_engine(params, truncation).rhs(state_vec)


@dataclass
class CumulantRun:
    t: np.ndarray
    y: np.ndarray
    engine: object
    steady: bool
    residual: float

    def state(self, k=-1) -> CumulantState:
        return self.engine.to_state(self.y[k])

    @property
    def final(self) -> CumulantState:
        return self.state(-1)


def all_down_vector(engine) -> np.ndarray:
    n = engine.n
    if isinstance(engine, U1Cumulant):
        return engine.product_state(-np.ones(n))
    return engine.product_state(np.tile([0.0, 0.0, -1.0], (n, 1)))


def evolve_cumulant(params: CumulantParams, t_grid, y0=None, truncation="full", rtol=1e-9, atol=1e-11,
                    method="DOP853") -> CumulantRun:
    eng = make_engine(params, truncation)
    y0 = all_down_vector(eng) if y0 is None else np.asarray(y0, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    sol = integrate.solve_ivp(lambda _, y: eng.rhs(y), (t_grid[0], t_grid[-1]), y0, method=method,
                              rtol=rtol, atol=atol, t_eval=t_grid)
    if not sol.success:
        raise CumulantError(f"integration failed: {sol.message}")
    res = float(np.max(np.abs(eng.rhs(sol.y[:, -1]))))
    return CumulantRun(sol.t, sol.y.T, eng, res < 1e-8, res)


def steady_state_cumulant(params: CumulantParams, truncation="u1", y0=None, tol=1e-10, chunk=20.0,
                          t_max=2000.0, rtol=1e-8, atol=1e-10) -> CumulantRun:
    """Integrate from the all-down state until ``max |dy/dt| < tol``.

    The final approach is polished with Newton iterations on the moment
    equations (finite-difference Jacobian) when the integration has slowed.
    """
    eng = make_engine(params, truncation)
    y = all_down_vector(eng) if y0 is None else np.asarray(y0, dtype=float)
    t = 0.0
    fun = lambda _, v: eng.rhs(v)
    res = float(np.max(np.abs(eng.rhs(y))))
    while res > tol and t < t_max:
        sol = integrate.solve_ivp(fun, (0.0, chunk), y, method="RK45", rtol=rtol, atol=atol)
        if not sol.success:
            raise CumulantError(f"integration failed: {sol.message}")
        y = sol.y[:, -1]
        t += chunk
        res_new = float(np.max(np.abs(eng.rhs(y))))
        if res_new < 1e-5:
            y_pol, ok = _newton_polish(eng, y, tol)
            if ok:
                y = y_pol
                res_new = float(np.max(np.abs(eng.rhs(y))))
        res = res_new
    if res > tol:
        raise CumulantError(f"steady state not reached: residual {res:.3e} after t={t}")
    return CumulantRun(np.array([t]), y[None, :], eng, True, res)


def _newton_polish(eng, y, tol, max_iter=8):
    from scipy.sparse.linalg import LinearOperator, gmres

    def jv(v, y0, f0):
        h = 1e-7 * max(1.0, np.linalg.norm(y0)) / max(np.linalg.norm(v), 1e-300)
        return (eng.rhs(y0 + h * v) - f0) / h

    for _ in range(max_iter):
        f0 = eng.rhs(y)
        r = float(np.max(np.abs(f0)))
        if r < tol:
            return y, True
        J = LinearOperator((y.size, y.size), matvec=lambda v: jv(v, y, f0))
        dy, info = gmres(J, -f0, rtol=1e-10, restart=200, maxiter=20)
        y_new = y + dy
        if float(np.max(np.abs(eng.rhs(y_new)))) > r:
            return y, False
        y = y_new
    return y, float(np.max(np.abs(eng.rhs(y)))) < tol


# ---------------------------------------------------------------------------
# two-time correlations


def regression_matrix(params: CumulantParams, z) -> np.ndarray:
    """``A`` in ``dG_cb/dtau = sum_a A[c, a] G_ab`` for ``G_ab = <s+_a(tau) s-_b(0)>``."""
    A = 0.5 * z[:, None] * (params.f - 1j * params.g)
    np.fill_diagonal(A, 1j * params.detunings - 0.5 * (params.gamma_local + params.W))
    return A


def two_time_cumulant(state: CumulantState, params: CumulantParams, a: int, b: int | None, tau_grid):
    """``Z_ab(tau)``; with ``b=None`` returns ``<s+_a(tau) s-_a(0)>``."""
    A = regression_matrix(params, state.sz)
    cols = [a] if b is None else [a, b]
    G0 = np.array(state.C[:, cols], dtype=complex)
    for k, c in enumerate(cols):
        G0[c, k] = 0.5 * (1 + state.sz[c])
    out = _propagate(A, G0, tau_grid)       # (n_tau, N, len(cols))
    if b is None:
        return out[:, a, 0]
    return out[:, a, 0] + out[:, a, 1] + out[:, b, 0] + out[:, b, 1]


def two_time_all(state: CumulantState, params: CumulantParams, ref: int, tau_grid):
    """``Z_{ref,b}(tau)`` for every ``b``, shape ``(n_tau, N)`` (column ``ref`` is ``2 G_ref,ref``)."""
    A = regression_matrix(params, state.sz)
    n = state.n
    G0 = np.array(state.C, dtype=complex)
    np.fill_diagonal(G0, 0.5 * (1 + state.sz))
    G = _propagate(A, G0, tau_grid)          # (n_tau, N, N): G[t, x, y] = <s+_x(t) s-_y>
    diag = np.einsum("txx->tx", G)
    return G[:, ref, ref][:, None] + G[:, ref, :] + G[:, :, ref] + diag


def collective_two_time_cumulant(state: CumulantState, params: CumulantParams, tau_grid):
    """``<J+(tau) J-(0)> / N``."""
    A = regression_matrix(params, state.sz)
    G0 = np.array(state.C, dtype=complex)
    np.fill_diagonal(G0, 0.5 * (1 + state.sz))
    G = _propagate(A, G0.sum(axis=1, keepdims=True), tau_grid)
    return G[:, :, 0].sum(axis=1) / state.n


def _propagate(A, G0, tau_grid):
    tau_grid = np.asarray(tau_grid, dtype=float)
    steps = np.diff(tau_grid)
    out = np.empty((tau_grid.size,) + G0.shape, dtype=complex)
    G = G0.copy()
    if tau_grid[0] != 0:
        G = linalg.expm(A * tau_grid[0]) @ G
    out[0] = G
    if steps.size and np.allclose(steps, steps[0], rtol=1e-12, atol=0):
        U = linalg.expm(A * steps[0])
        for k in range(steps.size):
            G = U @ G
            out[k + 1] = G
    else:
        for k, h in enumerate(steps):
            G = linalg.expm(A * h) @ G
            out[k + 1] = G
    return out


def entrainment_fits(state: CumulantState, params: CumulantParams, ref: int | None = None,
                     resolution: float = 0.01, dtau: float = 0.25, targets=None):
    """Fit ``Z_{ref,b}(tau)`` for every ``b != ref``.

    Correlations are demodulated by the collective carrier frequency (phase
    slope of ``<J+(tau) J-(0)>``) so that ``nu = 0`` means locked to the
    collective oscillation.  The window spans ``2 pi / resolution``.
    """
    from .observables import carrier_frequency, fit_two_time

    n = state.n
    ref = n // 2 if ref is None else ref
    span = 2 * np.pi / resolution
    tau = np.arange(0.0, span + dtau / 2, dtau)
    coll = collective_two_time_cumulant(state, params, tau)
    wc = carrier_frequency(tau, coll)
    Z = two_time_all(state, params, ref, tau) * np.exp(-1j * wc * tau)[:, None]
    targets = [b for b in range(n) if b != ref] if targets is None else list(targets)
    fits = [fit_two_time(tau, Z[:, b].real) for b in targets]
    return targets, fits, wc


def zq_cluster(state: CumulantState, d: int, positions=None) -> float:
    """Cluster order parameter of a window of ``d`` sites from the central site."""
    from .observables import zq_cluster as _zqc

    return _zqc(state.C, d, positions)
