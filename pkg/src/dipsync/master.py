"""Full density-matrix Lindblad dynamics for small arrays.

The generator is

    d rho/dt = -i[H, rho]
               + 1/2 sum_{a,b} f_ab (2 s-_b rho s+_a - s+_a s-_b rho - rho s+_a s-_b)
               + W/2 sum_a (2 s+_a rho s-_a - {s-_a s+_a, rho})

with ``f_aa`` the local decay rate.  Superoperators use column stacking,
``vec(A rho B) = (B^T kron A) vec(rho)``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate

from . import spins
from .geometry import CouplingMatrices

DENSE_CAP = 8


class MasterError(RuntimeError):
    pass


class Liouvillian:
    """Lindblad generator for ``N`` dipoles with couplings ``f``, ``g`` and pump ``W``.

    Parameters
    ----------
    couplings : CouplingMatrices
        ``f`` must include the local decay on its diagonal.
    W : float
        Incoherent pump rate.
    detunings : array_like, optional
    cap : int
        Largest ``N`` accepted.
    """

    def __init__(self, couplings: CouplingMatrices, W: float, detunings=None, cap: int = DENSE_CAP):
        n = couplings.n
        if n > cap:
            raise MasterError(f"N={n} exceeds the exact-solver cap of {cap}; use trajectories")
        self.n = n
        self.dim = 2**n
        self.W = float(W)
        self.f = np.asarray(couplings.f, dtype=float)
        self.g = np.asarray(couplings.g, dtype=float)
        self.detunings = np.zeros(n) if detunings is None else np.asarray(detunings, dtype=float)
        self.sm = [spins.sigma_minus(a, n) for a in range(n)]
        self.sp = [spins.sigma_plus(a, n) for a in range(n)]
        self.H = spins.hamiltonian(self.detunings, self.g)
        M = spins.decay_matrix(self.f)
        # W * sum_a s-_a s+_a is diagonal: W times the number of down spins
        pump = sp.diags(self.W * spins.site_bits(n).sum(1).astype(float))
        self.H_eff = (self.H - 0.5j * (M + pump)).tocsr()
        self.K = [sum(self.f[a, b] * self.sp[a] for a in range(n)).tocsr() for b in range(n)]
        self._super = None

    # -- matrix-free action -------------------------------------------------
    def apply(self, rho: np.ndarray) -> np.ndarray:
        """``L(rho)`` for a dense ``(2^N, 2^N)`` array (not necessarily Hermitian)."""
        rho = np.asarray(rho)
        out = -1j * (self.H_eff @ rho) + 1j * (self.H_eff.conj() @ rho.T).T
        for b in range(self.n):
            out += self.sm[b] @ (self.K[b].T @ rho.T).T
        if self.W:
            for a in range(self.n):
                out += self.W * (self.sp[a] @ (self.sm[a].T @ rho.T).T)
        return out

    def adjoint_apply(self, op: np.ndarray) -> np.ndarray:
        """Heisenberg-picture generator ``L^dagger(op)``."""
        op = np.asarray(op, dtype=complex)
        Hd = self.H_eff.conj().T
        out = 1j * (Hd @ op) - 1j * (self.H_eff.T @ op.T).T
        for b in range(self.n):
            out += self.K[b] @ (self.sm[b].T @ op.T).T
        if self.W:
            for a in range(self.n):
                out += self.W * (self.sm[a] @ (self.sp[a].T @ op.T).T)
        return out

    # -- explicit superoperator -------------------------------------------
    def superoperator(self) -> sp.csr_matrix:
        """Sparse ``D^2 x D^2`` matrix acting on column-stacked ``vec(rho)``."""
        if self._super is None:
            eye = sp.identity(self.dim, dtype=complex, format="csr")
            L = -1j * sp.kron(eye, self.H_eff) + 1j * sp.kron(self.H_eff.conj(), eye)
            for b in range(self.n):
                L = L + sp.kron(self.K[b].T, self.sm[b])
            if self.W:
                for a in range(self.n):
                    L = L + self.W * sp.kron(self.sm[a].T, self.sp[a])
            self._super = L.tocsr()
        return self._super

    def charge_zero_indices(self) -> np.ndarray:
        """Column-stacked indices of ``rho[i, j]`` with equal excitation number."""
        k = spins.excitation_number(self.n)
        i, j = np.meshgrid(np.arange(self.dim), np.arange(self.dim), indexing="ij")
        mask = (k[i] == k[j])
        return np.flatnonzero(mask.T.ravel())  # column stacking: index = i + j*D

    def __call__(self, rho):
        return self.apply(rho)


def build_liouvillian(couplings: CouplingMatrices, W: float, detunings=None, cap: int = DENSE_CAP) -> Liouvillian:
    return Liouvillian(couplings, W, detunings, cap)


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).ravel(order="F")


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v).reshape((d, d), order="F")


def all_down(n: int) -> np.ndarray:
    d = 2**n
    rho = np.zeros((d, d), dtype=complex)
    rho[-1, -1] = 1.0
    return rho


def check_density_matrix(rho, tol=1e-10, pos_tol=1e-8) -> dict:
    """Hermiticity, trace and positivity diagnostics; raises on violation."""
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    tr = complex(np.trace(rho))
    lam = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
    info = {"hermiticity": herm, "trace": tr, "min_eigenvalue": lam}
    if herm > tol or abs(tr - 1) > tol or lam < -pos_tol:
        raise MasterError(f"invalid density matrix: {info}")
    return info


class EvolutionResult:
    def __init__(self, t, rhos, trace_drift):
        self.t = t
        self.rhos = rhos
        self.trace_drift = trace_drift


def evolve(rho0, L: Liouvillian, t_grid, rtol=1e-10, atol=1e-12, method="DOP853",
           trace_tol=1e-9) -> EvolutionResult:
    """Integrate ``d rho/dt = L(rho)`` and return states on ``t_grid``."""
    d = L.dim
    t_grid = np.asarray(t_grid, dtype=float)

    def fun(_, y):
        return L.apply(y.reshape(d, d)).ravel()

    sol = integrate.solve_ivp(fun, (t_grid[0], t_grid[-1]), np.asarray(rho0, dtype=complex).ravel(),
                              method=method, rtol=rtol, atol=atol, t_eval=t_grid)
    if not sol.success:
        raise MasterError(f"integration failed: {sol.message}")
    rhos = sol.y.T.reshape(-1, d, d)
    drift = float(np.max(np.abs(np.einsum("kii->k", rhos) - np.trace(rho0))))
    if drift > trace_tol:
        raise MasterError(f"trace drift {drift:.3e} exceeds {trace_tol:.1e}")
    return EvolutionResult(sol.t, rhos, drift)


def steady_state(L: Liouvillian, method="direct", check=True, t_max=400.0, drift_tol=1e-9) -> np.ndarray:
    """Stationary density matrix.

    ``method="direct"`` solves ``L rho = 0`` on the zero-charge block (the
    generator conserves the difference of ket and bra excitation numbers) with
    one row replaced by the trace condition.  ``method="integrate"`` evolves
    from the all-down state until the observable drift is below ``drift_tol``.
    """
    d = L.dim
    if method == "direct":
        idx = L.charge_zero_indices()
        A = L.superoperator()[idx][:, idx].tolil()
        tr_row = np.zeros(idx.size, dtype=complex)
        diag_pos = np.flatnonzero((idx % d) == (idx // d))
        tr_row[diag_pos] = 1.0
        A[0, :] = tr_row
        rhs = np.zeros(idx.size, dtype=complex)
        rhs[0] = 1.0
        x = spla.spsolve(A.tocsc(), rhs)
        v = np.zeros(d * d, dtype=complex)
        v[idx] = x
        rho = unvec(v, d)
        rho = 0.5 * (rho + rho.conj().T)
        res = float(np.max(np.abs(L.apply(rho))))
        if res > 1e-8:
            raise MasterError(f"steady-state residual {res:.3e}")
    elif method == "integrate":
        rho = all_down(L.n)

        def fun(_, y):
            return L.apply(y.reshape(d, d)).ravel()

        t, chunk = 0.0, 10.0
        while True:
            sol = integrate.solve_ivp(fun, (0.0, chunk), rho.ravel(), method="DOP853",
                                      rtol=1e-10, atol=1e-13)
            rho = sol.y[:, -1].reshape(d, d)
            t += chunk
            if float(np.max(np.abs(L.apply(rho)))) < drift_tol:
                break
            if t >= t_max:
                raise MasterError("steady state not reached by integration")
        rho = 0.5 * (rho + rho.conj().T)
    else:
        raise ValueError(f"unknown method {method!r}")
    if check:
        check_density_matrix(rho, tol=1e-9)
    return rho


def two_time_exact(rho_ss, L: Liouvillian, a: int, b: int | None, tau_grid, rtol=1e-10, atol=1e-13):
    """``Z_ab(tau) = <(s+_a + s+_b)(tau) (s-_a + s-_b)(0)>`` by quantum regression."""
    d = L.dim
    lower = L.sm[a] if b is None else (L.sm[a] + L.sm[b])
    raise_ = lower.conj().T.tocsr()
    x0 = np.asarray(lower @ rho_ss, dtype=complex)
    tau_grid = np.asarray(tau_grid, dtype=float)

    def fun(_, y):
        return L.apply(y.reshape(d, d)).ravel()

    if tau_grid[-1] > tau_grid[0]:
        sol = integrate.solve_ivp(fun, (tau_grid[0], tau_grid[-1]), x0.ravel(), method="DOP853",
                                  rtol=rtol, atol=atol, t_eval=tau_grid)
        if not sol.success:
            raise MasterError(f"regression propagation failed: {sol.message}")
        xs = sol.y.T.reshape(-1, d, d)
    else:
        xs = x0[None]
    return np.array([np.sum(raise_.multiply(x.T)) for x in xs])


# -- observables from a full density matrix ----------------------------------

def expect(rho, op) -> complex:
    return complex(np.sum(op.multiply(rho.T)) if sp.issparse(op) else np.trace(op @ rho))


def site_sz(rho, n) -> np.ndarray:
    bits = spins.site_bits(n)
    p = np.real(np.diag(rho))
    return (1.0 - 2.0 * bits).T @ p


def pair_correlators(rho, n) -> np.ndarray:
    """``C[a, b] = <s+_a s-_b>`` (diagonal holds ``<s+_a s-_a>``)."""
    C = np.zeros((n, n), dtype=complex)
    sm = [spins.sigma_minus(a, n) for a in range(n)]
    for a in range(n):
        for b in range(n):
            C[a, b] = expect(rho, (sm[a].T @ sm[b]).tocsr())
    return C


def reduced_state(rho, n, sites) -> np.ndarray:
    """Partial trace keeping ``sites`` (in the given order)."""
    sites = list(sites)
    t = np.asarray(rho).reshape([2] * (2 * n))
    keep = sites
    rest = [s for s in range(n) if s not in keep]
    perm = keep + rest + [n + s for s in keep] + [n + s for s in rest]
    t = t.transpose(perm)
    k, r = 2 ** len(keep), 2 ** len(rest)
    t = t.reshape(k, r, k, r)
    return np.einsum("arbr->ab", t)
