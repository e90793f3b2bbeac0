"""Synchronization and correlation metrics shared by all engines."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

log = logging.getLogger(__name__)

ENTROPY_CLIP = 1e-12


# -- order parameters ----------------------------------------------------------

def zq(correlators, return_raw: bool = False):
    """Quantum order parameter from pair correlators ``C[a, b] = <s+_a s-_b>``.

    Averages ``Re C`` over ordered pairs ``a != b``; a negative average gives 0.
    """
    C = np.asarray(correlators)
    n = C.shape[0]
    if n < 2:
        raise ValueError("Z_Q needs at least two sites")
    avg = (C.sum() - np.trace(C)) / (n * (n - 1))
    raw = float(np.real(avg))
    if abs(np.imag(avg)) > 1e-10:
        log.debug("Z_Q imaginary residual %.3e", np.imag(avg))
    if raw < 0:
        log.info("negative pair correlation %.3e reported as Z_Q = 0", raw)
    val = float(np.sqrt(max(raw, 0.0)))
    return (val, raw) if return_raw else val


def zq_cluster(correlators, d: int, positions=None, center: int | None = None) -> float:
    """Order parameter restricted to a linear window of ``d`` sites.

    The window starts at the central site and runs along the first lattice
    axis (increasing index on a chain).  ``positions`` (N, 3) selects sites of
    the central row for 2D lattices.
    """
    C = np.asarray(correlators)
    n = C.shape[0]
    if positions is None:
        row = np.arange(n)
    else:
        pos = np.asarray(positions, dtype=float)
        mid = n // 2 if center is None else center
        same = np.all(np.isclose(pos[:, 1:], pos[mid, 1:]), axis=1)
        row = np.flatnonzero(same)
        row = row[np.argsort(pos[row, 0])]
    mid = n // 2 if center is None else center
    start = int(np.flatnonzero(row == mid)[0])
    if d < 2 or start + d > row.size:
        raise ValueError(f"cluster of {d} sites does not fit from site {mid}")
    sites = row[start:start + d]
    return zq(C[np.ix_(sites, sites)])


# -- pair states ----------------------------------------------------------------

def check_pair_state(rho, tol=1e-10, pos_tol=1e-8) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError("pair state must be 4x4")
    if np.max(np.abs(rho - rho.conj().T)) > tol or abs(np.trace(rho) - 1) > tol:
        raise ValueError("pair state is not Hermitian with unit trace")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] < -pos_tol:
        raise ValueError("pair state is not positive")
    return 0.5 * (rho + rho.conj().T)


def von_neumann(rho) -> float:
    """Base-2 entropy with eigenvalues clipped at ``ENTROPY_CLIP``."""
    lam = np.linalg.eigvalsh(0.5 * (rho + np.conj(rho).T))
    lam = lam[lam > ENTROPY_CLIP]
    return float(-np.sum(lam * np.log2(lam)))


def partial_trace_pair(rho, keep: int) -> np.ndarray:
    """Reduce a two-qubit state to qubit ``keep`` (0 = A, 1 = B)."""
    t = np.asarray(rho).reshape(2, 2, 2, 2)
    return np.einsum("ijkj->ik", t) if keep == 0 else np.einsum("ijil->jl", t)


def mutual_information(rho) -> float:
    rho = check_pair_state(rho)
    return von_neumann(partial_trace_pair(rho, 0)) + von_neumann(partial_trace_pair(rho, 1)) - von_neumann(rho)


def _conditional_entropy(rho, n):
    """``S(B | {Pi_k^A})`` for the projective measurement along unit vector ``n`` on A."""
    sig = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex)
    ns = np.einsum("k,kij->ij", n, sig)
    out = 0.0
    for s in (1, -1):
        proj = 0.5 * (np.eye(2) + s * ns)
        P = np.kron(proj, np.eye(2))
        sub = P @ rho @ P
        p = float(np.real(np.trace(sub)))
        if p > ENTROPY_CLIP:
            rb = partial_trace_pair(sub / p, 1)
            out += p * von_neumann(rb)
    return out


def _unit(theta, phi):
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


def quantum_discord(rho, n_theta: int = 32, n_phi: int = 64, restarts: int = 8, seed: int = 0) -> float:
    """Discord ``D_{B|A}`` with projective measurements on qubit A.

    The measurement direction is optimised on a spherical grid, refined by
    Nelder-Mead from the best grid point and from ``restarts`` random starts.
    """
    rho = check_pair_state(rho)
    s_b = von_neumann(partial_trace_pair(rho, 1))
    mi = mutual_information(rho)
    th = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    ph = np.arange(n_phi) * 2 * np.pi / n_phi
    best, best_x = np.inf, None
    for t in th:
        for p in ph:
            v = _conditional_entropy(rho, _unit(t, p))
            if v < best:
                best, best_x = v, (t, p)
    rng = np.random.default_rng(seed)
    starts = [best_x] + [(np.arccos(rng.uniform(-1, 1)), rng.uniform(0, 2 * np.pi)) for _ in range(restarts)]
    fun = lambda x: _conditional_entropy(rho, _unit(*x))
    for x0 in starts:
        r = optimize.minimize(fun, x0, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-12})
        if r.fun < best:
            best = float(r.fun)
    classical = s_b - best
    return float(max(mi - classical, 0.0))


# -- two-time fits ---------------------------------------------------------------

@dataclass
class TwoTimeFit:
    A: float
    nu: float
    gamma_fit: float
    residual: float
    converged: bool = True
    message: str = ""

    def as_row(self) -> dict:
        return {"A": self.A, "nu": self.nu, "gamma": self.gamma_fit, "residual": self.residual,
                "converged": self.converged}


def _model(tau, A, nu, gam):
    return A * np.cos(nu * tau) * np.exp(-gam * tau)


def fit_two_time(tau, series, oscillating: bool = True, snap: bool = True) -> TwoTimeFit:
    """Fit ``Re Z(tau) = A cos(nu tau) exp(-gamma tau)`` by nonlinear least squares.

    The starting frequency is the peak of the discrete spectrum, the starting
    decay rate the slope of the log envelope.  ``nu`` is reported as 0 when
    below the resolution ``2 pi / (tau span)``.  ``oscillating=False`` fits a
    pure exponential.
    """
    tau = np.asarray(tau, dtype=float)
    y = np.real(np.asarray(series))
    if tau.size < 40:
        raise ValueError("need at least 40 samples")
    span = tau[-1] - tau[0]
    resolution = 2 * np.pi / span
    A0 = y[0] if y[0] != 0 else np.max(np.abs(y))
    env = np.abs(y) + 1e-300
    good = env > 1e-8 * np.max(env)
    slope = np.polyfit(tau[good], np.log(env[good]), 1)[0] if good.sum() > 2 else -1.0
    g0 = max(-slope, 1e-6)
    if oscillating:
        nfft = 8 * tau.size
        spec = np.abs(np.fft.rfft(y, nfft))
        freqs = np.fft.rfftfreq(nfft, d=tau[1] - tau[0]) * 2 * np.pi
        nu0 = float(freqs[np.argmax(spec)])
        cands = [nu0, 0.0] if nu0 > 0 else [0.0]
        best = None
        for nu_start in cands:
            try:
                popt, _ = optimize.curve_fit(_model, tau, y, p0=[A0, nu_start, g0], maxfev=20000,
                                             bounds=([-np.inf, 0.0, 0.0], [np.inf, np.inf, np.inf]))
            except (RuntimeError, ValueError) as exc:
                msg = str(exc)
                continue
            res = float(np.linalg.norm(_model(tau, *popt) - y))
            if best is None or res < best[1]:
                best = (popt, res)
        if best is None:
            return TwoTimeFit(np.nan, np.nan, np.nan, np.inf, False, msg)
        (A, nu, gam), res = best
    else:
        try:
            popt, _ = optimize.curve_fit(lambda t, A, g: A * np.exp(-g * t), tau, y, p0=[A0, g0], maxfev=20000)
        except RuntimeError as exc:
            return TwoTimeFit(np.nan, np.nan, np.nan, np.inf, False, str(exc))
        A, gam = popt
        nu = 0.0
        res = float(np.linalg.norm(A * np.exp(-gam * tau) - y))
    if snap and abs(nu) < resolution:
        nu = 0.0
    return TwoTimeFit(float(A), float(abs(nu)), float(max(gam, 0.0)), res)


@dataclass
class FrequencyHistogram:
    centers: np.ndarray
    counts: np.ndarray
    nus: np.ndarray
    entrained_fraction: float


def frequency_histogram(fits, bins: int = 20, range_=None) -> FrequencyHistogram:
    """Histogram of fitted frequencies; the entrained fraction is the share with ``nu = 0``."""
    nus = np.array([ft.nu for ft in fits if ft.converged], dtype=float)
    if nus.size == 0:
        raise ValueError("no converged fits")
    counts, edges = np.histogram(nus, bins=bins, range=range_)
    return FrequencyHistogram(0.5 * (edges[1:] + edges[:-1]), counts, nus, float(np.mean(nus == 0.0)))


# -- quantum Fisher information ------------------------------------------------------

def collective_spin_ops(n: int):
    """Dense ``J_x, J_y, J_z`` with ``J_k = sum_a sigma^k_a / 2``."""
    from . import spins

    sm = spins.collective_lowering(n).toarray()
    jx = 0.5 * (sm + sm.conj().T)
    jy = 0.5j * (sm - sm.conj().T)   # sigma^y = i(s- - s+) with s+ = |up><down|
    jz = 0.5 * np.diag(n - 2.0 * spins.site_bits(n).sum(axis=1))
    return jx, jy, jz


def qfi_pure(psi, ops) -> float:
    """Average over ``ops`` of ``4 Var(J)`` for a normalised pure state."""
    psi = np.asarray(psi)
    out = 0.0
    for J in ops:
        v = J @ psi
        m = np.vdot(psi, v)
        out += 4 * np.real(np.vdot(v, v) - m * np.conj(m))
    return float(out / len(ops))


def qfi_mixed(rho, ops, eps: float = 1e-12, pos_tol: float = 1e-8) -> float:
    """Spectral formula ``2 sum (l_i - l_j)^2 |<i|J|j>|^2 / (l_i + l_j)`` averaged over ``ops``."""
    rho = 0.5 * (np.asarray(rho) + np.asarray(rho).conj().T)
    lam, vecs = np.linalg.eigh(rho)
    if lam[0] < -pos_tol:
        raise ValueError(f"density matrix not positive (min eigenvalue {lam[0]:.3e})")
    lam = np.clip(lam, 0.0, None)
    s = lam[:, None] + lam[None, :]
    d = (lam[:, None] - lam[None, :]) ** 2
    w = np.where(s > eps, d / np.where(s > eps, s, 1.0), 0.0)
    out = 0.0
    for J in ops:
        Jm = vecs.conj().T @ J @ vecs
        out += 2 * np.sum(w * np.abs(Jm) ** 2)
    return float(out / len(ops))


def witness_bounds(n: int):
    """``(2N/3, (N^2 + 2N)/3)``: separable bound and absolute ceiling of the averaged QFI."""
    return 2 * n / 3, (n * n + 2 * n) / 3


def carrier_frequency(tau, series, floor: float = 1e-3) -> float:
    """Phase slope of a complex correlation over the part above ``floor * |series(0)|``."""
    tau = np.asarray(tau, dtype=float)
    z = np.asarray(series, dtype=complex)
    amp = np.abs(z)
    good = np.flatnonzero(amp > floor * amp[0])
    if good.size < 3:
        return 0.0
    stop = good[-1] + 1
    ph = np.unwrap(np.angle(z[:stop]))
    return float(np.polyfit(tau[:stop], ph, 1)[0])


def golden_maximize(fun, lo: float, hi: float, n_scan: int = 9, xtol: float = 1e-2):
    """Coarse scan on ``[lo, hi]`` followed by a golden-section search around the best point.

    Returns ``(x_best, f_best)``.
    """
    xs = np.linspace(lo, hi, n_scan)
    vals = [fun(x) for x in xs]
    i = int(np.argmax(vals))
    if i == 0 or i == n_scan - 1:
        return float(xs[i]), float(vals[i])
    r = optimize.minimize_scalar(lambda x: -fun(x), bracket=(xs[i - 1], xs[i], xs[i + 1]), method="golden",
                                 options={"xtol": xtol / max(abs(xs[i]), 1e-12)})
    if -r.fun >= vals[i]:
        return float(r.x), float(-r.fun)
    return float(xs[i]), float(vals[i])
