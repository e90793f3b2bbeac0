"""Mean-field Bloch equations and the classical synchronization order parameter.

Conventions: each dipole carries a Bloch vector ``(Sx, Sy, Sz)`` with
``Sx + i*Sy = <sigma^->`` and ``Sz = <sigma^z>/2``.  In these variables the
transverse component obeys

    d s_a/dt = -(i delta_a + Q_a/2) s_a + Sz_a * sum_b (f_ab + i g_ab) s_b

with ``Q_a = Gamma_a + W``; the single-dipole phase rotates as ``-delta_a t``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize

from .geometry import CouplingMatrices


class MeanFieldError(RuntimeError):
    pass


@dataclass
class BlochState:
    """Cartesian Bloch vectors, one row ``(Sx, Sy, Sz)`` per dipole."""

    s: np.ndarray

    def __post_init__(self):
        self.s = np.atleast_2d(np.asarray(self.s, dtype=float))

    @property
    def n(self) -> int:
        return self.s.shape[0]

    @property
    def transverse(self) -> np.ndarray:
        return self.s[:, 0] + 1j * self.s[:, 1]

    @property
    def sperp(self) -> np.ndarray:
        return np.hypot(self.s[:, 0], self.s[:, 1])

    @property
    def phi(self) -> np.ndarray:
        return np.arctan2(self.s[:, 1], self.s[:, 0])

    @property
    def sz(self) -> np.ndarray:
        return self.s[:, 2]

    @classmethod
    def from_polar(cls, sperp, phi, sz) -> "BlochState":
        sperp, phi, sz = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (sperp, phi, sz)))
        return cls(np.column_stack([sperp * np.cos(phi), sperp * np.sin(phi), sz]))

    @classmethod
    def random_phases(cls, n, rng=None, eps=1e-3) -> "BlochState":
        """Uniform random phases, ``S_perp = (1 - eps)/2`` and ``Sz = 0``."""
        rng = np.random.default_rng(rng)
        return cls.from_polar(0.5 * (1 - eps), rng.uniform(0, 2 * np.pi, n), 0.0)


@dataclass
class MFParams:
    f: np.ndarray          # pair couplings, zero diagonal
    g: np.ndarray
    gamma_local: np.ndarray
    W: float
    detunings: np.ndarray

    @classmethod
    def from_couplings(cls, cm: CouplingMatrices, W, detunings=None) -> "MFParams":
        n = cm.n
        det = np.zeros(n) if detunings is None else np.asarray(detunings, dtype=float)
        return cls(cm.pair_f(), cm.pair_g(), np.diag(cm.f).copy(), float(W), det)


def _rhs(s, p: MFParams):
    sx, sy, sz = s[:, 0], s[:, 1], s[:, 2]
    t = sx + 1j * sy
    fs = p.f @ t
    gs = p.g @ t
    q = p.gamma_local + p.W
    dt = -(1j * p.detunings + 0.5 * q) * t + sz * (fs + 1j * gs)
    dz = (-p.gamma_local * (0.5 + sz) + p.W * (0.5 - sz)
          - np.real(t * np.conj(fs)) - np.imag(t * np.conj(gs)))
    return np.column_stack([dt.real, dt.imag, dz])


def mf_derivatives(state, params: MFParams) -> np.ndarray:
    """Time derivative of every Bloch vector, shape ``(N, 3)``."""
    s = state.s if isinstance(state, BlochState) else np.atleast_2d(state)
    return _rhs(s, params)


def polar_derivatives(state: BlochState, params: MFParams):
    """``(dSperp/dt, dphi/dt, dSz/dt)`` from the polar form; singular at ``S_perp = 0``."""
    sp, ph, sz = state.sperp, state.phi, state.sz
    dphi = ph[None, :] - ph[:, None]          # phi_b - phi_a
    c, s = np.cos(dphi), np.sin(dphi)
    f, g = params.f, params.g
    q = params.gamma_local + params.W
    coup = ((f * c - g * s) * sp[None, :]).sum(1)
    dsz = -params.gamma_local * (0.5 + sz) + params.W * (0.5 - sz) - sp * coup
    dsp = -0.5 * q * sp + sz * coup
    dph = -params.detunings + sz * ((f * s + g * c) * sp[None, :]).sum(1) / sp
    return dsp, dph, dsz


@dataclass
class OrderParameter:
    Z: float
    Phi: float
    omega_bar: float = float("nan")


def order_parameter(state) -> OrderParameter:
    s = state.s if isinstance(state, BlochState) else np.atleast_2d(state)
    m = np.mean(s[:, 0] + 1j * s[:, 1])
    return OrderParameter(float(abs(m)), float(np.angle(m)))


def collective_frequency(t, phi, tail=0.2) -> float:
    """Slope of the unwrapped collective phase over the last ``tail`` of a run."""
    t = np.asarray(t)
    k0 = int(np.floor(len(t) * (1 - tail)))
    k0 = min(k0, len(t) - 2)
    ph = np.unwrap(np.asarray(phi))
    return float(np.polyfit(t[k0:], ph[k0:], 1)[0])


@dataclass
class MFResult:
    t: np.ndarray
    states: np.ndarray           # (n_t, N, 3)
    Z: np.ndarray
    Phi: np.ndarray
    mean_sz: np.ndarray
    steady: bool
    stop_reason: str
    final_derivative: float
    omega_bar: float = float("nan")

    @property
    def final(self) -> BlochState:
        return BlochState(self.states[-1])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Z", "Phi", "mean_Sz"])
            for row in zip(self.t, self.Z, self.Phi, self.mean_sz):
                w.writerow([f"{v:.17g}" for v in row])


def integrate_mf(initial, params: MFParams, t_final=None, tol=1e-9, atol=1e-12,
                 n_samples=401, t_eval=None, steady_tol=1e-8, stop_at_steady=True,
                 method="DOP853") -> MFResult:
    """Integrate the Bloch equations from ``initial``.

    The run stops early once ``max |dS/dt| < steady_tol`` (when
    ``stop_at_steady``); otherwise at ``t_final``, which defaults to
    ``50 * max(1, 1/W)`` in units of ``1/Gamma``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    s0 = initial.s if isinstance(initial, BlochState) else np.atleast_2d(initial)
    n = s0.shape[0]
    if t_final is None:
        t_final = 50.0 * max(1.0, 1.0 / params.W if params.W > 0 else 1.0)
    if t_eval is None:
        t_eval = np.linspace(0.0, t_final, n_samples)

    def fun(_, y):
        return _rhs(y.reshape(n, 3), params).ravel()

    events = None
    if stop_at_steady:
        def steady(_, y):
            return np.max(np.abs(fun(_, y))) - steady_tol
        steady.terminal = True
        steady.direction = -1
        events = [steady]

    sol = integrate.solve_ivp(fun, (0.0, t_final), s0.ravel(), method=method, rtol=tol,
                              atol=atol, t_eval=t_eval, events=events)
    if sol.status < 0:
        raise MeanFieldError(f"integration failed: {sol.message}")
    ts = list(sol.t)
    ys = list(sol.y.T)
    reached = bool(stop_at_steady and sol.t_events and len(sol.t_events[0]))
    if reached and (not ts or ts[-1] < sol.t_events[0][0]):
        ts.append(sol.t_events[0][0])
        ys.append(sol.y_events[0][0])
    states = np.array(ys).reshape(len(ts), n, 3)
    m = np.mean(states[..., 0] + 1j * states[..., 1], axis=1)
    dfin = float(np.max(np.abs(fun(0, states[-1].ravel()))))
    res = MFResult(np.array(ts), states, np.abs(m), np.angle(m), states[..., 2].mean(1),
                   steady=dfin < steady_tol * 10, stop_reason="steady" if reached else "t_final",
                   final_derivative=dfin)
    if len(ts) > 5:
        res.omega_bar = collective_frequency(res.t, res.Phi)
    return res


# ----------------------------------------------------------------------------
# closed forms


def z_closed_form(f_eff, W, gamma=1.0):
    """Steady order parameter of identical, all-to-all coupled dipoles.

    Returns ``Z``; the collective frequency of this branch is zero.
    """
    f_eff = np.asarray(f_eff, dtype=float)
    W = np.asarray(W, dtype=float)
    rad = f_eff * (W - gamma) - (W + gamma) ** 2
    out = np.sqrt(np.clip(rad, 0.0, None)) / (np.sqrt(2.0) * f_eff)
    return out if out.ndim else float(out)


def z_lorentzian(f_eff, W, gamma=1.0, delta=0.0):
    """Steady order parameter for Lorentzian-distributed detunings of half-width ``delta``."""
    if np.any(np.asarray(delta) < 0):
        raise ValueError("delta must be non-negative")
    f_eff = np.asarray(f_eff, dtype=float)
    P = np.asarray(W) - gamma
    Q = np.asarray(W) + gamma
    rad = f_eff * P - Q**2 + 2 * delta**2 - 2 * delta * np.sqrt(np.clip(delta**2 + f_eff * P, 0, None))
    out = np.sqrt(np.clip(rad, 0.0, None)) / (np.sqrt(2.0) * f_eff)
    # beyond the critical width (or below threshold) only the trivial branch exists
    crit = critical_width(f_eff, W, gamma)
    out = np.where(np.asarray(delta) < crit, out, 0.0)
    return out if out.ndim else float(out)


def critical_width(f_eff, W, gamma=1.0):
    """Lorentzian half-width at which synchronization is lost, ``(f P - Q^2)/(2Q)``.

    Negative when the identical-dipole system is already unsynchronized.
    """
    P = np.asarray(W, dtype=float) - gamma
    Q = np.asarray(W, dtype=float) + gamma
    return (f_eff * P - Q**2) / (2 * Q)


def optimal_pump(f_eff, gamma=1.0):
    """Pump rate maximising :func:`z_closed_form` and the maximal ``Z^2``."""
    return f_eff / 2 - gamma, 0.125 - gamma / f_eff


def sync_thresholds(f_eff, gamma=1.0):
    """Roots in ``W`` of ``f_eff (W - Gamma) = (W + Gamma)^2`` (empty if none)."""
    b = f_eff - 2 * gamma
    disc = f_eff**2 - 8 * f_eff * gamma
    if disc < 0:
        return ()
    r = np.sqrt(disc)
    return ((b - r) / 2, (b + r) / 2)


def incoherent_growth_rate(f_eff, W, gamma=1.0, eps=1e-7) -> float:
    """Growth rate of a small in-phase coherence about the unsynchronized fixed point.

    Evaluated numerically from :func:`mf_derivatives` for a pair whose per-dipole
    coupling sum equals ``f_eff``.
    """
    f = np.array([[0.0, f_eff], [f_eff, 0.0]])
    p = MFParams(f, np.zeros((2, 2)), np.full(2, gamma), W, np.zeros(2))
    sz = (W - gamma) / (2 * (W + gamma))
    st = BlochState.from_polar([eps, eps], [0.0, 0.0], [sz, sz])
    d = mf_derivatives(st, p)
    return float(d[0, 0] / eps)


def threshold_by_bisection(f_eff, lo, hi, gamma=1.0, xtol=1e-12) -> float:
    """Locate a sign change of :func:`incoherent_growth_rate` in ``W`` between ``lo`` and ``hi``."""
    return optimize.brentq(lambda w: incoherent_growth_rate(f_eff, w, gamma), lo, hi, xtol=xtol)


# ----------------------------------------------------------------------------
# self-consistent steady state


@lru_cache(maxsize=8)
def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


@dataclass
class DetuningDistribution:
    """``kind`` is one of ``delta``, ``lorentzian``, ``uniform``, ``list``."""

    kind: str = "delta"
    width: float = 0.0
    values: np.ndarray | None = None
    center: float = 0.0

    def __post_init__(self):
        if self.kind not in ("delta", "lorentzian", "uniform", "list"):
            raise ValueError(f"unknown detuning distribution {self.kind!r}")
        if self.width < 0:
            raise ValueError("width must be non-negative")
        if self.kind == "list":
            if self.values is None or len(self.values) == 0:
                raise ValueError("list distribution needs values")
            self.values = np.asarray(self.values, dtype=float)

    def average(self, fn, n_nodes=400) -> float:
        """Average of the vectorised ``fn(delta)`` over the distribution.

        Continuous distributions use Gauss-Legendre quadrature; the Lorentzian
        is mapped to a finite interval through ``delta = center + width*tan(u)``,
        which turns ``p(delta) d(delta)`` into ``du/pi``.
        """
        if self.kind == "delta" or (self.kind in ("lorentzian", "uniform") and self.width == 0):
            return float(fn(np.array([self.center]))[0])
        if self.kind == "list":
            return float(np.mean(fn(self.values)))
        x, w = _gauss_legendre(n_nodes)
        if self.kind == "uniform":
            return float(0.5 * np.sum(w * fn(self.center + self.width * x)))
        u = 0.5 * np.pi * x
        return float(0.5 * np.sum(w * fn(self.center + self.width * np.tan(u))))

    def span(self) -> float:
        if self.kind == "list":
            return float(np.max(np.abs(self.values - self.center)))
        return self.width


@dataclass
class SelfConsistentResult:
    Z: float
    omega_bar: float
    roots: list = field(default_factory=list)
    multiple: bool = False
    residuals: tuple = (0.0, 0.0)


def _residuals(Z, wbar, f, g, W, gamma, dist: DetuningDistribution):
    P, Q = W - gamma, W + gamma
    F2 = f * f + g * g

    def denom(d):
        y = d + wbar
        return Q * (4 * y * y + 2 * F2 * Z * Z + Q * Q), y

    def r1(d):
        D, y = denom(d)
        return P * (f * Q + 2 * g * y) / D

    def r2(d):
        D, y = denom(d)
        return P * (g * Q - 2 * f * y) / D

    return dist.average(r1) - 1.0, dist.average(r2)


def self_consistent_solve(f_eff, g_eff, W, gamma=1.0, dist: DetuningDistribution | None = None,
                          n_scan=41, xtol=1e-14) -> SelfConsistentResult:
    """Solve the two self-consistency conditions for ``(Z, omega_bar)``.

    For each trial ``omega_bar`` the amplitude condition is solved for ``Z``
    by bracketing on ``(0, 1/2]``; ``omega_bar`` is then found from sign changes
    of the phase condition on a scan grid.  Returns the largest-``Z`` root.
    """
    dist = DetuningDistribution() if dist is None else dist
    f, g = float(f_eff), float(g_eff)

    def z_of(wbar):
        r0, _ = _residuals(0.0, wbar, f, g, W, gamma, dist)
        if r0 <= 0:
            return 0.0
        rhi, _ = _residuals(0.5, wbar, f, g, W, gamma, dist)
        if rhi >= 0:
            return 0.5
        return optimize.brentq(lambda z: _residuals(z, wbar, f, g, W, gamma, dist)[0], 0.0, 0.5,
                               xtol=xtol, rtol=4 * np.finfo(float).eps)

    def phase_res(wbar):
        z = z_of(wbar)
        return _residuals(z, wbar, f, g, W, gamma, dist)[1], z

    Q = W + gamma
    center = -dist.center + (g * Q / (2 * f) if f > 0 else 0.0)
    half = 2.0 * dist.span() + abs(g) * Q / max(f, 1e-300) + Q
    grid = center + np.linspace(-half, half, n_scan)
    vals = [phase_res(w) for w in grid]
    roots = []
    for i in range(len(grid)):
        if vals[i][0] == 0.0:
            roots.append((vals[i][1], grid[i]))
    for i in range(len(grid) - 1):
        a, b = vals[i][0], vals[i + 1][0]
        if a * b < 0:
            w = optimize.brentq(lambda x: phase_res(x)[0], grid[i], grid[i + 1], xtol=1e-14,
                                rtol=4 * np.finfo(float).eps)
            roots.append((z_of(w), w))
    if not roots:
        raise MeanFieldError("no root of the phase condition found in scan window; "
                             f"residual range [{min(v[0] for v in vals):.3g}, {max(v[0] for v in vals):.3g}]")
    roots.sort(key=lambda r: -r[0])
    nonzero = [r for r in roots if r[0] > 0]
    Z, wbar = roots[0]
    res = _residuals(Z, wbar, f, g, W, gamma, dist)
    return SelfConsistentResult(float(Z), float(wbar), roots, len(nonzero) > 1, res)
