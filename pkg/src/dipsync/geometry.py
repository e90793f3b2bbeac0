"""Dipole arrays and the dissipative/coherent coupling matrices between them.

All rates are expressed in units of the single-emitter decay rate Gamma.
Positions are stored in units of the lattice spacing ``a``; the dimensionless
separation entering the kernels is ``zeta = 2*pi*(a/lambda)*|r_a - r_b|``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC_ANGLE = float(np.arccos(1.0 / np.sqrt(3.0)))

# Below this separation the combination sin/z^3 - cos/z^2 loses digits to
# cancellation, so it is evaluated from its power series instead.
ZETA_SERIES = 0.5
_SERIES_TERMS = 12


class GeometryError(ValueError):
    """Raised for invalid lattice or coupling specifications."""


@dataclass
class DipoleArray:
    """A set of identical, parallel two-level dipoles.

    Parameters
    ----------
    positions : ndarray, shape (N, 3)
        Site coordinates in units of the lattice spacing.
    spacing_over_lambda : float
        Lattice spacing divided by the transition wavelength.
    orientation : ndarray, shape (3,)
        Common dipole direction (normalised on construction).
    detunings : ndarray, shape (N,)
        Static detunings in units of Gamma.
    gamma : float
        Single-emitter decay rate (1 in natural units).
    """

    positions: np.ndarray
    spacing_over_lambda: float = 0.1
    orientation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    detunings: np.ndarray | None = None
    gamma: float = 1.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.shape[1] != 3:
            raise GeometryError("positions must have shape (N, 3)")
        n = self.positions.shape[0]
        o = np.asarray(self.orientation, dtype=float)
        norm = np.linalg.norm(o)
        if o.shape != (3,) or norm == 0:
            raise GeometryError("orientation must be a non-zero 3-vector")
        self.orientation = o / norm
        if self.detunings is None:
            self.detunings = np.zeros(n)
        self.detunings = np.asarray(self.detunings, dtype=float)
        if self.detunings.shape != (n,):
            raise GeometryError(f"expected {n} detunings, got {self.detunings.shape}")
        if self.spacing_over_lambda <= 0:
            raise GeometryError("spacing_over_lambda must be positive")
        if n > 1:
            d = self.distances()
            if np.any(d[~np.eye(n, dtype=bool)] <= 0):
                raise GeometryError("two dipoles share a position")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def zeta(self) -> np.ndarray:
        """Pairwise ``2*pi*(a/lambda)*r`` (zero on the diagonal)."""
        return 2 * np.pi * self.spacing_over_lambda * self.distances()

    def pair_angles(self) -> np.ndarray:
        """Angle between the dipole axis and each separation vector."""
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        d = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(d, 1.0)
        c = np.abs(diff @ self.orientation) / d
        return np.arccos(np.clip(c, 0.0, 1.0))


@dataclass
class LatticeSpec:
    """Regular chain (``dim=1``) or square lattice (``dim=2``)."""

    n_sites: int | Sequence[int]
    dim: int = 1
    spacing_over_lambda: float = 0.1
    theta: float = 0.0
    detunings: Sequence[float] | None = None


def orientation_from_angle(theta: float, phi: float = 0.0) -> np.ndarray:
    """Unit vector at polar angle ``theta`` from the chain (x) axis."""
    return np.array([np.cos(theta), np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi)])


def build_lattice(spec: LatticeSpec) -> DipoleArray:
    """Place dipoles on a 1D chain along x or a 2D square lattice in the xy plane."""
    if spec.dim == 1:
        n = int(spec.n_sites if np.isscalar(spec.n_sites) else spec.n_sites[0])
        if n < 1:
            raise GeometryError("need at least one site")
        pos = np.zeros((n, 3))
        pos[:, 0] = np.arange(n)
    elif spec.dim == 2:
        if np.isscalar(spec.n_sites):
            side = int(round(np.sqrt(spec.n_sites)))
            if side * side != spec.n_sites:
                raise GeometryError("2D lattice needs a square site count or (nx, ny)")
            nx = ny = side
        else:
            nx, ny = (int(v) for v in spec.n_sites)
        if nx < 1 or ny < 1:
            raise GeometryError("need at least one site")
        gx, gy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
        pos = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(nx * ny)])
    else:
        raise GeometryError(f"unsupported lattice dimension {spec.dim}")
    det = None if spec.detunings is None else np.asarray(spec.detunings, dtype=float)
    return DipoleArray(pos, spec.spacing_over_lambda, orientation_from_angle(spec.theta), det)


def _series_coeffs(n_terms):
    # (sin z - z cos z)/z^3 = sum_j (-1)^j 2(j+1) z^(2j) / (2j+3)!
    from math import factorial
    return np.array([(-1) ** j * 2.0 * (j + 1) / factorial(2 * j + 3) for j in range(n_terms)])


_HF_COEFFS = _series_coeffs(_SERIES_TERMS)


def _h_f_series(z):
    z2 = z * z
    out = np.zeros_like(z)
    for c in _HF_COEFFS[::-1]:
        out = out * z2 + c
    return out


def _h_f_direct(z):
    return np.sin(z) / z**3 - np.cos(z) / z**2


def _h_f(z):
    """``sin z / z^3 - cos z / z^2`` with a series branch for small ``z``."""
    z = np.asarray(z, dtype=float)
    small = z < ZETA_SERIES
    out = np.empty_like(z)
    out[small] = _h_f_series(z[small])
    zl = z[~small]
    out[~small] = _h_f_direct(zl)
    return out


def _h_g(z):
    """``cos z / z^3 + sin z / z^2`` written without cancellation."""
    z = np.asarray(z, dtype=float)
    return (np.cos(z) + z * np.sin(z)) / z**3


def angular_factors(theta):
    """Return ``(sin^2 theta, 3 cos^2 theta - 1)``.

    The second factor is snapped to exactly zero within a few ulp of the
    magic angle so that the near-field terms vanish identically there.
    """
    theta = np.asarray(theta, dtype=float)
    c = np.cos(theta)
    s2 = np.sin(theta) ** 2
    p2 = 3.0 * c * c - 1.0
    p2 = np.where(np.abs(p2) <= 8 * np.finfo(float).eps, 0.0, p2)
    return s2, p2


def kernel_f(zeta, theta, gamma: float = 1.0):
    """Dissipative dipole coupling ``f(zeta, theta)``.

    Tends to ``gamma`` as ``zeta -> 0`` for every orientation.
    """
    zeta = np.asarray(zeta, dtype=float)
    if np.any(zeta <= 0):
        raise GeometryError("kernel_f requires zeta > 0")
    s2, p2 = angular_factors(theta)
    return 1.5 * gamma * (s2 * np.sin(zeta) / zeta + p2 * _h_f(zeta))


def kernel_g(zeta, theta, gamma: float = 1.0):
    """Coherent (exchange) dipole coupling ``g(zeta, theta)``."""
    zeta = np.asarray(zeta, dtype=float)
    if np.any(zeta <= 0):
        raise GeometryError("kernel_g requires zeta > 0")
    s2, p2 = angular_factors(theta)
    return -1.5 * gamma * (s2 * np.cos(zeta) / zeta + p2 * _h_g(zeta))


@dataclass
class Dipolar:
    """Couplings from the free-space dipole kernels."""


@dataclass
class Collective:
    """All-to-all couplings ``f_ab = f_eff / N``, ``g_ab = 0`` for ``a != b``.

    ``diagonal="gamma"`` keeps ``f_aa = Gamma``; this matrix is indefinite
    once ``f_eff / N > Gamma``.  ``diagonal="additive"`` uses
    ``f_aa = Gamma + f_eff / N``, i.e. independent decay plus a collective
    channel of rate ``f_eff / N``, which is always positive semidefinite.
    """

    f_eff: float
    diagonal: str = "gamma"


@dataclass
class PowerLaw:
    """``f_ab = prefactor * (1 / r_ab)^alpha`` with ``r`` in lattice units, ``g = 0``."""

    alpha: float
    prefactor: float = 0.25


@dataclass
class CouplingMatrices:
    f: np.ndarray
    g: np.ndarray
    gamma: float = 1.0

    @property
    def n(self) -> int:
        return self.f.shape[0]

    @property
    def f_eff(self) -> float:
        """``sum_{a != b} f_ab / (N - 1)``."""
        return _off_diagonal_sum(self.f) / max(self.n - 1, 1)

    @property
    def g_eff(self) -> float:
        return _off_diagonal_sum(self.g) / max(self.n - 1, 1)

    def pair_f(self) -> np.ndarray:
        """``f`` with the diagonal removed."""
        out = self.f.copy()
        np.fill_diagonal(out, 0.0)
        return out

    def pair_g(self) -> np.ndarray:
        out = self.g.copy()
        np.fill_diagonal(out, 0.0)
        return out

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.f)[0])


def _off_diagonal_sum(m):
    return float(m.sum() - np.trace(m))


def coupling_matrices(array: DipoleArray, mode=None) -> CouplingMatrices:
    """Build the symmetric ``f`` and ``g`` matrices for ``array``.

    Parameters
    ----------
    array : DipoleArray
    mode : Dipolar, Collective or PowerLaw, optional
        Defaults to :class:`Dipolar`.
    """
    mode = Dipolar() if mode is None else mode
    n = array.n
    gamma = array.gamma
    off = ~np.eye(n, dtype=bool)
    f = np.zeros((n, n))
    g = np.zeros((n, n))
    if isinstance(mode, Dipolar):
        z = array.zeta()
        th = array.pair_angles()
        f[off] = kernel_f(z[off], th[off], gamma)
        g[off] = kernel_g(z[off], th[off], gamma)
        np.fill_diagonal(f, gamma)
    elif isinstance(mode, Collective):
        c = mode.f_eff / n
        f[off] = c
        if mode.diagonal == "gamma":
            np.fill_diagonal(f, gamma)
        elif mode.diagonal == "additive":
            np.fill_diagonal(f, gamma + c)
        else:
            raise GeometryError(f"unknown collective diagonal {mode.diagonal!r}")
    elif isinstance(mode, PowerLaw):
        r = array.distances()
        f[off] = mode.prefactor * gamma * r[off] ** (-mode.alpha)
        np.fill_diagonal(f, gamma)
    else:
        raise GeometryError(f"unknown coupling mode {mode!r}")
    f = 0.5 * (f + f.T)
    g = 0.5 * (g + g.T)
    return CouplingMatrices(f, g, gamma)


def write_matrix_csv(path, m) -> None:
    """Row-major CSV with 17 significant digits (round-trips doubles)."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in m:
            w.writerow([f"{v:.17g}" for v in row])


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(Path(path), delimiter=",", ndmin=2)


def read_detunings(path) -> np.ndarray:
    """One detuning per line; blank lines and ``#`` comments are skipped."""
    vals = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            vals.append(float(line))
    return np.array(vals)
