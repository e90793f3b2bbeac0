"""Spin-1/2 operators on the ``2**N`` computational basis.

Basis states are bit strings with site 0 the most significant bit; bit 0 is
``|up>`` and bit 1 is ``|down>``, so ``|up...up>`` has index 0.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp


def site_bits(n: int) -> np.ndarray:
    """``bits[i, a]`` is 1 when site ``a`` of basis state ``i`` is down."""
    idx = np.arange(2**n)
    shifts = n - 1 - np.arange(n)
    return (idx[:, None] >> shifts[None, :]) & 1


@lru_cache(maxsize=64)
def _lowering(a: int, n: int) -> sp.csr_matrix:
    d = 2**n
    idx = np.arange(d)
    bit = 1 << (n - 1 - a)
    src = idx[(idx & bit) == 0]
    return sp.csr_matrix((np.ones(src.size), (src | bit, src)), shape=(d, d))


def sigma_minus(a: int, n: int) -> sp.csr_matrix:
    return _lowering(a, n).copy()


def sigma_plus(a: int, n: int) -> sp.csr_matrix:
    return _lowering(a, n).T.tocsr()


def sigma_z(a: int, n: int) -> sp.csr_matrix:
    return sp.diags(1.0 - 2.0 * site_bits(n)[:, a]).tocsr()


def excitation_number(n: int) -> np.ndarray:
    """Number of up spins in each basis state."""
    return n - site_bits(n).sum(axis=1)


def collective_lowering(n: int, weights=None) -> sp.csr_matrix:
    w = np.ones(n) if weights is None else np.asarray(weights)
    out = sp.csr_matrix((2**n, 2**n), dtype=complex)
    for a in range(n):
        out = out + w[a] * _lowering(a, n)
    return out.tocsr()


def hamiltonian(detunings, g) -> sp.csr_matrix:
    """``H = 1/2 sum_a delta_a sz_a + 1/2 sum_{a != b} g_ab s+_a s-_b``."""
    det = np.asarray(detunings, dtype=float)
    n = det.size
    bits = site_bits(n)
    h = sp.diags(0.5 * ((1.0 - 2.0 * bits) @ det)).astype(complex).tocsr()
    for a in range(n):
        for b in range(n):
            if a != b and g[a, b] != 0:
                h = h + 0.5 * g[a, b] * (sigma_plus(a, n) @ sigma_minus(b, n))
    return h.tocsr()


def decay_matrix(f) -> sp.csr_matrix:
    """``M = sum_{a,b} f_ab s+_a s-_b`` (Hermitian, includes the diagonal)."""
    n = f.shape[0]
    m = sp.csr_matrix((2**n, 2**n), dtype=complex)
    for a in range(n):
        for b in range(n):
            if f[a, b] != 0:
                m = m + f[a, b] * (sigma_plus(a, n) @ sigma_minus(b, n))
    return m.tocsr()
