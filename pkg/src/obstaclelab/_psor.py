"""Compiled projected SOR sweeps over a CSR matrix."""

import numpy as np
from numba import njit


@njit(cache=True)
def psor_sweeps(indptr, indices, data, b, psi, u, omega, sweeps):
    """Run ``sweeps`` lexicographic projected SOR sweeps in place.

    Returns the largest nodal update of the last sweep.
    """
    n = b.shape[0]
    change = 0.0
    for _ in range(sweeps):
        change = 0.0
        for i in range(n):
            s = b[i]
            d = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j == i:
                    d = data[k]
                else:
                    s -= data[k] * u[j]
            new = (1.0 - omega) * u[i] + omega * s / d
            if new < psi[i]:
                new = psi[i]
            delta = abs(new - u[i])
            if delta > change:
                change = delta
            u[i] = new
    return change


def run_psor(matrix, b, psi, u0, omega, sweeps):
    """Convenience wrapper taking a scipy CSR matrix."""
    u = np.array(u0, dtype=float)
    change = psor_sweeps(matrix.indptr.astype(np.int64), matrix.indices.astype(np.int64),
                         matrix.data, np.asarray(b, dtype=float),
                         np.asarray(psi, dtype=float), u, float(omega), int(sweeps))
    return u, change
