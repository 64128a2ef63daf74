import numba as nb
import numpy as np


@nb.njit(cache=True)
def trace_purity(f):
    """
    Purity Tr[rho^2] / Tr[rho]^2 of the reduced state rho = f f^dagger, by explicit summation.

    Parameters
    ----------
    f: np.ndarray
        Complex matrix of joint amplitude values, rows indexing the first photon

    Returns
    -------
    purity: float

    Notes
    -----
    The reduced density matrix is built element by element, rho_qq' = sum_r f_qr conj(f_q'r), and Tr[rho^2] is the
    sum of |rho_qq'|^2. This costs O(n^3) and serves as an independent check on the SVD-based purity.
    """
    n_rows, n_cols = f.shape
    rho = np.zeros((n_rows, n_rows), dtype=np.complex128)
    for q in range(n_rows):
        for qq in range(n_rows):
            acc = 0.0 + 0.0j
            for r in range(n_cols):
                acc += f[q, r] * np.conj(f[qq, r])
            rho[q, qq] = acc

    trace = 0.0
    for q in range(n_rows):
        trace += rho[q, q].real

    trace_sq = 0.0
    for q in range(n_rows):
        for qq in range(n_rows):
            trace_sq += rho[q, qq].real ** 2 + rho[q, qq].imag ** 2

    return trace_sq / trace**2


@nb.njit(cache=True)
def contract_loops(f_jsa, f_jca, weight):
    """
    Contract two kernels over their shared index with an explicit triple loop.

    Computes out[s, c] = sum_i f_jsa[s, i] f_jca[i, c] * weight, with a fixed summation order.
    """
    n_s, n_i = f_jsa.shape
    n_c = f_jca.shape[1]
    out = np.zeros((n_s, n_c), dtype=np.complex128)
    for s in range(n_s):
        for c in range(n_c):
            acc = 0.0 + 0.0j
            for i in range(n_i):
                acc += f_jsa[s, i] * f_jca[i, c]
            out[s, c] = acc * weight
    return out


@nb.njit(cache=True)
def exchange_overlap(f):
    """
    Overlap |sum_qr f_qr conj(f_rq)| and intensity norm sum_qr |f_qr|^2 of a square matrix, by explicit summation.
    """
    n = f.shape[0]
    overlap = 0.0 + 0.0j
    norm = 0.0
    for q in range(n):
        for r in range(n):
            overlap += f[q, r] * np.conj(f[r, q])
            norm += f[q, r].real ** 2 + f[q, r].imag ** 2
    return abs(overlap), norm
