"""Independent oracles used to derive expected values in the tests.

These stay deliberately naive (nested loops, direct sums) and independent
of the library's FFT/vectorized implementations they are used to check.
"""

import numpy as np


def direct_channel(tx, echoes, symbol_rate):
    """Brute-force per-echo superposition (no noise)."""
    tx = np.asarray(tx)
    n = tx.shape[0]
    out = np.zeros_like(tx)
    for echo in echoes:
        for i in range(n):
            k = i - echo.delay
            if k >= 0:
                phasor = np.exp(1j * echo.doppler * i / symbol_rate)
                out[i] += echo.jones @ tx[k] * phasor
    return out


def ambiguity_scan(tx, rx, delta_range, nu_grid, symbol_rate):
    """Cross-channel correlation score over an explicit (delay, Doppler) grid.

    score[d, v] = sum_{p,q} | sum_n conj(tx[n-d, p] e^{j nu n T}) rx[n, q] |^2
    """
    tx = np.asarray(tx)
    rx = np.asarray(rx)
    n = tx.shape[0]
    t = np.arange(n) / symbol_rate
    score = np.zeros((len(delta_range), len(nu_grid)))
    for di, d in enumerate(delta_range):
        shifted = np.zeros_like(tx)
        shifted[d:] = tx[:n - d]
        for vi, nu in enumerate(nu_grid):
            atom = shifted * np.exp(1j * nu * t)[:, None]
            corr = np.conj(atom).T @ rx  # (p, q)
            score[di, vi] = float(np.sum(np.abs(corr) ** 2))
    return score


def central_difference(fun, x0, eps=1e-6):
    """Central finite-difference gradient of a scalar function of a complex
    array, packed like the analytic gradients (d/dRe + j d/dIm)."""
    x0 = np.asarray(x0, dtype=np.complex128)
    grad = np.zeros_like(x0)
    flat = x0.ravel()
    gflat = grad.ravel()
    for idx in range(flat.size):
        for part, delta in ((0, eps), (1, 1j * eps)):
            orig = flat[idx]
            flat[idx] = orig + delta
            fp = fun(x0)
            flat[idx] = orig - delta
            fm = fun(x0)
            flat[idx] = orig
            d = (fp - fm) / (2 * eps)
            gflat[idx] += d if part == 0 else 1j * d
    return grad
