"""Convergence diagnostics for scalar MCMC chains.

Both functions take an array of shape ``(n_chains, n_draws)``. Chains are
split in half before computing, so a single chain still yields a meaningful
scale-reduction value.
"""

from __future__ import annotations

import numpy as np


def _split(chains: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    half = x.shape[1] // 2
    if half < 2:
        raise ValueError("need at least 4 draws per chain")
    return np.concatenate([x[:, :half], x[:, -half:]], axis=0)


def split_rhat(chains: np.ndarray) -> float:
    """Potential scale reduction factor on split chains."""
    x = _split(chains)
    n = x.shape[1]
    W = x.var(axis=1, ddof=1).mean()
    B_over_n = x.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B_over_n == 0 else np.inf
    var_plus = (n - 1) / n * W + B_over_n
    return float(np.sqrt(var_plus / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    centered = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(centered, size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n]
    return acov / n


def effective_sample_size(chains: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone positive-sequence truncation."""
    x = _split(chains)
    m, n = x.shape
    acov = _autocov(x)
    W = acov[:, 0].mean() * n / (n - 1)
    if W == 0:
        return float(m * n)
    var_plus = W * (n - 1) / n + x.mean(axis=1).var(ddof=1) if m > 1 else W * (n - 1) / n
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums Gamma_k = rho_{2k} + rho_{2k+1}; stop at the first non-positive one
    total = 0.0
    prev = np.inf
    for k in range(0, n - 1, 2):
        g = rho[k] + rho[k + 1]
        if g <= 0:
            break
        g = min(g, prev)
        total += g
        prev = g
    tau = max(-1.0 + 2.0 * total, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def mc_standard_error(chains: np.ndarray) -> float:
    x = np.asarray(chains, dtype=float)
    return float(x.std(ddof=1) / np.sqrt(effective_sample_size(x)))
