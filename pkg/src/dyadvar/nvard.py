"""Closed-form posterior of the constant-coefficient model under flat/Jeffreys priors.

With ``p(beta) ∝ 1`` and ``p(sigma2) ∝ 1/sigma2`` the coefficient marginal is a
multivariate t with ``v = N - K`` degrees of freedom, location ``mu`` (the
least-squares solution) and scale ``(q / v) S_ZZ^{-1}``; the noise variance
marginal is inverse gamma with shape ``v / 2`` and rate ``q / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg, stats

RCOND_MIN = 1e-12


class RankDeficiencyError(np.linalg.LinAlgError):
    """Raised when the cross-product matrix is singular or numerically meaningless."""

    def __init__(self, message: str, columns: Sequence[str] = ()):
        super().__init__(message)
        self.columns = tuple(columns)


@dataclass(frozen=True)
class SuffStats:
    S_ZZ: np.ndarray
    S_ZY: np.ndarray
    S_YY: float
    N: int

    @property
    def K(self) -> int:
        return self.S_ZY.shape[0]

    def __add__(self, other: "SuffStats") -> "SuffStats":
        if other.K != self.K:
            raise ValueError("cannot merge statistics with different K")
        return SuffStats(self.S_ZZ + other.S_ZZ, self.S_ZY + other.S_ZY, self.S_YY + other.S_YY, self.N + other.N)


def accumulate(designs: Iterable[np.ndarray], responses: Iterable[np.ndarray]) -> SuffStats:
    """Sum ``Z'Z``, ``Z'Y`` and ``Y'Y`` over time blocks."""
    total = None
    n_rows = None
    for Z, Y in zip(designs, responses, strict=True):
        Z = np.asarray(getattr(Z, "rows", Z), dtype=float)
        Y = np.asarray(Y, dtype=float)
        if Z.ndim != 2 or Y.ndim != 1 or Z.shape[0] != Y.shape[0]:
            raise ValueError(f"incompatible block shapes {Z.shape} and {Y.shape}")
        if n_rows is not None and (Z.shape[0] != n_rows or Z.shape[1] != total.K):
            raise ValueError("all time blocks must share the row and column counts")
        n_rows = Z.shape[0]
        block = SuffStats(Z.T @ Z, Z.T @ Y, float(Y @ Y), Z.shape[0])
        total = block if total is None else total + block
    if total is None:
        raise ValueError("at least one time block is required")
    return total


@dataclass(frozen=True)
class NvardPosterior:
    """Parameters of the closed-form posterior.

    ``Sigma`` is the scale matrix of the multivariate t, not a precision.
    """

    v: int
    mu: np.ndarray
    Sigma: np.ndarray
    a: float
    b: float
    q: float
    N: int
    column_labels: tuple[str, ...] = ()

    @property
    def K(self) -> int:
        return self.mu.shape[0]


def _check_conditioning(S: np.ndarray, labels: Sequence[str]):
    d = np.sqrt(np.diag(S))
    zero = np.flatnonzero(d == 0)
    if zero.size:
        names = [labels[c] if labels else str(c) for c in zero]
        raise RankDeficiencyError(f"all-zero design columns: {names}", names)
    C = S / np.outer(d, d)
    w, V = np.linalg.eigh(C)
    rcond = w[0] / w[-1] if w[-1] > 0 else 0.0
    if rcond < RCOND_MIN:
        null = V[:, 0]
        cols = np.flatnonzero(np.abs(null) > 0.1)
        names = [labels[c] if labels else str(c) for c in cols]
        raise RankDeficiencyError(
            f"design cross-product is singular or ill-conditioned (rcond={rcond:.3g}); "
            f"near-collinear columns: {names}",
            names,
        )


def fit_nvard(stats: SuffStats, column_labels: Sequence[str] = ()) -> NvardPosterior:
    K, N = stats.K, stats.N
    if N <= K:
        raise ValueError(f"need more observations than coefficients (N={N}, K={K})")
    _check_conditioning(stats.S_ZZ, column_labels)
    try:
        factor = linalg.cho_factor(stats.S_ZZ, lower=True)
        mu = linalg.cho_solve(factor, stats.S_ZY)
        S_inv = linalg.cho_solve(factor, np.eye(K))
    except linalg.LinAlgError:
        mu = np.linalg.lstsq(stats.S_ZZ, stats.S_ZY, rcond=None)[0]
        S_inv = np.linalg.pinv(stats.S_ZZ, hermitian=True)
    q = stats.S_YY - stats.S_ZY @ mu
    if q < 0:
        if q < -1e-8 * max(stats.S_YY, 1.0):
            raise AssertionError(f"negative residual sum of squares {q}")
        q = 0.0
    v = N - K
    Sigma = (q / v) * S_inv
    Sigma = 0.5 * (Sigma + Sigma.T)
    return NvardPosterior(v, mu, Sigma, v / 2.0, q / 2.0, float(q), N, tuple(column_labels))


def point_estimates(post: NvardPosterior) -> tuple[np.ndarray, float]:
    """Posterior means of the coefficients and of the noise variance."""
    if post.a <= 1:
        raise ValueError(f"posterior mean of sigma2 is undefined for shape a={post.a} <= 1")
    return post.mu.copy(), post.b / (post.a - 1.0)


def posterior_sd(post: NvardPosterior) -> np.ndarray:
    """Marginal posterior standard deviations of the coefficients (needs ``v > 2``)."""
    if post.v <= 2:
        raise ValueError("posterior variance needs v > 2")
    return np.sqrt(np.diag(post.Sigma) * post.v / (post.v - 2.0))


def credible_intervals(post: NvardPosterior, level: float = 0.95) -> np.ndarray:
    """Equal-tailed marginal intervals, shape ``(K, 2)``."""
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    half = stats.t.ppf(0.5 + level / 2.0, post.v) * np.sqrt(np.diag(post.Sigma))
    return np.column_stack([post.mu - half, post.mu + half])


def marginal_beta_pdf(post: NvardPosterior, k: int, x: np.ndarray) -> np.ndarray:
    return stats.t.pdf(x, post.v, loc=post.mu[k], scale=np.sqrt(post.Sigma[k, k]))


def marginal_sigma2_pdf(post: NvardPosterior, s: np.ndarray) -> np.ndarray:
    return stats.invgamma.pdf(s, post.a, scale=post.b)


def predict_nvard(post: NvardPosterior, Z_next) -> np.ndarray:
    Z = np.asarray(getattr(Z_next, "rows", Z_next), dtype=float)
    if Z.shape[-1] != post.K:
        raise ValueError(f"design has {Z.shape[-1]} columns, posterior has K={post.K}")
    return Z @ post.mu


def log_joint_posterior(data, beta: np.ndarray, sigma2) -> np.ndarray:
    """Unnormalized log posterior density of ``(beta, sigma2)``.

    ``data`` is either :class:`SuffStats` or a pair ``(Z, Y)`` of stacked raw
    arrays with shapes ``(N, K)`` and ``(N,)``. ``beta`` may carry trailing
    evaluation points, shape ``(K,)`` or ``(K, P)``; ``sigma2`` broadcasts
    against the points.
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    beta = np.asarray(beta, dtype=float)
    if isinstance(data, SuffStats):
        N = data.N
        quad = np.einsum("k...,kl,l...->...", beta, data.S_ZZ, beta)
        rss = data.S_YY - 2.0 * np.tensordot(data.S_ZY, beta, axes=1) + quad
    else:
        Z, Y = (np.asarray(a, dtype=float) for a in data)
        Z = Z.reshape(-1, Z.shape[-1])
        Y = Y.reshape(-1)
        N = Y.shape[0]
        resid = Y.reshape((N,) + (1,) * (beta.ndim - 1)) - np.tensordot(Z, beta, axes=1)
        rss = np.sum(resid * resid, axis=0)
    return -(N / 2.0 + 1.0) * np.log(sigma2) - rss / (2.0 * sigma2)


def fit_from_data(data) -> NvardPosterior:
    """Convenience: accumulate a :class:`~dyadvar.design.RegressionData` and fit."""
    return fit_nvard(accumulate(data.Z, data.Y), data.column_labels)
