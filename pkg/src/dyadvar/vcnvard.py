"""Gibbs sampler for the model with random-walk coefficients on a subset of columns.

Observation: ``Y_t = Z1_t beta1 + Z2_t beta2_t + eps_t``, ``eps_t ~ N(0, s2_eps I)``.
State: ``beta2_t = beta2_{t-1} + u_t``, ``u_t ~ N(0, s2_u I)`` for ``t = 2..T``.
Priors are flat on ``beta1`` and ``beta2_1`` and ``1/s2`` on both variances.

Time indices in the public API are 1-based (``t = 1..T``) to match the model.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from . import diagnostics
from .design import DesignSplit, RegressionData, make_split
from .nvard import NvardPosterior, fit_from_data, point_estimates

log = logging.getLogger(__name__)

RATE_FLOOR = 1e-300
DIVERGENCE_FACTOR = 1e12
SCHEMES = ("blocked", "single")


class GibbsDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GibbsConfig:
    chain_length: int = 300_000
    burn_in: int = 180_000
    thin: int = 10
    seed: int = 0
    n_chains: int = 1
    scheme: str = "blocked"  # "blocked": (beta1, beta2_1..T) drawn jointly; "single": one block at a time

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not 0 <= self.burn_in < self.chain_length:
            raise ValueError("burn_in must satisfy 0 <= burn_in < chain_length")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.n_retained < 100:
            raise ValueError(f"only {self.n_retained} draws would be retained; need at least 100")

    @property
    def n_retained(self) -> int:
        return (self.chain_length - self.burn_in) // self.thin


@dataclass(frozen=True)
class VcnvardData:
    """Split design with the cross products the conditionals need."""

    Z1: np.ndarray  # (T, r, K1)
    Z2: np.ndarray  # (T, r, m)
    Y: np.ndarray  # (T, r)
    split: DesignSplit
    Z1tZ1: np.ndarray = field(init=False, repr=False)
    Z1tY: np.ndarray = field(init=False, repr=False)
    Z2tZ2: np.ndarray = field(init=False, repr=False)
    Z2tY: np.ndarray = field(init=False, repr=False)
    Z1tZ2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Z1, Z2, Y = self.Z1, self.Z2, self.Y
        object.__setattr__(self, "Z1tZ1", np.einsum("trk,trl->kl", Z1, Z1))
        object.__setattr__(self, "Z1tY", np.einsum("trk,tr->k", Z1, Y))
        object.__setattr__(self, "Z2tZ2", np.einsum("trk,trl->tkl", Z2, Z2))
        object.__setattr__(self, "Z2tY", np.einsum("trk,tr->tk", Z2, Y))
        object.__setattr__(self, "Z1tZ2", np.einsum("trk,trl->tkl", Z1, Z2))

    @classmethod
    def from_regression(cls, data: RegressionData, split: DesignSplit | Sequence[int | str]) -> "VcnvardData":
        if not isinstance(split, DesignSplit):
            split = make_split(data.column_labels, split)
        Z1, Z2 = split.split(data.Z)
        return cls(Z1, Z2, np.asarray(data.Y, dtype=float), split)

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def m(self) -> int:
        return self.Z2.shape[2]

    @property
    def k1(self) -> int:
        return self.Z1.shape[2]

    @property
    def n_obs(self) -> int:
        return self.Y.size


@dataclass(frozen=True)
class GibbsState:
    sigma2_eps: float
    sigma2_u: float
    beta1: np.ndarray  # (K1,)
    beta2: np.ndarray  # (T, m); row t-1 holds beta2_t

    def replace(self, **changes) -> "GibbsState":
        fields = dict(sigma2_eps=self.sigma2_eps, sigma2_u=self.sigma2_u, beta1=self.beta1, beta2=self.beta2)
        fields.update(changes)
        return GibbsState(**fields)


def init_state(nvard_fit: NvardPosterior, split: DesignSplit, T: int) -> GibbsState:
    """Flat start at the closed-form fit; deterministic."""
    mu = nvard_fit.mu
    if mu.shape[0] != split.K:
        raise ValueError("posterior and split disagree on K")
    _, sigma2 = point_estimates(nvard_fit)
    varying = mu[list(split.varying_columns)]
    return GibbsState(
        sigma2_eps=float(sigma2),
        sigma2_u=0.01 * (1.0 + float(varying @ varying) / split.m),
        beta1=mu[list(split.constant_columns)].copy(),
        beta2=np.tile(varying, (T, 1)),
    )


def residuals(state: GibbsState, data: VcnvardData) -> np.ndarray:
    return data.Y - data.Z1 @ state.beta1 - np.einsum("trm,tm->tr", data.Z2, state.beta2)


# --- full conditionals: each returns the parameters the sampler draws from ---


def sigma2_eps_conditional(state: GibbsState, data: VcnvardData) -> tuple[float, float]:
    """Inverse-gamma ``(shape, rate)``."""
    e = residuals(state, data)
    return data.n_obs / 2.0, 0.5 * float(np.sum(e * e))


def sigma2_u_conditional(state: GibbsState) -> tuple[float, float]:
    T, m = state.beta2.shape
    if T < 2:
        raise ValueError("the state variance needs T >= 2")
    d = np.diff(state.beta2, axis=0)
    return m * (T - 1) / 2.0, 0.5 * float(np.sum(d * d))


def _beta1_terms(state: GibbsState, data: VcnvardData) -> tuple[np.ndarray, np.ndarray]:
    A = data.Z1tZ1 / state.sigma2_eps
    B = (data.Z1tY - np.einsum("tkm,tm->k", data.Z1tZ2, state.beta2)) / state.sigma2_eps
    return A, B


def beta1_conditional(state: GibbsState, data: VcnvardData) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian ``(mean, precision)``."""
    A, B = _beta1_terms(state, data)
    return _solve_spd(A, B, "beta1"), A


def _beta2_terms(state: GibbsState, data: VcnvardData, t: int) -> tuple[np.ndarray, np.ndarray]:
    T, m = state.beta2.shape
    if not 1 <= t <= T:
        raise IndexError(f"t={t} outside 1..{T}")
    s = t - 1
    A = data.Z2tZ2[s] / state.sigma2_eps
    B = (data.Z2tY[s] - data.Z1tZ2[s].T @ state.beta1) / state.sigma2_eps
    neighbours = 0
    if t > 1:
        B = B + state.beta2[s - 1] / state.sigma2_u
        neighbours += 1
    if t < T:
        B = B + state.beta2[s + 1] / state.sigma2_u
        neighbours += 1
    A = A + (neighbours / state.sigma2_u) * np.eye(m)
    return A, B


def beta2_conditional(state: GibbsState, data: VcnvardData, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian ``(mean, precision)`` of ``beta2_t`` given everything else."""
    A, B = _beta2_terms(state, data, t)
    return _solve_spd(A, B, f"beta2_{t}"), A


def _beta2_shared_terms(state: GibbsState, data: VcnvardData) -> tuple[np.ndarray, np.ndarray]:
    A = data.Z2tZ2.sum(axis=0) / state.sigma2_eps
    B = (data.Z2tY.sum(axis=0) - np.einsum("tkm,k->m", data.Z1tZ2, state.beta1)) / state.sigma2_eps
    return A, B


def beta2_shared_conditional(state: GibbsState, data: VcnvardData) -> tuple[np.ndarray, np.ndarray]:
    """Conditional of a single ``beta2`` shared by every ``t`` (constant-coefficient reduction)."""
    A, B = _beta2_shared_terms(state, data)
    return _solve_spd(A, B, "beta2"), A


def _joint_terms(state: GibbsState, data: VcnvardData) -> tuple[np.ndarray, np.ndarray]:
    """Precision and linear term of ``(beta1, beta2_1, d_2, ..., d_T)`` stacked, ``d_t = beta2_t - beta2_{t-1}``.

    In increment coordinates the random-walk penalty is diagonal, so the
    factorization stays stable even when ``s2_u`` is tiny relative to ``s2_eps``.
    """
    k1, m, T = data.k1, data.m, data.T
    D = k1 + T * m
    # reverse cumulative sums: increment s loads on every t >= s
    G22 = np.cumsum(data.Z2tZ2[::-1], axis=0)[::-1]
    G12 = np.cumsum(data.Z1tZ2[::-1], axis=0)[::-1]
    g2 = np.cumsum(data.Z2tY[::-1], axis=0)[::-1]
    A = np.zeros((D, D))
    B = np.empty(D)
    A[:k1, :k1] = data.Z1tZ1
    B[:k1] = data.Z1tY
    for s in range(T):
        a = k1 + s * m
        A[:k1, a : a + m] = G12[s]
        A[a : a + m, :k1] = G12[s].T
        B[a : a + m] = g2[s]
        for r in range(s, T):
            b = k1 + r * m
            A[a : a + m, b : b + m] = G22[r]
            A[b : b + m, a : a + m] = G22[r]
    A /= state.sigma2_eps
    B /= state.sigma2_eps
    idx = np.arange(k1 + m, D)
    A[idx, idx] += 1.0 / state.sigma2_u
    return A, B


def stack_coefficients(state: GibbsState) -> np.ndarray:
    """``(beta1, beta2_1, d_2, ..., d_T)`` in the coordinates of :func:`coefficients_conditional`."""
    return np.concatenate([state.beta1, state.beta2[0], np.diff(state.beta2, axis=0).ravel()])


def coefficients_conditional(state: GibbsState, data: VcnvardData) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian ``(mean, precision)`` of every coefficient jointly, in increment coordinates.

    The map to ``(beta1, beta2_1..beta2_T)`` is linear with unit Jacobian.
    """
    A, B = _joint_terms(state, data)
    return _solve_spd(A, B, "coefficients"), A


def _unstack(theta: np.ndarray, data: VcnvardData) -> tuple[np.ndarray, np.ndarray]:
    return theta[: data.k1], np.cumsum(theta[data.k1 :].reshape(data.T, data.m), axis=0)


def _shared_joint_terms(state: GibbsState, data: VcnvardData) -> tuple[np.ndarray, np.ndarray]:
    C = data.Z1tZ2.sum(axis=0)
    A = np.block([[data.Z1tZ1, C], [C.T, data.Z2tZ2.sum(axis=0)]]) / state.sigma2_eps
    B = np.concatenate([data.Z1tY, data.Z2tY.sum(axis=0)]) / state.sigma2_eps
    return A, B


def _cholesky(A: np.ndarray, name: str) -> np.ndarray:
    try:
        return linalg.cholesky(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"precision matrix of {name} is not positive definite") from exc


def _solve_spd(A: np.ndarray, B: np.ndarray, name: str) -> np.ndarray:
    return linalg.cho_solve((_cholesky(A, name), True), B, check_finite=False)


# --- samplers ---


def _draw_inv_gamma(shape: float, rate: float, rng, name: str) -> float:
    if rate <= 0:
        warnings.warn(f"{name}: conditional rate is {rate}; flooring at {RATE_FLOOR}", RuntimeWarning, stacklevel=3)
        rate = RATE_FLOOR
    return float(rate / rng.gamma(shape))


def _draw_gaussian(A: np.ndarray, B: np.ndarray, rng, name: str) -> np.ndarray:
    """Draw from ``N(A^{-1} B, A^{-1})`` with a single factorization of ``A``."""
    L = _cholesky(A, name)
    mean = linalg.cho_solve((L, True), B, check_finite=False)
    z = rng.standard_normal(B.shape[0])
    return mean + linalg.solve_triangular(L, z, lower=True, trans="T", check_finite=False)


def sample_sigma2_eps(state: GibbsState, data: VcnvardData, rng) -> float:
    shape, rate = sigma2_eps_conditional(state, data)
    return _draw_inv_gamma(shape, rate, rng, "sigma2_eps")


def sample_sigma2_u(state: GibbsState, rng) -> float:
    shape, rate = sigma2_u_conditional(state)
    return _draw_inv_gamma(shape, rate, rng, "sigma2_u")


def sample_beta1(state: GibbsState, data: VcnvardData, rng) -> np.ndarray:
    if data.k1 == 0:
        return state.beta1
    return _draw_gaussian(*_beta1_terms(state, data), rng, "beta1")


def sample_beta2_t(state: GibbsState, data: VcnvardData, t: int, rng) -> np.ndarray:
    return _draw_gaussian(*_beta2_terms(state, data, t), rng, f"beta2_{t}")


def sample_coefficients(state: GibbsState, data: VcnvardData, rng) -> tuple[np.ndarray, np.ndarray]:
    theta = _draw_gaussian(*_joint_terms(state, data), rng, "coefficients")
    return _unstack(theta, data)


def gibbs_sweep(
    state: GibbsState, data: VcnvardData, rng, constant_varying: bool = False, scheme: str = "blocked"
) -> GibbsState:
    """One fixed-scan sweep: ``s2_eps``, the coefficients, then ``s2_u``.

    Under ``scheme="single"`` the coefficients are drawn as ``beta1`` and
    then ``beta2_1..beta2_T`` in ascending ``t``; under ``"blocked"`` they
    are drawn in one joint Gaussian step, which removes the strong
    posterior correlation between the intercept and the lag columns from
    the scan. ``s2_u`` goes last: drawn first from a flat start its rate
    would be zero.

    With ``constant_varying`` the state variance is not updated and a single
    ``beta2`` shared by all ``t`` is drawn instead of the per-``t`` states,
    which reduces the sampler to the constant-coefficient posterior.
    """
    state = state.replace(sigma2_eps=sample_sigma2_eps(state, data, rng))
    if scheme == "blocked":
        if constant_varying:
            theta = _draw_gaussian(*_shared_joint_terms(state, data), rng, "coefficients")
            return state.replace(beta1=theta[: data.k1], beta2=np.tile(theta[data.k1 :], (data.T, 1)))
        beta1, beta2 = sample_coefficients(state, data, rng)
        state = state.replace(beta1=beta1, beta2=beta2)
        return state.replace(sigma2_u=sample_sigma2_u(state, rng))
    if scheme != "single":
        raise ValueError(f"scheme must be one of {SCHEMES}")
    state = state.replace(beta1=sample_beta1(state, data, rng))
    if constant_varying:
        shared = _draw_gaussian(*_beta2_shared_terms(state, data), rng, "beta2")
        return state.replace(beta2=np.tile(shared, (data.T, 1)))
    beta2 = state.beta2.copy()
    for t in range(1, data.T + 1):
        beta2[t - 1] = sample_beta2_t(state.replace(beta2=beta2), data, t, rng)
    state = state.replace(beta2=beta2)
    return state.replace(sigma2_u=sample_sigma2_u(state, rng))


def log_joint_vcnvard(data: VcnvardData, state: GibbsState) -> float:
    """Unnormalized log joint posterior of all parameters and states."""
    s2e, s2u = state.sigma2_eps, state.sigma2_u
    if s2e <= 0 or s2u <= 0:
        raise ValueError("variances must be positive")
    T, m = state.beta2.shape
    fitted = np.einsum("trk,k->tr", data.Z1, state.beta1) + np.einsum("trm,tm->tr", data.Z2, state.beta2)
    rss = float(np.sum((data.Y - fitted) ** 2))
    inc = float(np.sum((state.beta2[1:] - state.beta2[:-1]) ** 2))
    return (
        -np.log(s2e)
        - np.log(s2u)
        - (m * (T - 1) / 2.0) * np.log(s2u)
        - inc / (2.0 * s2u)
        - (data.n_obs / 2.0) * np.log(s2e)
        - rss / (2.0 * s2e)
    )


@dataclass
class VcnvardFit:
    """Retained draws (shape ``(n_chains, L, ...)``) and their plain averages."""

    split: DesignSplit
    config: GibbsConfig
    sigma2_eps_draws: np.ndarray
    sigma2_u_draws: np.ndarray
    beta1_draws: np.ndarray
    beta2_draws: np.ndarray
    initial: GibbsState
    constant_varying: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def sigma2_eps(self) -> float:
        return float(self.sigma2_eps_draws.mean())

    @property
    def sigma2_u(self) -> float:
        return float(self.sigma2_u_draws.mean())

    @property
    def beta1(self) -> np.ndarray:
        return self.beta1_draws.mean(axis=(0, 1))

    @property
    def beta2(self) -> np.ndarray:
        """Posterior means of ``beta2_1..beta2_T``, shape ``(T, m)``."""
        return self.beta2_draws.mean(axis=(0, 1))

    @property
    def T(self) -> int:
        return self.beta2_draws.shape[2]

    def scalar_chains(self) -> dict[str, np.ndarray]:
        """Every scalar quantity as a ``(n_chains, L)`` array, keyed by a readable name."""
        out = {"sigma2_eps": self.sigma2_eps_draws}
        if not self.constant_varying:
            out["sigma2_u"] = self.sigma2_u_draws
        for k, lab in enumerate(self.split.constant_labels):
            out[f"beta1[{lab}]"] = self.beta1_draws[:, :, k]
        T = self.T if not self.constant_varying else 1
        for t in range(T):
            for k, lab in enumerate(self.split.varying_labels):
                out[f"beta2[{lab},{t + 1}]"] = self.beta2_draws[:, :, t, k]
        return out

    def summary(self) -> dict[str, dict[str, float]]:
        return {
            name: {"mean": float(x.mean()), "sd": float(x.std(ddof=1)), **self.diagnostics.get(name, {})}
            for name, x in self.scalar_chains().items()
        }

    def fitted(self, data: VcnvardData) -> np.ndarray:
        """In-sample one-step fitted values ``Z1_t b1 + Z2_t b2_t``, shape ``(T, r)``."""
        return data.Z1 @ self.beta1 + np.einsum("trm,tm->tr", data.Z2, self.beta2)


def _compute_diagnostics(fit: VcnvardFit) -> dict:
    out = {}
    for name, x in fit.scalar_chains().items():
        out[name] = {"ess": diagnostics.effective_sample_size(x), "rhat": diagnostics.split_rhat(x)}
    return out


def run_gibbs(
    data: RegressionData | VcnvardData,
    split: DesignSplit | Sequence[int | str] | None,
    config: GibbsConfig,
    init: GibbsState | None = None,
    constant_varying: bool = False,
) -> VcnvardFit:
    """Run ``config.n_chains`` independent chains and keep every ``thin``-th post-burn-in draw."""
    if not isinstance(data, VcnvardData):
        if split is None:
            raise ValueError("a split is required for raw regression data")
        nvard_post = fit_from_data(data)
        data = VcnvardData.from_regression(data, split)
        if init is None:
            init = init_state(nvard_post, data.split, data.T)
    elif init is None:
        raise ValueError("init is required when passing prepared VcnvardData")
    if data.T < 2 and not constant_varying:
        raise ValueError("the time-varying model needs T >= 2")

    C, L = config.n_chains, config.n_retained
    s2e = np.empty((C, L))
    s2u = np.empty((C, L))
    b1 = np.empty((C, L, data.k1))
    b2 = np.empty((C, L, data.T, data.m))
    limit = DIVERGENCE_FACTOR * max(init.sigma2_eps, np.finfo(float).tiny)
    streams = np.random.SeedSequence(config.seed).spawn(C)
    for c, ss in enumerate(streams):
        rng = np.random.Generator(np.random.PCG64(ss))
        state = init
        kept = 0
        for it in range(config.chain_length):
            state = gibbs_sweep(state, data, rng, constant_varying, config.scheme)
            if state.sigma2_eps > limit:
                raise GibbsDivergenceError(
                    f"chain {c} diverged at iteration {it}: sigma2_eps={state.sigma2_eps:.3g} "
                    f"(initial {init.sigma2_eps:.3g})"
                )
            if it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0:
                s2e[c, kept] = state.sigma2_eps
                s2u[c, kept] = state.sigma2_u
                b1[c, kept] = state.beta1
                b2[c, kept] = state.beta2
                kept += 1
        log.debug("chain %d done: %d draws retained", c, kept)
    fit = VcnvardFit(data.split, config, s2e, s2u, b1, b2, init, constant_varying)
    fit.diagnostics = _compute_diagnostics(fit)
    return fit


def predict_vcnvard(fit: VcnvardFit, Z1_next: np.ndarray, Z2_next: np.ndarray) -> np.ndarray:
    """One-step forecast using the last state mean, since the random walk is a martingale."""
    Z1_next = np.asarray(Z1_next, dtype=float)
    Z2_next = np.asarray(Z2_next, dtype=float)
    b1, b2 = fit.beta1, fit.beta2[-1]
    if Z1_next.shape[-1] != b1.shape[0] or Z2_next.shape[-1] != b2.shape[0]:
        raise ValueError(
            f"design blocks have {Z1_next.shape[-1]}/{Z2_next.shape[-1]} columns, "
            f"fit expects {b1.shape[0]}/{b2.shape[0]}"
        )
    return Z1_next @ b1 + Z2_next @ b2
