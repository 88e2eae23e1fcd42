"""Synthetic panels from both models, plus brute-force checks of the estimation maths."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special, stats

from .design import LAG_COLUMNS, build_design, column_labels, make_split
from .dyad import CovariateTensor, DyadicPanel, WeightScheme, equal_weights, unvecd
from .nvard import fit_nvard, accumulate, log_joint_posterior
from .vcnvard import (
    GibbsState,
    VcnvardData,
    beta1_conditional,
    beta2_conditional,
    coefficients_conditional,
    stack_coefficients,
    log_joint_vcnvard,
    sigma2_eps_conditional,
    sigma2_u_conditional,
)


class ExplosiveProcessError(ValueError):
    pass


class OracleGridError(RuntimeError):
    pass


class ConditionalCheckError(AssertionError):
    pass


@dataclass
class CovariateSpec:
    name: str
    loc: float = 0.0
    scale: float = 1.0
    time_invariant: bool = False


@dataclass
class SimSpec:
    """Everything needed to generate one synthetic panel.

    Set ``beta`` for the constant-coefficient model, or ``beta1``,
    ``beta2_init`` and ``sigma2_u`` (with ``varying`` naming the Z2 columns)
    for the random-walk model. ``beta2_path`` pins the state path explicitly.
    """

    n: int
    T: int
    covariates: list[CovariateSpec] = field(default_factory=list)
    beta: list[float] | None = None
    sigma2_eps: float = 1.0
    beta1: list[float] | None = None
    beta2_init: list[float] | None = None
    sigma2_u: float = 0.0
    varying: list[str] = field(default_factory=lambda: ["intercept"])
    beta2_path: list[list[float]] | None = None
    y0_loc: float = 0.0
    y0_scale: float = 1.0
    seed: int = 0
    weights: WeightScheme | None = None

    def __post_init__(self):
        self.covariates = [c if isinstance(c, CovariateSpec) else CovariateSpec(**c) for c in self.covariates]
        if self.n < 3:
            raise ValueError("n must be >= 3")
        if self.T < 1:
            raise ValueError("T must be >= 1")

    @property
    def M(self) -> int:
        return len(self.covariates)

    @property
    def labels(self) -> tuple[str, ...]:
        return column_labels(CovariateTensor.empty(self.n, 1)) + tuple(c.name for c in self.covariates)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("weights")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimSpec":
        return cls(**d)


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("covariates", "y0", "noise", "state")
    return {k: np.random.default_rng(s) for k, s in zip(names, np.random.SeedSequence(seed).spawn(len(names)))}


def check_stability(beta: np.ndarray):
    """Heuristic guard: the six lag coefficients must have absolute sum below one."""
    s = float(np.sum(np.abs(np.asarray(beta)[list(LAG_COLUMNS)])))
    if s >= 1.0:
        raise ExplosiveProcessError(f"sum of absolute lag coefficients is {s:.4g} >= 1")


def _covariates(spec: SimSpec, rng: np.random.Generator) -> CovariateTensor:
    n, P = spec.n, spec.T + 1
    vals = np.zeros((P, n, n, spec.M))
    for m, c in enumerate(spec.covariates):
        if c.time_invariant:
            vals[:, :, :, m] = c.loc + c.scale * rng.standard_normal((n, n))
        else:
            vals[:, :, :, m] = c.loc + c.scale * rng.standard_normal((P, n, n))
    return CovariateTensor(vals, tuple(c.name for c in spec.covariates))


def _y0(spec: SimSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.n
    return unvecd(spec.y0_loc + spec.y0_scale * rng.standard_normal(n * n - n), n)


def _run_forward(spec: SimSpec, coef_at, X: CovariateTensor, y0: np.ndarray, noise_rng) -> DyadicPanel:
    weights = spec.weights if spec.weights is not None else equal_weights(spec.n)
    flows = np.empty((spec.T + 1, spec.n, spec.n))
    flows[0] = y0
    sd = np.sqrt(spec.sigma2_eps)
    for t in range(1, spec.T + 1):
        partial = DyadicPanel(flows[:t])
        Z = build_design(partial, weights, X, t).rows
        eps = noise_rng.standard_normal(spec.n * spec.n - spec.n)
        flows[t] = unvecd(Z @ coef_at(t) + sd * eps, spec.n)
    return DyadicPanel(flows)


def simulate_nvard(spec: SimSpec) -> tuple[DyadicPanel, CovariateTensor]:
    """Run the constant-coefficient model forward for ``t = 1..T``.

    Covariates are generated for ``t = 1..T+1`` so a forecast design exists.
    """
    if spec.beta is None:
        raise ValueError("spec.beta is required")
    beta = np.asarray(spec.beta, dtype=float)
    if beta.shape != (7 + spec.M,):
        raise ValueError(f"beta must have length K={7 + spec.M}")
    if spec.sigma2_eps < 0:
        raise ValueError("sigma2_eps must be >= 0")
    check_stability(beta)
    rng = _streams(spec.seed)
    X = _covariates(spec, rng["covariates"])
    y0 = _y0(spec, rng["y0"])
    return _run_forward(spec, lambda t: beta, X, y0, rng["noise"]), X


def state_path(spec: SimSpec) -> np.ndarray:
    """True ``beta2_1..beta2_T`` (shape ``(T, m)``) for a random-walk spec."""
    if spec.beta2_path is not None:
        path = np.asarray(spec.beta2_path, dtype=float)
        if path.shape[0] != spec.T:
            raise ValueError("beta2_path must have T rows")
        return path
    if spec.beta2_init is None:
        raise ValueError("beta2_init or beta2_path is required")
    if spec.sigma2_u < 0:
        raise ValueError("sigma2_u must be >= 0")
    init = np.asarray(spec.beta2_init, dtype=float)
    steps = np.sqrt(spec.sigma2_u) * _streams(spec.seed)["state"].standard_normal((spec.T - 1, init.shape[0]))
    return np.vstack([init, init + np.cumsum(steps, axis=0)])


def simulate_vcnvard(spec: SimSpec) -> tuple[DyadicPanel, CovariateTensor, np.ndarray]:
    """Run the random-walk-coefficient model forward; returns the true state path too."""
    if spec.beta1 is None:
        raise ValueError("spec.beta1 is required")
    if spec.sigma2_eps < 0:
        raise ValueError("sigma2_eps must be >= 0")
    split = make_split(spec.labels, spec.varying)
    path = state_path(spec)
    beta1 = np.asarray(spec.beta1, dtype=float)
    if beta1.shape != (len(split.constant_columns),) or path.shape[1] != split.m:
        raise ValueError("beta1/beta2 lengths do not match the varying columns")
    for row in path[:1]:
        check_stability(split.reassemble(beta1, row))
    rng = _streams(spec.seed)
    X = _covariates(spec, rng["covariates"])
    y0 = _y0(spec, rng["y0"])
    panel = _run_forward(spec, lambda t: split.reassemble(beta1, path[t - 1]), X, y0, rng["noise"])
    return panel, X, path


# --- brute-force posterior oracle ---


@dataclass
class BruteForceMarginals:
    beta_grids: dict[int, np.ndarray]
    beta_densities: dict[int, np.ndarray]
    sigma2_grid: np.ndarray | None
    sigma2_density: np.ndarray | None
    normalization_drift: dict[str, float]


def _gh_nodes(dim: int, points: int) -> tuple[np.ndarray, np.ndarray]:
    """Product Gauss-Hermite rule for weight ``exp(-|z|^2)``; nodes ``(dim, P)``."""
    z, w = np.polynomial.hermite.hermgauss(points)
    if dim == 0:
        return np.zeros((0, 1)), np.ones(1)
    grids = np.meshgrid(*([z] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids])
    weights = np.prod(np.stack([g.ravel() for g in wgrids]), axis=0)
    return nodes, weights


def _normalize(x: np.ndarray, f: np.ndarray, label: str, drift: dict, tol: float) -> np.ndarray:
    fine = integrate.simpson(f, x=x)
    coarse = integrate.simpson(f[::2], x=x[::2])
    rel = abs(fine - coarse) / fine
    drift[label] = float(rel)
    if not np.isfinite(rel) or rel > tol:
        raise OracleGridError(f"{label}: normalization changes by {rel:.3g} between grid resolutions")
    return f / fine


def brute_force_nvard_posterior(
    Z: np.ndarray,
    Y: np.ndarray,
    coords: Sequence[int] = (0,),
    n_grid: int = 201,
    n_sigma_grid: int = 801,
    gh_points: int = 3,
    sigma2: float | None = None,
    with_sigma2: bool = True,
    grid_tol: float = 0.01,
) -> BruteForceMarginals:
    """Marginal densities obtained by numerically integrating the joint log posterior.

    ``Z`` and ``Y`` are the stacked raw design and response. For each
    coefficient in ``coords`` the joint density is integrated over the other
    coefficients with a Gauss-Hermite product rule centred at the
    conditional least-squares point, and over ``sigma2`` on a log-spaced grid
    (skipped when ``sigma2`` is given). The ``beta`` grid spans six
    posterior standard deviations either side of the least-squares point.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, np.shape(Z)[-1])
    Y = np.asarray(Y, dtype=float).reshape(-1)
    N, K = Z.shape
    if N > 400 or K > 8:
        raise ValueError("brute-force posterior is only feasible for N <= 400 and K <= 8")
    data = (Z, Y)
    centre = np.linalg.lstsq(Z, Y, rcond=None)[0]
    H = Z.T @ Z
    rss_c = float(np.sum((Y - Z @ centre) ** 2))
    s_ref = rss_c / (N - K) if sigma2 is None else sigma2
    H_inv = np.linalg.inv(H)
    dof_inflate = np.sqrt((N - K) / (N - K - 2)) if sigma2 is None else 1.0

    if sigma2 is None:
        u = np.linspace(np.log(s_ref) - 6.0, np.log(s_ref) + 6.0, n_sigma_grid)
        s_grid = np.exp(u)
    else:
        u = None
        s_grid = np.array([sigma2])
    ref = float(log_joint_posterior(data, centre, s_ref))
    drift: dict[str, float] = {}

    def integrate_over(k_fixed: int | None, x: float | None) -> np.ndarray:
        """Integral of the joint density over the free coefficients, for every sigma2 in the grid."""
        free = [c for c in range(K) if c != k_fixed]
        if k_fixed is None:
            b = centre
        else:
            b = np.empty(K)
            b[k_fixed] = x
            r = Y - Z[:, k_fixed] * x
            b[free] = np.linalg.lstsq(Z[:, free], r, rcond=None)[0] if free else []
        Hf = H[np.ix_(free, free)]
        nodes, w = _gh_nodes(len(free), gh_points)
        if free:
            Lf = np.linalg.cholesky(Hf)
            offsets = np.linalg.solve(Lf.T, nodes)  # (F, P)
            log_det = -np.sum(np.log(np.diag(Lf)))
        else:
            offsets = nodes
            log_det = 0.0
        zz = np.sum(nodes * nodes, axis=0)
        out = np.empty(s_grid.shape[0])
        for a, s in enumerate(s_grid):
            scale = np.sqrt(2.0 * s)
            betas = np.repeat(b[:, None], w.shape[0], axis=1)
            betas[free] += scale * offsets
            lj = log_joint_posterior(data, betas, s) - ref + zz
            out[a] = np.exp(log_det + len(free) * np.log(scale) + special.logsumexp(lj, b=w))
        return out

    beta_grids, beta_dens = {}, {}
    for k in coords:
        sd = np.sqrt(s_ref * H_inv[k, k]) * dof_inflate
        xs = np.linspace(centre[k] - 6 * sd, centre[k] + 6 * sd, n_grid)
        f = np.empty(n_grid)
        for g, x in enumerate(xs):
            inner = integrate_over(k, x)
            f[g] = inner[0] if u is None else integrate.simpson(inner * s_grid, x=u)
        beta_grids[k] = xs
        beta_dens[k] = _normalize(xs, f, f"beta[{k}]", drift, grid_tol)

    s_dens = None
    if with_sigma2 and sigma2 is None:
        f = integrate_over(None, None)
        # density in sigma2 measure; integrate in log space
        fine = integrate.simpson(f * s_grid, x=u)
        coarse = integrate.simpson((f * s_grid)[::2], x=u[::2])
        rel = abs(fine - coarse) / fine
        drift["sigma2"] = float(rel)
        if rel > grid_tol:
            raise OracleGridError(f"sigma2: normalization changes by {rel:.3g} between grid resolutions")
        s_dens = f / fine
    return BruteForceMarginals(beta_grids, beta_dens, s_grid if sigma2 is None else None, s_dens, drift)


# --- full-conditional certification ---


def _ig_logpdf(x: float, shape: float, rate: float) -> float:
    return float(stats.invgamma.logpdf(x, shape, scale=rate))


def _gauss_logpdf(x: np.ndarray, mean: np.ndarray, precision: np.ndarray) -> float:
    return float(stats.multivariate_normal.logpdf(x, mean=mean, cov=np.linalg.inv(precision)))


def _random_state(centre: GibbsState, rng: np.random.Generator, T: int) -> GibbsState:
    m = centre.beta2.shape[1]
    steps = 0.2 * rng.standard_normal((T, m))
    steps[0] = 0.0
    return GibbsState(
        sigma2_eps=float(centre.sigma2_eps * np.exp(0.5 * rng.standard_normal())),
        sigma2_u=float(centre.sigma2_u * np.exp(0.5 * rng.standard_normal())),
        beta1=centre.beta1 + 0.1 * rng.standard_normal(centre.beta1.shape),
        beta2=centre.beta2 + 0.1 * rng.standard_normal(m) + np.cumsum(steps, axis=0),
    )


def conditional_ratio_check(
    data: VcnvardData,
    n_probes: int = 100,
    seed: int = 0,
    tol: float = 1e-8,
    perturbation: float = 0.3,
) -> dict[str, float]:
    """Compare joint log-density differences with claimed conditional log-density differences.

    For every probe a random state is drawn, each parameter block is moved
    to a random nearby value with everything else fixed, and the change in
    :func:`log_joint_vcnvard` is compared with the change in the log density
    of the conditional the sampler draws from (``coefficients`` is the joint
    block of ``beta1`` and every ``beta2_t``, in increment coordinates). Returns the largest absolute
    discrepancy per family; raises :class:`ConditionalCheckError` above ``tol``.
    """
    rng = np.random.default_rng(seed)
    K = data.split.K
    Zfull = data.split.reassemble(data.Z1, data.Z2)
    post = fit_nvard(accumulate(Zfull, data.Y))
    s2 = max(post.q / max(post.v, 1), 1e-3)
    varying = post.mu[list(data.split.varying_columns)]
    centre = GibbsState(s2, 0.05, post.mu[list(data.split.constant_columns)], np.tile(varying, (data.T, 1)))
    assert K == data.k1 + data.m

    worst = {"sigma2_eps": 0.0, "sigma2_u": 0.0, "beta1": 0.0, "beta2": 0.0, "coefficients": 0.0}

    def record(family: str, lj_a: float, lj_b: float, lc_a: float, lc_b: float):
        dev = abs((lj_a - lj_b) - (lc_a - lc_b))
        worst[family] = max(worst[family], dev)

    for _ in range(n_probes):
        st = _random_state(centre, rng, data.T)
        lj0 = log_joint_vcnvard(data, st)
        step = perturbation * rng.standard_normal()

        alt = st.replace(sigma2_eps=st.sigma2_eps * np.exp(step))
        a, b = sigma2_eps_conditional(st, data)
        record("sigma2_eps", log_joint_vcnvard(data, alt), lj0, _ig_logpdf(alt.sigma2_eps, a, b), _ig_logpdf(st.sigma2_eps, a, b))

        if data.T >= 2:
            alt = st.replace(sigma2_u=st.sigma2_u * np.exp(step))
            a, b = sigma2_u_conditional(st)
            record("sigma2_u", log_joint_vcnvard(data, alt), lj0, _ig_logpdf(alt.sigma2_u, a, b), _ig_logpdf(st.sigma2_u, a, b))

        if data.k1:
            alt = st.replace(beta1=st.beta1 + perturbation * rng.standard_normal(data.k1))
            mean, prec = beta1_conditional(st, data)
            record("beta1", log_joint_vcnvard(data, alt), lj0, _gauss_logpdf(alt.beta1, mean, prec), _gauss_logpdf(st.beta1, mean, prec))

        for t in range(1, data.T + 1):
            b2 = st.beta2.copy()
            b2[t - 1] += perturbation * rng.standard_normal(data.m)
            alt = st.replace(beta2=b2)
            mean, prec = beta2_conditional(st, data, t)
            record("beta2", log_joint_vcnvard(data, alt), lj0, _gauss_logpdf(b2[t - 1], mean, prec), _gauss_logpdf(st.beta2[t - 1], mean, prec))

        if data.T >= 2:
            alt = st.replace(
                beta1=st.beta1 + perturbation * rng.standard_normal(data.k1),
                beta2=st.beta2 + perturbation * rng.standard_normal(st.beta2.shape),
            )
            mean, prec = coefficients_conditional(st, data)
            record(
                "coefficients",
                log_joint_vcnvard(data, alt),
                lj0,
                _gauss_logpdf(stack_coefficients(alt), mean, prec),
                _gauss_logpdf(stack_coefficients(st), mean, prec),
            )

    bad = {k: v for k, v in worst.items() if v > tol}
    if bad:
        raise ConditionalCheckError(f"conditional-ratio deviation above {tol}: {bad}")
    return {k: float(v) for k, v in worst.items()}
