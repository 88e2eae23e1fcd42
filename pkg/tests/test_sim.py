import numpy as np
import pytest
from scipy import stats

from dyadvar import vcnvard
from dyadvar.design import build_design, make_split, regression_data
from dyadvar.dyad import equal_weights, vecd
from dyadvar.nvard import fit_from_data, marginal_beta_pdf, marginal_sigma2_pdf
from dyadvar.sim import (
    ConditionalCheckError,
    CovariateSpec,
    ExplosiveProcessError,
    OracleGridError,
    SimSpec,
    brute_force_nvard_posterior,
    conditional_ratio_check,
    simulate_nvard,
    simulate_vcnvard,
    state_path,
)
from dyadvar.vcnvard import VcnvardData

BETA = [0.5, 0.3, 0.1, 0.1, -0.1, 0.05, 0.1]


def test_intercept_only_fixed_point():
    beta = [2.5, 0, 0, 0, 0, 0, 0]
    panel, _ = simulate_nvard(SimSpec(n=4, T=3, beta=beta, sigma2_eps=0.0))
    for t in range(1, 4):
        np.testing.assert_array_equal(panel.response(t), 2.5)


def test_geometric_decay():
    beta = [0, 0.5, 0, 0, 0, 0, 0]
    panel, _ = simulate_nvard(SimSpec(n=3, T=4, beta=beta, sigma2_eps=0.0, y0_loc=1.0, y0_scale=0.0))
    for t in range(5):
        np.testing.assert_allclose(panel.response(t), 0.5**t)


def test_replay_consistency():
    spec = SimSpec(n=4, T=3, covariates=[CovariateSpec("x", 1.0, 2.0)], beta=BETA + [0.4], sigma2_eps=0.49, seed=8)
    panel, X = simulate_nvard(spec)
    assert X.periods == 4  # one extra period for forecasting
    noise_rng = np.random.default_rng(np.random.SeedSequence(8).spawn(4)[2])
    w = equal_weights(4)
    for t in range(1, 4):
        eps = noise_rng.standard_normal(12)
        expected = build_design(panel, w, X, t).rows @ np.array(spec.beta) + 0.7 * eps
        np.testing.assert_allclose(panel.response(t), expected, rtol=1e-12)


def test_simulation_is_seeded():
    a, _ = simulate_nvard(SimSpec(n=4, T=3, beta=BETA, seed=1))
    b, _ = simulate_nvard(SimSpec(n=4, T=3, beta=BETA, seed=1))
    c, _ = simulate_nvard(SimSpec(n=4, T=3, beta=BETA, seed=2))
    np.testing.assert_array_equal(a.flows, b.flows)
    assert not np.allclose(a.flows[1:], c.flows[1:], equal_nan=True)


def test_time_invariant_covariates():
    spec = SimSpec(n=4, T=3, covariates=[{"name": "d", "time_invariant": True}], beta=BETA + [1.0])
    _, X = simulate_nvard(spec)
    np.testing.assert_array_equal(X.values[0], X.values[-1])


def test_stability_guard():
    with pytest.raises(ExplosiveProcessError):
        simulate_nvard(SimSpec(n=3, T=2, beta=[0, 0.7, 0.3, 0.1, 0, 0, 0]))
    with pytest.raises(ValueError):
        simulate_nvard(SimSpec(n=3, T=2, beta=[0, 0.1]))


def test_zero_state_variance_reduces_to_constant_model():
    kw = dict(n=4, T=4, covariates=[{"name": "d"}], sigma2_eps=0.3, seed=5)
    beta = np.array(BETA + [-0.4])
    split = make_split(SimSpec(**kw).labels, ["intercept", "d"])
    vc_spec = SimSpec(
        **kw, beta1=list(beta[list(split.constant_columns)]), beta2_init=list(beta[[0, 7]]), sigma2_u=0.0, varying=["intercept", "d"]
    )
    a, Xa, path = simulate_vcnvard(vc_spec)
    b, Xb = simulate_nvard(SimSpec(**kw, beta=list(beta)))
    np.testing.assert_array_equal(path, np.tile(beta[[0, 7]], (4, 1)))
    np.testing.assert_allclose(a.flows, b.flows, rtol=1e-12, equal_nan=True)
    np.testing.assert_array_equal(Xa.values, Xb.values)


def test_noise_free_residual_is_zero_at_true_path():
    spec = SimSpec(n=4, T=5, beta1=[0.3, 0.1, 0.05, 0.05, 0.05, 0.05], beta2_init=[1.0], sigma2_u=0.2, sigma2_eps=0.0)
    panel, X, path = simulate_vcnvard(spec)
    data = VcnvardData.from_regression(regression_data(panel, equal_weights(4), X), ["intercept"])
    st = vcnvard.GibbsState(1.0, 1.0, np.array(spec.beta1), path)
    np.testing.assert_allclose(vcnvard.residuals(st, data), 0.0, atol=1e-12)


def test_state_path_random_walk_and_pinning():
    spec = SimSpec(n=3, T=6, beta1=[0] * 6, beta2_init=[1.0, 2.0], sigma2_u=0.5, varying=["intercept", "lag_self"], seed=3)
    path = state_path(spec)
    assert path.shape == (6, 2)
    np.testing.assert_array_equal(path[0], [1.0, 2.0])
    pinned = SimSpec(n=3, T=2, beta1=[0] * 6, beta2_path=[[1.0], [2.0]])
    np.testing.assert_array_equal(state_path(pinned), [[1.0], [2.0]])
    with pytest.raises(ValueError):
        state_path(SimSpec(n=3, T=3, beta1=[0] * 6, beta2_path=[[1.0], [2.0]]))


def test_spec_dict_roundtrip():
    spec = SimSpec(n=5, T=3, covariates=[CovariateSpec("d", 0.5, 2.0, True)], beta=BETA + [0.1], seed=4)
    again = SimSpec.from_dict(spec.to_dict())
    assert again == spec


def tiny_data(seed=0, n=3, T=3):
    panel, X = simulate_nvard(SimSpec(n=n, T=T, beta=BETA, sigma2_eps=0.5, seed=seed))
    return regression_data(panel, equal_weights(n), X)


def test_bruteforce_matches_conjugate_normal():
    # K = 1 with known variance: posterior of beta is N(Z'Y / Z'Z, s2 / Z'Z)
    rng = np.random.default_rng(2)
    Z = rng.normal(size=(15, 1))
    Y = 0.7 * Z[:, 0] + rng.normal(size=15)
    bf = brute_force_nvard_posterior(Z, Y, coords=(0,), sigma2=1.0, n_grid=101, with_sigma2=False)
    zz = float(Z[:, 0] @ Z[:, 0])
    ref = stats.norm(Z[:, 0] @ Y / zz, np.sqrt(1.0 / zz))
    np.testing.assert_allclose(bf.beta_densities[0], ref.pdf(bf.beta_grids[0]), atol=1e-6)
    assert bf.sigma2_density is None


def test_bruteforce_matches_closed_form():
    data = tiny_data()
    post = fit_from_data(data)
    bf = brute_force_nvard_posterior(data.Z, data.Y, coords=(1,), n_grid=101, n_sigma_grid=401)
    x = bf.beta_grids[1]
    assert np.max(np.abs(bf.beta_densities[1] - marginal_beta_pdf(post, 1, x))) < 1e-3
    assert np.max(np.abs(bf.sigma2_density - marginal_sigma2_pdf(post, bf.sigma2_grid))) < 1e-3


def test_bruteforce_sign_flip_symmetry():
    data = tiny_data(seed=3)
    Z = data.Z.reshape(-1, 7)
    Y = data.Y.reshape(-1)
    a = brute_force_nvard_posterior(Z, Y, coords=(0,), n_grid=41, n_sigma_grid=201, with_sigma2=False)
    # flipping only Y mirrors the marginal about zero
    b = brute_force_nvard_posterior(Z, -Y, coords=(0,), n_grid=41, n_sigma_grid=201, with_sigma2=False)
    np.testing.assert_allclose(b.beta_grids[0][::-1], -a.beta_grids[0], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(b.beta_densities[0][::-1], a.beta_densities[0], rtol=1e-8)
    # flipping both leaves the posterior unchanged
    c = brute_force_nvard_posterior(-Z, -Y, coords=(0,), n_grid=41, n_sigma_grid=201, with_sigma2=False)
    np.testing.assert_allclose(c.beta_densities[0], a.beta_densities[0], rtol=1e-8)


def test_bruteforce_grid_self_check():
    data = tiny_data()
    with pytest.raises(OracleGridError):
        brute_force_nvard_posterior(data.Z, data.Y, coords=(0,), n_grid=5, n_sigma_grid=21)
    with pytest.raises(ValueError):
        brute_force_nvard_posterior(np.zeros((500, 2)), np.zeros(500))


@pytest.mark.parametrize("varying", [["intercept"], ["intercept", "lag_self"]])
def test_conditional_ratio_passes(varying):
    data = VcnvardData.from_regression(tiny_data(T=4), varying)
    worst = conditional_ratio_check(data, n_probes=100)
    assert set(worst) == {"sigma2_eps", "sigma2_u", "beta1", "beta2", "coefficients"}
    assert max(worst.values()) < 1e-8


def test_conditional_ratio_zero_perturbation():
    data = VcnvardData.from_regression(tiny_data(T=4), ["intercept"])
    worst = conditional_ratio_check(data, n_probes=5, perturbation=0.0)
    assert all(v == 0.0 for v in worst.values())


def test_conditional_ratio_hand_instance():
    # n=3, T=2, m=1
    data = VcnvardData.from_regression(tiny_data(T=2), ["intercept"])
    assert data.m == 1 and data.T == 2
    assert max(conditional_ratio_check(data, n_probes=20).values()) < 1e-8


def test_conditional_ratio_catches_wrong_conditional(monkeypatch):
    data = VcnvardData.from_regression(tiny_data(T=4), ["intercept"])
    original = vcnvard.sigma2_u_conditional

    def wrong(state):
        shape, rate = original(state)
        return shape + 0.5, rate  # the shape the uncorrected display would suggest

    monkeypatch.setattr("dyadvar.sim.sigma2_u_conditional", wrong)
    with pytest.raises(ConditionalCheckError, match="sigma2_u"):
        conditional_ratio_check(data, n_probes=5)
