import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from pytest import approx

from conftest import mc_z
from src.errors import InvalidArgumentError
from src.priors import (
    GaussianPrior,
    GmmPrior,
    benchmark_gaussian_2d,
    denoise,
    denoiser_matrix,
    exact_inpaint_posterior,
    gaussian_denoise,
    gmm_denoise,
    moments,
    random_gmm,
    random_spd,
    sample_prior,
)
from src.schedule import NoiseSchedule, ScheduleKind
from src.task import InpaintingTask

N_MC = 1_000_000


def snis(values: np.ndarray, log_w: np.ndarray):
    """Self-normalized importance estimate of E[values] and its standard error."""
    w = np.exp(log_w - log_w.max())
    values = values.reshape(len(w), -1)
    estimate = w @ values / w.sum()
    se = np.sqrt(w ** 2 @ (values - estimate) ** 2) / w.sum()
    return estimate, se


def forward_log_weights(x0: np.ndarray, x_t: np.ndarray, t: float, ns: NoiseSchedule) -> np.ndarray:
    alpha, sigma = float(ns.alpha(t)), float(ns.sigma(t))
    return -np.sum((x_t - alpha * x0) ** 2, axis=1) / (2.0 * sigma ** 2)


class TestGaussianDenoiser:
    def test_identity_at_zero(self, gaussian_2d, linear):
        x = np.array([0.3, -1.2])
        out = gaussian_denoise(gaussian_2d, x, 0.0, linear)
        assert np.array_equal(out.x0_hat, x)
        assert np.array_equal(out.x1_hat, np.zeros(2))

    def test_identity_prior_at_half(self, linear):
        prior = GaussianPrior(mean=np.zeros(3), cov=np.eye(3))
        assert denoiser_matrix(prior, 0.5, linear) == approx(np.eye(3))
        x = np.array([0.5, -1.0, 2.0])
        assert gaussian_denoise(prior, x, 0.5, linear).x0_hat == approx(x)

    def test_diagonal_example(self, linear):
        prior = GaussianPrior(mean=np.zeros(2), cov=np.diag([4.0, 1.0]))
        out = gaussian_denoise(prior, np.array([1.0, 1.0]), 0.5, linear)
        assert out.x0_hat == approx([1.6, 1.0])

    def test_matches_importance_sampling(self, linear):
        prior = GaussianPrior(mean=np.zeros(2), cov=np.diag([4.0, 1.0]))
        x_t = np.array([1.0, 1.0])
        x0 = sample_prior(prior, N_MC, np.random.default_rng(0))
        estimate, se = snis(x0, forward_log_weights(x0, x_t, 0.5, linear))
        exact = gaussian_denoise(prior, x_t, 0.5, linear).x0_hat
        assert np.all(np.abs(estimate - exact) <= mc_z(2) * se)

    def test_nonzero_mean(self, linear):
        prior = GaussianPrior(mean=np.array([1.0, -2.0]), cov=np.eye(2))
        # at t = 1 the state carries no signal and the denoiser returns the prior mean
        out = gaussian_denoise(prior, np.array([5.0, 5.0]), 1.0, linear)
        assert out.x0_hat == approx([1.0, -2.0])

    def test_batch_shape(self, gaussian_2d, vp):
        x = np.random.default_rng(1).standard_normal((7, 2))
        out = gaussian_denoise(gaussian_2d, x, 0.4, vp)
        assert out.x0_hat.shape == out.x1_hat.shape == (7, 2)
        assert out.x0_hat[3] == approx(gaussian_denoise(gaussian_2d, x[3], 0.4, vp).x0_hat)

    @settings(deadline=None, max_examples=200)
    @given(
        st.floats(1e-4, 1.0),
        st.sampled_from(list(ScheduleKind)),
        arrays(np.float64, 2, elements=st.floats(-50, 50)),
    )
    def test_reconstruction_identity(self, t, kind, x):
        ns = NoiseSchedule(kind)
        out = gaussian_denoise(benchmark_gaussian_2d(0.9), x, t, ns)
        rebuilt = float(ns.sigma(t)) * out.x1_hat + float(ns.alpha(t)) * out.x0_hat
        assert rebuilt == approx(x, rel=1e-9, abs=1e-9)

    @settings(deadline=None, max_examples=100)
    @given(
        st.floats(1e-3, 1.0),
        st.floats(-3.0, 3.0),
        arrays(np.float64, 2, elements=st.floats(-10, 10)),
        arrays(np.float64, 2, elements=st.floats(-10, 10)),
    )
    def test_affine_in_state(self, t, lam, a, b):
        linear = NoiseSchedule(ScheduleKind.LINEAR)
        prior = GaussianPrior(mean=np.array([0.5, -1.0]), cov=np.array([[2.0, 0.4], [0.4, 0.7]]))
        mixed = gaussian_denoise(prior, lam * a + (1 - lam) * b, t, linear).x0_hat
        combined = lam * gaussian_denoise(prior, a, t, linear).x0_hat + (1 - lam) * gaussian_denoise(prior, b, t, linear).x0_hat
        assert mixed == approx(combined, abs=1e-10)


class TestGmmDenoiser:
    def test_single_component_is_gaussian(self, linear):
        cov = np.array([[1.5, 0.3], [0.3, 0.8]])
        mean = np.array([0.2, -0.7])
        gmm = GmmPrior(weights=np.array([1.0]), means=mean[None], covs=cov[None])
        x = np.random.default_rng(2).standard_normal((5, 2))
        expected = gaussian_denoise(GaussianPrior(mean=mean, cov=cov), x, 0.35, linear).x0_hat
        assert gmm_denoise(gmm, x, 0.35, linear).x0_hat == approx(expected, abs=1e-12)

    def test_symmetric_mixture_at_origin(self, linear):
        cov = np.array([[0.5, 0.1], [0.1, 0.4]])
        gmm = GmmPrior(
            weights=np.array([0.5, 0.5]),
            means=np.array([[1.0, 2.0], [-1.0, -2.0]]),
            covs=np.stack([cov, cov]),
        )
        assert np.max(np.abs(gmm_denoise(gmm, np.zeros(2), 0.5, linear).x0_hat)) <= 1e-12

    @pytest.mark.parametrize("x", [-0.4, 0.3, 1.1])
    def test_matches_importance_sampling(self, linear, x):
        gmm = GmmPrior(
            weights=np.array([0.3, 0.7]),
            means=np.array([[-1.0], [2.0]]),
            covs=np.array([[[0.5]], [[0.3]]]),
        )
        x_t = np.array([x])
        x0 = sample_prior(gmm, N_MC, np.random.default_rng(3))
        estimate, se = snis(x0, forward_log_weights(x0, x_t, 0.5, linear))
        exact = gmm_denoise(gmm, x_t, 0.5, linear).x0_hat
        assert abs(estimate[0] - exact[0]) <= mc_z(3) * se[0]

    def test_small_time_returns_state(self, gmm_2d, linear):
        x = np.array([0.3, -0.2])
        assert gmm_denoise(gmm_2d, x, 1e-6, linear).x0_hat == approx(x, rel=1e-3)

    def test_far_state_stays_finite(self, gmm_2d, linear):
        out = gmm_denoise(gmm_2d, np.array([1e3, -1e3]), 1e-3, linear)
        assert np.all(np.isfinite(out.x0_hat))
        assert np.all(np.isfinite(out.x1_hat))

    def test_pure_noise_gives_mixture_mean(self, gmm_2d, vp):
        mean, _ = moments(gmm_2d)
        assert denoise(gmm_2d, np.array([3.0, 1.0]), 1.0, vp).x0_hat == approx(mean)


class TestPosterior:
    def test_standard_normal_example(self):
        prior = GaussianPrior(mean=np.zeros(2), cov=np.eye(2))
        task = InpaintingTask.from_masked(2, [1], np.array([1.0]), sigma_y=0.1)
        post = exact_inpaint_posterior(prior, task)
        assert post.mean == approx([1.0 / 1.01, 0.0])
        assert post.cov == approx(np.diag([0.01 / 1.01, 1.0]))

    def test_correlated_example(self, gaussian_2d, observe_first):
        post = exact_inpaint_posterior(gaussian_2d, observe_first)
        assert post.mean == approx([1.0 / 1.0001, 0.9 / 1.0001])
        assert post.cov[1, 1] == approx(1.0 - 0.81 / 1.0001)

    def test_uninformative_observation(self, gaussian_2d):
        task = InpaintingTask.from_masked(2, [1], np.array([3.0]), sigma_y=1e6)
        post = exact_inpaint_posterior(gaussian_2d, task)
        assert np.max(np.abs(post.mean - gaussian_2d.mean)) < 1e-4
        assert np.max(np.abs(post.cov - gaussian_2d.cov)) < 1e-4

    def test_nothing_observed(self, gmm_2d):
        task = InpaintingTask.from_masked(2, [0, 1], np.array([]))
        assert exact_inpaint_posterior(gmm_2d, task) is gmm_2d

    def test_conditioning_twice_tightens(self, gaussian_2d, observe_first):
        once = exact_inpaint_posterior(gaussian_2d, observe_first)
        twice = exact_inpaint_posterior(once, observe_first)
        assert twice.cov[0, 0] < once.cov[0, 0]

    def test_gmm_matches_importance_sampling(self, gmm_2d):
        task = InpaintingTask.from_masked(2, [1], np.array([1.0]), sigma_y=0.5)
        post = exact_inpaint_posterior(gmm_2d, task)
        assert isinstance(post, GmmPrior)
        assert post.weights.sum() == approx(1.0, abs=1e-12)

        x = sample_prior(gmm_2d, N_MC, np.random.default_rng(4))
        log_w = -((x[:, 0] - 1.0) ** 2) / (2.0 * 0.25)
        mean, cov = moments(post)
        centered = x - mean
        products = np.stack([centered[:, 0] ** 2, centered[:, 0] * centered[:, 1], centered[:, 1] ** 2], axis=1)
        z = mc_z(5)

        est_mean, se_mean = snis(x, log_w)
        assert np.all(np.abs(est_mean - mean) <= z * se_mean)
        est_cov, se_cov = snis(products, log_w)
        exact_cov = np.array([cov[0, 0], cov[0, 1], cov[1, 1]])
        assert np.all(np.abs(est_cov - exact_cov) <= z * se_cov)


class TestSampling:
    def test_gaussian_moments(self, gaussian_2d, moment_check):
        samples = sample_prior(gaussian_2d, 100_000, np.random.default_rng(5))
        moment_check(samples, gaussian_2d.mean, gaussian_2d.cov)

    def test_mixture_frequencies(self):
        weights = np.array([0.2, 0.5, 0.3])
        gmm = GmmPrior(weights=weights, means=np.array([[-100.0], [0.0], [100.0]]), covs=np.full((3, 1, 1), 0.01))
        n = 100_000
        labels = np.digitize(sample_prior(gmm, n, np.random.default_rng(6))[:, 0], [-50.0, 50.0])
        freq = np.bincount(labels, minlength=3) / n
        assert np.all(np.abs(freq - weights) <= mc_z(3) * np.sqrt(weights * (1 - weights) / n))

    def test_mixture_moments(self):
        gmm = GmmPrior(weights=np.array([0.25, 0.75]), means=np.array([[-1.0], [3.0]]), covs=np.array([[[0.5]], [[2.0]]]))
        mean, cov = moments(gmm)
        assert mean == approx([2.0])
        # E[x^2] = 0.25 (0.5 + 1) + 0.75 (2 + 9)
        assert cov == approx([[0.375 + 8.25 - 4.0]])

    def test_same_seed_same_draws(self, gmm_2d):
        a = sample_prior(gmm_2d, 50, np.random.default_rng(7))
        b = sample_prior(gmm_2d, 50, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_needs_positive_count(self, gaussian_2d):
        with pytest.raises(InvalidArgumentError):
            sample_prior(gaussian_2d, 0, np.random.default_rng(0))


class TestConstruction:
    @pytest.mark.parametrize("d", [1, 2, 5])
    def test_random_spd_spectrum(self, d):
        cov = random_spd(d, np.random.default_rng(d), 0.1, 2.0)
        eigs = np.linalg.eigvalsh(cov)
        assert np.array_equal(cov, cov.T)
        assert eigs.min() >= 0.1 - 1e-10
        assert eigs.max() <= 2.0 + 1e-10

    def test_random_gmm_is_valid(self):
        gmm = random_gmm(3, 4, np.random.default_rng(8))
        assert (gmm.k, gmm.d) == (4, 3)
        assert gmm.weights.sum() == approx(1.0, abs=1e-12)

    def test_rejects_indefinite_cov(self):
        with pytest.raises(InvalidArgumentError):
            GaussianPrior(mean=np.zeros(2), cov=np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_rejects_bad_weights(self):
        with pytest.raises(InvalidArgumentError):
            GmmPrior(weights=np.array([0.5, 0.6]), means=np.zeros((2, 1)), covs=np.ones((2, 1, 1)))

    def test_rejects_mismatched_mean(self):
        with pytest.raises(InvalidArgumentError):
            GaussianPrior(mean=np.zeros(3), cov=np.eye(2))
