import numpy as np
import pytest
from pytest import approx

from conftest import mc_z
from src.errors import InvalidArgumentError, UnsupportedMethodError
from src.guidance import ChainState, DelayedVariant, MethodKind, MethodSpec, StepContext, get_step, run_sampler
from src.guidance.steps import (
    ddim_step,
    ddnm_step,
    decoupled_log_potential,
    diffpir_step,
    ding_conditional,
    ding_delayed_step,
    ding_step,
    dps_analytic_step,
    dps_conditional,
    flowdps_step,
    guidance_weight,
    mcgdiff_step,
    pnpflow_step,
    replacement_step,
)
from src.oracle import ding_transition_moments, dps_transition_moments
from src.priors import GaussianPrior, denoiser_matrix, gaussian_denoise, random_gaussian, random_gmm, random_spd
from src.schedule import EtaKind, EtaSchedule, NoiseSchedule, ScheduleKind, make_grid
from src.task import InpaintingTask

N_CHAINS = 100_000

# Methods whose step equals the DDIM step when nothing is observed
REDUCE_TO_DDIM = [
    MethodKind.DING,
    MethodKind.DING_DELAYED,
    MethodKind.REPLACEMENT,
    MethodKind.MCGDIFF,
    MethodKind.FLOWDPS,
    MethodKind.DIFFPIR,
    MethodKind.DDNM,
]


def random_task(d: int, rng: np.random.Generator, sigma_y: float, allow_empty: bool = False) -> InpaintingTask:
    low = 0 if allow_empty else 1
    high = d + 1 if allow_empty else d
    n_observed = int(rng.integers(low, high)) if d > 1 or allow_empty else 1
    observed = rng.choice(d, size=n_observed, replace=False)
    masked = np.setdiff1d(np.arange(d), observed)
    return InpaintingTask.from_masked(d, masked, rng.standard_normal(n_observed), sigma_y=sigma_y)


def random_transition(rng: np.random.Generator):
    """(s, t) with 0.1 < s < t < 0.95 and an eta that is a random fraction of sigma_s."""
    s = float(rng.uniform(0.1, 0.8))
    t = float(min(s + rng.uniform(0.05, 0.15), 0.95))
    return s, t, EtaSchedule(EtaKind.MAX, scale=float(rng.uniform(0.2, 1.0)))


def one_step(step, prior, task, ns, es, x, s, t, kind, seed, params=None):
    ctx = StepContext.create(MethodSpec(kind, dict(params or {})), prior, task, ns, es)
    state = ChainState(x=np.array(x, dtype=float, copy=True), k=3)
    return step(state, s, t, ctx, np.random.default_rng(seed))


class TestCosts:
    @pytest.mark.parametrize("K", [2, 5, 25, 50])
    @pytest.mark.parametrize("kind", list(MethodKind))
    def test_declared_equals_counted(self, K, kind, gaussian_2d, observe_first, linear):
        spec = MethodSpec(kind)
        result = run_sampler(spec, gaussian_2d, observe_first, make_grid(K), linear, EtaSchedule(), np.random.default_rng(0), n=3)
        assert result.nfe == spec.nfe_total(K) == result.nfe_calls
        assert len(result.trajectory) == K - 1
        assert result.samples.shape == (3, 2)

    def test_ding_costs_49_at_25_steps(self):
        assert MethodSpec(MethodKind.DING).nfe_total(25) == 49
        assert MethodSpec(MethodKind.DING_DELAYED).nfe_total(25) == 25
        assert MethodSpec(MethodKind.DDIM).nfe_total(25) == 25


class TestDegenerateMask:
    def test_nothing_observed_reproduces_ddim(self):
        rng = np.random.default_rng(1)
        for case in range(100):
            d = int(rng.integers(1, 5))
            prior = random_gaussian(d, rng) if case % 2 else random_gmm(d, 3, rng)
            ns = NoiseSchedule(ScheduleKind(rng.choice(list(ScheduleKind))))
            es = EtaSchedule(EtaKind(rng.choice([k for k in EtaKind if k != EtaKind.ZERO])))
            K = int(rng.integers(3, 51))
            _, s, t = list(make_grid(K).steps())[int(rng.integers(0, K - 1))]
            task = InpaintingTask.from_masked(d, range(d), np.array([]))
            x = rng.standard_normal((4, d))
            seed = int(rng.integers(2 ** 31))

            expected = one_step(ddim_step, prior, task, ns, es, x, s, t, MethodKind.DDIM, seed).x
            for kind in REDUCE_TO_DDIM:
                got = one_step(get_step(kind), prior, task, ns, es, x, s, t, kind, seed).x
                assert np.array_equal(got, expected), (case, kind)


class TestDing:
    def test_guidance_weight_example(self):
        assert guidance_weight(0.1, 0.9, 0.01) == approx(0.01 / (0.01 + 0.81 * 1e-4))
        assert guidance_weight(0.1, 0.9, 0.01) == approx(0.991968, abs=1e-5)
        assert guidance_weight(0.0, 0.9, 0.01) == 0.0

    def test_uninformative_observation_is_ddim(self, linear):
        rng = np.random.default_rng(2)
        task = InpaintingTask.from_masked(3, [1], np.array([0.3, -0.4]), sigma_y=1e6)
        mu, x1 = rng.standard_normal((2, 3))
        mean, std = ding_conditional(mu, x1, 0.1, 0.5, task, linear)
        assert np.max(np.abs(mean - mu)) < 1e-3
        assert std == approx(np.full(3, 0.1), rel=1e-3)

    def test_one_step_law_matches_closed_form(self, linear, moment_check):
        rng = np.random.default_rng(3)
        z = mc_z(20 * 9)
        for _ in range(20):
            cov = random_spd(3, rng)
            prior = GaussianPrior(mean=np.zeros(3), cov=cov)
            task = random_task(3, rng, float(rng.uniform(0.05, 1.0)))
            s, t, es = random_transition(rng)
            x_t = rng.standard_normal(3)
            state = one_step(ding_step, prior, task, linear, es, np.tile(x_t, (N_CHAINS, 1)), s, t, MethodKind.DING, int(rng.integers(2 ** 31)))
            exact = ding_transition_moments(cov, x_t, task, s, t, linear, es=es)
            moment_check(state.x, exact.mean, exact.cov, z=z)

    def test_conditional_matches_importance_sampling(self, linear):
        rng = np.random.default_rng(4)
        for _ in range(10):
            d = int(rng.integers(2, 5))
            task = random_task(d, rng, float(rng.uniform(0.6, 1.0)))
            s = float(rng.uniform(0.2, 0.6))
            eta = float(rng.uniform(0.3, 0.7)) * s
            # masked coordinates keep the exact mean away from zero
            mu, x1 = 1.0 + 0.5 * rng.standard_normal((2, d))
            mean, std = ding_conditional(mu, x1, eta, s, task, linear)

            proposal = mu + eta * rng.standard_normal((1_000_000, d))
            log_w = decoupled_log_potential(proposal, x1, s, task, linear)
            w = np.exp(log_w - log_w.max())
            w /= w.sum()
            est_mean = w @ proposal
            est_var = w @ (proposal - est_mean) ** 2

            assert np.linalg.norm(est_mean - mean) <= 0.02 * np.linalg.norm(mean)
            assert est_var == approx(std ** 2, rel=0.05)

    def test_zero_eta_is_deterministic(self, gaussian_2d, observe_first, linear):
        x = np.array([[0.4, -0.3]])
        a = one_step(ding_step, gaussian_2d, observe_first, linear, EtaSchedule(EtaKind.ZERO), x, 0.5, 0.75, MethodKind.DING, 0)
        b = one_step(ding_step, gaussian_2d, observe_first, linear, EtaSchedule(EtaKind.ZERO), x, 0.5, 0.75, MethodKind.DING, 1)
        assert np.array_equal(a.x, b.x)
        assert a.record.flags == ["deterministic-ding-step"]

    def test_rejects_final_target(self, gaussian_2d, observe_first, linear):
        with pytest.raises(InvalidArgumentError):
            one_step(ding_step, gaussian_2d, observe_first, linear, EtaSchedule(), np.zeros((1, 2)), 0.0, 0.25, MethodKind.DING, 0)

    def test_record(self, gaussian_2d, observe_first, linear):
        state = one_step(ding_step, gaussian_2d, observe_first, linear, EtaSchedule(), np.zeros((5, 2)), 0.5, 0.75, MethodKind.DING, 0)
        assert state.nfe_count == 2
        assert state.k == 2
        assert state.record.eta == approx(0.25)
        assert state.record.gamma == approx(guidance_weight(0.25, 0.5, 0.01))


class TestDelayedDing:
    def test_caches_noise_prediction(self, gaussian_2d, observe_first, linear):
        x = np.array([[0.4, -0.3]])
        state = one_step(ding_delayed_step, gaussian_2d, observe_first, linear, EtaSchedule(), x, 0.5, 0.75, MethodKind.DING_DELAYED, 0)
        expected = gaussian_denoise(gaussian_2d, x, 0.75, linear).x1_hat
        assert state.cached_noise_pred == approx(expected)
        assert state.nfe_count == 1

    def test_variants_differ(self, gaussian_2d, observe_first, linear):
        x = np.array([[0.4, -0.3]])
        args = (gaussian_2d, observe_first, linear, EtaSchedule(), x, 0.5, 0.75, MethodKind.DING_DELAYED, 0)
        printed = one_step(ding_delayed_step, *args)
        corrected = one_step(ding_delayed_step, *args, params={"variant": DelayedVariant.CORRECTED})
        assert not np.array_equal(printed.x, corrected.x)
        # masked coordinate is untouched by the proxy
        assert printed.x[0, 1] == corrected.x[0, 1]

    def test_unknown_variant(self):
        with pytest.raises(InvalidArgumentError):
            MethodSpec(MethodKind.DING_DELAYED, {"variant": "shifted"})


class TestReplacement:
    def test_observed_marginal(self, gaussian_2d, linear):
        task = InpaintingTask.from_masked(2, [1], np.array([1.0]), sigma_y=0.01)
        x = np.tile([0.2, 0.7], (N_CHAINS, 1))
        state = one_step(replacement_step, gaussian_2d, task, linear, EtaSchedule(), x, 0.5, 0.75, MethodKind.REPLACEMENT, 5)
        observed = state.x[:, 0]
        assert abs(observed.mean() - 0.5) <= 4.0 * 0.5 / np.sqrt(N_CHAINS)
        assert observed.std() == approx(0.5, rel=0.02)

    def test_fully_observed_forgets_state(self, gaussian_2d, linear):
        task = InpaintingTask.from_masked(2, [], np.array([1.0, -1.0]))
        a = one_step(replacement_step, gaussian_2d, task, linear, EtaSchedule(), np.zeros((3, 2)), 0.5, 0.75, MethodKind.REPLACEMENT, 6)
        b = one_step(replacement_step, gaussian_2d, task, linear, EtaSchedule(), np.ones((3, 2)), 0.5, 0.75, MethodKind.REPLACEMENT, 6)
        assert np.array_equal(a.x, b.x)


class TestMcgdiff:
    def test_observed_update(self, gaussian_2d, linear):
        task = InpaintingTask.from_masked(2, [1], np.array([1.0]), sigma_y=0.5)
        es = EtaSchedule(EtaKind.MAX)
        x = np.tile([0.2, 0.7], (N_CHAINS, 1))
        state = one_step(mcgdiff_step, gaussian_2d, task, linear, es, x, 0.5, 0.75, MethodKind.MCGDIFF, 7)

        # tau = 1/3, bridge variance 0.5625 - (0.25 / (2/3))^2 / 9
        bridge = 0.5625 - 0.140625 / 9.0
        gamma = 0.25 / (0.25 + bridge)
        assert state.record.gamma == approx(gamma)
        out = gaussian_denoise(gaussian_2d, x[:1], 0.75, linear)
        mu = 0.5 * out.x0_hat[0, 0]  # sqrt(sigma_s^2 - eta^2) = 0
        expected_mean = (1 - gamma) * mu + gamma * 0.5 * 1.0
        observed = state.x[:, 0]
        sd = np.sqrt(bridge * gamma)
        assert abs(observed.mean() - expected_mean) <= 4.0 * sd / np.sqrt(N_CHAINS)
        assert observed.std() == approx(sd, rel=0.02)

    def test_falls_back_below_tau(self, gaussian_2d, linear):
        task = InpaintingTask.from_masked(2, [1], np.array([1.0]), sigma_y=0.5)
        state = one_step(mcgdiff_step, gaussian_2d, task, linear, EtaSchedule(), np.zeros((2, 2)), 0.25, 0.5, MethodKind.MCGDIFF, 8)
        assert state.record.flags == ["mcgdiff-fallback"]


class TestPnpFlow:
    def _run(self, prior, task, ns, gamma, params=None):
        ctx = StepContext.create(MethodSpec(MethodKind.PNPFLOW, dict(params or {})), prior, task, ns, EtaSchedule())
        state = ChainState(x=np.array([[0.4, -0.3], [1.0, 2.0]]), k=3)
        return pnpflow_step(state, 0.5, 0.75, ctx, np.random.default_rng(9), gamma=gamma), state

    def test_full_step_hits_observation(self, gaussian_2d, observe_first, linear):
        new, _ = self._run(gaussian_2d, observe_first, linear, gamma=observe_first.sigma_y ** 2)
        assert np.array_equal(new.x0_hat[:, 0], np.full(2, 1.0))

    def test_zero_step_keeps_denoiser(self, gaussian_2d, observe_first, linear):
        new, old = self._run(gaussian_2d, observe_first, linear, gamma=0.0)
        assert np.array_equal(new.x0_hat, gaussian_denoise(gaussian_2d, old.x, 0.75, linear).x0_hat)

    def test_large_step_is_flagged(self, gaussian_2d, observe_first, linear):
        new, _ = self._run(gaussian_2d, observe_first, linear, gamma=None, params={"gamma_n": 3 * observe_first.sigma_y ** 2})
        assert new.record.flags == ["pnpflow-divergent-step"]

    def test_rejects_nonpositive_step(self):
        with pytest.raises(InvalidArgumentError):
            MethodSpec(MethodKind.PNPFLOW, {"gamma_n": 0.0})


class TestFlowDps:
    def test_deterministic_update(self, gaussian_2d, observe_first, linear):
        x = np.array([[0.4, -0.3]])
        state = one_step(flowdps_step, gaussian_2d, observe_first, linear, EtaSchedule(EtaKind.ZERO), x, 0.5, 0.75, MethodKind.FLOWDPS, 0)
        out = gaussian_denoise(gaussian_2d, x, 0.75, linear)
        x0 = out.x0_hat.copy()
        x0[:, 0] = 0.5 * x0[:, 0] + 0.5 * 1.0
        assert state.x == approx(0.5 * x0 + 0.5 * out.x1_hat)
        assert state.record.gamma == 0.5


class TestDiffPir:
    def test_weight_example(self, gaussian_2d, observe_first, linear):
        state = one_step(diffpir_step, gaussian_2d, observe_first, linear, EtaSchedule(), np.zeros((1, 2)), 0.25, 0.5, MethodKind.DIFFPIR, 0)
        assert state.record.gamma == approx(0.25 / (0.25 + 1e-4 * 0.25))
        assert state.record.gamma == approx(0.9999, abs=1e-4)

    def test_rejects_nonpositive_lambda(self):
        with pytest.raises(InvalidArgumentError):
            MethodSpec(MethodKind.DIFFPIR, {"lambda": 0.0})

    def test_ddnm_sets_observation(self, gaussian_2d, observe_first, linear):
        x = np.array([[0.4, -0.3]])
        state = one_step(ddnm_step, gaussian_2d, observe_first, linear, EtaSchedule(EtaKind.ZERO), x, 0.5, 0.75, MethodKind.DDNM, 0)
        x0 = gaussian_denoise(gaussian_2d, x, 0.75, linear).x0_hat.copy()
        x0[:, 0] = 1.0
        x1 = (x - 0.25 * x0) / 0.75
        assert state.x == approx(0.5 * x0 + 0.5 * x1)
        assert state.record.gamma == 1.0


class TestDps:
    def test_one_step_law_matches_closed_form(self, linear, moment_check):
        rng = np.random.default_rng(10)
        z = mc_z(20 * 9)
        for _ in range(20):
            cov = random_spd(3, rng)
            prior = GaussianPrior(mean=np.zeros(3), cov=cov)
            task = random_task(3, rng, float(rng.uniform(0.05, 1.0)))
            s, t, es = random_transition(rng)
            x_t = rng.standard_normal(3)
            state = one_step(dps_analytic_step, prior, task, linear, es, np.tile(x_t, (N_CHAINS, 1)), s, t, MethodKind.DPS_ANALYTIC, int(rng.integers(2 ** 31)))
            exact = dps_transition_moments(cov, x_t, task, s, t, linear, es=es)
            moment_check(state.x, exact.mean, exact.cov, z=z)

    def test_uninformative_observation_is_ddim(self, gaussian_2d, linear):
        task = InpaintingTask.from_masked(2, [1], np.array([1.0]), sigma_y=1e4)
        ctx = StepContext.create(MethodSpec(MethodKind.DPS_ANALYTIC), gaussian_2d, task, linear, EtaSchedule())
        mu = np.array([[0.3, -0.8]])
        mean, cov = dps_conditional(mu, 0.2, 0.5, ctx)
        assert np.max(np.abs(mean - mu)) < 1e-6
        assert np.max(np.abs(cov - 0.04 * np.eye(2))) < 1e-6

    def test_nonzero_mean_shifts_target(self, linear):
        # a fully informative observation of x_0 = y pins x_s near alpha_s y + sigma_s x1
        prior = GaussianPrior(mean=np.array([2.0, -1.0]), cov=np.eye(2))
        task = InpaintingTask.from_masked(2, [], np.array([2.0, -1.0]), sigma_y=1e-3)
        ctx = StepContext.create(MethodSpec(MethodKind.DPS_ANALYTIC), prior, task, linear, EtaSchedule())
        D = denoiser_matrix(prior, 0.5, linear)
        x_s = np.array([1.0, -0.5])  # alpha_s * mean, so x0_hat(x_s) equals the prior mean
        mean, _ = dps_conditional(x_s, 0.25, 0.5, ctx)
        assert prior.mean + (mean - 0.5 * prior.mean) @ D == approx(task.y, abs=1e-3)

    def test_zero_eta_is_ddim(self, gaussian_2d, observe_first, linear):
        x = np.array([[0.4, -0.3]])
        es = EtaSchedule(EtaKind.ZERO)
        a = one_step(dps_analytic_step, gaussian_2d, observe_first, linear, es, x, 0.5, 0.75, MethodKind.DPS_ANALYTIC, 0)
        b = one_step(ddim_step, gaussian_2d, observe_first, linear, es, x, 0.5, 0.75, MethodKind.DDIM, 1)
        assert a.x == approx(b.x)

    def test_mixture_prior_is_unsupported(self, gmm_2d, observe_first, linear):
        with pytest.raises(UnsupportedMethodError):
            run_sampler(MethodSpec(MethodKind.DPS_ANALYTIC), gmm_2d, observe_first, make_grid(5), linear, EtaSchedule(), np.random.default_rng(0))


class TestDdim:
    @pytest.mark.parametrize("kind", list(ScheduleKind))
    def test_push_forward_of_forward_marginal(self, kind, moment_check):
        ns = NoiseSchedule(kind)
        cov = np.array([[1.0, 0.6], [0.6, 0.8]])
        prior = GaussianPrior(mean=np.zeros(2), cov=cov)
        task = InpaintingTask.from_masked(2, [0, 1], np.array([]))
        s, t = 0.4, 0.7
        es = EtaSchedule()
        alpha_s, sigma_s = float(ns.alpha(s)), float(ns.sigma(s))
        alpha_t, sigma_t = float(ns.alpha(t)), float(ns.sigma(t))
        eta = es.raw(s, t, ns)

        rng = np.random.default_rng(11)
        V = alpha_t ** 2 * cov + sigma_t ** 2 * np.eye(2)
        x_t = rng.multivariate_normal(np.zeros(2), V, size=N_CHAINS)
        state = one_step(ddim_step, prior, task, ns, es, x_t, s, t, MethodKind.DDIM, 12)

        D = denoiser_matrix(prior, t, ns)
        c = np.sqrt(sigma_s ** 2 - eta ** 2)
        A = alpha_s * D + c * (np.eye(2) - alpha_t * D) / sigma_t
        moment_check(state.x, np.zeros(2), A @ V @ A.T + eta ** 2 * np.eye(2))

    def test_zero_eta_is_deterministic(self, gaussian_2d, observe_first, linear):
        x = np.array([[0.4, -0.3]])
        state = one_step(ddim_step, gaussian_2d, observe_first, linear, EtaSchedule(EtaKind.ZERO), x, 0.5, 0.75, MethodKind.DDIM, 0)
        out = gaussian_denoise(gaussian_2d, x, 0.75, linear)
        assert state.x == approx(0.5 * out.x0_hat + 0.5 * out.x1_hat)

    def test_max_eta_mean(self, gaussian_2d, observe_first, linear):
        x = np.tile([0.4, -0.3], (N_CHAINS, 1))
        state = one_step(ddim_step, gaussian_2d, observe_first, linear, EtaSchedule(EtaKind.MAX), x, 0.5, 0.75, MethodKind.DDIM, 13)
        expected = 0.5 * gaussian_denoise(gaussian_2d, x[0], 0.75, linear).x0_hat
        assert np.all(np.abs(state.x.mean(axis=0) - expected) <= mc_z(2) * 0.5 / np.sqrt(N_CHAINS))


class TestSampler:
    def test_same_seed_same_samples(self, gmm_2d, observe_first, vp):
        args = (MethodSpec(MethodKind.DING), gmm_2d, observe_first, make_grid(10), vp, EtaSchedule())
        a = run_sampler(*args, np.random.default_rng(14), n=20)
        b = run_sampler(*args, np.random.default_rng(14), n=20)
        assert np.array_equal(a.samples, b.samples)

    def test_dimension_mismatch(self, gaussian_2d, linear):
        task = InpaintingTask.from_masked(3, [0], np.zeros(2))
        with pytest.raises(InvalidArgumentError):
            run_sampler(MethodSpec(MethodKind.DDIM), gaussian_2d, task, make_grid(5), linear, EtaSchedule(), np.random.default_rng(0))

    def test_needs_a_chain(self, gaussian_2d, observe_first, linear):
        with pytest.raises(InvalidArgumentError):
            run_sampler(MethodSpec(MethodKind.DDIM), gaussian_2d, observe_first, make_grid(5), linear, EtaSchedule(), np.random.default_rng(0), n=0)

    def test_flags_are_collected_once(self, gaussian_2d, observe_first, linear):
        result = run_sampler(
            MethodSpec(MethodKind.DING), gaussian_2d, observe_first, make_grid(5), linear, EtaSchedule(EtaKind.ZERO), np.random.default_rng(0)
        )
        assert result.flags == ["deterministic-ding-step"]
        assert result.to_dict()["nfe"] == 9

    def test_random_steps_stay_finite(self):
        rng = np.random.default_rng(15)
        priors = [random_gaussian(int(d), rng) for d in (1, 2, 3, 4)] + [random_gmm(int(d), 3, rng) for d in (1, 2, 3, 4)]
        kinds = list(MethodKind)
        for case in range(10_000):
            prior = priors[case % len(priors)]
            kind = kinds[int(rng.integers(len(kinds)))]
            if kind == MethodKind.DPS_ANALYTIC and not isinstance(prior, GaussianPrior):
                kind = MethodKind.DING
            ns = NoiseSchedule(ScheduleKind(rng.choice(list(ScheduleKind))))
            es = EtaSchedule(EtaKind(rng.choice(list(EtaKind))))
            K = int(rng.integers(3, 30))
            _, s, t = list(make_grid(K).steps())[int(rng.integers(0, K - 1))]
            task = random_task(prior.d, rng, float(10 ** rng.uniform(-3, 1)), allow_empty=True)
            x = 3.0 * rng.standard_normal((4, prior.d))
            state = one_step(get_step(kind), prior, task, ns, es, x, s, t, kind, int(rng.integers(2 ** 31)))
            assert np.all(np.isfinite(state.x)), (case, kind)
