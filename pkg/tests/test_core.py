import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from pmd.core import (
    EtaOverT,
    Fixed,
    Linear,
    PmdConfig,
    Power,
    PriorDensity,
    SwitchAt,
    CappedHarmonic,
    WeightedKde,
    WeightedParticles,
    integral_estimate,
    kde_prox_step,
    minibatch_log_lik,
    particle_count,
    record_iterations,
    reweight_particles,
    run_pmd,
    stepsize,
)
from pmd.density import BandwidthRule, KdeDensity, ParticleCloud
from pmd.exceptions import ConfigError, DegenerateWeightsError, InvalidParameterError
from pmd.model import ConjugateGaussian, Dataset, make_conjugate_gaussian

LOG_2PI = math.log(2 * math.pi)


class ShiftedLikelihood(ConjugateGaussian):
    """Conjugate model whose per-datum likelihood is multiplied by ``exp(shift)``."""

    def __init__(self, base, shift):
        super().__init__(base.prior_mean, base.prior_var, base.obs_var, base.data)
        self.shift = shift

    def log_lik(self, x, theta):
        return super().log_lik(x, theta) + self.shift


class FlatLikelihood(ConjugateGaussian):
    def log_lik(self, x, theta):
        return np.zeros((np.atleast_2d(x).shape[0], np.atleast_2d(theta).shape[0]))


class TestMinibatchLogLik:
    def test_full_batch_is_plain_sum(self, rng):
        data = Dataset(rng.standard_normal(8))
        model = make_conjugate_gaussian([0.0], 1.0, 1.0, data)
        theta = rng.standard_normal((5, 1))
        np.testing.assert_allclose(
            minibatch_log_lik(model, data.rows, theta), model.log_lik(data.rows, theta).sum(axis=0), rtol=1e-14
        )

    def test_single_datum_scaled_by_n(self, rng):
        model = make_conjugate_gaussian([0.0], 1.0, 1.0, Dataset(rng.standard_normal(1000)))
        theta = np.array([[0.3]])
        x = model.data.rows[:1]
        assert minibatch_log_lik(model, x, theta)[0] == pytest.approx(1000 * model.log_lik(x, theta)[0, 0])

    def test_reference_value(self):
        model = make_conjugate_gaussian([0.0], 1.0, 1.0, Dataset([1.0, -1.0]))
        value = minibatch_log_lik(model, np.array([[1.0], [-1.0]]), np.array([[0.0]]))[0]
        assert value == pytest.approx(-2 * (0.5 * LOG_2PI + 0.5))
        assert value == pytest.approx(-2.8379, abs=5e-5)

    def test_empty_batch(self, conj_one):
        with pytest.raises(InvalidParameterError):
            minibatch_log_lik(conj_one, np.empty((0, 1)), np.zeros((1, 1)))


class TestReweightParticles:
    def test_zero_step_is_identity(self, rng, conj_one):
        cloud = ParticleCloud(rng.standard_normal((20, 1)), rng.standard_normal(20))
        out = reweight_particles(cloud, conj_one, conj_one.data.rows, 0.0)
        np.testing.assert_array_equal(out.log_weights, cloud.log_weights)
        np.testing.assert_array_equal(out.points, cloud.points)

    def test_unit_step_is_importance_sampling(self, rng):
        data = Dataset(rng.standard_normal(5) + 1)
        model = make_conjugate_gaussian([0.0], 1.0, 1.0, data)
        cloud = ParticleCloud.uniform(rng.standard_normal((50, 1)))
        out = reweight_particles(cloud, model, data.rows, 1.0)
        lik = np.exp(model.log_lik(data.rows, cloud.points).sum(axis=0))
        np.testing.assert_allclose(out.weights, lik / lik.sum(), rtol=1e-10)

    def test_reference_weights(self):
        model = make_conjugate_gaussian([0.0], 1.0, 1.0, Dataset([1.0]))
        cloud = ParticleCloud.uniform(np.array([[0.0], [1.0]]))
        out = reweight_particles(cloud, model, np.array([[1.0]]), 1.0)
        e = math.exp(-0.5)
        np.testing.assert_allclose(out.weights, [e / (1 + e), 1 / (1 + e)], rtol=1e-12)
        np.testing.assert_allclose(out.weights, [0.3775, 0.6225], atol=5e-5)

    @given(st.floats(-50, 50), st.floats(0.0, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_likelihood_scaling_invariance(self, shift, gamma):
        base = make_conjugate_gaussian([0.0], 1.0, 1.0, Dataset([0.5, 1.5, -0.2]))
        cloud = ParticleCloud(np.linspace(-2, 2, 9)[:, None], np.linspace(-1, 1, 9))
        a = reweight_particles(cloud, base, base.data.rows[:2], gamma)
        b = reweight_particles(cloud, ShiftedLikelihood(base, shift), base.data.rows[:2], gamma)
        np.testing.assert_allclose(a.log_weights, b.log_weights, atol=1e-9)

    def test_permutation_equivariance(self, rng, conj_one):
        cloud = ParticleCloud(rng.standard_normal((15, 1)), rng.standard_normal(15))
        perm = rng.permutation(15)
        shuffled = ParticleCloud(cloud.points[perm], cloud.log_weights[perm])
        a = reweight_particles(cloud, conj_one, conj_one.data.rows, 0.4)
        b = reweight_particles(shuffled, conj_one, conj_one.data.rows, 0.4)
        np.testing.assert_allclose(a.log_weights[perm], b.log_weights, rtol=1e-12)

    def test_base_density_correction(self, rng, conj_one):
        # particles drawn from N(0, 4) rather than the prior: a unit step must
        # land exactly on the posterior importance weights p(theta) L(theta) / base
        pts = 2.0 * rng.standard_normal((40, 1))
        log_base = norm.logpdf(pts[:, 0], scale=2.0)
        cloud = ParticleCloud.uniform(pts, log_base)
        out = reweight_particles(cloud, conj_one, conj_one.data.rows, 1.0)
        target = norm.logpdf(pts[:, 0], 1.0, math.sqrt(0.5)) - log_base
        np.testing.assert_allclose(out.weights, np.exp(target) / np.exp(target).sum(), rtol=1e-9)

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_depletion_raises(self, conj_one):
        cloud = ParticleCloud(np.array([[1e200], [-1e200]]), np.zeros(2))
        with pytest.raises(DegenerateWeightsError):
            reweight_particles(cloud, conj_one, conj_one.data.rows, 1.0)

    @pytest.mark.parametrize("gamma", [-0.1, 1.1])
    def test_stepsize_range(self, conj_one, gamma):
        cloud = ParticleCloud.uniform(np.zeros((2, 1)))
        with pytest.raises(InvalidParameterError):
            reweight_particles(cloud, conj_one, conj_one.data.rows, gamma)


class TestKdeProxStep:
    def test_zero_step_is_pure_rejuvenation(self, rng, conj_one):
        kde = KdeDensity(rng.standard_normal((30, 1)), rng.standard_normal(30), 0.4)
        out = kde_prox_step(kde, conj_one, conj_one.data.rows, 0.0, 50, 0.3, rng)
        np.testing.assert_allclose(out.weights, np.full(50, 1 / 50), rtol=1e-14)
        assert out.size == 50 and out.bandwidth == 0.3

    def test_zero_step_converges_to_input(self, conj_one):
        kde = KdeDensity(np.array([[-1.0], [1.5]]), np.log([0.3, 0.7]), 0.5)
        grid = np.linspace(-5, 6, 2000)[:, None]
        dx = grid[1, 0] - grid[0, 0]
        errs = []
        for m in (100, 10_000):
            out = kde_prox_step(kde, conj_one, conj_one.data.rows, 0.0, m, 0.05, np.random.default_rng(m))
            errs.append(np.abs(out.pdf(grid) - kde.pdf(grid)).sum() * dx)
        assert errs[1] < errs[0] / 3

    def test_prior_correction_with_flat_likelihood(self, rng):
        base = make_conjugate_gaussian([0.0], 1.0, 1.0, Dataset([0.0]))
        model = FlatLikelihood(base.prior_mean, base.prior_var, base.obs_var, base.data)
        q = KdeDensity(np.array([[2.0]]), np.zeros(1), 1.0)
        out = kde_prox_step(q, model, model.data.rows, 1.0, 40, 0.2, rng, standardized=False)
        expected = model.log_prior(out.centers) - q.logpdf(out.centers)
        w = np.exp(expected - expected.max())
        np.testing.assert_allclose(out.weights, w / w.sum(), rtol=1e-10)

    def test_prior_start_is_bayes_at_unit_step(self, rng, conj_one):
        # from the prior, gamma = 1 gives weights proportional to the likelihood
        out = kde_prox_step(PriorDensity(conj_one), conj_one, conj_one.data.rows, 1.0, 30, 0.1, rng)
        lik = np.exp(conj_one.log_lik(conj_one.data.rows, out.centers)[0])
        np.testing.assert_allclose(out.weights, lik / lik.sum(), rtol=1e-10)

    def test_invalid_arguments(self, rng, conj_one):
        q = PriorDensity(conj_one)
        with pytest.raises(InvalidParameterError):
            kde_prox_step(q, conj_one, conj_one.data.rows, 0.5, 10, 0.0, rng)
        with pytest.raises(InvalidParameterError):
            kde_prox_step(q, conj_one, conj_one.data.rows, 0.5, 0, 0.1, rng)

    @pytest.mark.slow
    def test_conjugate_posterior_mean(self, conj_one):
        # prior N(0,1), datum 2: 50 steps of gamma = 1/t, m = 200 recover mean 1
        means = []
        for seed in range(10):
            cfg = PmdConfig(WeightedKde(), batch_size=1, iterations=50, step=EtaOverT(1.0),
                            particles=Fixed(200), rng_seed=seed)
            means.append(run_pmd(cfg, conj_one).final.mean()[0])
        assert abs(np.median(means) - 1.0) < 0.1

    @pytest.mark.slow
    def test_conjugate_posterior_mean_unbiased(self, conj_one):
        # same run over many seeds: the sampling spread of the final mean is
        # about 0.19, so the 200-seed median should sit within 3 standard errors
        means = []
        for seed in range(200):
            cfg = PmdConfig(WeightedKde(), batch_size=1, iterations=50, step=EtaOverT(1.0),
                            particles=Fixed(200), rng_seed=seed)
            means.append(run_pmd(cfg, conj_one).final.mean()[0])
        se = 1.2533 * np.std(means) / np.sqrt(len(means))
        assert abs(np.median(means) - 1.0) < 3 * se


class TestSchedules:
    def test_eta_over_t(self):
        assert stepsize(EtaOverT(0.5), 2) == 0.25

    def test_eta_over_t_clamped(self):
        assert stepsize(EtaOverT(3.0), 1) == 1.0
        assert stepsize(EtaOverT(3.0), 2) == 1.0
        assert stepsize(EtaOverT(3.0), 4) == 0.75

    def test_capped_harmonic_uncapped(self):
        sched = CappedHarmonic(M=1e-9, delta=1e9)
        assert stepsize(sched, 1, 100, 2) == 1.0
        assert stepsize(sched, 3, 100, 2) == 0.5

    def test_capped_harmonic_reference(self):
        gamma = stepsize(CappedHarmonic(M=10, delta=1, beta=2), 1, 1024, 2)
        assert gamma == pytest.approx(0.1 / 1024 ** (1 / 3), rel=1e-14)
        assert gamma == pytest.approx(0.009921, abs=5e-7)

    @given(st.integers(1, 10**6), st.floats(0.01, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_range(self, t, eta):
        for sched in (EtaOverT(eta), CappedHarmonic()):
            assert 0.0 < stepsize(sched, t, 500, 2) <= 1.0

    def test_iterations_start_at_one(self):
        with pytest.raises(InvalidParameterError):
            stepsize(EtaOverT(), 0)

    def test_particle_schedules(self):
        assert [particle_count(Fixed(7), t) for t in (1, 5)] == [7, 7]
        assert [particle_count(Linear(3), t) for t in (1, 4)] == [3, 12]
        assert [particle_count(Power(2.0, 1.5), t) for t in (1, 4, 9)] == [2, 16, 54]
        assert particle_count(Power(0.3, 0.5), 2) == 1

    @given(st.floats(0.1, 50), st.floats(0, 3), st.integers(1, 1000))
    @settings(max_examples=100, deadline=None)
    def test_power_nondecreasing(self, m0, exponent, t):
        sched = Power(m0, exponent)
        assert 1 <= particle_count(sched, t) <= particle_count(sched, t + 1)

    @pytest.mark.parametrize("bad", [lambda: EtaOverT(0.0), lambda: CappedHarmonic(M=-1), lambda: Fixed(0), lambda: Power(1, -1)])
    def test_invalid(self, bad):
        with pytest.raises(InvalidParameterError):
            bad()


class TestIntegralEstimate:
    def test_constant(self, rng):
        cloud = ParticleCloud(rng.standard_normal((30, 2)), rng.standard_normal(30))
        assert integral_estimate(cloud, lambda t: np.ones(len(t))) == pytest.approx(1.0, abs=1e-12)

    def test_half_space_containing_everything(self, rng):
        cloud = ParticleCloud(rng.random((30, 2)), rng.standard_normal(30))
        assert integral_estimate(cloud, lambda t: (t[:, 0] + t[:, 1] > -1).astype(float)) == pytest.approx(1.0)


class TestRunPmd:
    def test_single_step_is_importance_sampling(self, rng):
        data = Dataset([0.4, 1.8])
        model = make_conjugate_gaussian([0.0], 1.0, 1.0, data)
        cfg = PmdConfig(WeightedParticles(), batch_size=2, iterations=1, particles=Fixed(300), rng_seed=5,
                        sampling="epoch")
        out = run_pmd(cfg, model).final
        lik = np.exp(model.log_lik(data.rows, out.points).sum(axis=0))
        np.testing.assert_allclose(out.weights, lik / lik.sum(), rtol=1e-10)

    def test_trace_bookkeeping(self, conj_one):
        cfg = PmdConfig(WeightedKde(), batch_size=1, iterations=37, particles=Fixed(20))
        trace = run_pmd(cfg, conj_one)
        assert len(trace) == len(record_iterations(37)) == 7
        assert [r.t for r in trace] == [1, 2, 4, 8, 16, 32, 37]
        assert trace.records[-1].data_visited == 37
        assert trace.records[-1].state is trace.final
        assert all(r.wall_clock >= 0 for r in trace)
        assert set(trace.records[0].to_json()) == {"t", "gamma", "m", "ess", "data_visited"}

    def test_record_all(self, conj_one):
        cfg = PmdConfig(WeightedParticles(), batch_size=1, iterations=5, particles=Fixed(10), record="all")
        assert [r.t for r in run_pmd(cfg, conj_one)] == [1, 2, 3, 4, 5]

    def test_deterministic(self, conj_one):
        cfg = PmdConfig(WeightedKde(), batch_size=1, iterations=12, particles=Fixed(40), rng_seed=9)
        a, b = run_pmd(cfg, conj_one).final, run_pmd(cfg, conj_one).final
        np.testing.assert_array_equal(a.centers, b.centers)
        np.testing.assert_array_equal(a.log_weights, b.log_weights)

    def test_metrics_callback(self, conj_one):
        cfg = PmdConfig(WeightedKde(), batch_size=1, iterations=4, particles=Fixed(10))
        trace = run_pmd(cfg, conj_one, on_record=lambda t, s: {"mean": float(s.mean()[0])})
        assert all("mean" in r.metrics and "mean" in r.to_json() for r in trace)

    def test_switch_converts_to_particles(self, conj_one):
        cfg = PmdConfig(SwitchAt(6), batch_size=1, iterations=10, particles=Fixed(50),
                        particle_step=EtaOverT(1.0), record="all")
        trace = run_pmd(cfg, conj_one)
        kinds = [type(r.state).__name__ for r in trace]
        assert kinds == ["KdeDensity"] * 5 + ["ParticleCloud"] * 5
        switched = trace.records[5].state
        assert switched.log_base is not None
        np.testing.assert_allclose(trace.records[5].gamma, 1 / 6)

    def test_switch_at_one_uses_prior_particles(self, conj_one):
        cfg = PmdConfig(SwitchAt(1), batch_size=1, iterations=3, particles=Fixed(20))
        assert run_pmd(cfg, conj_one).final.log_base is None

    def test_initial_frame_is_reused(self, conj_one):
        cfg = PmdConfig(WeightedKde(), batch_size=1, iterations=6, particles=Fixed(30),
                        standardize="initial", record="all")
        scales = [r.state.scale for r in run_pmd(cfg, conj_one)]
        assert all(np.array_equal(s, scales[0]) for s in scales)

    def test_fixed_bandwidth_scale(self, conj_one):
        cfg = PmdConfig(WeightedKde(), batch_size=1, iterations=2, particles=Fixed(64),
                        bandwidth_rule=BandwidthRule(beta=2.0, scale=0.5))
        assert run_pmd(cfg, conj_one).final.bandwidth == pytest.approx(0.5 * 64 ** (-1 / 5))

    def test_epoch_sampling_visits_every_row(self):
        data = Dataset(np.arange(6.0))
        model = make_conjugate_gaussian([0.0], 1.0, 1.0, data)
        seen = []

        class Spy(ConjugateGaussian):
            def log_lik(self, x, theta):
                seen.append(np.asarray(x)[:, 0].copy())
                return super().log_lik(x, theta)

        spy = Spy([0.0], 1.0, 1.0, data)
        cfg = PmdConfig(WeightedParticles(), batch_size=2, iterations=3, particles=Fixed(5), sampling="epoch")
        run_pmd(cfg, spy)
        assert sorted(np.concatenate(seen)) == list(range(6))
        del model

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(batch_size=5),
            dict(batch_size=0),
            dict(iterations=0),
            dict(strategy=SwitchAt(20)),
            dict(sampling="bogus"),
            dict(record="sometimes"),
            dict(standardize="never"),
        ],
    )
    def test_config_validation(self, conj_one, kwargs):
        cfg = PmdConfig(**{"iterations": 10, "batch_size": 1, **kwargs})
        with pytest.raises(ConfigError):
            run_pmd(cfg, conj_one)
