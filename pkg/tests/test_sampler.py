import math

import numpy as np
import pytest

from app.core.config import settings
from app.core.errors import InvalidParameterError, NumericalError
from app.diffusion.batch import SampleBatch, Stage
from app.diffusion.models import EpsilonModel, OracleEpsilonModel, OraclePosteriorProvider, PosteriorProvider
from app.diffusion.oracle import sample_data
from app.diffusion.sampler import (
    UNGUIDED,
    Direction,
    GuidanceMode,
    GuidanceSpec,
    ddim_invert_step,
    ddim_step,
    guided_epsilon,
    predict_x0,
    relative_error,
    roundtrip_error,
    run_ums_stages,
    sample_chain,
    stage_a_noise,
    ums_generate,
    uncertainty_from_noise,
    write_trajectory_csv,
)
from app.diffusion.schedule import q_sample
from app.metrics.entropy import compare_entropy


class RecordingModel(EpsilonModel):
    def __init__(self, sched, dim=2, value=0.0):
        super().__init__(sched, dim)
        self.value = value
        self.steps = []

    def predict(self, x, y, t):
        self.steps.append(t)
        return np.full(np.atleast_2d(x).shape, self.value)


class BrokenProvider(PosteriorProvider):
    def __init__(self, sched):
        super().__init__(sched, 2, 2)

    def probs(self, x, t):
        return np.full((np.atleast_2d(x).shape[0], 2), 0.5)

    def entropy_grad(self, x, t, gradient_source="analytic"):
        grad = np.zeros(np.atleast_2d(x).shape)
        grad[1, 0] = np.nan
        return grad


@pytest.fixture
def oracle_pair(world, cosine_schedule):
    return OracleEpsilonModel(world, cosine_schedule), OraclePosteriorProvider(world, cosine_schedule)


def _noised(world, sched, t, n=100, seed=3):
    batch = sample_data(world, n, seed)
    eps = np.random.Generator(np.random.Philox(seed + 1)).standard_normal(batch.points.shape)
    return q_sample(batch.points, t, eps, sched), batch.labels


def test_inactive_guidance_returns_model_prediction(oracle_pair, world, cosine_schedule):
    model, provider = oracle_pair
    x, labels = _noised(world, cosine_schedule, 20)
    expected = model.predict(x, labels, 20)
    zero_scale = GuidanceSpec(mode=GuidanceMode.CLASSIFIER, scale=0.0)
    np.testing.assert_array_equal(guided_epsilon(model, provider, x, labels, 20, cosine_schedule, UNGUIDED), expected)
    np.testing.assert_array_equal(guided_epsilon(model, provider, x, labels, 20, cosine_schedule, zero_scale), expected)


@pytest.mark.parametrize("t", [5, 20, 45])
def test_unit_classifier_guidance_equals_conditional_score(oracle_pair, world, cosine_schedule, t):
    model, provider = oracle_pair
    x, labels = _noised(world, cosine_schedule, t)
    spec = GuidanceSpec(mode=GuidanceMode.CLASSIFIER, scale=1.0)
    guided = guided_epsilon(model, provider, x, labels, t, cosine_schedule, spec)
    conditional = OracleEpsilonModel(world, cosine_schedule, conditional=True).predict(x, labels, t)
    assert relative_error(guided, conditional) <= 1e-12


def test_uncertainty_guidance_formula(oracle_pair, world, cosine_schedule):
    model, provider = oracle_pair
    t, gamma = 30, 3.0
    x, labels = _noised(world, cosine_schedule, t)
    spec = GuidanceSpec(mode=GuidanceMode.UNCERTAINTY, scale=gamma)
    guided = guided_epsilon(model, provider, x, labels, t, cosine_schedule, spec)
    expected = model.predict(x, None, t) - math.sqrt(1.0 - cosine_schedule.alpha_bar(t)) * gamma * provider.entropy_grad(x, t, "analytic")
    assert relative_error(guided, expected) <= 1e-12


@pytest.mark.parametrize("mode, scale", [(GuidanceMode.CLASSIFIER, 10.0), (GuidanceMode.UNCERTAINTY, 3.0)])
def test_finite_difference_guidance_matches_analytic(oracle_pair, world, cosine_schedule, mode, scale):
    model, provider = oracle_pair
    t = 25
    x, labels = _noised(world, cosine_schedule, t)
    analytic = guided_epsilon(model, provider, x, labels, t, cosine_schedule, GuidanceSpec(mode=mode, scale=scale))
    numeric = guided_epsilon(model, provider, x, labels, t, cosine_schedule,
                             GuidanceSpec(mode=mode, scale=scale, gradient_source="finite_difference"))
    assert relative_error(numeric, analytic) <= 1e-4


def test_non_finite_gradient_reports_step_and_point(cosine_schedule):
    model = RecordingModel(cosine_schedule)
    spec = GuidanceSpec(mode=GuidanceMode.UNCERTAINTY, scale=1.0)
    with pytest.raises(NumericalError) as info:
        guided_epsilon(model, BrokenProvider(cosine_schedule), np.zeros((3, 2)), None, 12, cosine_schedule, spec)
    assert info.value.module == "sampler"
    assert info.value.step == 12
    assert info.value.index == 1


def test_guidance_without_provider_is_rejected(cosine_schedule):
    spec = GuidanceSpec(mode=GuidanceMode.CLASSIFIER, scale=1.0)
    with pytest.raises(InvalidParameterError):
        guided_epsilon(RecordingModel(cosine_schedule), None, np.zeros((2, 2)), 0, 5, cosine_schedule, spec)


def test_ddim_step_standard_normal_world(cosine_schedule, rng):
    t = 20
    x = rng.standard_normal((4, 2))
    ab_t, ab_prev = cosine_schedule.alpha_bar(t), cosine_schedule.alpha_bar(t - 1)
    eps = math.sqrt(1.0 - ab_t) * x
    expected = (math.sqrt(ab_prev) * math.sqrt(ab_t) + math.sqrt(1.0 - ab_prev) * math.sqrt(1.0 - ab_t)) * x
    np.testing.assert_allclose(ddim_step(x, eps, t, cosine_schedule), expected, rtol=1e-12)
    np.testing.assert_allclose(predict_x0(x, eps, t, cosine_schedule), math.sqrt(ab_t) * x, rtol=1e-12)


def test_ddim_step_rejects_step_zero(cosine_schedule):
    with pytest.raises(InvalidParameterError):
        ddim_step(np.zeros(2), np.zeros(2), 0, cosine_schedule)


def test_inversion_from_clean_data_evaluates_first_noised_step(cosine_schedule):
    model = RecordingModel(cosine_schedule)
    ddim_invert_step(np.ones(2), model, None, 0, cosine_schedule)
    assert model.steps == [1]
    with pytest.raises(InvalidParameterError):
        ddim_invert_step(np.ones(2), model, None, cosine_schedule.T, cosine_schedule)


def test_trajectory_visits_every_step(oracle_pair, cosine_schedule):
    model, _ = oracle_pair
    noise = np.random.Generator(np.random.Philox(0)).standard_normal((5, 2))
    trajectory = sample_chain(model, None, cosine_schedule, UNGUIDED, None, noise)
    assert trajectory.points.shape == (cosine_schedule.T + 1, 5, 2)
    assert trajectory.steps[0] == cosine_schedule.T and trajectory.steps[-1] == 0
    np.testing.assert_array_equal(trajectory.start, noise)

    inverted = sample_chain(model, None, cosine_schedule, UNGUIDED, None, trajectory.endpoint, Direction.INVERT)
    assert inverted.steps[0] == 0 and inverted.steps[-1] == cosine_schedule.T


def test_partial_range_and_invalid_range(oracle_pair, cosine_schedule):
    model, _ = oracle_pair
    trajectory = sample_chain(model, None, cosine_schedule, UNGUIDED, None, np.zeros(2), t_range=(10, 4))
    assert trajectory.points.shape == (7, 2)
    with pytest.raises(InvalidParameterError):
        sample_chain(model, None, cosine_schedule, UNGUIDED, None, np.zeros(2), t_range=(4, 10))


def test_divergence_guard_names_step_and_point(cosine_schedule):
    model = RecordingModel(cosine_schedule, value=1e12)
    with pytest.raises(NumericalError) as info:
        sample_chain(model, None, cosine_schedule, UNGUIDED, None, np.zeros((2, 2)))
    assert info.value.module == "sampler"
    assert info.value.step == cosine_schedule.T - 1
    assert info.value.index == 0


def _mixture_moments(oracle):
    mean = oracle.weights @ oracle.means
    second = np.einsum("k,kij->ij", oracle.weights,
                       oracle.covariances + oracle.means[:, :, None] * oracle.means[:, None, :])
    return mean, second - np.outer(mean, mean)


def _assert_moments_match(points, mean, cov, bound=3.0):
    n = points.shape[0]
    sample_mean = points.mean(axis=0)
    assert np.all(np.abs(sample_mean - mean) <= bound * points.std(axis=0) / math.sqrt(n))
    centered = points - sample_mean
    products = centered[:, :, None] * centered[:, None, :]
    assert np.all(np.abs(products.mean(axis=0) - cov) <= bound * products.std(axis=0) / math.sqrt(n))


def test_unguided_sampling_reproduces_mixture_moments(world, default_schedule):
    model = OracleEpsilonModel(world, default_schedule)
    noise = np.random.Generator(np.random.Philox(2024)).standard_normal((10_000, 2))
    endpoint = sample_chain(model, None, default_schedule, UNGUIDED, None, noise).endpoint
    mean, cov = _mixture_moments(world)
    np.testing.assert_allclose(cov, 9.0 * np.eye(2), atol=1e-12)
    _assert_moments_match(endpoint, mean, cov)


def test_iterated_ddim_keeps_standard_normal_world(gaussian_world, default_schedule):
    model = OracleEpsilonModel(gaussian_world, default_schedule)
    x = np.random.Generator(np.random.Philox(77)).standard_normal((10_000, 2))
    for t in range(default_schedule.T, 0, -1):
        x = ddim_step(x, model.predict(x, None, t), t, default_schedule)
    _assert_moments_match(x, np.zeros(2), np.eye(2))


def test_roundtrip_error_within_default_tolerance(world, default_schedule):
    model = OracleEpsilonModel(world, default_schedule)
    x0 = sample_data(world, 100, seed=11).points
    assert roundtrip_error(model, default_schedule, x0) <= settings.ROUNDTRIP_TOLERANCE


def test_roundtrip_error_shrinks_with_finer_schedules(world, cosine_schedule, default_schedule):
    # medido: ~4.7e-2 em T=50, ~1.2e-2 em T=200, ~4.5e-3 em T=500
    x0 = sample_data(world, 100, seed=7).points
    coarse = roundtrip_error(OracleEpsilonModel(world, cosine_schedule), cosine_schedule, x0)
    fine = roundtrip_error(OracleEpsilonModel(world, default_schedule), default_schedule, x0)
    assert 3e-2 <= coarse <= 7e-2
    assert fine < coarse / 5.0


def test_class_guidance_reaches_target_class(oracle_pair, world, cosine_schedule):
    model, provider = oracle_pair
    noise, labels = stage_a_noise(3, 334, 2, seed=5)
    spec = GuidanceSpec(mode=GuidanceMode.CLASSIFIER, scale=10.0)
    endpoint = sample_chain(model, provider, cosine_schedule, spec, labels, noise).endpoint
    predicted = np.argmax(world.posterior(endpoint).probs, axis=1)
    assert np.mean(predicted == labels) >= 0.95


def test_stage_a_noise_streams_are_per_point():
    small, labels_small = stage_a_noise(3, 2, 2, seed=9)
    large, labels_large = stage_a_noise(3, 5, 2, seed=9)
    np.testing.assert_array_equal(small[:2], large[:2])
    np.testing.assert_array_equal(labels_small, [0, 0, 1, 1, 2, 2])
    assert labels_large.size == 15


def test_ums_stages_lift_entropy(oracle_pair, world, cosine_schedule):
    model, provider = oracle_pair
    stages = run_ums_stages(model, provider, cosine_schedule, n_per_class=100, class_scale=10.0,
                            uncertainty_scale=3.0, seed=21, reference=world)
    assert stages.class_guided.stage is Stage.CLASS_GUIDED
    assert stages.inverted_noise.entropies is None
    assert set(stages.by_name()) == {"data", "a", "b", "c"}
    comparison = compare_entropy(stages.class_guided, stages.uncertainty_guided, level=0.99,
                                 n_resamples=2000, seed=3)
    assert comparison.candidate_mean > comparison.baseline_mean
    assert comparison.lifted


def test_zero_uncertainty_scale_reproduces_stage_a(world, default_schedule):
    model = OracleEpsilonModel(world, default_schedule)
    provider = OraclePosteriorProvider(world, default_schedule)
    stages = run_ums_stages(model, provider, default_schedule, n_per_class=20, class_scale=10.0,
                            uncertainty_scale=0.0, seed=4)
    assert stages.data is None
    error = relative_error(stages.uncertainty_guided.points, stages.class_guided.points)
    assert error <= settings.ROUNDTRIP_TOLERANCE


def test_ums_is_deterministic_for_a_seed(oracle_pair, cosine_schedule):
    model, provider = oracle_pair
    first = ums_generate(model, provider, cosine_schedule, n_per_class=5, seed=8)
    second = ums_generate(model, provider, cosine_schedule, n_per_class=5, seed=8)
    np.testing.assert_array_equal(first.points, second.points)
    np.testing.assert_array_equal(first.entropies, second.entropies)


def test_ums_rejects_empty_classes(oracle_pair, cosine_schedule):
    model, provider = oracle_pair
    with pytest.raises(InvalidParameterError):
        run_ums_stages(model, provider, cosine_schedule, n_per_class=0)


def test_uncertainty_from_noise_variant(oracle_pair, cosine_schedule):
    model, provider = oracle_pair
    batch = uncertainty_from_noise(model, provider, cosine_schedule, 4, 3.0, seed=2)
    assert isinstance(batch, SampleBatch)
    assert batch.size == 12
    assert batch.entropies.shape == (12,)


def test_write_trajectory_csv(oracle_pair, cosine_schedule, tmp_path):
    model, _ = oracle_pair
    trajectory = sample_chain(model, None, cosine_schedule, UNGUIDED, None, np.zeros((3, 2)), t_range=(5, 0))
    assert write_trajectory_csv(trajectory, tmp_path) == 3
    lines = (tmp_path / "trajectory_00001.csv").read_text().splitlines()
    assert lines[0] == "step,x0,x1"
    assert len(lines) == 7
    assert lines[1].startswith("5,")
