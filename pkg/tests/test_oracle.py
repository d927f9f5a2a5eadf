import math

import numpy as np
import pytest

from app.core.errors import InvalidParameterError
from app.diffusion.batch import Stage
from app.diffusion.schedule import q_sample
from app.diffusion.oracle import (
    GaussianMixtureOracle,
    exact_epsilon,
    marginal_at,
    posterior,
    sample_data,
    score,
)


def _central_difference(fn, x, h=1e-5):
    grad = np.zeros_like(x)
    for i in range(x.shape[1]):
        step = np.zeros(x.shape[1])
        step[i] = h
        grad[:, i] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return grad


def test_rejects_weights_not_summing_to_one():
    with pytest.raises(InvalidParameterError):
        GaussianMixtureOracle([[0.0, 0.0], [1.0, 1.0]], [np.eye(2), np.eye(2)], [0, 1], [0.5, 0.6])


def test_rejects_non_spd_covariance():
    with pytest.raises(InvalidParameterError):
        GaussianMixtureOracle([[0.0, 0.0]], [[[1.0, 2.0], [2.0, 1.0]]], [0], [1.0])


def test_rejects_label_gaps():
    with pytest.raises(InvalidParameterError):
        GaussianMixtureOracle([[0.0, 0.0], [1.0, 1.0]], [np.eye(2), np.eye(2)], [0, 2], [0.5, 0.5])


def test_components_round_trip(world):
    rebuilt = GaussianMixtureOracle.from_components(world.to_components())
    np.testing.assert_array_equal(rebuilt.means, world.means)
    np.testing.assert_array_equal(rebuilt.weights, world.weights)


def test_score_matches_log_density_gradient(world, rng):
    x = rng.normal(0.0, 3.0, (50, 2))
    np.testing.assert_allclose(world.score(x), _central_difference(world.log_density, x), rtol=1e-5, atol=1e-7)


def test_single_vector_queries(world):
    x = np.array([0.5, -0.25])
    assert world.score(x).shape == (2,)
    np.testing.assert_allclose(score(world, x), world.score(x[None, :])[0])
    assert np.ndim(world.log_density(x)) == 0


def test_posterior_probabilities_and_entropy_bounds(world, rng):
    x = rng.normal(0.0, 4.0, (200, 2))
    report = posterior(world, x)
    np.testing.assert_allclose(report.probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(report.entropy >= 0.0)
    assert np.all(report.entropy <= math.log(3) + 1e-12)


def test_symmetric_world_boundary_has_maximal_entropy(two_class_world):
    report = two_class_world.posterior(np.array([0.0, 1.3]))
    np.testing.assert_allclose(report.probs, [0.5, 0.5], atol=1e-12)
    assert report.entropy == pytest.approx(math.log(2), abs=1e-12)
    np.testing.assert_allclose(report.entropy_grad, 0.0, atol=1e-12)


def test_single_class_has_zero_entropy(gaussian_world):
    report = gaussian_world.posterior(np.array([[3.0, 1.0], [0.0, 0.0]]))
    np.testing.assert_allclose(report.entropy, 0.0)
    np.testing.assert_allclose(report.entropy_grad, 0.0, atol=1e-12)


def test_entropy_gradient_matches_finite_differences(world, rng):
    x = rng.normal(0.0, 2.0, (400, 2))
    keep = world.posterior(x).probs.min(axis=1) > 1e-6
    x = x[keep][:100]
    assert x.shape[0] > 10
    analytic = world.posterior(x).entropy_grad
    numeric = _central_difference(lambda p: world.posterior(p).entropy, x)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)


@pytest.mark.parametrize("label", [0, 1, 2])
def test_log_prob_gradient_matches_finite_differences(world, rng, label):
    x = rng.normal(0.0, 2.0, (50, 2))
    analytic = world.log_prob_grad(x, label)
    numeric = _central_difference(lambda p: world.class_log_probs(p)[:, label], x)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_marginal_at_zero_is_the_data_distribution(world, cosine_schedule):
    assert marginal_at(world, cosine_schedule, 0) is world


def test_marginal_at_final_step_is_close_to_standard_normal(world, cosine_schedule):
    marginal = marginal_at(world, cosine_schedule, cosine_schedule.T)
    np.testing.assert_allclose(marginal.means, 0.0, atol=1e-2)
    np.testing.assert_allclose(marginal.covariances, np.repeat(np.eye(2)[None], 3, axis=0), atol=1e-5)


def test_exact_epsilon_is_zero_on_clean_data(world, cosine_schedule, rng):
    x = rng.standard_normal((10, 2))
    np.testing.assert_array_equal(exact_epsilon(world, cosine_schedule, x, 0), 0.0)


def test_exact_epsilon_standard_normal_world(gaussian_world, cosine_schedule, rng):
    x = rng.standard_normal((10, 2))
    t = 20
    expected = math.sqrt(1.0 - cosine_schedule.alpha_bar(t)) * x
    np.testing.assert_allclose(exact_epsilon(gaussian_world, cosine_schedule, x, t), expected, atol=1e-12)


def test_sample_data_is_deterministic_and_labelled(world):
    first = sample_data(world, 3000, seed=7)
    second = sample_data(world, 3000, seed=7)
    np.testing.assert_array_equal(first.points, second.points)
    assert first.stage is Stage.DATA
    assert set(np.unique(first.labels)) == {0, 1, 2}
    for c in range(3):
        np.testing.assert_allclose(first.points[first.labels == c].mean(axis=0), world.means[c], atol=0.15)


def test_sample_data_rejects_empty_batch(world):
    with pytest.raises(InvalidParameterError):
        sample_data(world, 0, seed=0)


@pytest.mark.parametrize("t", [5, 25, 45])
def test_forward_diffusion_of_draws_matches_marginal(world, cosine_schedule, t):
    rng = np.random.Generator(np.random.Philox(31 + t))
    x0, _ = world.draw(100_000, rng)
    x_t = q_sample(x0, t, rng.standard_normal(x0.shape), cosine_schedule)

    marginal = marginal_at(world, cosine_schedule, t)
    mean = marginal.weights @ marginal.means
    second = np.einsum("k,kij->ij", marginal.weights,
                       marginal.covariances + marginal.means[:, :, None] * marginal.means[:, None, :])
    cov = second - np.outer(mean, mean)

    n = x_t.shape[0]
    sample_mean = x_t.mean(axis=0)
    assert np.all(np.abs(sample_mean - mean) <= 3.0 * x_t.std(axis=0) / math.sqrt(n))
    centered = x_t - sample_mean
    products = centered[:, :, None] * centered[:, None, :]
    assert np.all(np.abs(products.mean(axis=0) - cov) <= 3.0 * products.std(axis=0) / math.sqrt(n))
