import math

import numpy as np
import pytest
from scipy import stats

from models import JumpLaw, LevyTriplet, RngStream
from exceptions import ParameterError

N_DRAWS = 10**6


def test_stream_splitting_is_deterministic():
    a = RngStream(seed=1, stream_id=3)
    assert a.child_seed() == RngStream(seed=1, stream_id=3).child_seed()
    assert a.child_seed() != RngStream(seed=1, stream_id=4).child_seed()
    assert a.child_seed() != RngStream(seed=2, stream_id=3).child_seed()
    np.testing.assert_array_equal(a.generator().random(5), a.generator().random(5))


def test_gaussian_increment_consumes_one_draw(kernel_service):
    stream = RngStream(seed=11)
    rng = stream.generator()
    first = kernel_service.gaussian_increment(rng, 1.0, 1.0)
    second = kernel_service.gaussian_increment(rng, 1.0, 1.0)
    reference = stream.generator().standard_normal(2)
    assert first == pytest.approx(reference[0], abs=0)
    assert second == pytest.approx(reference[1], abs=0)


def test_gaussian_increments_mean(kernel_service, rng):
    draws = kernel_service.gaussian_increments(rng, 1.0, 1.0, N_DRAWS)
    assert abs(draws.mean()) < 4e-3


@pytest.mark.parametrize("dt,sigma,variance", [(0.01, 1.0, 0.01), (4.0, 0.5, 1.0)])
def test_gaussian_increments_variance(kernel_service, rng, dt, sigma, variance):
    draws = kernel_service.gaussian_increments(rng, dt, sigma, N_DRAWS)
    assert draws.var() == pytest.approx(variance, rel=0.01)


@pytest.mark.parametrize("dt,sigma", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
def test_gaussian_increment_rejects_bad_step(kernel_service, rng, dt, sigma):
    with pytest.raises(ParameterError):
        kernel_service.gaussian_increment(rng, dt, sigma)


def test_levy_increments_brownian_are_standard_normal(kernel_service, rng, brownian):
    draws = kernel_service.levy_increments(rng, brownian, 0.0, 1.0, 10**5)
    assert stats.kstest(draws, "norm").statistic < 0.01


def test_levy_increments_drift_shifts_mean(kernel_service, rng, brownian):
    draws = kernel_service.levy_increments(rng, brownian, 1.0, 1.0, N_DRAWS)
    assert abs(draws.mean() + 1.0) < 4e-3


def test_levy_increments_compound_poisson_variance(kernel_service, rng, exp_jumps_triplet):
    draws = kernel_service.levy_increments(rng, exp_jumps_triplet, 0.0, 1.0, N_DRAWS)
    # 1 + intensity * E[Y^2] with E[Y^2] = 2 / rate^2
    assert draws.var() == pytest.approx(1.5, rel=0.02)
    assert abs(draws.mean()) < 5 * math.sqrt(1.5 / N_DRAWS)


def test_levy_increment_rejects_non_triplet(kernel_service, rng):
    with pytest.raises(ParameterError):
        kernel_service.levy_increment(rng, {"drift": 0.0}, 0.0, 1.0)


def test_empirical_cumulant_matches_psi(kernel_service, levy_service, rng, exp_jumps_triplet):
    le = levy_service.laplace_exponent(exp_jumps_triplet)
    theta, dt = 0.5, 1.0
    draws = kernel_service.levy_increments(rng, exp_jumps_triplet, 0.0, dt, N_DRAWS)
    weights = np.exp(theta * draws)
    mean = weights.mean()
    # delta method: stderr of log(mean) is stderr(mean) / mean
    stderr = weights.std(ddof=1) / math.sqrt(N_DRAWS) / mean
    assert abs(math.log(mean) / dt - levy_service.psi(le, theta)) < 3 * stderr + 1e-12


def test_point_mass_jump_sizes(kernel_service, rng):
    jumps = JumpLaw.point_masses([-1.0, 1.0], [0.5, 0.5], intensity=1.0)
    sizes = kernel_service.jump_sizes(rng, jumps, 10**4)
    assert set(np.unique(sizes)) == {-1.0, 1.0}
    assert abs(sizes.mean()) < 0.05


@pytest.mark.parametrize("x0,x1,dt,sigma,expected", [
    (1.0, 1.0, 1.0, 1.0, math.exp(-2.0)),
    (0.0, 5.0, 1.0, 1.0, 1.0),
    (10.0, 10.0, 0.01, 1.0, 0.0),
    (-1.0, 2.0, 1.0, 1.0, 1.0),
])
def test_bridge_hit_probability(kernel_service, x0, x1, dt, sigma, expected):
    assert kernel_service.bridge_hit_probability(x0, x1, dt, sigma) == pytest.approx(expected, abs=1e-12)
    vectorized = kernel_service.bridge_hit_probabilities(np.array([x0]), np.array([x1]), dt, sigma)
    assert vectorized[0] == pytest.approx(expected, abs=1e-12)


def test_bridge_hit_probability_against_fine_bridge(kernel_service, rng):
    paths, steps = 5000, 2000
    hits = 0
    for chunk in np.array_split(np.arange(paths), 5):
        walk = np.cumsum(rng.standard_normal((chunk.size, steps)) / math.sqrt(steps), axis=1)
        s = np.arange(1, steps + 1) / steps
        # Brownian bridge from 1 to 1 over [0, 1]
        bridge = 1.0 + walk - s * walk[:, -1:]
        hits += int((bridge.min(axis=1) <= 0).sum())
    # discrete monitoring misses a few crossings, so the estimate sits slightly low
    assert hits / paths == pytest.approx(kernel_service.bridge_hit_probability(1.0, 1.0, 1.0, 1.0), abs=0.02)
