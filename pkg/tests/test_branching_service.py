import math

import numpy as np
import pytest
from scipy import stats

from models import EstimateWithCI, Grid1D, JumpLaw, LevyTriplet, PdeConfig, SelectionConfig, Snapshot, SnapshotSeries
from services.branching_service import BranchingService
from exceptions import GrowthError, ParameterError


@pytest.mark.parametrize("start,child,expected,kept", [
    ([0.0, 5.0], 5.0, [5.0, 5.0], True),
    ([0.0, 5.0], 0.0, [0.0, 5.0], True),
    ([0.0, 5.0], -1.0, [0.0, 5.0], False),
    ([3.0, 1.0, 2.0], 2.5, [3.0, 2.5, 2.0], True),
    ([1.0, 1.0], 4.0, [4.0, 1.0], True),
])
def test_branch_event_deletes_leftmost(start, child, expected, kept):
    x = np.array(start)
    assert BranchingService._apply_branch_event(x, child) is kept
    np.testing.assert_array_equal(x, expected)


def test_bbm_without_branching(branching_service, rng):
    state = branching_service.bbm_run(rng, 0.0, 5.0)
    assert state.positions.size == 1
    assert state.events == 0
    assert state.t == 5.0


def test_bbm_population_mean(branching_service, rng):
    sizes = np.array([branching_service.bbm_run(rng, 1.0, 2.0).positions.size for _ in range(2000)])
    stderr = sizes.std(ddof=1) / math.sqrt(sizes.size)
    assert abs(sizes.mean() - math.exp(2.0)) < 4 * stderr


def test_bbm_population_cap(branching_service, rng):
    with pytest.raises(GrowthError) as err:
        branching_service.bbm_run(rng, 5.0, 10.0, cap=50)
    assert err.value.t_reached < 10.0


def test_bbm_rejects_bad_parameters(branching_service, rng):
    with pytest.raises(ParameterError):
        branching_service.bbm_run(rng, -1.0, 1.0)
    with pytest.raises(ParameterError):
        branching_service.bbm_run(rng, 1.0, -1.0)


@pytest.mark.parametrize("level", [0.0, 1.0])
def test_mckean_constant_profiles(branching_service, rng, level):
    estimate = branching_service.mckean_mc(rng, lambda y: np.full(np.shape(y), level), 1.0, 1.0, 0.0, 50)
    assert estimate.value == level
    assert estimate.stderr == 0.0


def test_mckean_rejects_profile_outside_unit_interval(branching_service, rng):
    with pytest.raises(ParameterError):
        branching_service.mckean_mc(rng, lambda y: np.full(np.shape(y), 2.0), 1.0, 1.0, 0.0, 5)
    with pytest.raises(ParameterError):
        branching_service.mckean_mc(rng, lambda y: np.ones(np.shape(y)), 1.0, 1.0, 0.0, 0)


def test_mckean_without_branching_is_gaussian(branching_service, rng):
    # r = 0 leaves a single Brownian particle: v(t, x) = P(x + B_t >= 0)
    estimate = branching_service.mckean_mc(rng, lambda y: (y >= 0).astype(float), 0.0, 1.0, 0.5, 4000)
    assert abs(estimate.value - stats.norm.cdf(0.5)) < 4 * estimate.stderr


@pytest.mark.slow
def test_mckean_matches_kpp(branching_service, pde_service, rng):
    xs = np.array([-2.0, 0.0, 2.0])
    estimates = branching_service.mckean_profile(rng, lambda y: (y >= 0).astype(float), 1.0, 1.0, xs, 100000)
    grid = Grid1D(xmin=-30.0, xmax=30.0, h=0.02)
    v0 = grid.function(np.where(grid.nodes > 0, 1.0, np.where(grid.nodes == 0, 0.5, 0.0)))
    series = pde_service.kpp_solve(v0, 1.0, PdeConfig(grid=grid, dt=pde_service.stable_dt(0.02), T=1.0))
    reference = np.interp(xs, grid.nodes, series.snapshots[-1].values.values)
    for estimate, expected in zip(estimates, reference):
        assert estimate.stderr > 0
        assert abs(estimate.value - expected) < 3 * estimate.stderr


def test_nbbm_run_shape(branching_service):
    cfg = SelectionConfig(N=10, r=1.0, dt=0.5, T=5.0, dump_positions_every=2)
    series = branching_service.nbbm_run(cfg, np.zeros(10))
    assert series.kind == "nbbm"
    assert len(series.snapshots) == 11
    np.testing.assert_allclose(series.times(), 0.5 * np.arange(11))
    assert np.all(series.counter("N") == 10)
    dumped = [s.positions is not None for s in series.snapshots]
    assert dumped == [True, False, True, False, True, False, True, False, True, False, True]
    for s in series.snapshots:
        assert s.counters["min"] <= s.counters["median"] <= s.counters["max"]
    assert series.diagnostics["events"] == series.snapshots[-1].counters["events"]


def test_nbbm_is_deterministic(branching_service):
    cfg = SelectionConfig(N=20, r=1.0, dt=1.0, T=10.0, seed=3)
    first = branching_service.nbbm_run(cfg, np.zeros(20))
    second = branching_service.nbbm_run(cfg, np.zeros(20))
    np.testing.assert_array_equal(first.snapshots[-1].positions, second.snapshots[-1].positions)


def test_nbbm_rejects_wrong_population(branching_service):
    with pytest.raises(ParameterError):
        branching_service.nbbm_run(SelectionConfig(N=10, T=1.0), np.zeros(5))


def test_nblp_kind(branching_service):
    triplet = LevyTriplet.centered(jumps=JumpLaw.two_sided_exponential(rate=2.0, intensity=1.0))
    series = branching_service.nbbm_run(SelectionConfig(N=10, T=2.0, triplet=triplet), np.zeros(10))
    assert series.kind == "nblp"


def test_nbrw_stays_on_lattice(branching_service):
    rho = JumpLaw.point_masses([-1.0, 1.0], [0.5, 0.5], intensity=1.0)
    series = branching_service.nbrw_run(SelectionConfig(N=50, r=1.0, displacement=rho, dt=1.0, T=20.0), np.zeros(50))
    final = series.snapshots[-1].positions
    np.testing.assert_array_equal(final, np.round(final))
    assert series.snapshots[-1].counters["median"] > 0
    with pytest.raises(ParameterError):
        branching_service.nbrw_run(SelectionConfig(N=5, T=1.0), np.zeros(5))


def test_selection_config_rejects_drifting_displacement():
    with pytest.raises(ValueError):
        SelectionConfig(N=5, T=1.0, displacement=JumpLaw.gaussian(std=1.0, intensity=1.0, mean=0.3))


def test_velocity_ceiling(branching_service):
    assert branching_service.velocity_ceiling(SelectionConfig(N=5, r=0.5, T=1.0)) == pytest.approx(1.0)
    rho = JumpLaw.gaussian(std=1.0, intensity=1.0)
    cfg = SelectionConfig(N=5, r=1.0, T=1.0, displacement=rho)
    assert branching_service.velocity_ceiling(cfg, "nbrw") == pytest.approx(math.exp(0.5), rel=1e-8)


def _synthetic_series(times, positions):
    return SnapshotSeries(kind="nbbm", N=1, snapshots=[
        Snapshot(t=t, counters={"min": x - 1.0, "median": x, "max": x + 1.0}) for t, x in zip(times, positions)
    ])


def test_front_velocity_of_synthetic_front(branching_service):
    times = np.linspace(0, 50, 101)
    series = _synthetic_series(times, 0.8 * times)
    for statistic in ("min", "median", "max"):
        estimate = branching_service.front_velocity(series, burn_in=10.0, statistic=statistic)
        assert isinstance(estimate, EstimateWithCI)
        assert estimate.value == pytest.approx(0.8, abs=1e-10)


def test_front_velocity_contract(branching_service):
    series = _synthetic_series(np.arange(12.0), np.arange(12.0))
    with pytest.raises(ParameterError):
        branching_service.front_velocity(series, burn_in=5.0)
    with pytest.raises(ParameterError):
        branching_service.front_velocity(series, burn_in=0.0, statistic="mean")


def _front_velocities(branching_service, run, configs, burn_in):
    return [branching_service.front_velocity(run(cfg, np.zeros(cfg.N)), burn_in=burn_in) for cfg in configs]


def _nondecreasing_within_error(estimates):
    for lower, upper in zip(estimates, estimates[1:]):
        assert upper.value >= lower.value - 2 * math.hypot(lower.stderr, upper.stderr)


@pytest.mark.slow
def test_nbbm_velocity_increases_towards_minimal(branching_service):
    configs = [SelectionConfig(N=N, r=0.5, dt=1.0, T=200.0, seed=9, dump_positions_every=0) for N in (100, 300, 1000)]
    velocities = _front_velocities(branching_service, branching_service.nbbm_run, configs, burn_in=50.0)
    _nondecreasing_within_error(velocities)
    largest = velocities[-1]
    assert 0.8 <= largest.value <= 1.0
    assert largest.upper() < 1.02
    assert largest.value < branching_service.velocity_ceiling(configs[-1])


@pytest.mark.slow
def test_nbrw_velocity_below_ceiling_and_increasing(branching_service):
    rho = JumpLaw.gaussian(std=1.0, intensity=1.0)
    configs = [SelectionConfig(N=N, r=1.0, displacement=rho, dt=1.0, T=60.0, seed=9, dump_positions_every=0)
               for N in (100, 1000)]
    velocities = _front_velocities(branching_service, branching_service.nbrw_run, configs, burn_in=20.0)
    ceiling = branching_service.velocity_ceiling(configs[0], "nbrw")
    assert ceiling == pytest.approx(math.exp(0.5), rel=1e-8)
    _nondecreasing_within_error(velocities)
    for velocity in velocities:
        assert 0 < velocity.value < ceiling
