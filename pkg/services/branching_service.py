import logging
import math
from typing import Callable, List, Optional, Sequence

import numpy as np

from models import BbmState, SelectionConfig, Snapshot, SnapshotSeries, EstimateWithCI
from services.kernel_service import KernelService
from services.levy_service import LevyService
from services.stats_service import StatsService
from exceptions import ParameterError, GrowthError
from config import config

logger = logging.getLogger(__name__)

Profile = Callable[[np.ndarray], np.ndarray]


class BranchingService:
    """Branching Brownian motion, N-BBM (kill the leftmost at each branching) and N-BRW.

    All simulations are event driven: positions are advanced exactly to the
    next branching time, so there is no time-discretization error.
    """

    def __init__(self, kernel_service: Optional[KernelService] = None, levy_service: Optional[LevyService] = None,
                 stats_service: Optional[StatsService] = None):
        self.kernel_service = kernel_service or KernelService()
        self.levy_service = levy_service or LevyService()
        self.stats_service = stats_service or StatsService()
        logger.info("Branching service initialized")

    # ------------------------------------------------------------------
    # Plain BBM and McKean's representation
    # ------------------------------------------------------------------

    def bbm_run(self, rng: np.random.Generator, r: float, t_max: float, cap: int = None, x0: float = 0.0) -> BbmState:
        """Binary branching at rate r per particle, standard Brownian motion between branchings"""
        cap = cap or config.BBM_POPULATION_CAP
        if r < 0:
            raise ParameterError(f"branching rate must be non-negative, got r={r}")
        if t_max < 0:
            raise ParameterError(f"horizon must be non-negative, got t_max={t_max}")
        if r * t_max > math.log(cap):
            logger.warning(f"expected population e^(r t)={math.exp(r * t_max):.3g} exceeds cap {cap}")

        x = np.array([x0], dtype=float)
        t, events = 0.0, 0
        while True:
            wait = rng.exponential(1.0 / (r * x.size)) if r > 0 else math.inf
            remaining = t_max - t
            if wait >= remaining:
                x += math.sqrt(remaining) * rng.standard_normal(x.size)
                break
            x += math.sqrt(wait) * rng.standard_normal(x.size)
            t += wait
            # the parent survives and a copy is added at its position
            x = np.append(x, x[rng.integers(x.size)])
            events += 1
            if x.size > cap:
                logger.error(f"BBM population {x.size} exceeded cap {cap} at t={t}")
                raise GrowthError(f"population exceeded cap {cap} at t={t:g}", t_reached=t)
        return BbmState(positions=x, t=t_max, events=events)

    def mckean_profile(self, rng: np.random.Generator, v0: Profile, r: float, t: float, xs: Sequence[float],
                       reps: int) -> List[EstimateWithCI]:
        """Monte Carlo of v(t, x) = E prod_i v0(xi_t(i) + x) for every x, sharing the BBM replicas"""
        if reps < 1:
            raise ParameterError(f"need at least one replica, got reps={reps}")
        xs = np.asarray(xs, dtype=float)
        products = np.empty((reps, xs.size))
        for k in range(reps):
            state = self.bbm_run(rng, r, t)
            values = np.asarray(v0(state.positions[:, None] + xs[None, :]), dtype=float)
            if np.any(values < 0) or np.any(values > 1):
                raise ParameterError("initial profile v0 must take values in [0, 1]")
            products[k] = values.prod(axis=0)

        stderr = products.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros(xs.size)
        return [EstimateWithCI(value=float(m), stderr=float(s), n=reps) for m, s in zip(products.mean(axis=0), stderr)]

    def mckean_mc(self, rng: np.random.Generator, v0: Profile, r: float, t: float, x: float, reps: int) -> EstimateWithCI:
        return self.mckean_profile(rng, v0, r, t, [x], reps)[0]

    # ------------------------------------------------------------------
    # Selection
    # ------------------------------------------------------------------

    @staticmethod
    def _apply_branch_event(x: np.ndarray, child: float) -> bool:
        """Insert ``child`` and delete the minimum of the N+1 positions; False when the child itself is deleted"""
        leftmost = int(np.argmin(x))  # lowest index on ties
        if x[leftmost] <= child:
            x[leftmost] = child
            return True
        return False

    def _selection_run(self, cfg: SelectionConfig, init: Sequence[float], kind: str,
                       motion: Callable[[np.ndarray, float, np.random.Generator], None],
                       offspring: Callable[[np.ndarray, int, np.random.Generator], float]) -> SnapshotSeries:
        x = np.asarray(init, dtype=float).copy()
        if x.size != cfg.N:
            raise ParameterError(f"expected {cfg.N} initial positions, got {x.size}")

        rng = cfg.stream.generator()
        total_rate = cfg.N * cfg.r
        n_snapshots = int(math.floor(cfg.T / cfg.dt + 1e-9))
        targets = list(cfg.dt * np.arange(1, n_snapshots + 1))
        if not targets or targets[-1] < cfg.T - 1e-12:
            targets.append(cfg.T)

        series = SnapshotSeries(kind=kind, N=cfg.N, diagnostics={"r": cfg.r, "seed": cfg.seed, "stream_id": cfg.stream_id})
        t, events, rejected = 0.0, 0, 0

        def record(index: int):
            dump = cfg.dump_positions_every and index % cfg.dump_positions_every == 0
            series.snapshots.append(Snapshot(
                t=t,
                positions=np.sort(x) if dump or index == len(targets) else None,
                counters={"N": float(x.size), "min": float(x.min()), "median": float(np.median(x)),
                          "max": float(x.max()), "events": float(events)},
            ))

        record(0)
        logger.info(f"{kind} run: N={cfg.N}, rate={cfg.r}, T={cfg.T}")
        next_event = rng.exponential(1.0 / total_rate)
        for index, target in enumerate(targets, start=1):
            while next_event <= target:
                motion(x, next_event - t, rng)
                t = next_event
                parent = int(rng.integers(cfg.N))
                if not self._apply_branch_event(x, offspring(x, parent, rng)):
                    rejected += 1
                events += 1
                next_event = t + rng.exponential(1.0 / total_rate)
            motion(x, target - t, rng)
            t = target
            record(index)

        series.diagnostics.update({"events": events, "children_deleted": rejected})
        logger.info(f"{kind} run finished: {events} events")
        return series

    def nbbm_run(self, cfg: SelectionConfig, init: Sequence[float]) -> SnapshotSeries:
        """N-BBM; with ``cfg.triplet`` set the motion between branchings is that Levy process (N-BLP)"""
        triplet = cfg.triplet

        def motion(x: np.ndarray, step: float, rng: np.random.Generator):
            if step <= 0:
                return
            if triplet is None:
                x += math.sqrt(step) * rng.standard_normal(x.size)
            else:
                x += self.kernel_service.levy_increments(rng, triplet, 0.0, step, x.size)

        return self._selection_run(cfg, init, "nbbm" if triplet is None else "nblp", motion,
                                   lambda x, parent, rng: x[parent])

    def nbrw_run(self, cfg: SelectionConfig, init: Sequence[float]) -> SnapshotSeries:
        """N-BRW: births at rate r per particle, child at parent + rho-distributed displacement"""
        if cfg.displacement is None:
            raise ParameterError("N-BRW needs a displacement law")
        jumps = cfg.displacement

        def offspring(x: np.ndarray, parent: int, rng: np.random.Generator) -> float:
            return float(x[parent] + self.kernel_service.jump_sizes(rng, jumps, 1)[0])

        return self._selection_run(cfg, init, "nbrw", lambda x, step, rng: None, offspring)

    def velocity_ceiling(self, cfg: SelectionConfig, kind: str = "nbbm") -> float:
        """Macroscopic minimal velocity that the N-particle front approaches from below"""
        if kind == "nbrw":
            return self.levy_service.branching_walk_speed(cfg.displacement, cfg.r)
        if cfg.triplet is None:
            return math.sqrt(2 * cfg.r)
        return self.levy_service.min_velocity(self.levy_service.laplace_exponent(cfg.triplet), cfg.r)

    def front_velocity(self, series: SnapshotSeries, burn_in: float, statistic: str = "median") -> EstimateWithCI:
        """Slope of an order statistic of the cloud against time after burn_in"""
        if statistic not in ("min", "median", "max"):
            raise ParameterError(f"unknown statistic '{statistic}'")
        t = series.times()
        kept = int((t >= burn_in).sum())
        if kept < 10:
            raise ParameterError(f"only {kept} snapshots after burn-in {burn_in}; need at least 10")
        batches = max(2, min(10, kept // 5))
        return self.stats_service.slope_with_batch_error(t, series.counter(statistic), burn_in, batches)
