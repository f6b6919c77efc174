import logging
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, stats

from models import EstimateWithCI, GridFunction
from exceptions import ParameterError
from config import config

logger = logging.getLogger(__name__)


class EmpiricalCdf:
    """Right-continuous step CDF of a multiset of positions"""

    def __init__(self, positions: Sequence[float]):
        self.sorted = np.sort(np.asarray(positions, dtype=float).reshape(-1))
        if self.sorted.size == 0:
            raise ParameterError("empirical CDF of an empty sample")

    @property
    def n(self) -> int:
        return int(self.sorted.size)

    @property
    def steps(self) -> np.ndarray:
        return np.unique(self.sorted)

    def __call__(self, x):
        values = np.searchsorted(self.sorted, np.asarray(x, dtype=float), side="right") / self.n
        return float(values) if np.ndim(x) == 0 else values

    def left_limit(self, x):
        values = np.searchsorted(self.sorted, np.asarray(x, dtype=float), side="left") / self.n
        return float(values) if np.ndim(x) == 0 else values


Cdf = Union[EmpiricalCdf, Callable[[np.ndarray], np.ndarray]]


class StatsService:
    def __init__(self):
        logger.info("Stats service initialized")

    def ecdf(self, positions: Sequence[float]) -> EmpiricalCdf:
        return EmpiricalCdf(positions)

    @staticmethod
    def _left(F: Cdf, x: np.ndarray) -> np.ndarray:
        # continuous CDFs are their own left limits
        return F.left_limit(x) if isinstance(F, EmpiricalCdf) else np.asarray(F(x), dtype=float)

    def ks_distance(self, F: Cdf, G: Cdf, nodes: Optional[np.ndarray] = None) -> float:
        """sup |F - G| over the evaluation nodes and every step location, left limits included"""
        steps = [H.steps for H in (F, G) if isinstance(H, EmpiricalCdf)]
        if nodes is None:
            if not steps:
                raise ParameterError("evaluation nodes are required when neither CDF is empirical")
            support = np.concatenate(steps)
            nodes = np.linspace(support.min(), support.max(), config.KS_GRID_POINTS)
        points = np.unique(np.concatenate([np.asarray(nodes, dtype=float).reshape(-1)] + steps))

        right = np.abs(np.asarray(F(points), dtype=float) - np.asarray(G(points), dtype=float))
        distance = float(right.max())
        if steps:
            left = np.abs(self._left(F, points) - self._left(G, points))
            distance = max(distance, float(left.max()))
        return distance

    def grid_cdf(self, density: GridFunction) -> Callable[[np.ndarray], np.ndarray]:
        """Distribution function of a grid density (cumulative trapezoid, normalized, linear in between)"""
        nodes = density.nodes
        cumulative = integrate.cumulative_trapezoid(density.values, dx=density.h, initial=0.0)
        if not cumulative[-1] > 0:
            raise ParameterError("grid density has no mass")
        cumulative = cumulative / cumulative[-1]
        return lambda x: np.interp(x, nodes, cumulative, left=0.0, right=1.0)

    def linear_fit(self, x: np.ndarray, y: np.ndarray) -> Tuple[float, float, float]:
        """(slope, intercept, slope stderr) of ordinary least squares"""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.size < 2:
            raise ParameterError(f"a line needs at least 2 points, got {x.size}")
        if x.size == 2:
            slope = (y[1] - y[0]) / (x[1] - x[0])
            return float(slope), float(y[0] - slope * x[0]), 0.0
        fit = stats.linregress(x, y)
        stderr = float(fit.stderr) if np.isfinite(fit.stderr) else 0.0
        return float(fit.slope), float(fit.intercept), stderr

    def tail_log_slope(self, x: np.ndarray, values: np.ndarray, window: Tuple[float, float]) -> EstimateWithCI:
        """Least-squares slope of -log(value) against x over the window"""
        x = np.asarray(x, dtype=float)
        values = np.asarray(values, dtype=float)
        mask = (x >= window[0]) & (x <= window[1])
        if mask.sum() < 2:
            raise ParameterError(f"fewer than 2 points inside window {window}")
        if np.any(values[mask] <= 0):
            raise ParameterError(f"non-positive values inside window {window}")
        slope, _, stderr = self.linear_fit(x[mask], -np.log(values[mask]))
        return EstimateWithCI(value=slope, stderr=stderr, n=int(mask.sum()))

    def _batches(self, t: np.ndarray, y: np.ndarray, burn_in: float, batches: int):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if batches < 2:
            raise ParameterError(f"batch means need at least 2 batches, got {batches}")
        mask = t >= burn_in
        t, y = t[mask], y[mask]
        if t.size < 5 * batches:
            raise ParameterError(f"{t.size} points after burn-in {burn_in} cannot fill {batches} batches of 5")
        return t, y, list(zip(np.array_split(t, batches), np.array_split(y, batches)))

    def batch_means_regression(self, t: np.ndarray, y: np.ndarray, burn_in: float, batches: int = 10) -> EstimateWithCI:
        """Mean of per-batch slopes with the between-batch standard error"""
        _, _, groups = self._batches(t, y, burn_in, batches)
        slopes = np.array([self.linear_fit(tb, yb)[0] for tb, yb in groups])
        return EstimateWithCI(value=float(slopes.mean()), stderr=float(slopes.std(ddof=1) / np.sqrt(batches)), n=batches)

    def slope_with_batch_error(self, t: np.ndarray, y: np.ndarray, burn_in: float, batches: int = 10) -> EstimateWithCI:
        """Overall least-squares slope after burn-in; stderr from batch means"""
        t_kept, y_kept, groups = self._batches(t, y, burn_in, batches)
        slope = self.linear_fit(t_kept, y_kept)[0]
        slopes = np.array([self.linear_fit(tb, yb)[0] for tb, yb in groups])
        return EstimateWithCI(value=slope, stderr=float(slopes.std(ddof=1) / np.sqrt(batches)), n=batches)
