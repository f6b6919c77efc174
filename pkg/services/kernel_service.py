import logging
import math
from typing import Union

import numpy as np

from models import RngStream, JumpLaw, LevyTriplet
from exceptions import ParameterError

logger = logging.getLogger(__name__)

Rng = Union[np.random.Generator, RngStream]


class KernelService:
    """Seeded variates and single-step increments of drifted Brownian / compound Poisson paths.

    Every operation takes a ``numpy.random.Generator`` built once from an
    ``RngStream`` (``stream.generator()``) and owned by one simulation.
    Passing an ``RngStream`` directly starts a fresh generator, which is only
    sensible for one-shot draws.
    """

    def __init__(self):
        logger.info("Kernel service initialized")

    @staticmethod
    def generator(rng: Rng) -> np.random.Generator:
        if isinstance(rng, RngStream):
            return rng.generator()
        return rng

    @staticmethod
    def _check_step(dt: float, sigma: float):
        if not dt > 0:
            raise ParameterError(f"time step must be positive, got dt={dt}")
        if not sigma > 0:
            raise ParameterError(f"diffusion must be positive, got sigma={sigma}")

    def gaussian_increment(self, rng: Rng, dt: float, sigma: float) -> float:
        """Normal(0, sigma^2 dt); consumes exactly one standard normal draw"""
        self._check_step(dt, sigma)
        return float(sigma * math.sqrt(dt) * self.generator(rng).standard_normal())

    def gaussian_increments(self, rng: Rng, dt: float, sigma: float, size: int) -> np.ndarray:
        self._check_step(dt, sigma)
        return sigma * math.sqrt(dt) * self.generator(rng).standard_normal(size)

    def jump_sizes(self, rng: Rng, jumps: JumpLaw, count: int) -> np.ndarray:
        """I.i.d. draws from the normalized jump density"""
        rng = self.generator(rng)
        if count == 0 or jumps.kind == "none":
            return np.zeros(count)
        if jumps.kind == "two_sided_exponential":
            up = rng.random(count) < jumps.p_up
            magnitude = rng.standard_exponential(count)
            return np.where(up, magnitude / jumps.rate_up, -magnitude / jumps.rate_down)
        if jumps.kind == "gaussian":
            return jumps.mean + jumps.std * rng.standard_normal(count)
        locations = np.asarray(jumps.locations, dtype=float)
        return locations[rng.choice(locations.size, size=count, p=np.asarray(jumps.weights))]

    def levy_increments(self, rng: Rng, triplet: LevyTriplet, c: float, dt: float, size: int) -> np.ndarray:
        """``size`` independent increments of Z^c_t = Z_t - ct over dt.

        Draw order: ``size`` standard normals, then (if jumps are present)
        ``size`` Poisson counts, then the jump sizes in particle order.
        """
        if not isinstance(triplet, LevyTriplet):
            raise ParameterError(f"expected a LevyTriplet, got {type(triplet).__name__}")
        self._check_step(dt, triplet.diffusion)
        rng = self.generator(rng)

        increments = (triplet.drift - c) * dt + triplet.diffusion * math.sqrt(dt) * rng.standard_normal(size)
        jumps = triplet.jumps
        if jumps.intensity > 0:
            counts = rng.poisson(jumps.intensity * dt, size)
            total = int(counts.sum())
            if total:
                owners = np.repeat(np.arange(size), counts)
                increments += np.bincount(owners, weights=self.jump_sizes(rng, jumps, total), minlength=size)
        return increments

    def levy_increment(self, rng: Rng, triplet: LevyTriplet, c: float, dt: float) -> float:
        return float(self.levy_increments(rng, triplet, c, dt, 1)[0])

    @staticmethod
    def bridge_hit_probability(x0: float, x1: float, dt: float, sigma: float) -> float:
        """Probability that a Brownian bridge from x0 to x1 over dt touches 0"""
        if x0 <= 0 or x1 <= 0:
            return 1.0
        KernelService._check_step(dt, sigma)
        return math.exp(-2.0 * x0 * x1 / (sigma**2 * dt))

    @staticmethod
    def bridge_hit_probabilities(x0: np.ndarray, x1: np.ndarray, dt: float, sigma: float) -> np.ndarray:
        KernelService._check_step(dt, sigma)
        x0 = np.asarray(x0, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        exponent = -2.0 * np.clip(x0, 0, None) * np.clip(x1, 0, None) / (sigma**2 * dt)
        return np.where((x0 <= 0) | (x1 <= 0), 1.0, np.exp(exponent))
