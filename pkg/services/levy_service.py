import logging
import math
from typing import Callable

import numpy as np
from scipy import integrate, optimize, stats

from models import JumpLaw, LevyTriplet, LaplaceExponent, DualityPoint
from exceptions import ParameterError, DomainError
from config import config

logger = logging.getLogger(__name__)


class LevyService:
    """Laplace exponent psi, its drifted version psi_c and the velocity / absorption-rate duality.

    Convention for finite-activity jumps: psi(theta) = b theta + sigma^2 theta^2 / 2
    + intensity (M(theta) - 1), with M the moment generating function of the
    normalized jump law. Centering sets b = -intensity E[jump].
    """

    def __init__(self):
        logger.info("Levy service initialized")

    def laplace_exponent(self, triplet: LevyTriplet) -> LaplaceExponent:
        return LaplaceExponent(triplet=triplet, theta_star=triplet.jumps.theta_star)

    # ------------------------------------------------------------------
    # Jump moment generating functions
    # ------------------------------------------------------------------

    def jump_mgf(self, jumps: JumpLaw, theta: float) -> float:
        """E[e^{theta Y}] for Y drawn from the normalized jump law"""
        if jumps.kind == "none":
            return 1.0
        with np.errstate(over="ignore"):
            if jumps.kind == "two_sided_exponential":
                if not -jumps.rate_down < theta < jumps.rate_up:
                    raise DomainError(
                        f"theta={theta} outside the mgf domain (-{jumps.rate_down}, {jumps.rate_up})"
                    )
                return (jumps.p_up * jumps.rate_up / (jumps.rate_up - theta)
                        + (1.0 - jumps.p_up) * jumps.rate_down / (jumps.rate_down + theta))
            if jumps.kind == "gaussian":
                return float(np.exp(jumps.mean * theta + 0.5 * jumps.std**2 * theta**2))
            return float(np.dot(jumps.weights, np.exp(theta * np.asarray(jumps.locations))))

    def jump_mgf_quadrature(self, jumps: JumpLaw, theta: float) -> float:
        """Independent quadrature evaluation of ``jump_mgf`` for the density families"""
        if jumps.kind in ("none", "point_masses"):
            return self.jump_mgf(jumps, theta)
        if jumps.kind == "two_sided_exponential":
            # exponents folded together so e^{theta x} is never formed alone
            up, _ = integrate.quad(
                lambda x: jumps.p_up * jumps.rate_up * math.exp((theta - jumps.rate_up) * x), 0, np.inf
            )
            down, _ = integrate.quad(
                lambda x: (1 - jumps.p_up) * jumps.rate_down * math.exp((theta + jumps.rate_down) * x),
                -np.inf, 0,
            )
            return up + down
        value, _ = integrate.quad(
            lambda x: math.exp(theta * x + stats.norm.logpdf(x, loc=jumps.mean, scale=jumps.std)), -np.inf, np.inf
        )
        return value

    # ------------------------------------------------------------------
    # psi, psi_c
    # ------------------------------------------------------------------

    @staticmethod
    def _check_theta(le: LaplaceExponent, theta: float):
        if theta < 0 or theta >= le.theta_star:
            raise DomainError(f"theta={theta} outside [0, theta*={le.theta_star})")

    def psi(self, le: LaplaceExponent, theta: float) -> float:
        self._check_theta(le, theta)
        tr = le.triplet
        g = tr.jumps.intensity * (self.jump_mgf(tr.jumps, theta) - 1.0) if tr.jumps.intensity > 0 else 0.0
        return tr.drift * theta + 0.5 * tr.diffusion**2 * theta**2 + g

    def psi_c(self, le: LaplaceExponent, c: float, theta: float) -> float:
        return self.psi(le, theta) - c * theta

    # ------------------------------------------------------------------
    # Duality
    # ------------------------------------------------------------------

    def _minimize_on_half_line(self, f: Callable[[float], float], theta_star: float) -> optimize.OptimizeResult:
        """Bounded minimization of a convex function on (0, min(theta*, cap))"""
        if math.isfinite(theta_star):
            upper = theta_star * (1.0 - 1e-12)
        else:
            upper = 1.0
            while upper < config.THETA_SEARCH_CAP and f(2.0 * upper) < f(upper):
                upper *= 2.0
            upper = min(2.0 * upper, config.THETA_SEARCH_CAP)
        return optimize.minimize_scalar(
            f, bounds=(0.0, upper), method="bounded", options={"xatol": config.OPTIMIZER_XTOL, "maxiter": 2000}
        )

    def theta_c(self, le: LaplaceExponent, c: float) -> DualityPoint:
        if not c > 0:
            raise ParameterError(f"velocity must be positive, got c={c}")

        result = self._minimize_on_half_line(lambda th: self.psi_c(le, c, th), le.theta_star)
        theta = float(result.x)
        rate = -float(result.fun)
        at_boundary = False
        if math.isfinite(le.theta_star) and theta >= le.theta_star * (1.0 - 1e-8):
            theta, at_boundary = le.theta_star, True
        elif not math.isfinite(le.theta_star) and theta >= config.THETA_SEARCH_CAP * (1.0 - 1e-8):
            logger.warning(f"theta_c for c={c} reached the search cap {config.THETA_SEARCH_CAP}")
            at_boundary = True
        return DualityPoint(c=c, theta_c=theta, rate=max(rate, 0.0), at_boundary=at_boundary)

    def max_absorption_rate(self, le: LaplaceExponent, c: float) -> float:
        return self.theta_c(le, c).rate

    def min_velocity(self, le: LaplaceExponent, r: float) -> float:
        """Unique c whose maximal absorption rate is r"""
        if not r > 0:
            raise ParameterError(f"absorption rate must be positive, got r={r}")

        def excess(c: float) -> float:
            return (self.max_absorption_rate(le, c) if c > 0 else 0.0) - r

        hi = 1.0
        while excess(hi) < 0:
            hi *= 2.0
            if hi > config.VELOCITY_SEARCH_CAP:
                raise DomainError(f"rate r={r} is not attained below c={config.VELOCITY_SEARCH_CAP}")
        return float(optimize.brentq(excess, 0.0, hi, xtol=config.ROOT_XTOL, maxiter=500))

    # ------------------------------------------------------------------
    # Change of measure
    # ------------------------------------------------------------------

    def tilt_jumps(self, jumps: JumpLaw, theta: float) -> JumpLaw:
        """Jump law of intensity-times-density e^{theta x} Pi(dx)"""
        if jumps.kind == "none":
            return jumps
        mgf = self.jump_mgf(jumps, theta)
        intensity = jumps.intensity * mgf
        if jumps.kind == "two_sided_exponential":
            up = jumps.p_up * jumps.rate_up / (jumps.rate_up - theta)
            return JumpLaw(
                kind="two_sided_exponential",
                intensity=intensity,
                rate_up=jumps.rate_up - theta,
                rate_down=jumps.rate_down + theta,
                p_up=up / mgf,
            )
        if jumps.kind == "gaussian":
            return JumpLaw.gaussian(std=jumps.std, intensity=intensity, mean=jumps.mean + jumps.std**2 * theta)
        weights = np.asarray(jumps.weights) * np.exp(theta * np.asarray(jumps.locations))
        weights = weights / weights.sum()
        return JumpLaw(kind="point_masses", intensity=intensity, locations=list(jumps.locations), weights=list(weights))

    def esscher_tilt(self, le: LaplaceExponent, theta: float) -> LevyTriplet:
        """Triplet of Z under the measure with density e^{theta (Z_t - z) - psi(theta) t}"""
        self._check_theta(le, theta)
        if theta == 0:
            return le.triplet
        tr = le.triplet
        return LevyTriplet(
            drift=tr.drift + tr.diffusion**2 * theta,
            diffusion=tr.diffusion,
            jumps=self.tilt_jumps(tr.jumps, theta),
            allow_uncentered=True,
        )

    # ------------------------------------------------------------------
    # Pure-birth random walk
    # ------------------------------------------------------------------

    def branching_walk_speed(self, jumps: JumpLaw, birth_rate: float = 1.0) -> float:
        """Minimal speed inf_theta birth_rate * M(theta) / theta of the equation du/dt = birth_rate * (rho * u)"""
        if jumps.kind == "none":
            raise ParameterError("a displacement law is required")
        if not birth_rate > 0:
            raise ParameterError(f"birth rate must be positive, got {birth_rate}")

        def speed(theta: float) -> float:
            return birth_rate * self.jump_mgf(jumps, theta) / theta

        result = self._minimize_on_half_line(speed, jumps.theta_star)
        logger.debug(f"branching walk speed {result.fun} attained at theta={result.x}")
        return float(result.fun)
