import logging
import math
from typing import Union

import numpy as np
from scipy import optimize, signal

from models import QsdBrownianFamily, GridFunction, LevyTriplet, JumpLaw
from exceptions import ParameterError, DomainError
from config import config

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def _scalar_or_array(values: np.ndarray, x) -> ArrayLike:
    return float(values) if np.ndim(x) == 0 else values


class ClosedFormService:
    """QSD / traveling-wave family of Brownian motion with drift -c, absorbed at 0.

    For 0 < r < c^2/2 the density is m e^{-cx} sinh(beta x) with beta = sqrt(c^2 - 2r)
    and m = 2r / beta; at r = c^2/2 it is c^2 x e^{-cx}. Equivalently nu_r is the
    law of the sum of independent Exp(c - beta) and Exp(c + beta) variables.
    """

    def __init__(self):
        logger.info("Closed form service initialized")

    # ------------------------------------------------------------------
    # Family
    # ------------------------------------------------------------------

    def family(self, c: float, r: float) -> QsdBrownianFamily:
        if not c > 0:
            raise ParameterError(f"drift magnitude must be positive, got c={c}")
        if not r > 0:
            raise ParameterError(f"absorption rate must be positive, got r={r}")
        critical = c**2 / 2
        if r > critical * (1 + 1e-12):
            raise DomainError(f"r={r} > c^2/2={critical}: the oscillating branch is not a probability density")
        if r >= critical * (1 - 1e-12):
            return QsdBrownianFamily(c=c, r=critical, m=c**2, beta=0.0)
        beta = math.sqrt(c**2 - 2 * r)
        return QsdBrownianFamily(c=c, r=r, m=2 * r / beta, beta=beta)

    def minimal_qsd(self, c: float) -> QsdBrownianFamily:
        return self.family(c, c**2 / 2)

    def mean_absorption_time(self, c: float, r: float) -> float:
        return self.family(c, r).mean_absorption_time

    @staticmethod
    def _rates(fam: QsdBrownianFamily):
        # c - beta written as 2r / (c + beta) to avoid cancellation for small r
        return 2 * fam.r / (fam.c + fam.beta), fam.c + fam.beta

    def qsd_density(self, c: float, r: float, x: ArrayLike) -> ArrayLike:
        fam = self.family(c, r)
        xs = np.asarray(x, dtype=float)
        if np.any(xs < 0):
            raise ParameterError("the QSD density is defined on x >= 0")
        if fam.is_minimal:
            values = fam.m * xs * np.exp(-fam.c * xs)
        else:
            slow, fast = self._rates(fam)
            values = 0.5 * fam.m * (np.exp(-slow * xs) - np.exp(-fast * xs))
        return _scalar_or_array(values, x)

    def qsd_survival(self, c: float, r: float, x: ArrayLike) -> ArrayLike:
        """nu_r((x, inf)); equals 1 for x <= 0"""
        fam = self.family(c, r)
        xs = np.clip(np.asarray(x, dtype=float), 0, None)
        with np.errstate(invalid="ignore", over="ignore"):
            if fam.is_minimal:
                values = (1 + fam.c * xs) * np.exp(-fam.c * xs)
            else:
                slow, fast = self._rates(fam)
                values = 0.5 * fam.m * (np.exp(-slow * xs) / slow - np.exp(-fast * xs) / fast)
        values = np.where(np.isinf(xs), 0.0, values)
        return _scalar_or_array(np.clip(values, 0.0, 1.0), x)

    def qsd_cdf(self, c: float, r: float, x: ArrayLike) -> ArrayLike:
        """Distribution function v(x) of nu_r; v(x) = 0 for x <= 0 and v(+inf) = 1"""
        fam = self.family(c, r)
        xs = np.clip(np.asarray(x, dtype=float), 0, None)
        if fam.is_minimal:
            with np.errstate(invalid="ignore"):
                values = -np.expm1(-fam.c * xs) - fam.c * xs * np.exp(-fam.c * xs)
        else:
            slow, fast = self._rates(fam)
            values = 0.5 * fam.m * (-np.expm1(-slow * xs) / slow + np.expm1(-fast * xs) / fast)
        values = np.where(np.isinf(xs), 1.0, values)
        return _scalar_or_array(np.clip(values, 0.0, 1.0), x)

    def qsd_sample(self, rng: np.random.Generator, c: float, r: float, count: int, method: str = "exact") -> np.ndarray:
        """Draws from nu_r; ``method="inverse"`` inverts qsd_cdf by bracketed root finding"""
        fam = self.family(c, r)
        if count < 0:
            raise ParameterError(f"sample count must be non-negative, got {count}")
        if count == 0:
            return np.empty(0)
        if method == "exact":
            slow, fast = self._rates(fam)
            return rng.exponential(1 / slow, count) + rng.exponential(1 / fast, count)
        if method != "inverse":
            raise ParameterError(f"unknown sampling method '{method}'")

        uniforms = rng.random(count)
        samples = np.empty(count)
        for k, u in enumerate(uniforms):
            hi = 1.0 / fam.c
            while self.qsd_cdf(c, r, hi) < u:
                hi *= 2.0
            samples[k] = optimize.brentq(lambda y: self.qsd_cdf(c, r, y) - u, 0.0, hi, xtol=config.SAMPLER_XTOL)
        return samples

    # ------------------------------------------------------------------
    # Domain of attraction
    # ------------------------------------------------------------------

    def attraction_rate(self, c: float, b: float) -> float:
        """Eigenvalue r(b) = cb - b^2/2 selected by initial data with tail e^{-bx}"""
        if not c > 0:
            raise ParameterError(f"drift magnitude must be positive, got c={c}")
        if not 0 < b < c:
            raise DomainError(f"tail exponent b={b} outside (0, c={c})")
        return c * b - b**2 / 2

    def tail_exponent(self, c: float, r: float) -> float:
        """Smaller root of b^2 - 2cb + 2r = 0"""
        fam = self.family(c, r)
        return self._rates(fam)[0]

    def kpp_front_velocity(self, r: float, b: float) -> float:
        """Asymptotic F-KPP front speed from initial data with tail e^{-bx}"""
        if not r > 0 or not b > 0:
            raise ParameterError(f"r and b must be positive, got r={r}, b={b}")
        c_star = math.sqrt(2 * r)
        return r / b + b / 2 if b < c_star else c_star

    # ------------------------------------------------------------------
    # Finite population
    # ------------------------------------------------------------------

    def finite_population_cutoff(self, c: float, N: int) -> float:
        """Width ln(N)/c of an N-particle cloud selected at the minimal rate"""
        if not c > 0:
            raise ParameterError(f"drift magnitude must be positive, got c={c}")
        if N < 2:
            raise ParameterError(f"population must be at least 2, got N={N}")
        return math.log(N) / c

    def finite_population_rate(self, c: float, N: int) -> float:
        """Absorption rate c^2/2 + pi^2/(2 L^2) of the QSD cut off at L = ln(N)/c"""
        L = self.finite_population_cutoff(c, N)
        return c**2 / 2 + math.pi**2 / (2 * L**2)

    def finite_population_cdf(self, c: float, N: int, x: ArrayLike) -> ArrayLike:
        """CDF of the density proportional to e^{-cx} sin(pi x / L) on [0, L]

        This is the QSD of the drifted motion killed at 0 and at L; it tends to
        the minimal QSD as N grows.
        """
        L = self.finite_population_cutoff(c, N)
        k = math.pi / L
        xs = np.clip(np.asarray(x, dtype=float), 0.0, L)
        cdf = (1.0 - np.exp(-c * xs) * (np.cos(k * xs) + (c / k) * np.sin(k * xs))) / (1.0 + math.exp(-c * L))
        cdf = np.clip(cdf, 0.0, 1.0)
        return float(cdf) if np.ndim(cdf) == 0 else cdf

    # ------------------------------------------------------------------
    # Generator residual
    # ------------------------------------------------------------------

    def _jump_average(self, values: np.ndarray, nodes: np.ndarray, h: float, jumps: JumpLaw) -> np.ndarray:
        """integral of w(x - y) rho(y) dy with w extended by zero outside the grid"""
        if jumps.kind == "point_masses":
            total = np.zeros_like(values)
            for y, weight in zip(jumps.locations, jumps.weights):
                total += weight * np.interp(nodes - y, nodes, values, left=0.0, right=0.0)
            return total

        if jumps.kind == "two_sided_exponential":
            reach = 40.0 / min(jumps.rate_up, jumps.rate_down)
        else:
            reach = abs(jumps.mean) + 12.0 * jumps.std
        half = min(int(math.ceil(reach / h)), values.size)
        offsets = h * np.arange(-half, half + 1)
        if jumps.kind == "two_sided_exponential":
            density = np.where(
                offsets >= 0,
                jumps.p_up * jumps.rate_up * np.exp(-jumps.rate_up * np.clip(offsets, 0, None)),
                (1 - jumps.p_up) * jumps.rate_down * np.exp(jumps.rate_down * np.clip(offsets, None, 0)),
            )
        else:
            density = np.exp(-0.5 * ((offsets - jumps.mean) / jumps.std) ** 2) / (jumps.std * math.sqrt(2 * math.pi))
        trapezoid = np.full(values.size, h)
        trapezoid[[0, -1]] = h / 2
        full = signal.fftconvolve(values * trapezoid, density, mode="full")
        return full[half:half + values.size]

    def _residual(self, values: np.ndarray, h: float, xmin: float, triplet: LevyTriplet, c: float, r: float) -> np.ndarray:
        nodes = xmin + h * np.arange(values.size)
        second = (values[2:] - 2 * values[1:-1] + values[:-2]) / h**2
        first = (values[2:] - values[:-2]) / (2 * h)
        adjoint = 0.5 * triplet.diffusion**2 * second - triplet.drift * first
        jumps = triplet.jumps
        if jumps.intensity > 0:
            average = self._jump_average(values, nodes, h, jumps)
            adjoint += jumps.intensity * (average[1:-1] - values[1:-1])
        residual = np.zeros_like(values)
        residual[1:-1] = adjoint + c * first + r * values[1:-1]
        return residual

    def generator_residual(self, w: GridFunction, triplet: LevyTriplet, c: float, r: float) -> GridFunction:
        """Pointwise L*w + c w' + r w at interior nodes (zero at the two end nodes)

        ``diagnostics`` carries the Richardson comparison against the grid of
        spacing 2h: ``richardson_ratio`` (max residual at 2h over max at h),
        ``discretization_error`` and the ``coarse_grid`` warning flag.
        """
        if abs(w.xmin) > 1e-12:
            raise ParameterError(f"the residual is taken on [0, xmax], got xmin={w.xmin}")
        if abs(w.values[0]) > 1e-8 * max(1.0, float(np.abs(w.values).max())):
            logger.warning(f"w(0)={w.values[0]} is not zero; extension by zero introduces a jump")

        fine = self._residual(w.values, w.h, w.xmin, triplet, c, r)
        diagnostics = {"max_residual": float(np.abs(fine).max())}

        if w.n_cells % 2 == 0 and w.n_cells >= 8:
            coarse = self._residual(w.values[::2], 2 * w.h, w.xmin, triplet, c, r)
            fine_on_coarse = fine[::2]
            coarse_max = float(np.abs(coarse).max())
            error = float(np.abs(coarse - fine_on_coarse)[1:-1].max()) / 3.0
            diagnostics.update({
                "max_residual_2h": coarse_max,
                "richardson_ratio": coarse_max / diagnostics["max_residual"] if diagnostics["max_residual"] > 0 else math.inf,
                "discretization_error": error,
                "coarse_grid": error > config.COARSE_GRID_TOLERANCE,
            })
            if diagnostics["coarse_grid"]:
                logger.warning(f"grid h={w.h} too coarse: estimated discretization error {error:.3e}")
        else:
            diagnostics["coarse_grid"] = False

        return w.grid.function(fine, diagnostics)
