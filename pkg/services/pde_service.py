import logging
import math
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from scipy import linalg, signal

from models import (
    Grid1D, GridFunction, JumpLaw, PdeConfig, Snapshot, SnapshotSeries,
    FreeBoundarySnapshot, FreeBoundarySeries, EstimateWithCI,
)
from services.stats_service import StatsService
from exceptions import ConfigurationError, ParameterError, SchemeError, ConsistencyError
from config import config

logger = logging.getLogger(__name__)

Stepper = Callable[[np.ndarray, float, float], np.ndarray]


class PdeService:
    """Finite-difference solvers for F-KPP, the conditioned evolution and the two free-boundary problems.

    Profiles live on the nodes of a uniform grid; total mass is the cell sum
    h * sum(u), which coincides with the trapezoid rule for profiles vanishing
    at both ends.
    """

    def __init__(self, stats_service: Optional[StatsService] = None):
        self.stats_service = stats_service or StatsService()
        logger.info("PDE service initialized")

    # ------------------------------------------------------------------
    # Shared machinery
    # ------------------------------------------------------------------

    @staticmethod
    def stable_dt(h: float, sigma: float = 1.0) -> float:
        return config.CFL_SAFETY * h**2 / sigma**2

    def check_cfl(self, cfg: PdeConfig):
        if cfg.scheme != "explicit":
            return
        limit = self.stable_dt(cfg.grid.h, cfg.sigma)
        if cfg.dt > limit * (1 + 1e-9):
            logger.error(f"explicit scheme unstable: dt={cfg.dt} > {limit}")
            raise ConfigurationError(
                f"dt={cfg.dt} violates the diffusive CFL bound {config.CFL_SAFETY} h^2/sigma^2 = {limit:.6g}"
            )

    @staticmethod
    def _check_grid(u0: GridFunction, cfg: PdeConfig):
        g = cfg.grid
        if abs(u0.xmin - g.xmin) > 1e-12 or abs(u0.xmax - g.xmax) > 1e-12 or abs(u0.h - g.h) > 1e-15:
            raise ParameterError("initial profile and configuration use different grids")

    @staticmethod
    def _schedule(cfg: PdeConfig) -> Tuple[int, int]:
        n_steps = int(round(cfg.T / cfg.dt))
        stride = max(1, int(round(cfg.snapshot_interval / cfg.dt))) if cfg.snapshot_interval else max(n_steps, 1)
        return n_steps, stride

    def _make_stepper(self, cfg: PdeConfig, drift: float = 0.0) -> Stepper:
        """One step of u_t = sigma^2/2 u_xx + drift u_x with Dirichlet values (left, right)"""
        h, dt = cfg.grid.h, cfg.dt
        diffusion = 0.5 * cfg.sigma**2 / h**2
        advection = drift / (2 * h)

        if cfg.scheme == "explicit":
            def explicit(u: np.ndarray, left: float, right: float) -> np.ndarray:
                new = np.empty_like(u)
                new[1:-1] = u[1:-1] + dt * (
                    diffusion * (u[2:] - 2 * u[1:-1] + u[:-2]) + advection * (u[2:] - u[:-2])
                )
                new[0], new[-1] = left, right
                return new
            return explicit

        n = cfg.grid.n_cells + 1
        banded = np.zeros((3, n))
        banded[0, 2:] = -dt * (diffusion + advection)
        banded[1, :] = 1 + 2 * dt * diffusion
        banded[1, [0, -1]] = 1.0
        banded[2, :-2] = -dt * (diffusion - advection)

        def semi_implicit(u: np.ndarray, left: float, right: float) -> np.ndarray:
            rhs = u.copy()
            rhs[0], rhs[-1] = left, right
            return linalg.solve_banded((1, 1), banded, rhs)
        return semi_implicit

    # ------------------------------------------------------------------
    # F-KPP
    # ------------------------------------------------------------------

    def kpp_solve(self, v0: GridFunction, r: float, cfg: PdeConfig) -> SnapshotSeries:
        """dv/dt = sigma^2/2 v_xx + r (v^2 - v); edges stay pinned at the initial edge values"""
        self._check_grid(v0, cfg)
        self.check_cfl(cfg)
        if np.any(v0.values < -1e-12) or np.any(v0.values > 1 + 1e-12):
            raise ParameterError("KPP initial data must take values in [0, 1]")
        left, right = float(v0.values[0]), float(v0.values[-1])
        if left > config.BOUNDARY_LEAK_TOLERANCE or right < 1 - config.BOUNDARY_LEAK_TOLERANCE:
            logger.warning(f"initial edges ({left}, {right}) are not those of a distribution function")

        n_steps, stride = self._schedule(cfg)
        step = self._make_stepper(cfg)
        grid = cfg.grid
        u = np.clip(v0.values, 0.0, 1.0)
        series = SnapshotSeries(kind="kpp", diagnostics={"r": r, "scheme": cfg.scheme, "steps": n_steps,
                                                         "max_clip": 0.0, "boundary_leak": False})
        series.snapshots.append(Snapshot(t=0.0, values=grid.function(u), counters={"clip": 0.0}))

        logger.info(f"KPP solve: r={r}, {grid.n_cells + 1} nodes, {n_steps} steps of {cfg.dt}")
        clip = 0.0
        for k in range(1, n_steps + 1):
            new = step(u, left, right)
            new[1:-1] += cfg.dt * r * (u[1:-1] ** 2 - u[1:-1])
            clipped = np.clip(new, 0.0, 1.0)
            clip = max(clip, float(np.abs(new - clipped).max()))
            u = clipped
            if not series.diagnostics["boundary_leak"] and (
                abs(u[1] - left) > config.BOUNDARY_LEAK_TOLERANCE or abs(u[-2] - right) > config.BOUNDARY_LEAK_TOLERANCE
            ):
                series.diagnostics["boundary_leak"] = True
                logger.warning(f"KPP profile reached the grid edge at t={k * cfg.dt:g}; widen the domain")
            if k % stride == 0 or k == n_steps:
                series.snapshots.append(Snapshot(t=k * cfg.dt, values=grid.function(u), counters={"clip": clip}))
                series.diagnostics["max_clip"] = max(series.diagnostics["max_clip"], clip)
                clip = 0.0
        return series

    # ------------------------------------------------------------------
    # Conditioned evolution
    # ------------------------------------------------------------------

    def conditioned_evolution_solve(self, u0: GridFunction, c: float, cfg: PdeConfig) -> SnapshotSeries:
        """Density of Z_t - ct conditioned on survival, by linear step then renormalization

        Counters per snapshot: ``rate`` = -log(mass kept)/dt of the last step,
        ``flux_rate`` = sigma^2/2 u_x(t, 0) from a one-sided difference, and ``mass``.
        """
        self._check_grid(u0, cfg)
        self.check_cfl(cfg)
        if abs(u0.xmin) > 1e-12:
            raise ParameterError(f"the conditioned evolution lives on [0, L], got xmin={u0.xmin}")
        if np.any(u0.values < -1e-12):
            raise ParameterError("initial density has negative values")
        grid, h, dt = cfg.grid, cfg.grid.h, cfg.dt
        u = np.clip(u0.values, 0.0, None)
        u[0] = u[-1] = 0.0
        mass = h * u.sum()
        if not mass > 0:
            raise ParameterError("initial density has zero mass")
        if abs(mass - 1) > 1e-8:
            logger.info(f"normalizing initial density (mass {mass})")
        u = u / mass

        n_steps, stride = self._schedule(cfg)
        step = self._make_stepper(cfg, drift=c)
        series = SnapshotSeries(kind="conditioned_evolution", diagnostics={
            "c": c, "scheme": cfg.scheme, "steps": n_steps, "initial_mass": mass, "edge_warning": False,
        })

        def flux_rate(v: np.ndarray) -> float:
            return 0.5 * cfg.sigma**2 * (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)

        series.snapshots.append(Snapshot(t=0.0, values=grid.function(u),
                                         counters={"rate": math.nan, "flux_rate": flux_rate(u), "mass": 1.0}))
        logger.info(f"conditioned evolution: c={c}, L={grid.xmax}, {n_steps} steps of {dt}")
        rates = np.empty(n_steps)
        for k in range(1, n_steps + 1):
            new = step(u, 0.0, 0.0)
            if new.min() < -1e-12:
                logger.error(f"negative density {new.min():.3e} at t={k * dt:g}")
                raise SchemeError(f"scheme produced negative density {new.min():.3e} at step {k}")
            kept = h * new.sum()
            rates[k - 1] = -math.log(kept) / dt
            u = np.clip(new, 0.0, None) / kept
            if not series.diagnostics["edge_warning"] and u[-2] > config.EDGE_TOLERANCE * u.max():
                series.diagnostics["edge_warning"] = True
                logger.warning(f"density reaches the far edge L={grid.xmax} at t={k * dt:g}")
            if k % stride == 0 or k == n_steps:
                series.snapshots.append(Snapshot(t=k * dt, values=grid.function(u), counters={
                    "rate": float(rates[k - 1]), "flux_rate": flux_rate(u), "mass": float(h * u.sum()),
                }))
        if n_steps:
            series.diagnostics["mean_rate"] = float(rates.mean())
        return series

    # ------------------------------------------------------------------
    # Free-boundary problems
    # ------------------------------------------------------------------

    @staticmethod
    def _truncate_left(u: np.ndarray, h: float, xmin: float) -> float:
        """Zero mass from the left until exactly unit mass remains; returns the cutoff gamma"""
        tail = np.cumsum(u[::-1])[::-1] * h
        if tail[0] < 1.0 - 1e-9:
            raise ConsistencyError(f"total mass {tail[0]:.12g} < 1 before truncation")
        target = min(1.0, float(tail[0]))
        k = int(np.flatnonzero(tail >= target)[-1])
        beyond = tail[k + 1] if k + 1 < u.size else 0.0
        fraction = (target - beyond) / (h * u[k])
        u[:k] = 0.0
        u[k] *= fraction
        return xmin + h * (k + 1.0 - fraction)

    def _free_boundary_run(self, u0: GridFunction, cfg: PdeConfig, kind: str,
                           advance: Callable[[np.ndarray, int], np.ndarray], extra: dict) -> FreeBoundarySeries:
        grid, h = cfg.grid, cfg.grid.h
        u = np.clip(u0.values, 0.0, None)
        if h * u.sum() < 1 - 1e-9:
            raise ConsistencyError(f"initial mass {h * u.sum():.12g} is below 1")
        gamma = self._truncate_left(u, h, grid.xmin)

        n_steps, stride = self._schedule(cfg)
        series = FreeBoundarySeries(diagnostics={"kind": kind, "scheme": cfg.scheme, "steps": n_steps,
                                                 "max_mass_error": 0.0, "edge_warning": False, **extra})
        series.snapshots.append(FreeBoundarySnapshot(t=0.0, gamma=gamma, values=grid.function(u)))
        logger.info(f"{kind} free-boundary solve: {grid.n_cells + 1} nodes, {n_steps} steps of {cfg.dt}")
        for k in range(1, n_steps + 1):
            u = advance(u, k)
            mass = h * u.sum()
            if mass < 1 - 1e-12:
                logger.error(f"mass {mass:.12g} < 1 before truncation at step {k}")
                raise ConsistencyError(f"growth cannot compensate the loss: mass {mass:.12g} at step {k}")
            gamma = self._truncate_left(u, h, grid.xmin)
            if not series.diagnostics["edge_warning"] and u[-2] > config.EDGE_TOLERANCE * u.max():
                series.diagnostics["edge_warning"] = True
                logger.warning(f"free-boundary profile reaches the right edge at t={k * cfg.dt:g}")
            if k % stride == 0 or k == n_steps:
                series.diagnostics["max_mass_error"] = max(series.diagnostics["max_mass_error"], abs(h * u.sum() - 1))
                series.snapshots.append(FreeBoundarySnapshot(t=k * cfg.dt, gamma=gamma, values=grid.function(u.copy())))
        return series

    def dr_bm_solve(self, u0: GridFunction, r: float, cfg: PdeConfig) -> FreeBoundarySeries:
        """u_t = sigma^2/2 u_xx + r u for x > gamma(t), with unit mass to the right of gamma"""
        self._check_grid(u0, cfg)
        self.check_cfl(cfg)
        if not r > 0:
            raise ParameterError(f"growth rate must be positive, got r={r}")
        step = self._make_stepper(cfg)
        growth = math.exp(r * cfg.dt)
        return self._free_boundary_run(u0, cfg, "dr_bm", lambda u, k: step(u, 0.0, 0.0) * growth, {"r": r})

    def _convolve(self, u: np.ndarray, rho: JumpLaw, grid: Grid1D) -> Tuple[np.ndarray, float]:
        """(rho * u) on the nodes and the mass pushed past the right edge"""
        h, nodes = grid.h, grid.nodes
        if rho.kind == "point_masses":
            total = np.zeros_like(u)
            leak = 0.0
            for y, weight in zip(rho.locations, rho.weights):
                total += weight * np.interp(nodes - y, nodes, u, left=0.0, right=0.0)
                leak += weight * h * u[nodes + y > grid.xmax + 1e-12].sum()
            return total, leak

        if rho.kind == "two_sided_exponential":
            reach = 40.0 / min(rho.rate_up, rho.rate_down)
        else:
            reach = abs(rho.mean) + 12.0 * rho.std
        half = int(math.ceil(reach / h))
        offsets = h * np.arange(-half, half + 1)
        if rho.kind == "two_sided_exponential":
            kernel = np.where(offsets >= 0, rho.p_up * rho.rate_up * np.exp(-rho.rate_up * np.abs(offsets)),
                              (1 - rho.p_up) * rho.rate_down * np.exp(-rho.rate_down * np.abs(offsets)))
        else:
            kernel = np.exp(-0.5 * ((offsets - rho.mean) / rho.std) ** 2)
        kernel = kernel / kernel.sum()
        full = np.clip(signal.fftconvolve(u, kernel, mode="full"), 0.0, None)
        return full[half:half + u.size], float(h * full[half + u.size:].sum())

    def dr_rw_solve(self, u0: GridFunction, rho: JumpLaw, cfg: PdeConfig, birth_rate: float = 1.0) -> FreeBoundarySeries:
        """u_t = birth_rate (rho * u) for x > gamma(t), with unit mass to the right of gamma"""
        self._check_grid(u0, cfg)
        if rho.kind == "none":
            raise ParameterError("a displacement law rho is required")
        if abs(rho.expected_jump) > 1e-12:
            raise ParameterError(f"rho must be symmetric, mean is {rho.expected_jump}")
        grid = cfg.grid

        def advance(u: np.ndarray, k: int) -> np.ndarray:
            births, leak = self._convolve(u, rho, grid)
            if leak > config.MASS_LEAK_TOLERANCE:
                logger.error(f"convolution leaked {leak:.3e} past x={grid.xmax} at step {k}")
                raise ConsistencyError(f"domain too small: {leak:.3e} of mass leaked past the right edge at step {k}")
            return u + cfg.dt * birth_rate * births

        return self._free_boundary_run(u0, cfg, "dr_rw", advance, {"birth_rate": birth_rate})

    # ------------------------------------------------------------------
    # Front tracking
    # ------------------------------------------------------------------

    def front_position(self, series: Union[SnapshotSeries, FreeBoundarySeries],
                       level: float) -> List[Tuple[float, Optional[float]]]:
        """First crossing of ``level`` per snapshot by linear interpolation; None when absent"""
        positions = []
        missing = 0
        for snap in series.snapshots:
            values = snap.values
            if values is None:
                positions.append((snap.t, None))
                missing += 1
                continue
            v, x = values.values, values.nodes
            side = np.sign(v - level)
            crossings = np.flatnonzero(side[:-1] != side[1:])
            if crossings.size == 0:
                positions.append((snap.t, None))
                missing += 1
                continue
            i = int(crossings[0])
            if v[i] == level or v[i + 1] == v[i]:
                positions.append((snap.t, float(x[i])))
            else:
                positions.append((snap.t, float(x[i] + (level - v[i]) * values.h / (v[i + 1] - v[i]))))
        if missing:
            logger.warning(f"{missing} of {len(series.snapshots)} snapshots never cross level {level}")
        return positions

    def front_speed(self, points: List[Tuple[float, Optional[float]]], burn_in: float) -> EstimateWithCI:
        """Least-squares speed of tracked front points after burn_in"""
        t = np.array([p[0] for p in points if p[1] is not None])
        x = np.array([p[1] for p in points if p[1] is not None])
        kept = int((t >= burn_in).sum())
        if kept >= 10:
            return self.stats_service.slope_with_batch_error(t, x, burn_in, max(2, min(10, kept // 5)))
        mask = t >= burn_in
        slope, _, stderr = self.stats_service.linear_fit(t[mask], x[mask])
        return EstimateWithCI(value=slope, stderr=stderr, n=max(kept, 1))

    def boundary_speed(self, series: FreeBoundarySeries, burn_in: float) -> EstimateWithCI:
        return self.front_speed(list(zip(series.times(), series.gammas())), burn_in)
