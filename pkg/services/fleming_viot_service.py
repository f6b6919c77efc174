import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from models import ParticleEnsemble, FvConfig, Snapshot, SnapshotSeries, EstimateWithCI
from services.kernel_service import KernelService
from exceptions import ParameterError, ExtinctionError
from config import config

logger = logging.getLogger(__name__)


class FlemingViotService:
    """N copies of Z^c killed at 0; a killed particle jumps onto a uniformly chosen other survivor"""

    def __init__(self, kernel_service: Optional[KernelService] = None):
        self.kernel_service = kernel_service or KernelService()
        logger.info("Fleming-Viot service initialized")

    def _advance(self, x: np.ndarray, t: float, cfg: FvConfig, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
        """One Euler step plus relocation; returns the new positions and the number of relocations"""
        n = x.size
        moved = x + self.kernel_service.levy_increments(rng, cfg.triplet, cfg.c, cfg.dt, n)
        absorbed = moved <= 0
        if cfg.bridge_correction:
            hit = self.kernel_service.bridge_hit_probabilities(x, moved, cfg.dt, cfg.triplet.diffusion)
            absorbed |= rng.random(n) < hit

        killed = np.flatnonzero(absorbed)
        if killed.size == n:
            logger.error(f"all {n} particles absorbed at t={t + cfg.dt}")
            raise ExtinctionError(f"total extinction of the {n}-particle system at t={t + cfg.dt:g}", t=t + cfg.dt)

        alive = ~absorbed
        # ascending index order; relocated particles become targets for later ones
        for i in killed:
            targets = np.flatnonzero(alive)
            moved[i] = moved[targets[rng.integers(targets.size)]]
            alive[i] = True
        return moved, int(killed.size)

    def fv_step(self, ens: ParticleEnsemble, cfg: FvConfig, rng: np.random.Generator) -> ParticleEnsemble:
        positions, relocated = self._advance(ens.positions, ens.t, cfg, rng)
        return ParticleEnsemble(positions=positions, t=ens.t + cfg.dt, resample_count=ens.resample_count + relocated)

    def fv_run(self, cfg: FvConfig, init: Sequence[float]) -> SnapshotSeries:
        """Run to horizon T, recording sorted positions every ``snapshot_every`` steps and at the end"""
        x = np.asarray(init, dtype=float).copy()
        if x.size != cfg.N:
            raise ParameterError(f"expected {cfg.N} initial positions, got {x.size}")
        if np.any(x <= 0):
            raise ParameterError("initial positions must lie in (0, inf)")

        rng = cfg.stream.generator()
        n_steps = int(round(cfg.T / cfg.dt))
        resamples = 0
        series = SnapshotSeries(kind="fleming_viot", N=cfg.N, diagnostics={
            "c": cfg.c, "dt": cfg.dt, "steps": n_steps, "bridge_correction": cfg.bridge_correction,
            "seed": cfg.seed, "stream_id": cfg.stream_id,
        })

        def record(t: float):
            series.snapshots.append(Snapshot(t=t, positions=np.sort(x), counters={
                "resample_count": float(resamples), "min": float(x.min()), "N": float(x.size),
            }))

        record(0.0)
        logger.info(f"Fleming-Viot run: N={cfg.N}, c={cfg.c}, dt={cfg.dt}, T={cfg.T} ({n_steps} steps)")
        for step in range(1, n_steps + 1):
            t = step * cfg.dt
            x, relocated = self._advance(x, t - cfg.dt, cfg, rng)
            resamples += relocated
            if step % cfg.snapshot_every == 0 or step == n_steps:
                record(t)

        series.diagnostics["resample_count"] = resamples
        logger.info(f"Fleming-Viot run finished: {resamples} relocations")
        return series

    def run_replicas(self, configs: List[FvConfig], inits: List[np.ndarray]) -> List[SnapshotSeries]:
        """Independent runs (one stream_id each), concurrent through joblib when MAX_WORKERS > 1"""
        return Parallel(n_jobs=config.MAX_WORKERS)(
            delayed(self.fv_run)(cfg, init) for cfg, init in zip(configs, inits)
        )

    def absorption_rate_estimate(self, series: SnapshotSeries, burn_in: float, batches: int = 10) -> EstimateWithCI:
        """Relocations per particle per unit time after burn_in, batch-means standard error"""
        t = series.times()
        counts = series.counter("resample_count")
        kept = np.flatnonzero(t >= burn_in)
        if kept.size < 2 or t[kept[-1]] <= t[kept[0]]:
            raise ParameterError(f"no post-burn-in window: burn_in={burn_in}, horizon={t[-1] if t.size else 0}")

        t, counts = t[kept], counts[kept]
        n = series.N or 1
        value = (counts[-1] - counts[0]) / (n * (t[-1] - t[0]))

        intervals = t.size - 1
        groups = min(batches, intervals)
        if groups < 2:
            return EstimateWithCI(value=float(value), stderr=0.0, n=1)
        # batches share their boundary snapshots so every interval is counted once
        bounds = np.linspace(0, intervals, groups + 1).round().astype(int)
        rates = np.array([
            (counts[b] - counts[a]) / (n * (t[b] - t[a])) for a, b in zip(bounds[:-1], bounds[1:]) if b > a
        ])
        stderr = float(rates.std(ddof=1) / np.sqrt(rates.size)) if rates.size > 1 else 0.0
        return EstimateWithCI(value=float(value), stderr=stderr, n=int(rates.size))
