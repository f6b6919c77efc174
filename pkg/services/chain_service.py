import logging
from typing import Optional, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from models import SubstochasticMatrix, Eigentriple
from exceptions import ParameterError, StructureError, ConvergenceError, ExtinctionError
from config import config

logger = logging.getLogger(__name__)


class ChainService:
    """Finite substochastic chains: conditioned evolution, Yaglom limits, R-eigentriples.

    Only the R-positive case is covered; truncating the constant-drift
    birth-death chain makes it R-positive even though the infinite chain is not.
    """

    def __init__(self):
        logger.info("Chain service initialized")

    def birth_death_chain(self, p_up: float, p_down: float, L: int) -> SubstochasticMatrix:
        """States 1..L (matrix index i is state i+1); state 1 steps down into absorption, state L holds instead of going up"""
        hold = 1.0 - p_up - p_down
        if p_up < 0 or p_down <= 0 or hold <= 0:
            raise ParameterError(f"need p_up >= 0, p_down > 0 and a positive hold probability, got {p_up}, {p_down}")
        if L < 1:
            raise ParameterError(f"chain needs at least one state, got L={L}")
        p = np.diag(np.full(L, hold))
        p += np.diag(np.full(L - 1, p_up), 1) + np.diag(np.full(L - 1, p_down), -1)
        p[-1, -1] += p_up
        return SubstochasticMatrix(entries=p)

    def check_irreducible(self, p: SubstochasticMatrix):
        n_components, _ = connected_components(csr_matrix(p.entries > 0), directed=True, connection="strong")
        if n_components > 1:
            logger.error(f"transient class splits into {n_components} communicating classes")
            raise StructureError(f"chain is reducible: {n_components} strongly connected components")

    def _probability_vector(self, p: SubstochasticMatrix, mu0) -> np.ndarray:
        mu = np.asarray(mu0, dtype=float).reshape(-1)
        if mu.size != p.n:
            raise ParameterError(f"initial law has {mu.size} entries for {p.n} states")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-10:
            raise ParameterError(f"initial law must be a probability vector (sum={mu.sum()})")
        return mu

    def _evolve(self, p: SubstochasticMatrix, mu: np.ndarray, steps: int):
        """Yields (step, renormalized law, one-step survival) for each step"""
        for step in range(1, steps + 1):
            mu = mu @ p.entries
            mass = mu.sum()
            if not mass > 0:
                logger.error(f"conditioned law lost all mass at step {step}")
                raise ExtinctionError(f"survival probability underflowed to 0 at step {step}", t=step)
            mu = mu / mass
            yield step, mu, mass

    def conditioned_evolution(self, p: SubstochasticMatrix, mu0, steps: int) -> np.ndarray:
        """Law at time ``steps`` conditioned on survival: mu0 p^steps, renormalized"""
        mu = self._probability_vector(p, mu0)
        if steps < 0:
            raise ParameterError(f"steps must be non-negative, got {steps}")
        for _, mu, _ in self._evolve(p, mu, steps):
            pass
        return mu

    def survival_from(self, p: SubstochasticMatrix, mu0, steps: int) -> float:
        """P_mu0(tau > steps)"""
        mu = self._probability_vector(p, mu0)
        log_survival = 0.0
        for _, mu, mass in self._evolve(p, mu, steps):
            log_survival += np.log(mass)
        return float(np.exp(log_survival))

    def eigentriple(self, p: SubstochasticMatrix, tol: float = None, max_iter: int = None) -> Eigentriple:
        """Power iteration on p and its transpose

        Stops once both eigen-residuals |nu p - lambda nu| and |p beta - lambda beta|
        fall below ``tol`` (sup norm). R = 1/lambda, nu is a probability
        vector and beta is scaled so that sum(nu * beta) = 1.
        """
        tol = tol or config.CHAIN_TOL
        max_iter = max_iter or config.CHAIN_MAX_ITER
        self.check_irreducible(p)

        P = p.entries
        nu = np.full(p.n, 1.0 / p.n)
        beta = np.ones(p.n)
        residual = np.inf
        for iteration in range(1, max_iter + 1):
            nu_next = nu @ P
            lam = nu_next.sum()
            nu_next /= lam
            beta_next = P @ beta
            beta_next /= beta_next.max()
            nu, beta = nu_next, beta_next

            lam_right = (P @ beta).max()
            residual = max(
                np.abs(nu @ P - lam * nu).max(),
                np.abs(P @ beta - lam_right * beta).max(),
            )
            if residual < tol:
                break
        else:
            logger.error(f"power iteration stalled at residual {residual:.3e} after {max_iter} iterations")
            raise ConvergenceError(f"eigentriple did not converge in {max_iter} iterations", attained=float(residual))

        lam = (nu @ P).sum()
        beta = beta / np.dot(nu, beta)
        logger.info(f"eigentriple converged in {iteration} iterations: R={1.0 / lam:.12g}")
        return Eigentriple(R=1.0 / lam, nu=nu, beta=beta, iterations=iteration)

    def yaglom_limit(self, p: SubstochasticMatrix, start: int, tol: float = 1e-12,
                     max_iter: Optional[int] = None) -> Tuple[np.ndarray, float]:
        """Limit of the conditioned law from delta_start and the per-step survival factor

        Iteration stops once the geometric bound on the remaining total-variation
        change, tv * q / (1 - q) with q the observed contraction ratio, is below tol / 2.
        """
        max_iter = max_iter or config.CHAIN_MAX_ITER
        if not 0 <= start < p.n:
            raise ParameterError(f"start state {start} outside 0..{p.n - 1}")
        self.check_irreducible(p)

        mu = np.zeros(p.n)
        mu[start] = 1.0
        previous_tv = None
        for step, nxt, mass in self._evolve(p, mu, max_iter):
            tv = 0.5 * np.abs(nxt - mu).sum()
            mu = nxt
            if tv == 0.0:
                return mu, float(mass)
            if previous_tv:
                ratio = tv / previous_tv
                if ratio < 1 and tv * ratio / (1 - ratio) < tol / 2:
                    logger.info(f"Yaglom limit from state {start} reached after {step} steps")
                    return mu, float(mass)
            previous_tv = tv
        raise ConvergenceError(f"Yaglom iteration from state {start} did not settle in {max_iter} steps", attained=float(tv))
