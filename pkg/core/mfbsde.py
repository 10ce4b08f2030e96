"""
Regression Monte Carlo solver for unconstrained mean-field BSDEs

This module provides:
- Seeded Brownian ensembles
- A polynomial least-squares conditional-expectation operator
- The explicit backward Euler scheme for Y_t = xi + int f ds - int Z dB
- The perturbation-stability diagnostic and generator regularity audit
"""

import itertools
import logging
from typing import Any, Dict, List, Optional, Union

import numpy as np
from scipy import integrate

from model.data_models import (BackwardSolution, BrownianEnsemble, EmpiricalMeasure, GapReport,
                               GeneratorSpec, TerminalFunctional, TimeGrid)
from .error_handler import EnsembleMismatch, NonFiniteValue, RegressionSingular
from .measure import wasserstein1_1d

logger = logging.getLogger(__name__)

DEFAULT_BASIS_DEGREE = 4


def simulate_brownian(grid: TimeGrid, d: int, N: int, seed: int) -> BrownianEnsemble:
    """
    Simulate N d-dimensional Brownian paths on the grid

    Args:
        grid: Time grid
        d: Brownian dimension (>= 1)
        N: Particle count (>= 2)
        seed: Seed of numpy's default generator

    Returns:
        BrownianEnsemble with paths[0] = 0 and paths[k] = cumulative increments
    """
    if N < 2:
        raise ValueError("simulate_brownian needs N >= 2")
    if d < 1:
        raise ValueError("simulate_brownian needs d >= 1")
    rng = np.random.default_rng(seed)
    increments = rng.normal(0.0, np.sqrt(grid.dt), size=(grid.n_steps, N, d))
    paths = np.zeros((grid.n_steps + 1, N, d))
    np.cumsum(increments, axis=0, out=paths[1:])
    return BrownianEnsemble(grid=grid, d=d, N=N, seed=seed, increments=increments, paths=paths)


def monomial_exponents(d: int, degree: int) -> List[tuple]:
    """Index tuples of all monomials in d variables with total degree <= degree."""
    exponents = [()]
    for p in range(1, degree + 1):
        exponents.extend(itertools.combinations_with_replacement(range(d), p))
    return exponents


class RegressionOperator:
    """
    Least-squares projection onto polynomials of the Brownian state at each node

    The state at t_k > 0 is standardized by sqrt(t_k); at t_0 = 0 every particle
    sits at the origin and only the constant is used.
    """

    def __init__(self, ensemble: BrownianEnsemble, basis_degree: int = DEFAULT_BASIS_DEGREE):
        if basis_degree < 0:
            raise ValueError("basis_degree must be >= 0")
        self.ensemble = ensemble
        self.basis_degree = basis_degree
        self.logger = logging.getLogger(__name__)
        self._q_factors: List[np.ndarray] = []

        times = ensemble.grid.times
        for k in range(ensemble.grid.n_steps):
            degree = basis_degree if times[k] > 0 else 0
            design = self._design(ensemble.paths[k] / np.sqrt(times[k]) if times[k] > 0 else ensemble.paths[k],
                                  degree)
            if design.shape[1] > ensemble.N:
                raise RegressionSingular(
                    "basis larger than particle count",
                    {"k": k, "basis_size": design.shape[1], "N": ensemble.N}
                )
            q, r = np.linalg.qr(design)
            diag = np.abs(np.diag(r))
            if diag.min() <= 1e-10 * max(diag.max(), 1.0):
                raise RegressionSingular(
                    "rank-deficient regression basis",
                    {"k": k, "basis_degree": degree, "min_pivot": float(diag.min())}
                )
            self._q_factors.append(q)

    @staticmethod
    def _design(state: np.ndarray, degree: int) -> np.ndarray:
        columns = []
        for exps in monomial_exponents(state.shape[1], degree):
            col = np.ones(state.shape[0])
            for j in exps:
                col = col * state[:, j]
            columns.append(col)
        return np.column_stack(columns)

    @property
    def basis_size(self) -> int:
        return self._q_factors[-1].shape[1] if self._q_factors else 1

    def project(self, k: int, targets: np.ndarray) -> np.ndarray:
        """Fitted conditional expectation E[targets | B_{t_k}] at the particles."""
        q = self._q_factors[k]
        return q @ (q.T @ targets)


def conditional_expectation_path(ensemble: BrownianEnsemble, values: np.ndarray,
                                 regression: RegressionOperator) -> np.ndarray:
    """E_{t_k}[values] at every node; exact at the last node."""
    n = ensemble.grid.n_steps
    out = np.empty((n + 1, ensemble.N))
    out[n] = values
    for k in range(n):
        out[k] = regression.project(k, values)
    return out


def solve_mfbsde(ensemble: BrownianEnsemble,
                 generator: Any,
                 terminal: Union[TerminalFunctional, np.ndarray],
                 basis_degree: int = DEFAULT_BASIS_DEGREE,
                 regression: Optional[RegressionOperator] = None) -> BackwardSolution:
    """
    Backward explicit Euler with regression conditional expectations

    Args:
        ensemble: Brownian ensemble
        generator: Any object with driver(k, t, y, mu, z, nu) -> (N,) array
            (a GeneratorSpec, or a frozen generator from the reflected module)
        terminal: TerminalFunctional, or precomputed terminal values of shape (N,)
        basis_degree: Polynomial degree of the regression basis
        regression: Prebuilt operator for this ensemble (built when omitted)

    Returns:
        BackwardSolution with Y[n] = xi bitwise

    Raises:
        RegressionSingular: degenerate basis
        NonFiniteValue: the driver produced NaN or inf
    """
    grid = ensemble.grid
    n, N, d = grid.n_steps, ensemble.N, ensemble.d
    dt = grid.dt
    if regression is None:
        regression = RegressionOperator(ensemble, basis_degree)
    elif regression.ensemble is not ensemble:
        raise EnsembleMismatch("regression operator built on another ensemble")

    xi = terminal.evaluate(ensemble) if isinstance(terminal, TerminalFunctional) else np.asarray(terminal, dtype=float)
    if xi.shape != (N,) or not np.all(np.isfinite(xi)):
        raise NonFiniteValue("terminal values must be finite, one per particle")

    Y = np.empty((n + 1, N))
    Z = np.empty((n + 1, N, d))
    residuals = np.empty(n)
    Y[n] = xi

    for k in range(n - 1, -1, -1):
        t = grid.times[k]
        y_next = Y[k + 1]
        cond_mean = regression.project(k, y_next)
        innovation = y_next - cond_mean
        Z[k] = regression.project(k, innovation[:, None] * ensemble.increments[k]) / dt
        mu = EmpiricalMeasure(cond_mean)
        nu = EmpiricalMeasure(Z[k])
        drift = generator.driver(k, t, cond_mean, mu, Z[k], nu)
        Y[k] = cond_mean + drift * dt
        residuals[k] = float(np.sqrt(np.mean(innovation ** 2)))
        if not (np.all(np.isfinite(Y[k])) and np.all(np.isfinite(Z[k]))):
            raise NonFiniteValue("non-finite backward iterate", {"k": k, "t": float(t)})

    Z[n] = Z[n - 1]
    logger.debug(f"MFBSDE solve: N={N}, n_steps={n}, E[Y_0]={Y[0].mean():.6g}")
    return BackwardSolution(grid=grid, Y=Y, Z=Z, basis_degree=regression.basis_degree,
                            residuals=residuals, ensemble=ensemble)


def _driver_along(solution: BackwardSolution, generator: Any, k: int) -> np.ndarray:
    y = solution.Y[k]
    z = solution.Z[k]
    return generator.driver(k, solution.grid.times[k], y, EmpiricalMeasure(y), z, EmpiricalMeasure(z))


def stability_gap(sol1: BackwardSolution, sol2: BackwardSolution,
                  generator1: Any, generator2: Any, t_index: int = 0) -> GapReport:
    """
    Empirical sides of the a priori estimate between two MFBSDE solutions

    lhs = E[sup_{k >= t_index} |dY_k|^2] + E[sum_k |dZ_k|^2 dt];
    rhs = E[|d xi|^2] + E[sum_k |f1 - f2|^2 dt] with both drivers evaluated along solution 1.
    No inequality is asserted.

    Raises:
        EnsembleMismatch: the solutions come from different ensembles or grids
    """
    if sol1.grid != sol2.grid or sol1.Y.shape != sol2.Y.shape:
        raise EnsembleMismatch("solutions live on different grids or particle counts")
    if sol1.ensemble is not None and sol2.ensemble is not None and not sol1.ensemble.same_as(sol2.ensemble):
        raise EnsembleMismatch("solutions were produced on different Brownian ensembles")

    n = sol1.grid.n_steps
    dt = sol1.grid.dt
    dY = sol1.Y[t_index:] - sol2.Y[t_index:]
    sup_y = float(np.mean(np.max(dY ** 2, axis=0)))
    dZ = sol1.Z[t_index:n] - sol2.Z[t_index:n]
    z_gap = float(np.mean(np.sum(dZ ** 2, axis=(0, 2)) * dt))
    terminal_gap = float(np.mean((sol1.Y[n] - sol2.Y[n]) ** 2))

    driver_sq = np.zeros(sol1.Y.shape[1])
    for k in range(t_index, n):
        diff = _driver_along(sol1, generator1, k) - _driver_along(sol1, generator2, k)
        driver_sq += diff ** 2 * dt
    driver_gap = float(np.mean(driver_sq))

    lhs = sup_y + z_gap
    rhs = terminal_gap + driver_gap
    ratio = 0.0 if lhs == 0.0 else (lhs / rhs if rhs > 0 else float("inf"))
    return GapReport(sup_Y_gap2=sup_y, Z_gap2=z_gap, terminal_gap2=terminal_gap,
                     driver_gap2=driver_gap, lhs=lhs, rhs=rhs, ratio=ratio)


def check_generator_regularity(generator: GeneratorSpec, d: int = 1, n_samples: int = 2000,
                               seed: int = 0, scale: float = 2.0) -> Dict[str, Any]:
    """
    Sampled audit of the declared regularity class

    For mao generators: rho shape checks, truncated Osgood integrals over shrinking
    lower limits, and the worst sampled ratio |df|^2 / (rho(|dy|^2 + d1^2) + lam^2 |dz|^2).
    For lipschitz generators: the worst sampled |df| / (|dy| + |dm| + |dz|).
    """
    rng = np.random.default_rng(seed)
    report: Dict[str, Any] = {"name": generator.name, "regularity": generator.regularity}

    y1 = rng.normal(0.0, scale, n_samples)
    y2 = y1 + rng.normal(0.0, scale, n_samples) * rng.choice([1e-4, 1e-2, 1.0], n_samples)
    z1 = rng.normal(0.0, scale, (n_samples, d))
    z2 = z1 + rng.normal(0.0, scale, (n_samples, d)) * 1e-2
    shift = float(rng.normal(0.0, 0.5))
    mu1, mu2 = EmpiricalMeasure(y1), EmpiricalMeasure(y1 + shift)
    nu = EmpiricalMeasure(z1)
    df = generator.evaluate(0.0, y1, mu1, z1, nu) - generator.evaluate(0.0, y2, mu2, z2, nu)
    dy2 = (y1 - y2) ** 2
    dz2 = np.sum((z1 - z2) ** 2, axis=1)
    d1 = wasserstein1_1d(mu1, mu2)
    d1_sq = d1 ** 2
    report["measure_distance"] = d1

    if generator.regularity == "mao":
        r = np.linspace(0.0, 10.0, 1001)
        values = generator.rho(r)
        report["rho_zero"] = bool(values[0] == 0.0)
        report["rho_positive"] = bool(np.all(values[1:] > 0))
        report["rho_nondecreasing"] = bool(np.all(np.diff(values) >= -1e-12))
        report["rho_linear_growth"] = bool(np.all(values <= generator.beta * (1.0 + r) + 1e-12))
        lower_limits = [1e-2, 1e-4, 1e-8, 1e-16]
        osgood = [integrate.quad(lambda u: 1.0 / generator.rho(np.array([u]))[0], eps, 1.0, limit=200)[0]
                  for eps in lower_limits]
        report["osgood_integrals"] = osgood
        report["osgood_increasing"] = bool(all(b > a for a, b in zip(osgood, osgood[1:])))
        bound = generator.rho(dy2 + d1_sq) + generator.lam ** 2 * dz2
        ratio = df ** 2 / np.maximum(bound, 1e-300)
        report["mao_condition_max_ratio"] = float(np.max(ratio))
    else:
        denom = np.sqrt(dy2) + d1 + np.sqrt(dz2)
        report["lipschitz_estimate"] = float(np.max(np.abs(df) / np.maximum(denom, 1e-300)))
    return report
