"""
Doubly mean-reflected MFBSDE solver

Each Picard iterate freezes the (y, law of y) arguments of the generator at the
previous iterate, solves the unconstrained MFBSDE, and recovers the deterministic
reflection from a Skorokhod problem posed in reversed time:

    s_bar_j = E[y_{T-t_j}],  l_bar(t_j, x) = E[L(T - t_j, y_{T-t_j} - E[y_{T-t_j}] + x)]

with r_bar analogous. The forward regulator is K_k = K_bar_n - K_bar_{n-k} and
Y_k = y_k + K_n - K_k. A reversed push at node j is a forward increment on
[t_{n-j}, t_{n-j+1}], attributed to forward node n - j.
"""

import logging
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from model.data_models import (AuditReport, BackwardSolution, BrownianEnsemble, ConstraintPair,
                               EmpiricalMeasure, GeneratorSpec, InputPath, LossFieldPair,
                               PicardIterate, ReflectedSolution, Scenario, SkorokhodSolution, TimeGrid)
from .error_handler import ConfigError, ErrorCategory, ErrorHandler, PicardNotConverged
from .measure import standard_error
from .mfbsde import RegressionOperator, conditional_expectation_path, simulate_brownian, solve_mfbsde
from .skorokhod import compute_phi_psi, one_sided_skorokhod, solve_skorokhod

logger = logging.getLogger(__name__)

STAT_SLACK_SE = 3.0
FIXED_POINT_FACTOR = 10.0


class FrozenGenerator:
    """f^m(t_k, z, nu) = f(t_k, Y_prev_k, law(Y_prev_k), z, nu)."""

    def __init__(self, generator: GeneratorSpec, Y_prev: np.ndarray):
        self.generator = generator
        self.Y_prev = Y_prev
        self._laws: Dict[int, EmpiricalMeasure] = {}

    def law(self, k: int) -> EmpiricalMeasure:
        if k not in self._laws:
            self._laws[k] = EmpiricalMeasure(self.Y_prev[k])
        return self._laws[k]

    def driver(self, k: int, t: float, y: np.ndarray, mu: EmpiricalMeasure,
               z: np.ndarray, nu: EmpiricalMeasure) -> np.ndarray:
        return self.generator.evaluate(t, self.Y_prev[k], self.law(k), z, nu)


def freeze_generator(generator: GeneratorSpec, Y_prev: np.ndarray) -> FrozenGenerator:
    """Substitute the previous iterate's particle values and empirical laws into f."""
    return FrozenGenerator(generator, np.asarray(Y_prev, dtype=float))


def build_skorokhod_data(y_sol: BackwardSolution, losses: LossFieldPair) -> Tuple[InputPath, ConstraintPair]:
    """
    Reversed-time Skorokhod input and averaged constraints for one iterate

    The averaged maps are evaluated at grid times only; other times use the nearest node.
    """
    grid = y_sol.grid
    n = grid.n_steps
    times = grid.times
    means = y_sol.Y.mean(axis=1)
    s_bar = means[::-1].copy()
    centred = y_sol.Y - means[:, None]
    states = y_sol.ensemble.paths if y_sol.ensemble is not None else None

    def reversed_node(t: float) -> int:
        return n - int(min(max(round(t / grid.dt), 0), n))

    def l_bar(t: float, x: float) -> float:
        k = reversed_node(t)
        state = states[k] if states is not None else None
        return float(np.mean(losses.L(times[k], centred[k] + x, state)))

    def r_bar(t: float, x: float) -> float:
        k = reversed_node(t)
        state = states[k] if states is not None else None
        return float(np.mean(losses.R(times[k], centred[k] + x, state)))

    constraints = ConstraintPair(l=l_bar, r=r_bar, c=losses.c, C=losses.C, gap=losses.gap)
    return InputPath(grid=grid, values=s_bar), constraints


def reference_skorokhod_data(xi: np.ndarray, losses: LossFieldPair,
                             grid: TimeGrid) -> Tuple[InputPath, ConstraintPair]:
    """Reversed problem of the y-free solution: s_bar = E[xi], l_bar(t, x) = E[L(T - t, x)]."""
    xi = np.asarray(xi, dtype=float)
    s_bar = np.full(len(grid), float(np.mean(xi)))
    ones = np.ones_like(xi)

    def l_bar(t: float, x: float) -> float:
        return float(np.mean(losses.L(grid.T - t, x * ones, None)))

    def r_bar(t: float, x: float) -> float:
        return float(np.mean(losses.R(grid.T - t, x * ones, None)))

    constraints = ConstraintPair(l=l_bar, r=r_bar, c=losses.c, C=losses.C, gap=losses.gap)
    return InputPath(grid=grid, values=s_bar), constraints


def _reversed_regulators(input_path: InputPath, constraints: ConstraintPair, root_tol: float,
                         barrier: str) -> SkorokhodSolution:
    """Two-sided minimal push, or the one-sided running-minimum map for an upper barrier only."""
    if barrier == "double":
        return solve_skorokhod(input_path, constraints, root_tol)
    if barrier == "upper":
        phi, _ = compute_phi_psi(input_path, constraints, root_tol)
        K = one_sided_skorokhod(phi, "upper")
        Kl = -K
        Kr = np.zeros_like(K)
        K = Kr - Kl
        return SkorokhodSolution(grid=input_path.grid, x=input_path.values + K, K=K, Kr=Kr, Kl=Kl,
                                 flat_off_residual=0.0, root_tol=root_tol)
    raise ValueError("barrier must be 'double' or 'upper'")


def picard_step(scenario: Scenario, Y_prev: np.ndarray, ensemble: BrownianEnsemble,
                regression: Optional[RegressionOperator] = None,
                xi: Optional[np.ndarray] = None, barrier: str = "double") -> PicardIterate:
    """
    One Picard iterate: frozen-generator MFBSDE solve, reversed Skorokhod solve, assembly

    Raises:
        propagated errors of solve_mfbsde and solve_skorokhod
    """
    n = scenario.grid.n_steps
    frozen = freeze_generator(scenario.generator, Y_prev)
    terminal = xi if xi is not None else scenario.terminal
    y_sol = solve_mfbsde(ensemble, frozen, terminal, scenario.basis_degree, regression)
    input_path, constraints = build_skorokhod_data(y_sol, scenario.losses)
    skorokhod = _reversed_regulators(input_path, constraints, scenario.root_tol, barrier)

    KR = skorokhod.Kr[n] - skorokhod.Kr[::-1]
    KL = skorokhod.Kl[n] - skorokhod.Kl[::-1]
    K = KR - KL
    Y = y_sol.Y + (K[n] - K)[:, None]
    return PicardIterate(y_solution=y_sol, skorokhod=skorokhod, Y=Y, Z=y_sol.Z, K=K, KR=KR, KL=KL)


def picard_distance(Y_new: np.ndarray, Y_old: np.ndarray) -> float:
    """Sup over nodes of the particle mean-square distance."""
    return float(np.max(np.mean((Y_new - Y_old) ** 2, axis=1)))


def check_terminal_admissibility(scenario: Scenario, ensemble: BrownianEnsemble,
                                 xi: np.ndarray) -> Dict[str, float]:
    """
    E[L(T, xi)] <= slack and E[R(T, xi)] >= -slack, slack = 3 standard errors

    Raises:
        ConfigError: the terminal value violates the barriers beyond the slack
    """
    T = scenario.grid.T
    state = ensemble.paths[-1]
    l_vals = scenario.losses.L(T, xi, state)
    r_vals = scenario.losses.R(T, xi, state)
    slack = STAT_SLACK_SE * max(standard_error(l_vals), standard_error(r_vals))
    result = {"EL_T": float(np.mean(l_vals)), "ER_T": float(np.mean(r_vals)), "stat_slack": slack}
    if result["EL_T"] > slack or result["ER_T"] < -slack:
        raise ConfigError("terminal value violates E[L(T, xi)] <= 0 <= E[R(T, xi)]", result)
    return result


def estimate_loss_bound(losses: LossFieldPair, ensemble: BrownianEnsemble) -> float:
    """Empirical M = E[sup_t |L(t, 0)|] + E[sup_t |R(t, 0)|] over the grid."""
    zeros = np.zeros(ensemble.N)
    times = ensemble.grid.times
    sup_l = np.max([np.abs(losses.L(t, zeros, ensemble.paths[k])) for k, t in enumerate(times)], axis=0)
    sup_r = np.max([np.abs(losses.R(t, zeros, ensemble.paths[k])) for k, t in enumerate(times)], axis=0)
    return float(np.mean(sup_l) + np.mean(sup_r))


def check_k_increment_bound(iterate: PicardIterate, losses: LossFieldPair, xi: np.ndarray, M: float) -> Dict[str, Any]:
    """
    |K_n - K_k| against the explicit bound
    4(1 + 2C/c) E[sup_{r >= t_k} |y_r|] + (4(1 + 2C/c) + 2C/c) E|xi| + M/c
    """
    c, C = losses.c, losses.C
    factor = 4.0 * (1.0 + 2.0 * C / c)
    abs_y = np.abs(iterate.y_solution.Y)
    tail_sup = np.maximum.accumulate(abs_y[::-1], axis=0)[::-1]
    e_abs_xi = float(np.mean(np.abs(xi)))
    rhs = factor * tail_sup.mean(axis=1) + (factor + 2.0 * C / c) * e_abs_xi + M / c
    lhs = np.abs(iterate.K[-1] - iterate.K)
    return {"holds": bool(np.all(lhs <= rhs + 1e-9)), "max_ratio": float(np.max(lhs / rhs))}


def _second_moment(Y: np.ndarray, Z: np.ndarray, dt: float) -> float:
    n = Y.shape[0] - 1
    return float(np.mean(np.max(Y ** 2, axis=0)) + np.mean(np.sum(Z[:n] ** 2, axis=(0, 2)) * dt))


def solve_reflected(scenario: Scenario, initial_Y: Optional[Union[np.ndarray, str]] = None,
                    ensemble: Optional[BrownianEnsemble] = None, barrier: str = "double") -> ReflectedSolution:
    """
    Picard iteration for the doubly mean-reflected MFBSDE

    Args:
        scenario: Problem definition
        initial_Y: Initializer of shape (n_steps + 1, N), the string 'zeros', or None
            for the regression estimate of E_t[xi]
        ensemble: Brownian ensemble (simulated from the scenario seed when omitted)
        barrier: 'double', or 'upper' for the single mean reflection with L only

    Returns:
        ReflectedSolution of the last iterate with its Picard history

    Raises:
        PicardNotConverged: tolerance not met within max_picard_iters
        ConfigError: terminal value violates the barriers
    """
    grid = scenario.grid
    if ensemble is None:
        ensemble = simulate_brownian(grid, scenario.d, scenario.N, scenario.seed)
    regression = RegressionOperator(ensemble, scenario.basis_degree)
    xi = scenario.terminal.evaluate(ensemble)
    admissibility = check_terminal_admissibility(scenario, ensemble, xi)

    if initial_Y is None:
        Y_prev = conditional_expectation_path(ensemble, xi, regression)
    elif isinstance(initial_Y, str):
        if initial_Y != "zeros":
            raise ValueError("initial_Y string must be 'zeros'")
        Y_prev = np.zeros((grid.n_steps + 1, ensemble.N))
    else:
        Y_prev = np.asarray(initial_Y, dtype=float)
        if Y_prev.shape != (grid.n_steps + 1, ensemble.N):
            raise ValueError("initial_Y must have shape (n_steps + 1, N)")

    M = estimate_loss_bound(scenario.losses, ensemble)
    reference = _reversed_regulators(*reference_skorokhod_data(xi, scenario.losses, grid),
                                     scenario.root_tol, barrier)
    history: List[float] = []
    moments: List[float] = []
    k_bounds: List[Dict[str, Any]] = []
    iterate: Optional[PicardIterate] = None
    converged = False

    logger.info(f"Solving '{scenario.name}': N={scenario.N}, n_steps={grid.n_steps}, barrier={barrier}")
    for m in range(1, scenario.max_picard_iters + 1):
        iterate = picard_step(scenario, Y_prev, ensemble, regression, xi, barrier)
        delta = picard_distance(iterate.Y, Y_prev)
        history.append(delta)
        moments.append(_second_moment(iterate.Y, iterate.Z, grid.dt))
        k_bounds.append(check_k_increment_bound(iterate, scenario.losses, xi, M))
        logger.info(f"Picard iteration {m}: delta={delta:.3e}, K_T={iterate.K[-1]:.6g}")
        Y_prev = iterate.Y
        if delta <= scenario.picard_tol:
            converged = True
            break

    tail = history[2:]
    if any(b > a for a, b in zip(tail, tail[1:])):
        ErrorHandler().handle_warning("Picard distances not monotone after iteration 2",
                                      ErrorCategory.PICARD, {"history": history})

    if not converged:
        raise PicardNotConverged(
            f"Picard iteration did not reach {scenario.picard_tol:g} in {scenario.max_picard_iters} iterations",
            history, {"scenario": scenario.name}
        )

    origin_drift = np.array([scenario.generator.at_origin(t, scenario.d) for t in grid.times[:-1]])
    moment_scale = 1.0 + float(np.mean(xi ** 2)) + float(np.sum(origin_drift ** 2) * grid.dt)
    uniform_bound = max(moments)
    y_unconstrained = iterate.y_solution.Y
    diagnostics = {
        "uniform_bound": uniform_bound,
        "uniform_bound_ratio": uniform_bound / moment_scale,
        "second_moments": moments,
        "k_bound_holds": all(b["holds"] for b in k_bounds),
        "k_bound_max_ratio": max(b["max_ratio"] for b in k_bounds),
        "loss_bound_M": M,
        "reference_K_T": float(reference.K[-1]),
        "assembly_Y": bool(np.array_equal(iterate.Y, y_unconstrained + (iterate.K[-1] - iterate.K)[:, None])),
        "barrier": barrier,
        **admissibility,
    }
    return ReflectedSolution(grid=grid, Y=iterate.Y, Z=iterate.Z, K=iterate.K, KR=iterate.KR, KL=iterate.KL,
                             picard_history=history, iterations=len(history), converged=converged,
                             diagnostics=diagnostics)


def solve_single_reflected(scenario: Scenario, ensemble: Optional[BrownianEnsemble] = None) -> ReflectedSolution:
    """Mean reflection with the upper barrier L only; KR stays zero."""
    return solve_reflected(scenario, ensemble=ensemble, barrier="upper")


def audit_solution(solution: ReflectedSolution, scenario: Scenario,
                   ensemble: Optional[BrownianEnsemble] = None) -> AuditReport:
    """
    Constraint, flat-off, dynamics and assembly residuals of a reflected solution

    Works equally on a fresh solution and on one reloaded from exported files.
    """
    grid = scenario.grid
    if ensemble is None:
        ensemble = simulate_brownian(grid, scenario.d, scenario.N, scenario.seed)
    n, dt = grid.n_steps, grid.dt
    times = grid.times
    losses = scenario.losses

    EL = np.empty(n + 1)
    ER = np.empty(n + 1)
    tol_total = np.empty(n + 1)
    for k, t in enumerate(times):
        l_vals = losses.L(t, solution.Y[k], ensemble.paths[k])
        r_vals = losses.R(t, solution.Y[k], ensemble.paths[k])
        EL[k] = np.mean(l_vals)
        ER[k] = np.mean(r_vals)
        tol_total[k] = scenario.root_tol + STAT_SLACK_SE * max(standard_error(l_vals), standard_error(r_vals))

    # increments sit at their left node; flat-off uses the Jordan parts of dK
    dKR = np.append(np.diff(solution.KR), 0.0)
    dKL = np.append(np.diff(solution.KL), 0.0)
    dK = np.append(np.diff(solution.K), 0.0)
    up, down = np.maximum(dK, 0.0), np.maximum(-dK, 0.0)
    flat_off_R = float(np.sum(np.abs(ER) * up))
    flat_off_L = float(np.sum(np.abs(EL) * down))
    flat_off_holds = bool(np.all(np.abs(ER[up > 0]) <= tol_total[up > 0])
                          and np.all(np.abs(EL[down > 0]) <= tol_total[down > 0]))
    constraints_hold = bool(np.all(EL <= tol_total) and np.all(ER >= -tol_total))

    step_means = np.empty(n)
    step_rms = np.empty(n)
    for k in range(n):
        y, z = solution.Y[k], solution.Z[k]
        drift = scenario.generator.evaluate(times[k], y, EmpiricalMeasure(y), z, EmpiricalMeasure(z))
        martingale = np.sum(z * ensemble.increments[k], axis=1)
        residual = y - solution.Y[k + 1] - drift * dt + martingale - (solution.K[k + 1] - solution.K[k])
        step_means[k] = np.mean(residual)
        step_rms[k] = np.sqrt(np.mean(residual ** 2))

    assembly = bool(np.array_equal(solution.K, solution.KR - solution.KL)
                    and solution.K[0] == 0.0 and solution.KR[0] == 0.0 and solution.KL[0] == 0.0
                    and np.all(np.diff(solution.KR) >= 0) and np.all(np.diff(solution.KL) >= 0)
                    and solution.diagnostics.get("assembly_Y", True))
    terminal_exact = bool(np.array_equal(solution.Y[n], scenario.terminal.evaluate(ensemble)))

    report = AuditReport(
        times=times.copy(), EL=EL, ER=ER, tol_total=tol_total, dKR=dKR, dKL=dKL,
        flat_off_R=flat_off_R, flat_off_L=flat_off_L,
        dynamics_residual=float(np.max(np.abs(step_means))),
        constraints_hold=constraints_hold, flat_off_holds=flat_off_holds,
        assembly_holds=assembly, terminal_exact=terminal_exact,
        k_total_variation=float(np.sum(np.abs(np.diff(solution.K)))),
        uniform_bound=solution.diagnostics.get("uniform_bound"),
        uniform_bound_ratio=solution.diagnostics.get("uniform_bound_ratio"),
        details={"dynamics_rms": float(np.max(step_rms)), "iterations": solution.iterations},
    )
    if not constraints_hold:
        logger.warning(f"Constraint check failed beyond tol_total for '{scenario.name}'")
    return report


def uniqueness_probe(scenario: Scenario, alternative_Y0: Union[np.ndarray, str],
                     ensemble: Optional[BrownianEnsemble] = None) -> Dict[str, float]:
    """
    Solve from the default and an alternative initializer and compare the limits

    Raises:
        PicardNotConverged: propagated from either run
    """
    if ensemble is None:
        ensemble = simulate_brownian(scenario.grid, scenario.d, scenario.N, scenario.seed)
    first = solve_reflected(scenario, ensemble=ensemble)
    second = solve_reflected(scenario, initial_Y=alternative_Y0, ensemble=ensemble)
    return {"distance": picard_distance(first.Y, second.Y),
            "iterations_default": first.iterations, "iterations_alternative": second.iterations}
