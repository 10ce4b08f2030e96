"""
Skorokhod problem with two nonlinear time-dependent constraints on a discrete grid

This module provides:
- Monotone root finding (geometric bracket expansion + bisection)
- The nodewise minimal-push solver with flat-off bookkeeping
- The root paths phi, psi (l(t, s + phi) = 0, r(t, s + psi) = 0)
- The affine clipping oracle and the one-sided running-extremum map
- Numerical checks of the continuity and oscillation estimates
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from model.data_models import BoundReport, ConstraintPair, InputPath, SkorokhodSolution, TimeGrid
from .error_handler import ConfigError, GapViolation, RootBracketFailure

logger = logging.getLogger(__name__)

DEFAULT_ROOT_TOL = 1e-10
MAX_BRACKET_EXPANSIONS = 64
MAX_BISECTIONS = 200
BOUND_SLACK_FACTOR = 10.0


def root_solve_monotone(g: Callable[[float], float], seed_bracket: Tuple[float, float],
                        tol: float = DEFAULT_ROOT_TOL) -> float:
    """
    Find x* with |g(x*)| <= tol for a strictly increasing g

    Args:
        g: Strictly increasing scalar map
        seed_bracket: Initial guess interval (a, b); need not contain the root
        tol: Tolerance on |g|

    Returns:
        The root estimate

    Raises:
        RootBracketFailure: root not bracketed after 64 doublings, or not resolvable in floating point
    """
    a, b = float(min(seed_bracket)), float(max(seed_bracket))
    ga, gb = g(a), g(b)
    if abs(ga) <= tol:
        return a
    if abs(gb) <= tol:
        return b

    width = max(b - a, 1.0)
    expansions = 0
    while ga > 0 or gb < 0:
        if expansions >= MAX_BRACKET_EXPANSIONS:
            raise RootBracketFailure(
                "root not bracketed after bounded expansion",
                {"bracket": (a, b), "g(a)": ga, "g(b)": gb}
            )
        if ga > 0:
            b, gb = a, ga
            a -= width
            ga = g(a)
        else:
            a, ga = b, gb
            b += width
            gb = g(b)
        width *= 2.0
        expansions += 1
        if abs(ga) <= tol:
            return a
        if abs(gb) <= tol:
            return b

    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (a + b)
        gm = g(mid)
        if abs(gm) <= tol:
            return mid
        if mid == a or mid == b:
            break
        if gm > 0:
            b = mid
        else:
            a = mid

    raise RootBracketFailure(
        "tolerance not attainable; g may be non-monotone or too steep",
        {"bracket": (a, b), "tol": tol}
    )


def _slope_bracket(x: float, value: float, c: float, C: float) -> Tuple[float, float]:
    """Bi-Lipschitz bounds on the root of an increasing map with g(x) = value."""
    return x - value / c, x - value / C


def solve_skorokhod(input_path: InputPath, constraints: ConstraintPair,
                    root_tol: float = DEFAULT_ROOT_TOL) -> SkorokhodSolution:
    """
    Solve the discrete Skorokhod problem by nodewise minimal push

    Args:
        input_path: Input s sampled on the grid
        constraints: Barrier pair (l, r)
        root_tol: Tolerance on the active constraint value after a push

    Returns:
        SkorokhodSolution with x = s + K and K = Kr - Kl bitwise

    Raises:
        GapViolation: both constraints fire at one node
        RootBracketFailure: propagated from the root solver
    """
    if not root_tol > 0:
        raise ValueError("root_tol must be positive")

    grid = input_path.grid
    s = input_path.values
    times = grid.times
    n_nodes = len(grid)
    Kr = np.zeros(n_nodes)
    Kl = np.zeros(n_nodes)
    kr_prev = 0.0
    kl_prev = 0.0

    for k in range(n_nodes):
        t = times[k]
        x = s[k] + (kr_prev - kl_prev)
        lv = constraints.l(t, x)
        rv = constraints.r(t, x)
        if lv > 0 and rv < 0:
            raise GapViolation(
                "both constraints active at one node",
                {"k": k, "t": float(t), "l": float(lv), "r": float(rv)}
            )
        if lv > 0:
            root = root_solve_monotone(lambda y: constraints.l(t, y),
                                       _slope_bracket(x, lv, constraints.c, constraints.C), root_tol)
            kl_prev = kl_prev + (x - root)
        elif rv < 0:
            root = root_solve_monotone(lambda y: constraints.r(t, y),
                                       _slope_bracket(x, rv, constraints.c, constraints.C), root_tol)
            kr_prev = kr_prev + (root - x)
        Kr[k] = kr_prev
        Kl[k] = kl_prev

    K = Kr - Kl
    x_path = s + K
    residual = _flat_off_residual(grid, x_path, Kr, Kl, constraints)
    logger.debug(f"Skorokhod solve on {n_nodes} nodes: Kr_T={Kr[-1]:.6g}, Kl_T={Kl[-1]:.6g}")
    return SkorokhodSolution(grid=grid, x=x_path, K=K, Kr=Kr, Kl=Kl,
                             flat_off_residual=residual, root_tol=root_tol)


def _flat_off_residual(grid: TimeGrid, x: np.ndarray, Kr: np.ndarray, Kl: np.ndarray,
                       constraints: ConstraintPair) -> float:
    """Sum of |r| dKr + |l| dKl over nodes, with K_{0-} = 0."""
    dKr = np.diff(Kr, prepend=0.0)
    dKl = np.diff(Kl, prepend=0.0)
    total = 0.0
    for k, t in enumerate(grid.times):
        if dKr[k] > 0:
            total += abs(constraints.r(t, x[k])) * dKr[k]
        if dKl[k] > 0:
            total += abs(constraints.l(t, x[k])) * dKl[k]
    return float(total)


def verify_solution(solution: SkorokhodSolution, input_path: InputPath,
                    constraints: ConstraintPair) -> dict:
    """
    Audit a solution against the defining properties

    Returns:
        Dictionary of booleans and the worst constraint values
    """
    tol = solution.root_tol
    times = solution.grid.times
    l_vals = np.array([constraints.l(t, x) for t, x in zip(times, solution.x)])
    r_vals = np.array([constraints.r(t, x) for t, x in zip(times, solution.x)])
    dKr = np.diff(solution.Kr, prepend=0.0)
    dKl = np.diff(solution.Kl, prepend=0.0)
    return {
        "algebra": bool(np.array_equal(solution.x, input_path.values + solution.K)
                        and np.array_equal(solution.K, solution.Kr - solution.Kl)),
        "monotone": bool(np.all(dKr >= 0) and np.all(dKl >= 0)),
        "feasible": bool(np.all(l_vals <= tol) and np.all(r_vals >= -tol)),
        "flat_off": bool(np.all(np.abs(r_vals[dKr > 0]) <= tol) and np.all(np.abs(l_vals[dKl > 0]) <= tol)),
        "max_l": float(l_vals.max()),
        "min_r": float(r_vals.min()),
    }


def compute_phi_psi(input_path: InputPath, constraints: ConstraintPair,
                    tol: float = DEFAULT_ROOT_TOL) -> Tuple[np.ndarray, np.ndarray]:
    """
    Root paths phi, psi with l(t_k, s_k + phi_k) = 0 and r(t_k, s_k + psi_k) = 0

    Raises:
        RootBracketFailure: propagated from the root solver
    """
    phi = np.empty(len(input_path.grid))
    psi = np.empty(len(input_path.grid))
    for k, (t, s) in enumerate(zip(input_path.grid.times, input_path.values)):
        phi[k] = root_solve_monotone(lambda u: constraints.l(t, s + u),
                                     _slope_bracket(0.0, constraints.l(t, s), constraints.c, constraints.C), tol)
        psi[k] = root_solve_monotone(lambda u: constraints.r(t, s + u),
                                     _slope_bracket(0.0, constraints.r(t, s), constraints.c, constraints.C), tol)
    return phi, psi


def clipping_oracle(input_path: InputPath, lower: np.ndarray, upper: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Classical two-sided clipping recursion for affine constraints

    x_k = clip(x_{k-1} + s_k - s_{k-1}, lower_k, upper_k) with x_{-1} - s_{-1} = 0.

    Returns:
        (x, K) arrays
    """
    s = input_path.values
    x = np.empty_like(s)
    K = np.empty_like(s)
    k_prev = 0.0
    for k in range(len(s)):
        x[k] = min(max(s[k] + k_prev, lower[k]), upper[k])
        k_prev = x[k] - s[k]
        K[k] = k_prev
    return x, K


def one_sided_skorokhod(bound: np.ndarray, side: str) -> np.ndarray:
    """
    Regulator of the one-sided problem from its root path

    For an upper barrier only (side='upper'), K_k = min(0, min_{j<=k} phi_j);
    for a lower barrier only (side='lower'), K_k = max(0, max_{j<=k} psi_j).
    """
    if side == "upper":
        return np.minimum(0.0, np.minimum.accumulate(bound))
    if side == "lower":
        return np.maximum(0.0, np.maximum.accumulate(bound))
    raise ValueError("side must be 'upper' or 'lower'")


def _oscillation(values: np.ndarray) -> float:
    return float(values.max() - values.min()) if values.size else 0.0


def check_oscillation_bound(solution: SkorokhodSolution, phi: np.ndarray, psi: np.ndarray,
                            interval: Optional[Tuple[int, int]] = None) -> BoundReport:
    """
    Oscillation of K on a node range against osc(phi) + osc(psi)

    Args:
        solution: Skorokhod solution
        phi, psi: Root paths from compute_phi_psi on the same input
        interval: Inclusive node range (k1, k2); whole grid when omitted

    Raises:
        ConfigError: k1 > k2, or either index lies off the grid
    """
    n = solution.grid.n_steps
    k1, k2 = interval if interval is not None else (0, n)
    if not 0 <= k1 <= k2 <= n:
        raise ConfigError(f"oscillation interval ({k1}, {k2}) is not a node range of the grid", {"n_steps": n})
    window = slice(k1, k2 + 1)
    lhs = _oscillation(solution.K[window])
    rhs = _oscillation(phi[window]) + _oscillation(psi[window])
    slack = BOUND_SLACK_FACTOR * solution.root_tol
    return BoundReport(lhs=lhs, rhs=rhs, holds=lhs <= rhs + slack, slack=slack,
                       details={"interval": (int(k1), int(k2))})


@dataclass
class SamplingBox:
    """Region over which constraint sup-differences are estimated."""
    x_min: float = -10.0
    x_max: float = 10.0
    n_x: int = 401

    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)


def sup_difference(f1: Callable[[float, float], float], f2: Callable[[float, float], float],
                   times: Sequence[float], box: SamplingBox) -> float:
    """Max |f1(t, x) - f2(t, x)| over grid times and box points."""
    xs = box.points()
    worst = 0.0
    for t in times:
        diff = max(abs(f1(t, x) - f2(t, x)) for x in xs)
        worst = max(worst, diff)
    return float(worst)


def check_continuity_bound(sol1: SkorokhodSolution, sol2: SkorokhodSolution,
                           input1: InputPath, input2: InputPath,
                           constraints1: ConstraintPair, constraints2: ConstraintPair,
                           box: Optional[SamplingBox] = None) -> BoundReport:
    """
    sup |K1 - K2| against (C/c) sup |s1 - s2| + (1/c) max(L_bar, R_bar)

    L_bar and R_bar are estimated over the declared sampling box; the box is
    recorded in the report details.
    """
    box = box or SamplingBox()
    c = min(constraints1.c, constraints2.c)
    C = max(constraints1.C, constraints2.C)
    times = sol1.grid.times
    lhs = float(np.max(np.abs(sol1.K - sol2.K)))
    input_gap = float(np.max(np.abs(input1.values - input2.values)))
    l_bar = sup_difference(constraints1.l, constraints2.l, times, box)
    r_bar = sup_difference(constraints1.r, constraints2.r, times, box)
    rhs = (C / c) * input_gap + max(l_bar, r_bar) / c
    slack = BOUND_SLACK_FACTOR * max(sol1.root_tol, sol2.root_tol)
    return BoundReport(lhs=lhs, rhs=rhs, holds=lhs <= rhs + slack, slack=slack,
                       details={"input_gap": input_gap, "L_bar": l_bar, "R_bar": r_bar,
                                "box": (box.x_min, box.x_max, box.n_x), "c": c, "C": C})
