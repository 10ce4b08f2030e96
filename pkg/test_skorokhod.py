#!/usr/bin/env python3
"""
Tests for the discrete Skorokhod problem with nonlinear constraints
"""

import sys
import os

import numpy as np
import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from model.data_models import ConstraintPair, InputPath, TimeGrid
from core.error_handler import ConfigError, GapViolation, RootBracketFailure
from core.skorokhod import (SamplingBox, check_continuity_bound, check_oscillation_bound, clipping_oracle,
                            compute_phi_psi, one_sided_skorokhod, root_solve_monotone, solve_skorokhod,
                            verify_solution)

ROOT_TOL = 1e-10


def affine_instance(rng, n_steps=200, u_shift=0.0, d_shift=0.0, s_noise=None):
    """Random piecewise-linear input with affine time-dependent barriers a(x - u(t)), a(x - d(t))."""
    grid = TimeGrid(T=1.0, n_steps=n_steps)
    knots = np.linspace(0.0, 1.0, int(rng.integers(3, 10)))
    s = np.interp(grid.times, knots, rng.normal(0.0, 2.0, knots.size))
    if s_noise is not None:
        s = s + s_noise
    a = float(rng.uniform(0.5, 3.0))
    d0 = float(rng.uniform(-1.5, -0.5))
    width = float(rng.uniform(0.5, 2.0))
    drift = float(rng.uniform(-1.0, 1.0))
    upper = d0 + width + drift * grid.times + u_shift
    lower = d0 + drift * grid.times + d_shift

    def l(t, x, a=a, u0=d0 + width + u_shift, b=drift):
        return a * (x - (u0 + b * t))

    def r(t, x, a=a, d0=d0 + d_shift, b=drift):
        return a * (x - (d0 + b * t))

    constraints = ConstraintPair(l=l, r=r, c=a, C=a, gap=a * (width + u_shift - d_shift))
    return grid, InputPath(grid=grid, values=s), constraints, lower, upper


def arctan_constraints(u, d):
    return ConstraintPair(l=lambda t, x: x + 0.2 * np.arctan(x) - u,
                          r=lambda t, x: x + 0.2 * np.arctan(x) - d,
                          c=1.0, C=1.2, gap=u - d)


def test_root_solve_expands_bracket():
    """Test that a root outside the seed bracket is found"""
    root = root_solve_monotone(lambda x: x ** 3 + x - 10.0, (0.0, 1.0), ROOT_TOL)
    assert abs(root ** 3 + root - 10.0) <= ROOT_TOL
    assert root == pytest.approx(2.0, abs=1e-9)


def test_root_solve_accepts_reversed_bracket():
    """Test that bracket orientation does not matter"""
    root = root_solve_monotone(lambda x: 2.0 * (x - 0.3), (5.0, -5.0), ROOT_TOL)
    assert root == pytest.approx(0.3, abs=1e-10)


def test_root_solve_fails_without_root():
    """Test RootBracketFailure for maps without a root"""
    with pytest.raises(RootBracketFailure):
        root_solve_monotone(lambda x: np.arctan(x) - 2.0, (0.0, 1.0), ROOT_TOL)


def test_push_up_example():
    """Test s = -2t inside [-1, 1]: x = max(-1, -2t), Kr = max(0, 2t - 1), Kl = 0"""
    grid = TimeGrid(T=1.0, n_steps=100)
    path = InputPath(grid=grid, values=-2.0 * grid.times)
    constraints = ConstraintPair(l=lambda t, x: x - 1.0, r=lambda t, x: x + 1.0, c=1.0, C=1.0, gap=2.0)
    solution = solve_skorokhod(path, constraints, ROOT_TOL)

    assert np.max(np.abs(solution.x - np.maximum(-1.0, -2.0 * grid.times))) <= 10 * ROOT_TOL
    assert np.max(np.abs(solution.Kr - np.maximum(0.0, 2.0 * grid.times - 1.0))) <= 10 * ROOT_TOL
    assert np.all(solution.Kl == 0.0)


def test_sine_input_matches_clipping_recursion():
    """Test s = sin(4 pi t) with l = 2(x - 0.5), r = 2(x + 0.5) against the clipped recursion"""
    grid = TimeGrid(T=1.0, n_steps=400)
    path = InputPath(grid=grid, values=np.sin(4 * np.pi * grid.times))
    constraints = ConstraintPair(l=lambda t, x: 2 * (x - 0.5), r=lambda t, x: 2 * (x + 0.5),
                                 c=2.0, C=2.0, gap=2.0)
    solution = solve_skorokhod(path, constraints, ROOT_TOL)
    x_oracle, K_oracle = clipping_oracle(path, np.full(len(grid), -0.5), np.full(len(grid), 0.5))

    assert np.max(np.abs(solution.x - x_oracle)) <= 10 * ROOT_TOL
    assert np.max(np.abs(solution.K - K_oracle)) <= 10 * ROOT_TOL


def test_random_affine_instances_match_oracle():
    """Test oracle equivalence on random piecewise-linear inputs with time-dependent barriers"""
    rng = np.random.default_rng(2024)
    for _ in range(20):
        grid, path, constraints, lower, upper = affine_instance(rng)
        solution = solve_skorokhod(path, constraints, ROOT_TOL)
        x_oracle, _ = clipping_oracle(path, lower, upper)
        assert np.max(np.abs(solution.x - x_oracle)) <= 10 * ROOT_TOL


def test_solution_properties_hold():
    """Test algebra, monotonicity, feasibility and flat-off on nonlinear constraints"""
    rng = np.random.default_rng(5)
    grid = TimeGrid(T=1.0, n_steps=300)
    path = InputPath(grid=grid, values=np.cumsum(rng.normal(0.0, 0.15, len(grid))))
    constraints = arctan_constraints(0.8, -0.6)
    solution = solve_skorokhod(path, constraints, ROOT_TOL)
    checks = verify_solution(solution, path, constraints)

    assert checks["algebra"]
    assert checks["monotone"]
    assert checks["feasible"]
    assert checks["flat_off"]
    assert np.array_equal(solution.K, solution.Kr - solution.Kl)
    assert solution.flat_off_residual <= 10 * ROOT_TOL * (solution.Kr[-1] + solution.Kl[-1] + 1.0)


def test_feasible_input_needs_no_push():
    """Test that a path inside the barriers is returned unchanged"""
    grid = TimeGrid(T=1.0, n_steps=50)
    path = InputPath(grid=grid, values=0.3 * np.sin(2 * np.pi * grid.times))
    solution = solve_skorokhod(path, arctan_constraints(1.0, -1.0), ROOT_TOL)
    assert np.all(solution.K == 0.0)
    assert np.array_equal(solution.x, path.values)


def test_initial_jump_allowed():
    """Test that K_0 may be nonzero when s_0 violates a constraint"""
    grid = TimeGrid(T=1.0, n_steps=10)
    path = InputPath(grid=grid, values=np.full(len(grid), 2.0))
    constraints = ConstraintPair(l=lambda t, x: x - 1.0, r=lambda t, x: x + 1.0, c=1.0, C=1.0, gap=2.0)
    solution = solve_skorokhod(path, constraints, ROOT_TOL)
    assert solution.Kl[0] == pytest.approx(1.0, abs=1e-9)
    assert np.all(solution.Kl == solution.Kl[0])


def test_gap_violation():
    """Test GapViolation when both constraints fire at one node"""
    grid = TimeGrid(T=1.0, n_steps=5)
    path = InputPath(grid=grid, values=np.full(len(grid), 1.5))
    # declared gap is false: r - l = -1 everywhere
    constraints = ConstraintPair(l=lambda t, x: x - 1.0, r=lambda t, x: x - 2.0, c=1.0, C=1.0, gap=1.0)
    with pytest.raises(GapViolation):
        solve_skorokhod(path, constraints, ROOT_TOL)


def test_invalid_root_tol():
    """Test that a non-positive tolerance is rejected"""
    grid = TimeGrid(T=1.0, n_steps=5)
    path = InputPath(grid=grid, values=np.zeros(len(grid)))
    with pytest.raises(ValueError):
        solve_skorokhod(path, arctan_constraints(1.0, -1.0), 0.0)


def test_determinism():
    """Test identical inputs give identical outputs"""
    rng = np.random.default_rng(11)
    _, path, constraints, _, _ = affine_instance(rng)
    first = solve_skorokhod(path, constraints, ROOT_TOL)
    second = solve_skorokhod(path, constraints, ROOT_TOL)
    assert np.array_equal(first.x, second.x)
    assert np.array_equal(first.K, second.K)


def test_one_sided_reduction():
    """Test that with an inactive lower constraint K is the running minimum of phi"""
    rng = np.random.default_rng(3)
    grid = TimeGrid(T=1.0, n_steps=200)
    path = InputPath(grid=grid, values=np.cumsum(rng.normal(0.0, 0.2, len(grid))))
    constraints = ConstraintPair(l=lambda t, x: x - 0.5, r=lambda t, x: x + 1e6, c=1.0, C=1.0, gap=1e6)
    solution = solve_skorokhod(path, constraints, ROOT_TOL)
    phi, _ = compute_phi_psi(path, constraints, ROOT_TOL)
    assert np.all(solution.Kr == 0.0)
    assert np.allclose(solution.K, one_sided_skorokhod(phi, "upper"), atol=1e-9)


def test_one_sided_rejects_unknown_side():
    """Test the side argument is validated"""
    with pytest.raises(ValueError):
        one_sided_skorokhod(np.zeros(3), "middle")


def test_grid_refinement_decreases_error():
    """Test that refining the grid moves x towards the fine-grid solution"""
    constraints = ConstraintPair(l=lambda t, x: x - 0.5, r=lambda t, x: x + 0.5, c=1.0, C=1.0, gap=1.0)
    fine_grid = TimeGrid(T=1.0, n_steps=3200)
    fine = solve_skorokhod(InputPath(grid=fine_grid, values=np.sin(2 * np.pi * fine_grid.times)),
                           constraints, ROOT_TOL)
    errors = []
    for n_steps in (25, 50, 100, 200):
        grid = TimeGrid(T=1.0, n_steps=n_steps)
        coarse = solve_skorokhod(InputPath(grid=grid, values=np.sin(2 * np.pi * grid.times)),
                                 constraints, ROOT_TOL)
        errors.append(float(np.max(np.abs(coarse.x - fine.x[:: 3200 // n_steps]))))
    assert all(b <= a + 1e-9 for a, b in zip(errors, errors[1:]))
    assert errors[-1] < errors[0]


def test_oscillation_bound_on_random_instances():
    """Test osc(K) <= osc(phi) + osc(psi) on whole grids and random windows"""
    rng = np.random.default_rng(7)
    for _ in range(25):
        grid, path, constraints, _, _ = affine_instance(rng, n_steps=150)
        solution = solve_skorokhod(path, constraints, ROOT_TOL)
        phi, psi = compute_phi_psi(path, constraints, ROOT_TOL)
        assert check_oscillation_bound(solution, phi, psi).holds
        k1 = int(rng.integers(0, 100))
        k2 = int(rng.integers(k1 + 1, 151))
        assert check_oscillation_bound(solution, phi, psi, (k1, k2)).holds


@pytest.mark.parametrize("interval", [(5, 4), (-1, 3), (0, 11)])
def test_oscillation_bound_rejects_bad_windows(interval):
    """Test ConfigError for reversed or off-grid node ranges"""
    grid, path, constraints, _, _ = affine_instance(np.random.default_rng(3), n_steps=10)
    solution = solve_skorokhod(path, constraints, ROOT_TOL)
    phi, psi = compute_phi_psi(path, constraints, ROOT_TOL)
    with pytest.raises(ConfigError):
        check_oscillation_bound(solution, phi, psi, interval)


def test_continuity_bound_on_random_pairs():
    """Test the K-continuity estimate for perturbed inputs and shifted barriers"""
    for seed in range(25):
        perturbation = np.random.default_rng(1000 + seed).normal(0.0, 0.05, 151)
        shift_u, shift_d = np.random.default_rng(2000 + seed).uniform(-0.2, 0.2, 2)
        _, path1, constraints1, _, _ = affine_instance(np.random.default_rng(seed), n_steps=150)
        _, path2, constraints2, _, _ = affine_instance(np.random.default_rng(seed), n_steps=150,
                                                       u_shift=shift_u, d_shift=shift_d,
                                                       s_noise=perturbation)
        sol1 = solve_skorokhod(path1, constraints1, ROOT_TOL)
        sol2 = solve_skorokhod(path2, constraints2, ROOT_TOL)
        report = check_continuity_bound(sol1, sol2, path1, path2, constraints1, constraints2,
                                        SamplingBox(n_x=41))
        assert report.holds, report.details


def test_continuity_bound_nonlinear_constraints():
    """Test the K-continuity estimate with bi-Lipschitz constants c = 1, C = 1.2"""
    rng = np.random.default_rng(99)
    grid = TimeGrid(T=1.0, n_steps=100)
    s1 = np.cumsum(rng.normal(0.0, 0.2, len(grid)))
    s2 = s1 + rng.normal(0.0, 0.03, len(grid))
    path1, path2 = InputPath(grid=grid, values=s1), InputPath(grid=grid, values=s2)
    c1, c2 = arctan_constraints(0.7, -0.7), arctan_constraints(0.75, -0.65)
    report = check_continuity_bound(solve_skorokhod(path1, c1, ROOT_TOL), solve_skorokhod(path2, c2, ROOT_TOL),
                                    path1, path2, c1, c2, SamplingBox(n_x=81))
    assert report.holds
    assert report.details["L_bar"] == pytest.approx(0.05)
    assert report.details["box"] == (-10.0, 10.0, 81)


def test_constraint_assumption_sampler():
    """Test the sampled bi-Lipschitz and gap check"""
    grid = TimeGrid(T=1.0, n_steps=10)
    assert arctan_constraints(1.0, -1.0).check_assumptions(grid) == []
    wrong = ConstraintPair(l=lambda t, x: x + 0.2 * np.arctan(x), r=lambda t, x: x + 5.0, c=1.0, C=1.0, gap=1.0)
    assert any("slope" in v for v in wrong.check_assumptions(grid))
