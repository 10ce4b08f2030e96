#!/usr/bin/env python3
"""
Tests for the doubly mean-reflected MFBSDE solver
"""

import sys
import os

import numpy as np
import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.catalog import affine_oracle_K, closed_form_error
from core.config import config_from_mapping
from core.error_handler import ConfigError, PicardNotConverged
from core.mfbsde import RegressionOperator, simulate_brownian, solve_mfbsde
from core.reflected import (audit_solution, build_skorokhod_data, freeze_generator, picard_distance,
                            picard_step, reference_skorokhod_data, solve_reflected, solve_single_reflected,
                            uniqueness_probe)


def scenario_for(name=None, **overrides):
    entries = {} if name is None else {"scenario": name}
    entries.update(overrides)
    return config_from_mapping(entries).build_scenario()


def ensemble_for(scenario):
    return simulate_brownian(scenario.grid, scenario.d, scenario.N, scenario.seed)


@pytest.fixture
def affine_scenario():
    return scenario_for("constant_drift_lower_barrier", N=4000, n_steps=25)


def test_inactive_barriers_leave_solution_unreflected():
    """Test that far barriers give K = 0 and the unconstrained solution"""
    scenario = scenario_for("inactive_barriers", N=1000, n_steps=10)
    ensemble = ensemble_for(scenario)
    solution = solve_reflected(scenario, ensemble=ensemble)
    unconstrained = solve_mfbsde(ensemble, scenario.generator, scenario.terminal, scenario.basis_degree)

    assert np.all(solution.K == 0.0)
    assert np.all(solution.KR == 0.0) and np.all(solution.KL == 0.0)
    assert np.allclose(solution.Y, unconstrained.Y, atol=1e-12)
    assert solution.converged


def test_y_free_generator_converges_in_two_steps():
    """Test that a generator ignoring (y, law) reaches its fixed point after one step"""
    scenario = scenario_for("constant_drift_lower_barrier", N=1000, n_steps=10)
    solution = solve_reflected(scenario)
    assert solution.iterations == 2
    assert solution.picard_history[1] == 0.0


def test_picard_step_ignores_previous_iterate_for_y_free_generator(affine_scenario):
    """Test bitwise identical steps from different previous iterates"""
    ensemble = ensemble_for(affine_scenario)
    regression = RegressionOperator(ensemble, affine_scenario.basis_degree)
    shape = (affine_scenario.grid.n_steps + 1, affine_scenario.N)
    first = picard_step(affine_scenario, np.zeros(shape), ensemble, regression)
    second = picard_step(affine_scenario, np.ones(shape), ensemble, regression)
    assert np.array_equal(first.Y, second.Y)
    assert np.array_equal(first.K, second.K)


def test_assembly_identities(affine_scenario):
    """Test K = KR - KL bitwise, K_0 = 0 and Y = y + K_T - K_t"""
    ensemble = ensemble_for(affine_scenario)
    shape = (affine_scenario.grid.n_steps + 1, affine_scenario.N)
    iterate = picard_step(affine_scenario, np.zeros(shape), ensemble)
    assert np.array_equal(iterate.K, iterate.KR - iterate.KL)
    assert iterate.K[0] == 0.0 and iterate.KR[0] == 0.0 and iterate.KL[0] == 0.0
    assert np.all(np.diff(iterate.KR) >= 0) and np.all(np.diff(iterate.KL) >= 0)
    assert np.array_equal(iterate.Y, iterate.y_solution.Y + (iterate.K[-1] - iterate.K)[:, None])
    assert np.array_equal(iterate.Y[-1], affine_scenario.terminal.evaluate(ensemble))


def test_affine_scenario_matches_oracle(affine_scenario):
    """Test K against the clipped deterministic mean path and the mean constraint"""
    ensemble = ensemble_for(affine_scenario)
    solution = solve_reflected(affine_scenario, ensemble=ensemble)
    oracle = affine_oracle_K(affine_scenario.grid, affine_scenario.generator, affine_scenario.terminal,
                             affine_scenario.losses)
    assert np.max(np.abs(solution.K - oracle)) <= 0.05
    assert oracle[-1] - oracle[0] == pytest.approx(0.5)

    audit = audit_solution(solution, affine_scenario, ensemble)
    assert audit.constraints_hold
    assert audit.flat_off_holds
    assert audit.hard_invariants_hold
    assert np.all(solution.Y.mean(axis=1) >= 0.5 - audit.tol_total)
    assert np.any(audit.dKR > 0)
    assert np.all(audit.dKL == 0.0)


def test_closed_form_error_for_affine_scenario(affine_scenario):
    """Test the catalog oracle dispatch"""
    solution = solve_reflected(affine_scenario)
    result = closed_form_error(affine_scenario.grid, affine_scenario.generator, affine_scenario.terminal,
                               affine_scenario.losses, solution)
    assert result["kind"] == "affine_K"
    assert result["error"] <= 0.05


def test_diagnostics_reported(affine_scenario):
    """Test the K-increment bound and uniform moment diagnostics"""
    solution = solve_reflected(affine_scenario)
    diagnostics = solution.diagnostics
    assert diagnostics["k_bound_holds"]
    assert 0.0 < diagnostics["uniform_bound_ratio"] < np.inf
    assert diagnostics["loss_bound_M"] == pytest.approx(10.5)
    assert diagnostics["reference_K_T"] == 0.0
    assert diagnostics["assembly_Y"]
    assert len(diagnostics["second_moments"]) == solution.iterations


def test_audit_resimulates_ensemble(affine_scenario):
    """Test that omitting the ensemble gives the same audit"""
    ensemble = ensemble_for(affine_scenario)
    solution = solve_reflected(affine_scenario, ensemble=ensemble)
    with_ensemble = audit_solution(solution, affine_scenario, ensemble)
    without = audit_solution(solution, affine_scenario)
    assert with_ensemble.summary() == without.summary()


def test_perturbed_K_raises_flat_off_residual(affine_scenario):
    """Test audit sensitivity to a bumped regulator"""
    solution = solve_reflected(affine_scenario)
    before = audit_solution(solution, affine_scenario)
    solution.K = solution.K.copy()
    solution.K[20] += 0.1
    after = audit_solution(solution, affine_scenario)
    assert after.flat_off_R > before.flat_off_R
    assert not after.assembly_holds


def test_skorokhod_data_is_time_reversed(affine_scenario):
    """Test s_bar_j = E[y_{T - t_j}] and the averaged affine barrier"""
    ensemble = ensemble_for(affine_scenario)
    y_sol = solve_mfbsde(ensemble, affine_scenario.generator, affine_scenario.terminal, 4)
    input_path, constraints = build_skorokhod_data(y_sol, affine_scenario.losses)
    assert np.array_equal(input_path.values, y_sol.Y.mean(axis=1)[::-1])
    assert constraints.l(0.0, 3.0) == pytest.approx(3.0 - 10.0)
    assert constraints.r(0.4, 0.7) == pytest.approx(0.7 - 0.5)


def test_reference_problem_data(affine_scenario):
    """Test s_bar = E[xi] and l_bar(t, x) = E[L(T - t, x)]"""
    xi = np.array([0.0, 2.0])
    input_path, constraints = reference_skorokhod_data(xi, affine_scenario.losses, affine_scenario.grid)
    assert np.all(input_path.values == 1.0)
    assert constraints.l(0.2, 4.0) == pytest.approx(-6.0)


def test_frozen_generator_uses_previous_iterate():
    """Test f(t, Y_prev, law(Y_prev), z, nu) substitution"""
    scenario = scenario_for("linear_meanfield", N=50, n_steps=4)
    Y_prev = np.arange(5 * 50, dtype=float).reshape(5, 50)
    frozen = freeze_generator(scenario.generator, Y_prev)
    value = frozen.driver(2, 0.5, np.zeros(50), None, np.zeros((50, 1)), None)
    assert np.allclose(value, Y_prev[2].mean())


def test_single_reflection_reduction():
    """Test that an inactive lower barrier reproduces the one-sided solve with KR = 0"""
    scenario = scenario_for(generator="constant", **{"generator.a": 1.0}, terminal="affine",
                            losses="affine", **{"losses.u0": 0.5, "losses.d0": -50.0}, N=2000, n_steps=20, seed=5)
    ensemble = ensemble_for(scenario)
    double = solve_reflected(scenario, ensemble=ensemble)
    single = solve_single_reflected(scenario, ensemble=ensemble)
    assert np.all(double.KR == 0.0) and np.all(single.KR == 0.0)
    assert np.allclose(double.K, single.K, atol=1e-8)
    assert single.K[-1] < 0.0
    assert single.diagnostics["barrier"] == "upper"


def test_unknown_barrier_mode(affine_scenario):
    """Test barrier validation"""
    with pytest.raises(ValueError):
        solve_reflected(affine_scenario, barrier="lower")


def test_uniqueness_from_zero_initializer():
    """Test two initializers converging to the same Y on a mean-field driver"""
    scenario = scenario_for("linear_meanfield", N=1000, n_steps=20, picard_tol=1e-8)
    probe = uniqueness_probe(scenario, "zeros")
    assert probe["distance"] <= 10 * scenario.picard_tol
    assert probe["iterations_alternative"] >= 2


def test_linear_meanfield_closed_form():
    """Test the mean ODE oracle with inactive barriers"""
    scenario = scenario_for("linear_meanfield", N=2000, n_steps=100)
    solution = solve_reflected(scenario)
    result = closed_form_error(scenario.grid, scenario.generator, scenario.terminal, scenario.losses, solution)
    assert result["kind"] == "meanfield_ode"
    assert result["error"] <= 0.05


def test_picard_not_converged():
    """Test PicardNotConverged carries the history"""
    scenario = scenario_for("linear_meanfield", N=500, n_steps=10, max_picard_iters=1)
    with pytest.raises(PicardNotConverged) as excinfo:
        solve_reflected(scenario)
    assert len(excinfo.value.history) == 1


def test_inadmissible_terminal_value():
    """Test ConfigError when E[L(T, xi)] > 0"""
    scenario = scenario_for("constant_drift_lower_barrier", N=500, n_steps=10,
                            **{"losses.u0": 0.5, "losses.d0": -1.0})
    with pytest.raises(ConfigError):
        solve_reflected(scenario)


def test_invalid_initializer(affine_scenario):
    """Test initializer validation"""
    with pytest.raises(ValueError):
        solve_reflected(affine_scenario, initial_Y="ones")
    with pytest.raises(ValueError):
        solve_reflected(affine_scenario, initial_Y=np.zeros((3, 3)))


def test_mao_driver_small_scale():
    """Test convergence and constraints for the log-modulus driver"""
    scenario = scenario_for("mao_log_driver", N=1000, n_steps=20)
    ensemble = ensemble_for(scenario)
    solution = solve_reflected(scenario, ensemble=ensemble)
    audit = audit_solution(solution, scenario, ensemble)
    assert solution.converged
    assert audit.constraints_hold
    assert audit.hard_invariants_hold


@pytest.mark.parametrize("name", ["linear_meanfield", "mao_log_driver"])
def test_extra_picard_step_stays_at_fixed_point(name):
    """Test that one more iterate after convergence moves Y by at most 10 picard_tol"""
    scenario = scenario_for(name, N=1000, n_steps=20)
    ensemble = ensemble_for(scenario)
    solution = solve_reflected(scenario, ensemble=ensemble)
    regression = RegressionOperator(ensemble, scenario.basis_degree)
    extra = picard_step(scenario, solution.Y, ensemble, regression, scenario.terminal.evaluate(ensemble))
    assert picard_distance(extra.Y, solution.Y) <= 10 * scenario.picard_tol


def test_nonlinear_losses_small_scale():
    """Test constraints and flat-off with arctan losses"""
    scenario = scenario_for("nonlinear_losses", N=1000, n_steps=20)
    ensemble = ensemble_for(scenario)
    solution = solve_reflected(scenario, ensemble=ensemble)
    audit = audit_solution(solution, scenario, ensemble)
    assert audit.constraints_hold
    assert audit.flat_off_holds
    assert picard_distance(solution.Y, solution.Y) == 0.0


@pytest.mark.slow
def test_acceptance_affine_scenario():
    """Test the affine oracle at N = 10^4"""
    scenario = scenario_for("constant_drift_lower_barrier")
    ensemble = ensemble_for(scenario)
    solution = solve_reflected(scenario, ensemble=ensemble)
    oracle = affine_oracle_K(scenario.grid, scenario.generator, scenario.terminal, scenario.losses)
    audit = audit_solution(solution, scenario, ensemble)
    assert np.max(np.abs(solution.K - oracle)) <= 0.05
    assert audit.constraints_hold


@pytest.mark.slow
def test_acceptance_mao_picard_behaviour():
    """Test Picard distances under the log-modulus driver at N = 10^4, n_steps = 50"""
    scenario = scenario_for("mao_log_driver", picard_tol=1e-14, max_picard_iters=40)
    solution = solve_reflected(scenario)
    history = solution.picard_history
    assert next(m for m, delta in enumerate(history, start=1) if delta <= 1e-6) <= 20
    assert history[-1] <= 1e-14
    assert len(history) >= 5
    assert all(b <= a for a, b in zip(history[2:], history[3:]))


@pytest.mark.slow
def test_acceptance_uniqueness():
    """Test two initializers on the affine and log-modulus scenarios"""
    for name in ("constant_drift_lower_barrier", "mao_log_driver"):
        scenario = scenario_for(name)
        assert uniqueness_probe(scenario, "zeros")["distance"] <= 10 * scenario.picard_tol
