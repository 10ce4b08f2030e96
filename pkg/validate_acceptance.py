#!/usr/bin/env python3
"""
Acceptance validation script for the doubly mean-reflected MFBSDE solver

Runs the desk-scale acceptance checks (Skorokhod oracle, flat-off audits, bound
reports, MFBSDE closed forms, reflected scenarios, Picard behaviour, uniqueness,
determinism) and logs timings and memory for each.
"""

import sys
import os
import time
import logging
import tempfile
from pathlib import Path

import numpy as np
import psutil

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from model.data_models import ConstraintPair, InputPath, TimeGrid
from core.catalog import SCENARIOS, affine_oracle_K, make_affine_terminal, make_mean_y_generator, make_zero_generator
from core.config import config_from_mapping
from core.mfbsde import simulate_brownian, solve_mfbsde
from core.reflected import audit_solution, solve_reflected, uniqueness_probe
from core.runner import audit, run
from core.skorokhod import (SamplingBox, check_continuity_bound, check_oscillation_bound, clipping_oracle,
                            compute_phi_psi, solve_skorokhod, verify_solution)

# Set up logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)
logging.getLogger("core").setLevel(logging.WARNING)

ROOT_TOL = 1e-10


def random_affine_instance(rng, n_steps, shift=0.0, noise=None):
    """Piecewise-linear input with barriers a(x - u(t)), a(x - d(t)) affine in t."""
    grid = TimeGrid(T=1.0, n_steps=n_steps)
    knots = np.linspace(0.0, 1.0, int(rng.integers(3, 12)))
    s = np.interp(grid.times, knots, rng.normal(0.0, 2.0, knots.size))
    if noise is not None:
        s = s + noise
    a = float(rng.uniform(0.5, 3.0))
    d0 = float(rng.uniform(-1.5, -0.5)) + shift
    width = float(rng.uniform(0.5, 2.0))
    drift = float(rng.uniform(-1.0, 1.0))
    constraints = ConstraintPair(l=lambda t, x: a * (x - (d0 + width + drift * t)),
                                 r=lambda t, x: a * (x - (d0 + drift * t)),
                                 c=a, C=a, gap=a * width)
    lower = d0 + drift * grid.times
    return InputPath(grid=grid, values=s), constraints, lower, lower + width


def validate_skorokhod_oracle():
    """200 random inputs on 1000 steps against the clipping recursion"""
    logger.info("Validating Skorokhod solver against the clipping oracle...")
    rng = np.random.default_rng(2024)
    start = time.time()
    worst = 0.0
    for _ in range(200):
        path, constraints, lower, upper = random_affine_instance(rng, 1000)
        solution = solve_skorokhod(path, constraints, ROOT_TOL)
        _, K_oracle = clipping_oracle(path, lower, upper)
        worst = max(worst, float(np.max(np.abs(solution.K - K_oracle))))
    elapsed = time.time() - start

    if worst > 10 * ROOT_TOL:
        logger.error(f"Oracle difference too large: {worst:.3e}")
        return False
    if elapsed > 10:
        logger.warning(f"Oracle batch slower than 10s: {elapsed:.2f}s")
    logger.info(f"✅ Skorokhod oracle validation passed (max diff {worst:.2e}, {elapsed:.2f}s)")
    return True


def validate_flat_off():
    """Flat-off on random Skorokhod instances and every catalog scenario"""
    logger.info("Validating flat-off conditions...")
    rng = np.random.default_rng(7)
    for _ in range(50):
        path, constraints, _, _ = random_affine_instance(rng, 300)
        checks = verify_solution(solve_skorokhod(path, constraints, ROOT_TOL), path, constraints)
        if not (checks["flat_off"] and checks["feasible"]):
            logger.error(f"Skorokhod flat-off failed: {checks}")
            return False

    for name in SCENARIOS:
        scenario = config_from_mapping({"scenario": name}).build_scenario()
        ensemble = simulate_brownian(scenario.grid, scenario.d, scenario.N, scenario.seed)
        solution = solve_reflected(scenario, ensemble=ensemble)
        report = audit_solution(solution, scenario, ensemble)
        if not (report.flat_off_holds and report.constraints_hold):
            logger.error(f"Scenario '{name}' failed its audit: {report.summary()}")
            return False
        logger.info(f"  {name}: flat_off_R={report.flat_off_R:.2e}, flat_off_L={report.flat_off_L:.2e}")

    logger.info("✅ Flat-off validation passed")
    return True


def validate_bound_reports():
    """Continuity and oscillation reports on 100 random instance pairs each"""
    logger.info("Validating Skorokhod bound reports...")
    for seed in range(100):
        rng = np.random.default_rng(seed)
        path, constraints, _, _ = random_affine_instance(rng, 100)
        solution = solve_skorokhod(path, constraints, ROOT_TOL)
        phi, psi = compute_phi_psi(path, constraints, ROOT_TOL)
        k1 = int(rng.integers(0, 90))
        k2 = int(rng.integers(k1 + 1, 101))
        if not check_oscillation_bound(solution, phi, psi, (k1, k2)).holds:
            logger.error(f"Oscillation bound failed for seed {seed}")
            return False

        noise = np.random.default_rng(500 + seed).normal(0.0, 0.05, 101)
        shift = float(np.random.default_rng(900 + seed).uniform(-0.1, 0.1))
        path1, c1, _, _ = random_affine_instance(np.random.default_rng(seed), 100)
        path2, c2, _, _ = random_affine_instance(np.random.default_rng(seed), 100, shift=shift, noise=noise)
        report = check_continuity_bound(solve_skorokhod(path1, c1, ROOT_TOL), solve_skorokhod(path2, c2, ROOT_TOL),
                                        path1, path2, c1, c2, SamplingBox(n_x=41))
        if not report.holds:
            logger.error(f"Continuity bound failed for seed {seed}: {report.details}")
            return False

    logger.info("✅ Bound report validation passed")
    return True


def validate_mfbsde_closed_forms():
    """f = 0 and f = mean(mu) at N = 10^4, n_steps = 100, degree 4"""
    logger.info("Validating unconstrained MFBSDE closed forms...")
    grid = TimeGrid(T=1.0, n_steps=100)

    start = time.time()
    ensemble = simulate_brownian(grid, d=1, N=10000, seed=2024)
    solution = solve_mfbsde(ensemble, make_zero_generator({}), make_affine_terminal({}), 4)
    B = ensemble.paths[:, :, 0]
    y_error = float(np.max(np.mean(np.abs(solution.Y - B), axis=1)))
    z_error = float(np.max(np.mean(np.abs(solution.Z[:, :, 0] - 1.0), axis=1)))
    zero_time = time.time() - start
    if y_error > 0.05 or z_error > 0.1:
        logger.error(f"Zero driver errors too large: Y {y_error:.3f}, Z {z_error:.3f}")
        return False

    start = time.time()
    ensemble = simulate_brownian(grid, d=1, N=10000, seed=2025)
    solution = solve_mfbsde(ensemble, make_mean_y_generator({"a": 1.0}),
                            make_affine_terminal({"a": 1.0, "b": 0.2}), 4)
    mean_error = float(np.max(np.abs(solution.Y.mean(axis=1) - np.exp(1.0 - grid.times))))
    mean_time = time.time() - start
    if mean_error > 0.05:
        logger.error(f"Mean-field driver error too large: {mean_error:.3f}")
        return False
    if max(zero_time, mean_time) > 60:
        logger.warning(f"Closed-form case slower than 60s: {zero_time:.1f}s / {mean_time:.1f}s")

    logger.info(f"✅ MFBSDE closed forms passed (Y {y_error:.3f}, Z {z_error:.3f}, mean {mean_error:.3f})")
    return True


def validate_affine_scenario():
    """Converged K against the clipped explicit mean path"""
    logger.info("Validating the affine reflected scenario...")
    scenario = config_from_mapping({"scenario": "constant_drift_lower_barrier"}).build_scenario()
    ensemble = simulate_brownian(scenario.grid, scenario.d, scenario.N, scenario.seed)
    solution = solve_reflected(scenario, ensemble=ensemble)
    oracle = affine_oracle_K(scenario.grid, scenario.generator, scenario.terminal, scenario.losses)
    error = float(np.max(np.abs(solution.K - oracle)))
    report = audit_solution(solution, scenario, ensemble)

    if error > 0.05:
        logger.error(f"K differs from the oracle by {error:.3f}")
        return False
    if not report.constraints_hold:
        logger.error("Mean constraints violated beyond tol_total")
        return False
    logger.info(f"✅ Affine scenario passed (sup |K - oracle| = {error:.4f})")
    return True


def validate_mao_picard():
    """Picard distances under the log-modulus driver"""
    logger.info("Validating Picard behaviour under the log-modulus driver...")
    scenario = config_from_mapping({"scenario": "mao_log_driver"}).build_scenario()
    solution = solve_reflected(scenario)
    history = solution.picard_history
    logger.info(f"  Picard history: {', '.join(f'{d:.2e}' for d in history)}")

    if solution.iterations > 20 or history[-1] > 1e-6:
        logger.error("Picard iteration did not reach 1e-6 within 20 iterations")
        return False
    if any(b > a for a, b in zip(history[2:], history[3:])):
        logger.error("Picard distances increase after the second iteration")
        return False
    logger.info(f"✅ Picard validation passed ({solution.iterations} iterations)")
    return True


def validate_uniqueness():
    """Two initializers on the affine and log-modulus scenarios"""
    logger.info("Validating uniqueness across Picard initializers...")
    for name in ("constant_drift_lower_barrier", "mao_log_driver"):
        scenario = config_from_mapping({"scenario": name}).build_scenario()
        probe = uniqueness_probe(scenario, "zeros")
        if probe["distance"] > 10 * scenario.picard_tol:
            logger.error(f"'{name}' limits differ by {probe['distance']:.3e}")
            return False
        logger.info(f"  {name}: distance {probe['distance']:.2e}")
    logger.info("✅ Uniqueness validation passed")
    return True


def validate_determinism():
    """Byte-identical exports and an exact audit round trip"""
    logger.info("Validating determinism and the audit round trip...")
    config = config_from_mapping({"scenario": "nonlinear_losses"})
    with tempfile.TemporaryDirectory() as tmp:
        first, second = Path(tmp) / "first", Path(tmp) / "second"
        run(config, out_dir=first)
        run(config, out_dir=second)
        for name in ("deterministic.csv", "particles.csv", "plot_data.csv"):
            if (first / name).read_bytes() != (second / name).read_bytes():
                logger.error(f"{name} differs between identical runs")
                return False
        report = audit(first, config)
        if not report.details.get("matches_export"):
            logger.error("Audit did not reproduce the exported residuals")
            return False
    logger.info("✅ Determinism validation passed")
    return True


def main():
    """Main validation function"""
    logger.info("Starting acceptance validation")
    logger.info("=" * 50)

    process = psutil.Process()
    initial_memory = process.memory_info().rss / (1024 * 1024)
    logger.info(f"Initial memory usage: {initial_memory:.1f}MB")

    tests = [
        ("Skorokhod Oracle", validate_skorokhod_oracle),
        ("Flat-Off Audit", validate_flat_off),
        ("Bound Reports", validate_bound_reports),
        ("MFBSDE Closed Forms", validate_mfbsde_closed_forms),
        ("Affine Reflected Scenario", validate_affine_scenario),
        ("Log-Modulus Picard", validate_mao_picard),
        ("Uniqueness", validate_uniqueness),
        ("Determinism", validate_determinism),
    ]

    passed_tests = 0
    total_tests = len(tests)

    for test_name, test_func in tests:
        logger.info(f"\n--- Running {test_name} Check ---")
        start = time.time()
        try:
            if test_func():
                passed_tests += 1
            else:
                logger.error(f"❌ {test_name} check failed")
        except Exception as e:
            logger.error(f"❌ {test_name} check failed with exception: {e}")
        logger.info(f"{test_name} took {time.time() - start:.1f}s")

    logger.info("\n" + "=" * 50)
    logger.info("VALIDATION RESULTS")
    logger.info("=" * 50)

    final_memory = process.memory_info().rss / (1024 * 1024)
    logger.info(f"Checks passed: {passed_tests}/{total_tests}")
    logger.info(f"Final memory usage: {final_memory:.1f}MB (+{final_memory - initial_memory:.1f}MB)")

    if passed_tests == total_tests:
        logger.info("✅ ALL ACCEPTANCE CHECKS PASSED")
        return True
    logger.error(f"❌ {total_tests - passed_tests} checks failed")
    return False


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
