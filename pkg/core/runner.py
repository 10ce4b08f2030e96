"""
Run, sweep and audit orchestration behind the command-line front end
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from model.data_models import AuditReport, ReflectedSolution, RunReport, Scenario, SweepReport
from .catalog import closed_form_error
from .config import ScenarioConfig, write_config
from .error_handler import ConfigError
from .mfbsde import simulate_brownian
from .performance_monitor import PerformanceMonitor
from .persistence import PersistenceManager, to_jsonable
from .reflected import audit_solution, solve_reflected

logger = logging.getLogger(__name__)

SWEEP_AXES = ("N", "n_steps", "basis_degree", "picard_tol")
SWEEP_COLUMNS = ["value", "closed_form_error", "final_delta", "iterations", "dynamics_residual", "runtime_s"]


def constraint_table(audit: AuditReport) -> Dict[str, list]:
    """Per-node constraint and flat-off rows of an audit."""
    return {
        "t": audit.times.tolist(), "EL": audit.EL.tolist(), "ER": audit.ER.tolist(),
        "tol_total": audit.tol_total.tolist(), "dKR": audit.dKR.tolist(), "dKL": audit.dKL.tolist(),
    }


def export_run(out_dir: Union[str, Path], config: ScenarioConfig, solution: ReflectedSolution,
               audit: AuditReport, report: RunReport,
               monitor: Optional[PerformanceMonitor] = None) -> PersistenceManager:
    """Write config echo, solution CSVs, plot data, the JSON report and phase metrics."""
    persistence = PersistenceManager(out_dir)
    write_config(config, persistence.config_file)
    persistence.save_reflected_solution(solution, audit)
    persistence.save_plot_data(solution, audit)
    persistence.write_json(to_jsonable(audit.summary()), persistence.audit_file)
    persistence.write_json(to_jsonable(report.to_dict()), persistence.report_file)
    if monitor is not None and not monitor.export_metrics(str(persistence.metrics_file)):
        logger.warning(f"Phase metrics not written to {persistence.metrics_file}")
    return persistence


def run(config: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None,
        monitor: Optional[PerformanceMonitor] = None) -> RunReport:
    """
    Solve, audit and (optionally) export one configured scenario

    Args:
        config: Validated scenario configuration
        out_dir: Output directory; falls back to config.out, nothing is written when both are None
        monitor: Performance monitor shared across runs

    Returns:
        RunReport with the audit summary, closed-form error and timings

    Raises:
        ConfigError: invalid configuration or inadmissible terminal value
        SolverError: propagated from the solver modules
    """
    monitor = monitor or PerformanceMonitor()
    scenario: Scenario = config.build_scenario()
    ensemble = simulate_brownian(scenario.grid, scenario.d, scenario.N, scenario.seed)
    logger.info(f"Run '{scenario.name}' started")

    with monitor.measure("solve_reflected"):
        solution = solve_reflected(scenario, ensemble=ensemble)
    with monitor.measure("audit"):
        audit = audit_solution(solution, scenario, ensemble)
    solution.constraint_report = audit

    closed = closed_form_error(scenario.grid, scenario.generator, scenario.terminal, scenario.losses, solution)
    timings = {"solve_reflected": monitor.last_wall_time("solve_reflected"),
               "audit": monitor.last_wall_time("audit"),
               "peak_memory_mb": monitor.peak_memory_mb}
    report = RunReport(
        scenario=config.to_mapping(), picard_history=list(solution.picard_history),
        audit=audit.summary(), constraint_table=constraint_table(audit), closed_form=closed,
        timings=timings, hard_invariants_hold=audit.hard_invariants_hold,
        diagnostics=to_jsonable({k: v for k, v in solution.diagnostics.items() if k != "second_moments"}),
    )

    target = out_dir if out_dir is not None else config.out
    if target is not None:
        export_run(target, config, solution, audit, report, monitor)
    logger.info(f"Run '{scenario.name}' finished in {timings['solve_reflected']:.2f}s "
                f"after {solution.iterations} Picard iterations")
    return report


def parse_sweep_values(text: str) -> list:
    """Comma-separated numbers, e.g. '100,1000,10000'."""
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"sweep values must be comma-separated numbers, got '{text}'")


def sweep(config: ScenarioConfig, axis: str, values: Sequence[Any],
          out_dir: Optional[Union[str, Path]] = None,
          monitor: Optional[PerformanceMonitor] = None) -> SweepReport:
    """
    Run the scenario once per axis value and tabulate convergence

    Raises:
        ConfigError: unknown axis, empty or non-increasing values
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis '{axis}'", {"known": list(SWEEP_AXES)})
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("sweep needs at least one value")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError("sweep values must be strictly increasing", {"values": values})

    monitor = monitor or PerformanceMonitor()
    rows = []
    for value in values:
        point = config.with_overrides(**{axis: value})
        logger.info(f"Sweep {axis}={value:g}")
        report = run(point, out_dir=None, monitor=monitor)
        error = report.closed_form_error
        rows.append({
            "value": value,
            "closed_form_error": np.nan if error is None else error,
            "final_delta": report.picard_history[-1],
            "iterations": len(report.picard_history),
            "dynamics_residual": report.audit["dynamics_residual"],
            "runtime_s": report.timings["solve_reflected"],
        })

    result = SweepReport(axis=axis, values=values, rows=rows)
    target = out_dir if out_dir is not None else config.out
    if target is not None:
        PersistenceManager(target).save_table(pd.DataFrame(rows, columns=SWEEP_COLUMNS), f"sweep_{axis}.csv")
    return result


def audit(in_dir: Union[str, Path], config: ScenarioConfig,
          monitor: Optional[PerformanceMonitor] = None) -> AuditReport:
    """
    Re-derive every residual from an exported run directory

    The Brownian ensemble is re-simulated from the configured seed. When the
    directory holds the original audit summary, ``details['matches_export']``
    records whether every scalar was reproduced.

    Raises:
        ParseError: missing or malformed files
    """
    monitor = monitor or PerformanceMonitor()
    scenario = config.build_scenario()
    persistence = PersistenceManager(in_dir)
    solution = persistence.load_reflected_solution(scenario.grid)
    with monitor.measure("audit"):
        report = audit_solution(solution, scenario)

    if persistence.audit_file.exists():
        original = persistence.read_json(persistence.audit_file)
        report.details["matches_export"] = _summaries_match(original, report.summary())
        if not report.details["matches_export"]:
            logger.warning("Re-derived audit differs from the exported audit summary")
    return report


def _summaries_match(original: Dict[str, Any], rederived: Dict[str, Any]) -> bool:
    for key, value in original.items():
        other = rederived.get(key)
        if other is None and value is not None:
            return False
        if isinstance(value, bool) or value is None or isinstance(value, str):
            if other != value:
                return False
        elif not np.isclose(float(other), float(value), rtol=1e-12, atol=1e-15):
            return False
    return True
