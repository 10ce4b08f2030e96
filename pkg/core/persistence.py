"""
CSV and JSON persistence of solver artifacts.

CSV files are written with 17 significant digits and read back with round-trip
float parsing, so an exported solution reloads bit for bit.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from model.data_models import (AuditReport, BackwardSolution, InputPath, ReflectedSolution,
                               SkorokhodSolution, TimeGrid)
from .error_handler import ParseError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


class PersistenceManager:
    """Saves and loads solver artifacts in one output directory."""

    def __init__(self, data_dir: Union[str, Path] = "results"):
        """Initialize persistence manager with output directory."""
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)

        # File layout of a run directory
        self.deterministic_file = self.data_dir / "deterministic.csv"
        self.particles_file = self.data_dir / "particles.csv"
        self.plot_file = self.data_dir / "plot_data.csv"
        self.history_file = self.data_dir / "picard_history.json"
        self.report_file = self.data_dir / "report.json"
        self.audit_file = self.data_dir / "audit.json"
        self.config_file = self.data_dir / "config.txt"
        self.metrics_file = self.data_dir / "metrics.json"
        self.skorokhod_input_file = self.data_dir / "skorokhod_input.csv"
        self.skorokhod_solution_file = self.data_dir / "skorokhod_solution.csv"
        self.backward_file = self.data_dir / "mfbsde.csv"
        self.backward_diagnostics_file = self.data_dir / "mfbsde_diagnostics.json"

    def _write_csv(self, frame: pd.DataFrame, path: Path) -> Path:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        return path

    def _read_csv(self, path: Path, columns: List[str]) -> pd.DataFrame:
        if not path.exists():
            raise ParseError(f"missing file: {path.name}", {"path": str(path)})
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise ParseError(f"cannot parse {path.name}: {e}", {"path": str(path)})
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise ParseError(f"{path.name} lacks columns {missing}", {"columns": list(frame.columns)})
        numeric = frame[columns].apply(pd.to_numeric, errors="coerce")
        if numeric.isna().any().any() or not np.all(np.isfinite(numeric.to_numpy(dtype=float))):
            raise ParseError(f"{path.name} holds non-numeric or non-finite values", {"path": str(path)})
        return numeric

    def write_json(self, data: Dict[str, Any], path: Path) -> Path:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
        return path

    def read_json(self, path: Path) -> Dict[str, Any]:
        if not path.exists():
            raise ParseError(f"missing file: {path.name}", {"path": str(path)})
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"cannot parse {path.name}: {e}", {"path": str(path)})

    @staticmethod
    def _particle_frame(times: np.ndarray, Y: np.ndarray, Z: np.ndarray) -> pd.DataFrame:
        n_nodes, N = Y.shape
        d = Z.shape[2]
        frame = pd.DataFrame({
            "t": np.repeat(times, N),
            "particle": np.tile(np.arange(N), n_nodes),
            "Y": Y.ravel(),
        })
        flat_z = Z.reshape(n_nodes * N, d)
        for j in range(d):
            frame[f"Z_{j + 1}"] = flat_z[:, j]
        return frame

    def _read_particles(self, path: Path, grid: TimeGrid) -> Tuple[np.ndarray, np.ndarray]:
        if not path.exists():
            raise ParseError(f"missing file: {path.name}", {"path": str(path)})
        header = pd.read_csv(path, nrows=0).columns
        z_columns = [c for c in header if c.startswith("Z_")]
        if not z_columns:
            raise ParseError(f"{path.name} has no Z columns")
        frame = self._read_csv(path, ["t", "particle", "Y"] + z_columns)
        n_nodes = len(grid)
        if len(frame) % n_nodes:
            raise ParseError(f"{path.name} row count {len(frame)} does not match {n_nodes} grid nodes")
        N = len(frame) // n_nodes
        t = frame["t"].to_numpy().reshape(n_nodes, N)
        if not np.allclose(t, grid.times[:, None], rtol=0.0, atol=1e-12):
            raise ParseError(f"{path.name} times do not match the configured grid")
        expected = np.tile(np.arange(N), n_nodes)
        if not np.array_equal(frame["particle"].to_numpy(), expected):
            raise ParseError(f"{path.name} particle index out of order")
        Y = frame["Y"].to_numpy().reshape(n_nodes, N)
        Z = frame[z_columns].to_numpy().reshape(n_nodes, N, len(z_columns))
        return Y, Z

    def save_reflected_solution(self, solution: ReflectedSolution, audit: AuditReport) -> List[Path]:
        """Write the deterministic table, the particle table and the Picard history."""
        deterministic = pd.DataFrame({
            "t": solution.grid.times, "K": solution.K, "KR": solution.KR, "KL": solution.KL,
            "EL": audit.EL, "ER": audit.ER,
        })
        written = [
            self._write_csv(deterministic, self.deterministic_file),
            self._write_csv(self._particle_frame(solution.grid.times, solution.Y, solution.Z), self.particles_file),
            self.write_json({"picard_history": solution.picard_history, "iterations": solution.iterations,
                             "converged": solution.converged, "diagnostics": to_jsonable(solution.diagnostics)},
                            self.history_file),
        ]
        logger.info(f"Saved reflected solution to {self.data_dir}")
        return written

    def load_reflected_solution(self, grid: TimeGrid) -> ReflectedSolution:
        """
        Reload a solution written by save_reflected_solution

        Raises:
            ParseError: missing, malformed or inconsistent files
        """
        deterministic = self._read_csv(self.deterministic_file, ["t", "K", "KR", "KL"])
        if len(deterministic) != len(grid):
            raise ParseError(f"{self.deterministic_file.name} needs {len(grid)} rows, has {len(deterministic)}")
        Y, Z = self._read_particles(self.particles_file, grid)
        history = self.read_json(self.history_file)
        try:
            return ReflectedSolution(
                grid=grid, Y=Y, Z=Z,
                K=deterministic["K"].to_numpy(), KR=deterministic["KR"].to_numpy(),
                KL=deterministic["KL"].to_numpy(),
                picard_history=[float(v) for v in history["picard_history"]],
                iterations=int(history["iterations"]), converged=bool(history["converged"]),
                diagnostics=dict(history.get("diagnostics", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"inconsistent exported solution: {e}")

    def save_plot_data(self, solution: ReflectedSolution, audit: AuditReport) -> Path:
        """Long-format ``series,t,value`` table; the Picard series uses the iteration index as t."""
        times = solution.grid.times
        frames = [
            pd.DataFrame({"series": name, "t": times, "value": values})
            for name, values in (("K", solution.K), ("EL", audit.EL), ("ER", audit.ER),
                                 ("meanY", solution.Y.mean(axis=1)))
        ]
        history = np.asarray(solution.picard_history, dtype=float)
        frames.append(pd.DataFrame({"series": "delta", "t": np.arange(1, len(history) + 1, dtype=float),
                                    "value": history}))
        return self._write_csv(pd.concat(frames, ignore_index=True), self.plot_file)

    def save_skorokhod(self, input_path: InputPath, solution: SkorokhodSolution) -> List[Path]:
        """Write ``t,s`` and ``t,x,K,Kr,Kl`` tables."""
        times = input_path.grid.times
        return [
            self._write_csv(pd.DataFrame({"t": times, "s": input_path.values}), self.skorokhod_input_file),
            self._write_csv(pd.DataFrame({"t": times, "x": solution.x, "K": solution.K,
                                          "Kr": solution.Kr, "Kl": solution.Kl}), self.skorokhod_solution_file),
        ]

    def load_skorokhod_input(self, grid: TimeGrid) -> InputPath:
        frame = self._read_csv(self.skorokhod_input_file, ["t", "s"])
        if len(frame) != len(grid):
            raise ParseError(f"{self.skorokhod_input_file.name} needs {len(grid)} rows, has {len(frame)}")
        return InputPath(grid=grid, values=frame["s"].to_numpy())

    def load_skorokhod_solution(self, grid: TimeGrid, root_tol: float = 1e-10) -> SkorokhodSolution:
        frame = self._read_csv(self.skorokhod_solution_file, ["t", "x", "K", "Kr", "Kl"])
        if len(frame) != len(grid):
            raise ParseError(f"{self.skorokhod_solution_file.name} needs {len(grid)} rows, has {len(frame)}")
        return SkorokhodSolution(grid=grid, x=frame["x"].to_numpy(), K=frame["K"].to_numpy(),
                                 Kr=frame["Kr"].to_numpy(), Kl=frame["Kl"].to_numpy(),
                                 flat_off_residual=float("nan"), root_tol=root_tol)

    def save_backward_solution(self, solution: BackwardSolution,
                               diagnostics: Optional[Dict[str, Any]] = None) -> List[Path]:
        """Write ``t,particle,Y,Z_1..Z_d`` plus a JSON diagnostics file."""
        info = {"basis_degree": solution.basis_degree,
                "regression_residuals": [float(r) for r in solution.residuals]}
        info.update(to_jsonable(diagnostics or {}))
        return [
            self._write_csv(self._particle_frame(solution.grid.times, solution.Y, solution.Z), self.backward_file),
            self.write_json(info, self.backward_diagnostics_file),
        ]

    def load_backward_solution(self, grid: TimeGrid) -> BackwardSolution:
        Y, Z = self._read_particles(self.backward_file, grid)
        info = self.read_json(self.backward_diagnostics_file)
        return BackwardSolution(grid=grid, Y=Y, Z=Z, basis_degree=int(info.get("basis_degree", 0)),
                                residuals=np.asarray(info.get("regression_residuals", []), dtype=float))

    def save_table(self, frame: pd.DataFrame, name: str) -> Path:
        return self._write_csv(frame, self.data_dir / name)


def to_jsonable(data: Dict[str, Any]) -> Dict[str, Any]:
    """Convert numpy scalars and arrays into JSON-native values."""
    out: Dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict):
            out[key] = to_jsonable(value)
        elif isinstance(value, np.ndarray):
            out[key] = value.tolist()
        elif isinstance(value, (list, tuple)):
            out[key] = [v.item() if isinstance(v, np.generic) else v for v in value]
        elif isinstance(value, np.generic):
            out[key] = value.item()
        else:
            out[key] = value
    return out
