"""
Performance monitoring for solver runs

This module provides:
- Wall-clock timing of named phases (solve, sweep points, audit)
- Resident memory tracking through psutil
- A summary that is embedded in run reports
"""

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Any, Dict, Iterator, List, Optional

import psutil


@dataclass
class PerformanceMetrics:
    """Timing and memory of one named phase"""
    phase: str
    started: datetime
    wall_time_s: float
    memory_before_mb: float
    memory_after_mb: float

    @property
    def memory_delta_mb(self) -> float:
        return self.memory_after_mb - self.memory_before_mb


class PerformanceMonitor:
    """
    Records wall-clock time and RSS memory per phase
    """

    def __init__(self, max_history_size: int = 1000):
        self.logger = logging.getLogger(__name__)
        self.metrics_history: List[PerformanceMetrics] = []
        self.max_history_size = max_history_size
        self.peak_memory_mb = 0.0
        self.process = psutil.Process()

    def get_current_memory_usage(self) -> float:
        """Resident set size in MB."""
        memory_mb = self.process.memory_info().rss / (1024 * 1024)
        self.peak_memory_mb = max(self.peak_memory_mb, memory_mb)
        return memory_mb

    @contextmanager
    def measure(self, phase: str) -> Iterator[None]:
        """Time the enclosed block and record it under ``phase``."""
        before = self.get_current_memory_usage()
        started = datetime.now()
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            metrics = PerformanceMetrics(
                phase=phase, started=started, wall_time_s=elapsed,
                memory_before_mb=before, memory_after_mb=self.get_current_memory_usage()
            )
            self._add_metrics(metrics)
            self.logger.info(f"{phase}: {elapsed:.3f}s, RSS {metrics.memory_after_mb:.1f}MB")

    def _add_metrics(self, metrics: PerformanceMetrics):
        self.metrics_history.append(metrics)
        if len(self.metrics_history) > self.max_history_size:
            self.metrics_history = self.metrics_history[-self.max_history_size // 2:]

    def last_wall_time(self, phase: str) -> Optional[float]:
        for metrics in reversed(self.metrics_history):
            if metrics.phase == phase:
                return metrics.wall_time_s
        return None

    def timings(self) -> Dict[str, float]:
        """Total seconds per phase."""
        totals: Dict[str, float] = {}
        for metrics in self.metrics_history:
            totals[metrics.phase] = totals.get(metrics.phase, 0.0) + metrics.wall_time_s
        return totals

    def get_performance_summary(self) -> Dict[str, Any]:
        """
        Get performance summary statistics

        Returns:
            Dictionary with per-phase seconds and peak memory
        """
        if not self.metrics_history:
            return {"status": "no_data"}
        return {
            "status": "ok",
            "timings_s": {phase: round(seconds, 6) for phase, seconds in self.timings().items()},
            "peak_memory_mb": round(self.peak_memory_mb, 1),
            "phases_recorded": len(self.metrics_history),
        }

    def export_metrics(self, file_path: str) -> bool:
        """
        Export recorded phases to a JSON file

        Returns:
            True if successful
        """
        try:
            records = []
            for metrics in self.metrics_history:
                record = asdict(metrics)
                record["started"] = metrics.started.isoformat()
                records.append(record)
            with open(file_path, "w", encoding="utf-8") as f:
                json.dump({"summary": self.get_performance_summary(), "phases": records}, f, indent=2)
            return True
        except OSError as e:
            self.logger.error(f"Error exporting metrics: {e}")
            return False
