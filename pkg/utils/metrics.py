"""
Metrics collection for LilNetX runs.
Used to track training steps, timings, checkpoints and sweep outcomes.
"""
import time
import logging
from typing import Dict, Any
import threading
import json

logger = logging.getLogger(__name__)


def _empty_metrics() -> Dict[str, Any]:
    return {
        "train_steps": 0,
        "step_latency_ms": [],
        "epochs": 0,
        "checkpoints": 0,
        "nonfinite_aborts": 0,
        "files_written": 0,
        "sweep_cells_done": 0,
        "sweep_cells_skipped": 0,
        "sweep_cells_failed": 0,
    }


class Metrics:
    """Simple process-wide metrics collection for training and sweeps"""

    # Class-level storage for metrics
    _instance = None
    _lock = threading.Lock()

    def __new__(cls):
        """Singleton pattern to ensure only one metrics instance"""
        with cls._lock:
            if cls._instance is None:
                cls._instance = super(Metrics, cls).__new__(cls)
                cls._instance._metrics = _empty_metrics()
                cls._instance._start_time = time.time()
            return cls._instance

    def record_step(self, latency_ms: float) -> None:
        """Record one optimizer step of the training loop"""
        with self._lock:
            self._metrics["train_steps"] += 1
            self._metrics["step_latency_ms"].append(latency_ms)

    def record_epoch(self) -> None:
        with self._lock:
            self._metrics["epochs"] += 1

    def record_checkpoint(self) -> None:
        with self._lock:
            self._metrics["checkpoints"] += 1

    def record_nonfinite_abort(self) -> None:
        with self._lock:
            self._metrics["nonfinite_aborts"] += 1

    def record_file(self) -> None:
        with self._lock:
            self._metrics["files_written"] += 1

    def record_sweep_cell(self, status: str) -> None:
        """Record a sweep cell outcome: 'ok', 'skipped' or 'failed'"""
        key = {"ok": "sweep_cells_done", "skipped": "sweep_cells_skipped"}.get(status, "sweep_cells_failed")
        with self._lock:
            self._metrics[key] += 1

    def get_metrics(self) -> Dict[str, Any]:
        """Get a copy of the current metrics"""
        with self._lock:
            metrics = self._metrics.copy()
            latencies = list(metrics.pop("step_latency_ms"))

            metrics["uptime_seconds"] = time.time() - self._start_time

            # Calculate averages
            if latencies:
                metrics["avg_step_ms"] = sum(latencies) / len(latencies)
                metrics["max_step_ms"] = max(latencies)
            else:
                metrics["avg_step_ms"] = 0
                metrics["max_step_ms"] = 0

            return metrics

    def log_metrics(self) -> None:
        """Log the current metrics"""
        metrics = self.get_metrics()
        logger.info(f"Current metrics: {json.dumps(metrics)}")

    def reset(self) -> None:
        """Reset metrics (mainly for testing)"""
        with self._lock:
            self._metrics = _empty_metrics()
            self._start_time = time.time()
