"""
Progress Utilities - iteration progress for solver sweeps

Counts Krylov iterations across one or more solver runs (possibly running in parallel
threads) and reports completion, rate and ETA through logging.
"""

import threading
from typing import Optional
from datetime import datetime, timedelta
from dataclasses import dataclass, field
import logging

logger = logging.getLogger(__name__)

@dataclass
class ProgressStats:
    """Progress counters"""
    total: int
    completed: int = 0
    failed: int = 0
    start_time: datetime = field(default_factory=datetime.now)

    @property
    def processed(self) -> int:
        return self.completed + self.failed

    @property
    def remaining(self) -> int:
        return max(self.total - self.processed, 0)

    @property
    def progress_ratio(self) -> float:
        return min(self.processed / self.total, 1.0) if self.total > 0 else 1.0

    @property
    def elapsed_time(self) -> timedelta:
        return datetime.now() - self.start_time

    @property
    def rate_per_second(self) -> float:
        elapsed = self.elapsed_time.total_seconds()
        return self.processed / elapsed if elapsed > 0 else 0.0

    @property
    def eta(self) -> Optional[timedelta]:
        if self.rate_per_second > 0 and self.remaining > 0:
            return timedelta(seconds=self.remaining / self.rate_per_second)
        return None


def format_time(td: Optional[timedelta]) -> str:
    """Format a timedelta as [HH:]MM:SS"""
    if td is None:
        return "N/A"
    total_seconds = int(td.total_seconds())
    hours, rest = divmod(total_seconds, 3600)
    minutes, seconds = divmod(rest, 60)
    if hours > 0:
        return f"{hours:02d}:{minutes:02d}:{seconds:02d}"
    return f"{minutes:02d}:{seconds:02d}"


class ProgressTracker:
    """Thread-safe progress counter that logs every `log_step` fraction of the total"""

    def __init__(self, total: int, description: str = "Iterations", log_step: float = 0.25):
        self.stats = ProgressStats(total=total)
        self.description = description
        self.log_step = log_step
        self._lock = threading.Lock()
        self._next_report = log_step

    def create_bar(self, width: int = 30) -> str:
        ratio = self.stats.progress_ratio
        filled = int(width * ratio)
        bar = "#" * filled + "." * (width - filled)
        eta = f" | ETA: {format_time(self.stats.eta)}" if self.stats.eta else ""
        return (f"{self.description}: [{bar}] {self.stats.processed}/{self.stats.total} "
                f"({ratio * 100:.1f}%) | {self.stats.rate_per_second:.1f}/s{eta}")

    def update(self, completed: int = 0, failed: int = 0):
        with self._lock:
            self.stats.completed += completed
            self.stats.failed += failed
            if self.stats.progress_ratio + 1e-12 >= self._next_report:
                logger.info(self.create_bar())
                while self._next_report <= self.stats.progress_ratio + 1e-12:
                    self._next_report += self.log_step

    def increment(self):
        self.update(completed=1)

    def finish(self, message: Optional[str] = None):
        if message is None:
            message = f"{self.description} done in {format_time(self.stats.elapsed_time)}"
            if self.stats.failed:
                message += f" ({self.stats.failed} of {self.stats.total} lost to failed runs)"
        logger.info(message)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.finish()
