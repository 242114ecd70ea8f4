import json
import logging
import threading
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List

logger = logging.getLogger(__name__)


@dataclass
class TimerStats:
    """Длительности одного именованного участка, секунды"""

    durations: List[float] = field(default_factory=list)

    def add(self, elapsed: float) -> None:
        self.durations.append(elapsed)

    def summary(self) -> Dict[str, Any]:
        values = self.durations
        return {
            'count': len(values),
            'mean': sum(values) / len(values),
            'min': min(values),
            'max': max(values),
            'last': values[-1],
        }


class MonitoringService:
    """
    Счётчики (подшаги интегратора, вычисления потерь) и таймеры команд.

    Живёт в памяти процесса и только пишется в лог, в артефакты не попадает.
    """

    def __init__(self):
        self.counters: Dict[str, int] = defaultdict(int)
        self.timers: Dict[str, TimerStats] = defaultdict(TimerStats)
        self._lock = threading.Lock()

    def increment_counter(self, name: str, value: int = 1) -> None:
        with self._lock:
            self.counters[name] += value

    @contextmanager
    def timer(self, name: str) -> Iterator[None]:
        """Замер участка; вложенные и параллельные замеры независимы"""
        started = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - started
            with self._lock:
                self.timers[name].add(elapsed)

    def report_stats(self) -> Dict[str, Any]:
        """Сводка в лог"""
        with self._lock:
            report = {
                'counters': dict(self.counters),
                'timers': {name: stats.summary() for name, stats in self.timers.items()},
            }
        logger.info(f"Monitoring report: {json.dumps(report, indent=2, sort_keys=True)}")
        return report

    def reset(self) -> None:
        with self._lock:
            self.counters.clear()
            self.timers.clear()


monitoring = MonitoringService()
