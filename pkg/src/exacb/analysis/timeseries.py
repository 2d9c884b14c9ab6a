"""Metric time series from stored reports, and rolling-median regression flags."""

from __future__ import annotations

import statistics
import warnings
from dataclasses import dataclass
from datetime import datetime
from typing import NamedTuple, Sequence

from ..protocol import BenchmarkReport
from ..store import ResultStore, iter_reports

RUNTIME_LABEL = "runtime"
DEFAULT_WINDOW = 7
DEFAULT_THRESHOLD = 0.1


class AnalysisWarning(UserWarning):
    pass


class SeriesPoint(NamedTuple):
    timestamp: datetime
    value: float
    pipeline_id: str


@dataclass(frozen=True)
class TimeSeries:
    points: tuple[SeriesPoint, ...]
    metric_label: str

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(SeriesPoint(*p) for p in self.points))
        for a, b in zip(self.points, self.points[1:]):
            if b.timestamp < a.timestamp:
                raise ValueError("time series timestamps must be non-decreasing")

    @property
    def values(self) -> list[float]:
        return [p.value for p in self.points]

    def __len__(self):
        return len(self.points)


class Flag(NamedTuple):
    index: int
    direction: str  # "regression" or "recovery"
    value: float
    baseline: float
    deviation: float


def _metric_value(report_entry, label: str) -> float | None:
    if label == RUNTIME_LABEL:
        return report_entry.runtime
    value = report_entry.metrics.get(label)
    if value is None or isinstance(value, str):
        return None
    return float(value)


def select_reports(
    store: ResultStore,
    prefix: str,
    time_span=None,
    pipelines: Sequence[str] | None = None,
) -> list[tuple[str, BenchmarkReport]]:
    """Reports under ``prefix`` ordered by start time (then key).

    Empty ``pipelines`` or ``time_span`` select everything.
    """
    keys = store.list_reports(prefix, time_span)
    wanted = {str(p) for p in pipelines} if pipelines else None
    found = [
        (key, report)
        for key, report in iter_reports(store, keys)
        if wanted is None or report.reporter.pipeline_id in wanted
    ]
    found.sort(key=lambda kr: (kr[1].experiment.started_at, kr[0]))
    return found


def assemble_timeseries(
    store: ResultStore,
    prefix: str,
    data_labels: Sequence[str],
    time_span=None,
    pipelines: Sequence[str] | None = None,
) -> list[TimeSeries]:
    """One series per label; ``"runtime"`` reads the entry runtime instead of a metric."""
    if not data_labels:
        raise ValueError("data_labels must be non-empty")
    reports = select_reports(store, prefix, time_span, pipelines)
    result = []
    for label in data_labels:
        points = []
        for _, report in reports:
            for entry in report.data:
                value = _metric_value(entry, label)
                if value is not None:
                    points.append(
                        SeriesPoint(report.experiment.started_at, value, report.reporter.pipeline_id)
                    )
        if not points:
            warnings.warn(f"no values for label {label!r} under prefix {prefix!r}", AnalysisWarning)
        result.append(TimeSeries(tuple(points), label))
    return result


def detect_regressions(
    series: TimeSeries | Sequence[float],
    window: int = DEFAULT_WINDOW,
    threshold: float = DEFAULT_THRESHOLD,
    higher_is_better: bool = False,
) -> list[Flag]:
    """Flag points deviating from the median of the preceding ``window`` points.

    Point ``i >= window`` is flagged when ``|v_i - m| / m > threshold`` with
    ``m`` the median of ``v[i-window:i]``. The direction is "regression" when
    the metric moved the bad way for its orientation, "recovery" otherwise.
    """
    if window < 3:
        raise ValueError(f"window must be >= 3, got {window}")
    values = series.values if isinstance(series, TimeSeries) else [float(v) for v in series]
    if len(values) < window:
        raise ValueError(f"series has {len(values)} points, fewer than the window of {window}")
    flags = []
    for i in range(window, len(values)):
        baseline = statistics.median(values[i - window : i])
        v = values[i]
        if baseline == 0:
            deviation = 0.0 if v == 0 else float("inf")
        else:
            deviation = abs(v - baseline) / abs(baseline)
        if deviation > threshold:
            worse = v < baseline if higher_is_better else v > baseline
            flags.append(Flag(i, "regression" if worse else "recovery", v, baseline, deviation))
    return flags
