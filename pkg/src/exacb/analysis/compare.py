"""Machine comparison: one runtime-over-nodes series per job-name selector."""

from __future__ import annotations

import statistics
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

from ..store import ResultStore, iter_reports
from .scaling import RuntimeSeries
from .timeseries import AnalysisWarning


@dataclass
class Comparison:
    series: dict[str, RuntimeSeries] = field(default_factory=dict)
    excluded: dict[str, int] = field(default_factory=dict)
    report_counts: dict[str, int] = field(default_factory=dict)


def _pair_pipelines(selectors: Sequence[str], pipelines: Sequence[str] | None) -> list[str | None]:
    if not pipelines:
        return [None] * len(selectors)
    if len(pipelines) == 1:
        return [str(pipelines[0])] * len(selectors)
    if len(pipelines) != len(selectors):
        raise ValueError(
            f"{len(pipelines)} pipelines for {len(selectors)} selectors; give one, one per selector, or none"
        )
    return [str(p) for p in pipelines]


def compare_machines(
    store: ResultStore,
    selectors: Sequence[str],
    pipelines: Sequence[str] | None = None,
) -> Comparison:
    """Collect successful entries of each selector's reports into a RuntimeSeries.

    Pipelines pair with selectors positionally (a single pipeline applies to
    all). Repeated node counts are reduced to their median runtime. Failed
    entries are left out and counted in ``excluded``.
    """
    if not selectors:
        raise ValueError("selectors must be non-empty")
    comparison = Comparison()
    for selector, pipeline in zip(selectors, _pair_pipelines(selectors, pipelines)):
        prefix = f"{selector}/" if pipeline is None else f"{selector}/{pipeline}/"
        keys = store.list_reports(prefix)
        runtimes: dict[int, list[float]] = defaultdict(list)
        excluded = 0
        reports = 0
        for _, report in iter_reports(store, keys):
            if pipeline is not None and report.reporter.pipeline_id != pipeline:
                continue
            reports += 1
            for entry in report.data:
                if not entry.success or entry.runtime <= 0:
                    excluded += 1
                    continue
                runtimes[entry.nodes].append(entry.runtime)
        if reports == 0:
            warnings.warn(f"selector {selector!r} matched no reports", AnalysisWarning)
        pairs = [(n, statistics.median(ts)) for n, ts in sorted(runtimes.items())]
        comparison.series[selector] = RuntimeSeries(tuple(pairs), selector)
        comparison.excluded[selector] = excluded
        comparison.report_counts[selector] = reports
    return comparison
