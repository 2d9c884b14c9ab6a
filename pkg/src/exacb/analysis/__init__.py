"""Post-processing of stored reports."""

from .compare import Comparison, compare_machines
from .energy import (
    EnergySummary,
    EnergyTrace,
    MissingWindowError,
    NoActiveRegionError,
    SweepPoint,
    detect_measurement_window,
    energy_summary,
    energy_to_solution,
    read_trace_csv,
    sweep_optimum,
    write_trace_csv,
)
from .scaling import RuntimeSeries, ScalingPoint, scaling_band, strong_scaling, weak_scaling_efficiency
from .timeseries import (
    AnalysisWarning,
    Flag,
    SeriesPoint,
    TimeSeries,
    assemble_timeseries,
    detect_regressions,
    select_reports,
)

__all__ = [
    "AnalysisWarning",
    "Comparison",
    "EnergySummary",
    "EnergyTrace",
    "Flag",
    "MissingWindowError",
    "NoActiveRegionError",
    "RuntimeSeries",
    "ScalingPoint",
    "SeriesPoint",
    "SweepPoint",
    "TimeSeries",
    "assemble_timeseries",
    "compare_machines",
    "detect_measurement_window",
    "detect_regressions",
    "energy_summary",
    "energy_to_solution",
    "read_trace_csv",
    "scaling_band",
    "select_reports",
    "strong_scaling",
    "sweep_optimum",
    "weak_scaling_efficiency",
    "write_trace_csv",
]
