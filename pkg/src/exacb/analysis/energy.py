"""Energy-to-solution from sampled power traces.

Traces are read from CSV ``t_seconds,device0_watts,device1_watts,...``.
The measurement window drops start-up and wind-down: it is the longest run of
consecutive samples whose total power stays at or above ``alpha`` times the
95th percentile of total power. Trimming underestimates the energy of the
whole run, so :func:`energy_summary` reports both figures.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

PLATEAU_PERCENTILE = 95.0
DEFAULT_ALPHA = 0.5


class NoActiveRegionError(ValueError):
    pass


class MissingWindowError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyTrace:
    times: np.ndarray  # (n,) seconds from start
    power: np.ndarray  # (n, devices) watts
    window: tuple[float, float] | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.power, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if t.ndim != 1 or p.shape[0] != t.shape[0]:
            raise ValueError("power needs one row per sample time")
        if t.size and np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("power samples must be finite and >= 0")
        if self.window is not None:
            _check_window(t, self.window)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "power", p)

    @property
    def total(self) -> np.ndarray:
        return self.power.sum(axis=1)

    @property
    def devices(self) -> int:
        return self.power.shape[1]

    def with_window(self, window: tuple[float, float] | None) -> EnergyTrace:
        return replace(self, window=None if window is None else (float(window[0]), float(window[1])))

    def restrict(self, start: float, end: float) -> EnergyTrace:
        keep = (self.times >= start) & (self.times <= end)
        return EnergyTrace(self.times[keep], self.power[keep])


def _check_window(t: np.ndarray, window: tuple[float, float]) -> None:
    start, end = window
    if not start <= end:
        raise ValueError(f"window start {start} is after its end {end}")
    if t.size == 0 or start < t[0] or end > t[-1]:
        raise ValueError(f"window {window} is outside the sampled range")


def read_trace_csv(path: str | Path) -> EnergyTrace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trace")
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(header) < 2 or header[0].strip() != "t_seconds":
        raise ValueError(f"{path}: header must be t_seconds,device0_watts,...")
    data = np.array([[float(c) for c in r] for r in body], dtype=float).reshape(-1, len(header))
    return EnergyTrace(data[:, 0], data[:, 1:])


def write_trace_csv(trace: EnergyTrace, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", *(f"device{i}_watts" for i in range(trace.devices))])
        for t, row in zip(trace.times, trace.power):
            writer.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
    return path


def detect_measurement_window(
    trace: EnergyTrace,
    alpha: float = DEFAULT_ALPHA,
    override: tuple[float, float] | None = None,
) -> tuple[float, float]:
    """Start and end time of the active plateau; ``override`` is returned as given."""
    if override is not None:
        _check_window(trace.times, override)
        return override
    if len(trace.times) < 3:
        raise ValueError("window detection needs at least 3 samples")
    total = trace.total
    reference = float(np.percentile(total, PLATEAU_PERCENTILE))
    if reference <= 0:
        raise NoActiveRegionError("no active region")
    active = total >= alpha * reference

    best_start, best_len = 0, 0
    run_start = None
    for i, on in enumerate(np.append(active, False)):
        if on and run_start is None:
            run_start = i
        elif not on and run_start is not None:
            span = trace.times[i - 1] - trace.times[run_start]
            if i - run_start > best_len or (
                i - run_start == best_len
                and span > trace.times[best_start + best_len - 1] - trace.times[best_start]
            ):
                best_start, best_len = run_start, i - run_start
            run_start = None
    if best_len == 0:
        raise NoActiveRegionError("no active region")
    return float(trace.times[best_start]), float(trace.times[best_start + best_len - 1])


def _integrate(times: np.ndarray, total: np.ndarray, start: float, end: float) -> float:
    inside = (times > start) & (times < end)
    t = np.concatenate(([start], times[inside], [end]))
    p = np.concatenate(([np.interp(start, times, total)], total[inside], [np.interp(end, times, total)]))
    return float(np.trapezoid(p, t))


def energy_to_solution(trace: EnergyTrace) -> float:
    """Trapezoidal integral of total device power over the trace's window, in joules."""
    if trace.window is None:
        raise MissingWindowError(
            "trace has no measurement window; set one or call detect_measurement_window"
        )
    start, end = trace.window
    return _integrate(trace.times, trace.total, start, end)


class EnergySummary(NamedTuple):
    window: tuple[float, float]
    windowed_energy: float
    full_energy: float
    window_runtime: float


def energy_summary(
    trace: EnergyTrace, alpha: float = DEFAULT_ALPHA, override: tuple[float, float] | None = None
) -> EnergySummary:
    window = detect_measurement_window(trace, alpha, override)
    windowed = energy_to_solution(trace.with_window(window))
    full = energy_to_solution(trace.with_window((trace.times[0], trace.times[-1])))
    return EnergySummary(window, windowed, full, window[1] - window[0])


@dataclass(frozen=True)
class SweepPoint:
    frequency: float
    energy: float
    runtime: float

    def __post_init__(self):
        for name in ("frequency", "energy", "runtime"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def sweep_optimum(points: Sequence[SweepPoint]) -> SweepPoint:
    """Lowest-energy point; ties go to the lower frequency."""
    if not points:
        raise ValueError("sweep_optimum needs at least one point")
    freqs = [p.frequency for p in points]
    if len(set(freqs)) != len(freqs):
        raise ValueError("sweep frequencies must be distinct")
    return min(points, key=lambda p: (p.energy, p.frequency))
