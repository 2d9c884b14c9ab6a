"""Static SVG figures for the analysis commands.

Figures render headless (Agg) and are written without a creation date and
with a fixed id salt, so unchanged inputs give byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .analysis.compare import Comparison  # noqa: E402
from .analysis.energy import EnergyTrace  # noqa: E402
from .analysis.scaling import RuntimeSeries, scaling_band  # noqa: E402
from .analysis.timeseries import Flag, TimeSeries  # noqa: E402

_RC = {
    "svg.hashsalt": "exacb",
    "svg.fonttype": "path",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (7.0, 4.3),
}


def save_svg(fig, path: str | Path, timestamp: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {} if timestamp else {"Date": None}
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata=metadata, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_timeseries(
    series: Sequence[TimeSeries],
    path: str | Path,
    plot_labels: Sequence[str] | None = None,
    ylabel: str = "",
    flags: Mapping[str, Sequence[Flag]] | None = None,
    title: str = "",
) -> Path:
    labels = list(plot_labels) if plot_labels else [s.metric_label for s in series]
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots()
        for s, label in zip(series, labels):
            if not s.points:
                continue
            times = [p.timestamp for p in s.points]
            (line,) = ax.plot(times, s.values, marker="o", markersize=3, label=label)
            for flag in (flags or {}).get(s.metric_label, ()):
                ax.plot(
                    times[flag.index],
                    flag.value,
                    marker="v" if flag.direction == "regression" else "^",
                    color="tab:red" if flag.direction == "regression" else "tab:green",
                    markersize=8,
                    linestyle="none",
                )
        ax.set_xlabel("date")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if any(s.points for s in series):
            ax.legend(loc="best")
        fig.autofmt_xdate()
    return save_svg(fig, path)


def plot_comparison(
    comparison: Comparison,
    path: str | Path,
    efficiency: float = 0.8,
    display_scale: Mapping[str, float] | None = None,
    title: str = "",
) -> Path:
    """Runtime over nodes per selector, with ideal and ``efficiency`` scaling bands."""
    scale = display_scale or {}
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots()
        for i, (selector, s) in enumerate(comparison.series.items()):
            if not s.points:
                continue
            factor = scale.get(selector, 1.0)
            color = f"C{i}"
            label = selector if factor == 1.0 else f"{selector} (x{factor:g})"
            ax.plot(s.nodes, [t * factor for t in s.runtimes], marker="o", color=color, label=label)
            n0, t0 = s.points[0]
            ns = [n for n in s.nodes]
            bands = [scaling_band(n0, t0 * factor, efficiency, n) for n in ns]
            ax.fill_between(ns, [b[0] for b in bands], [b[1] for b in bands], color=color, alpha=0.15)
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("nodes")
        ax.set_ylabel("time to solution / s")
        if title:
            ax.set_title(title)
        if any(s.points for s in comparison.series.values()):
            ax.legend(loc="best")
    return save_svg(fig, path)


def plot_scaling(
    series: Sequence[RuntimeSeries],
    efficiencies: Sequence[Sequence[tuple[int, float]]],
    path: str | Path,
    mode: str = "strong",
) -> Path:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots()
        for s, eff in zip(series, efficiencies):
            if eff:
                ax.plot([n for n, _ in eff], [e for _, e in eff], marker="o", label=s.label)
        ax.axhline(1.0, color="black", linewidth=0.8)
        ax.set_xscale("log", base=2)
        ax.set_xlabel("nodes")
        ax.set_ylabel(f"{mode}-scaling efficiency")
        if any(efficiencies):
            ax.legend(loc="best")
    return save_svg(fig, path)


def plot_energy(trace: EnergyTrace, window: tuple[float, float], path: str | Path, title: str = "") -> Path:
    """Per-device power with the measurement window marked by black vertical bars."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots()
        for d in range(trace.devices):
            ax.plot(trace.times, trace.power[:, d], linewidth=1, label=f"device {d}")
        for t in window:
            ax.axvline(t, color="black", linewidth=2)
        ax.set_xlabel("time / s")
        ax.set_ylabel("power / W")
        if title:
            ax.set_title(title)
        ax.legend(loc="best")
    return save_svg(fig, path)
