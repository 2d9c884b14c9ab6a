"""Strong/weak scaling metrics and guide bands.

All metrics are relative to the smallest measured node count ``n0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple


class ScalingPoint(NamedTuple):
    nodes: int
    speedup: float
    efficiency: float


@dataclass(frozen=True)
class RuntimeSeries:
    """Runtime over node count for one system/variant."""

    points: tuple[tuple[int, float], ...]
    label: str = ""

    def __post_init__(self):
        points = tuple((int(n), float(t)) for n, t in self.points)
        object.__setattr__(self, "points", points)
        for (a, _), (b, _) in zip(points, points[1:]):
            if b <= a:
                raise ValueError(f"node counts must be strictly increasing ({a} then {b})")
        for n, t in points:
            if n < 1:
                raise ValueError(f"node count must be >= 1, got {n}")
            if not t > 0:
                raise ValueError(f"runtime must be > 0, got {t} at n={n}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], label: str = "") -> RuntimeSeries:
        return cls(tuple(sorted(pairs)), label)

    @property
    def nodes(self) -> list[int]:
        return [n for n, _ in self.points]

    @property
    def runtimes(self) -> list[float]:
        return [t for _, t in self.points]

    def __len__(self):
        return len(self.points)


def strong_scaling(series: RuntimeSeries) -> list[ScalingPoint]:
    """Speedup T(n0)/T(n) and efficiency S(n) * n0 / n for each point."""
    if not series.points:
        raise ValueError("strong_scaling needs at least one point")
    n0, t0 = series.points[0]
    out = []
    for n, t in series.points:
        speedup = t0 / t
        out.append(ScalingPoint(n, speedup, speedup * n0 / n))
    return out


def weak_scaling_efficiency(series: RuntimeSeries) -> list[tuple[int, float]]:
    """T(n0)/T(n) for size-adapted workloads; 1.0 is ideal."""
    if not series.points:
        raise ValueError("weak_scaling_efficiency needs at least one point")
    _, t0 = series.points[0]
    return [(n, t0 / t) for n, t in series.points]


def scaling_band(n0: int, t0: float, eff: float, n: int) -> tuple[float, float]:
    """Ideal strong-scaling runtime at ``n`` and the runtime at efficiency ``eff``."""
    if not 0 < eff <= 1:
        raise ValueError(f"efficiency must lie in (0, 1], got {eff}")
    if n < n0:
        raise ValueError(f"n={n} is below the baseline n0={n0}")
    ideal = t0 * n0 / n
    return ideal, ideal / eff
