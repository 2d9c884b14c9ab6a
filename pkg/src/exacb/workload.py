"""Built-in logistic-map workload.

A vector of ``10**workload`` elements, all seeded with ``x0``, is advanced
``round(1000 * intensity)`` steps of ``x -> r * x * (1 - x)``. Intensity
therefore scales compute per element linearly while workload scales memory.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_WORKLOAD = 9
STEPS_PER_INTENSITY = 1000


class DomainError(ValueError):
    pass


class ResourceGuardError(ValueError):
    pass


@dataclass(frozen=True)
class LogmapParams:
    workload: int = 0
    intensity: float = 1.0
    r: float = 2.4
    x0: float = 0.5

    @property
    def elements(self) -> int:
        return 10 ** self.workload

    @property
    def steps(self) -> int:
        return int(round(STEPS_PER_INTENSITY * self.intensity))

    def check(self) -> None:
        if isinstance(self.workload, bool) or not isinstance(self.workload, int) or self.workload < 0:
            raise DomainError(f"workload must be a non-negative integer, got {self.workload!r}")
        if self.workload > MAX_WORKLOAD:
            raise ResourceGuardError(
                f"workload {self.workload} exceeds the guard of {MAX_WORKLOAD} "
                f"(10**{self.workload} elements)"
            )
        if not (math.isfinite(self.intensity) and self.intensity >= 0):
            raise DomainError(f"intensity must be >= 0, got {self.intensity!r}")
        _check_domain(self.x0, self.r)


@dataclass(frozen=True)
class WorkloadResult:
    checksum: float
    runtime: float
    phase_timings: dict[str, float] = field(default_factory=dict)


def _check_domain(x0: float, r: float) -> None:
    if not 0.0 <= x0 <= 1.0:
        raise DomainError(f"x0 must lie in [0, 1], got {x0!r}")
    if not 0.0 <= r <= 4.0:
        raise DomainError(f"r must lie in [0, 4], got {r!r}")


def iterate(x0: float, r: float, steps: int) -> float:
    """Scalar logistic map: x_steps of x_{n+1} = r x_n (1 - x_n)."""
    _check_domain(x0, r)
    if steps < 0:
        raise DomainError(f"steps must be >= 0, got {steps!r}")
    x = float(x0)
    for _ in range(steps):
        x = r * x * (1.0 - x)
    return x


def run_workload(p: LogmapParams) -> WorkloadResult:
    p.check()
    start = time.perf_counter()

    t0 = time.perf_counter()
    x = np.full(p.elements, p.x0, dtype=np.float64)
    t_init = time.perf_counter() - t0

    # same operation order as iterate() so elements match the scalar bit for bit
    t0 = time.perf_counter()
    scratch = np.empty_like(x)
    for _ in range(p.steps):
        np.subtract(1.0, x, out=scratch)
        np.multiply(p.r, x, out=x)
        np.multiply(x, scratch, out=x)
    t_compute = time.perf_counter() - t0

    t0 = time.perf_counter()
    checksum = float(np.sum(x))
    t_reduce = time.perf_counter() - t0

    runtime = time.perf_counter() - start
    return WorkloadResult(
        checksum=checksum,
        runtime=runtime,
        phase_timings={"init": t_init, "compute": t_compute, "reduce": t_reduce},
    )


def emit_outputs(res: WorkloadResult, outdir: str | Path) -> tuple[Path, Path]:
    """Write ``logmap.out`` and ``logmap.stats`` as key=value text."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    out_path = outdir / "logmap.out"
    stats_path = outdir / "logmap.stats"
    out_path.write_text(f"checksum={res.checksum!r}\nruntime={res.runtime!r}\n")
    lines = ["# logmap.stats: phase timings in seconds"]
    lines += [f"{name}={value!r}" for name, value in res.phase_timings.items()]
    stats_path.write_text("\n".join(lines) + "\n")
    return out_path, stats_path


def read_kv_file(path: str | Path) -> dict[str, str]:
    """Parse key=value lines, skipping blanks and ``#`` comments."""
    values: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: malformed line {line!r}")
        values[key.strip()] = value.strip()
    return values
