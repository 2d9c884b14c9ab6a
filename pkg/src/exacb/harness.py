"""Adapter between the orchestrator and a benchmarking harness.

Every harness is reduced to one contract: after it runs, a ``results.csv``
exists whose header holds the ten required columns below (extra columns are
user-defined metrics). Two harness kinds are supported:

``jube_csv``
    an external command (``jube run {definition} --tags {tags}`` by default)
    that writes ``results.csv`` somewhere under the working directory.
``builtin_logmap``
    the in-package logistic-map workload, whose outputs are turned into the
    same CSV contract.

Both are launched through a generated ``run.sh`` so a launcher command can be
injected without touching the benchmark definition.
"""

from __future__ import annotations

import csv
import enum
import json
import os
import re
import shlex
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .protocol import DataEntry
from .workload import LogmapParams, read_kv_file

REQUIRED_COLUMNS = (
    "system",
    "version",
    "queue",
    "variant",
    "jobid",
    "nodes",
    "taskspernode",
    "threadspertasks",
    "runtime",
    "success",
)
RESULTS_FILENAME = "results.csv"
RUN_SCRIPT = "run.sh"
DEFAULT_HARNESS_COMMAND = "jube run {definition} --tags {tags}"

_INT_RE = re.compile(r"[+-]?\d+")
_REAL_RE = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")
_TRUE = {"true", "1"}
_FALSE = {"false", "0"}


class HarnessKind(str, enum.Enum):
    JUBE_CSV = "jube_csv"
    BUILTIN_LOGMAP = "builtin_logmap"


class HarnessError(RuntimeError):
    """The harness failed; ``output`` holds its captured stdout/stderr.

    ``csv_path`` points at a partial results file when one was produced.
    """

    def __init__(self, message: str, output: str = "", csv_path: Path | None = None):
        super().__init__(message)
        self.output = output
        self.csv_path = csv_path


class DefinitionNotFoundError(HarnessError):
    pass


class ResultsFormatError(ValueError):
    pass


@dataclass(frozen=True)
class HarnessRow:
    system: str
    version: str
    queue: str
    variant: str
    jobid: str
    nodes: int
    taskspernode: int
    threadspertasks: int
    runtime: float
    success: bool
    extras: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class HarnessInvocation:
    harness_kind: HarnessKind
    definition_path: Path
    tags: tuple[str, ...]
    working_dir: Path
    launcher_prefix: str | None = None
    harness_command: str = DEFAULT_HARNESS_COMMAND
    # metadata the builtin harness writes into its CSV rows
    queue: str = "local"
    system_version: str = ""
    job_id: str = ""

    def __post_init__(self):
        if not self.tags or not self.tags[0]:
            raise ValueError("tags must start with a non-empty system tag")
        object.__setattr__(self, "tags", tuple(self.tags))
        object.__setattr__(self, "working_dir", Path(self.working_dir).absolute())
        if self.definition_path is not None:
            object.__setattr__(self, "definition_path", Path(self.definition_path).absolute())


def default_definition() -> Path:
    return Path(__file__).parent / "data" / "logmap.json"


def expand_tags(machine: str, usecase: str = "", variant: str = "") -> list[str]:
    """Harness tags in the order machine, usecase, variant; empty ones are dropped."""
    if not machine:
        raise ValueError("machine must be non-empty")
    return [machine] + [t for t in (usecase, variant) if t]


# -- results.csv ------------------------------------------------------------


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"invalid boolean {text!r}")


def _parse_int(text: str) -> int:
    if not _INT_RE.fullmatch(text.strip()):
        raise ValueError(f"invalid integer {text!r}")
    return int(text)


def parse_real(text: str) -> float | None:
    """Strict decimal parse; None for anything else (``nan``, ``1_0``, ...)."""
    text = text.strip()
    if not _REAL_RE.fullmatch(text):
        return None
    value = float(text)
    return value if value not in (float("inf"), float("-inf")) else None


def _parse_runtime(text: str) -> float:
    value = parse_real(text)
    if value is None:
        raise ValueError(f"invalid number {text!r}")
    return value


_CONVERTERS = {
    "nodes": _parse_int,
    "taskspernode": _parse_int,
    "threadspertasks": _parse_int,
    "runtime": _parse_runtime,
    "success": _parse_bool,
}


def parse_results_csv(path: str | Path) -> list[HarnessRow]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ResultsFormatError(f"{path}: missing header row")
        seen: set[str] = set()
        for name in header:
            if name in seen:
                raise ResultsFormatError(f"{path}: duplicate column: {name}")
            seen.add(name)
        for name in REQUIRED_COLUMNS:
            if name not in seen:
                raise ResultsFormatError(f"missing column: {name}")
        extra_names = [h for h in header if h not in REQUIRED_COLUMNS]

        rows = []
        for cells in reader:
            line = reader.line_num
            if not cells:
                continue
            if len(cells) != len(header):
                raise ResultsFormatError(
                    f"{path}: line {line}: expected {len(header)} cells, got {len(cells)}"
                )
            record = dict(zip(header, cells))
            values = {}
            for name in REQUIRED_COLUMNS:
                convert = _CONVERTERS.get(name)
                if convert is None:
                    values[name] = record[name]
                    continue
                try:
                    values[name] = convert(record[name])
                except ValueError as exc:
                    raise ResultsFormatError(
                        f"{path}: line {line}, column {name!r}: {exc}"
                    ) from None
            rows.append(HarnessRow(**values, extras={k: record[k] for k in extra_names}))
    return rows


def write_results_csv(rows: Sequence[HarnessRow], path: str | Path) -> Path:
    path = Path(path)
    extra_names: list[str] = []
    for row in rows:
        extra_names += [k for k in row.extras if k not in extra_names]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*REQUIRED_COLUMNS, *extra_names])
        for row in rows:
            writer.writerow(
                [
                    row.system,
                    row.version,
                    row.queue,
                    row.variant,
                    row.jobid,
                    row.nodes,
                    row.taskspernode,
                    row.threadspertasks,
                    repr(float(row.runtime)),
                    "true" if row.success else "false",
                    *(row.extras.get(k, "") for k in extra_names),
                ]
            )
    return path


def rows_to_entries(rows: Iterable[HarnessRow]) -> list[DataEntry]:
    entries = []
    for row in rows:
        metrics: dict[str, float | str] = {}
        for key, text in row.extras.items():
            value = parse_real(text)
            metrics[key] = text if value is None else value
        entries.append(
            DataEntry(
                success=row.success,
                runtime=row.runtime,
                nodes=row.nodes,
                tasks_per_node=row.taskspernode,
                threads_per_task=row.threadspertasks,
                job_id=row.jobid,
                queue=row.queue,
                metrics=metrics,
            )
        )
    return entries


# -- running ----------------------------------------------------------------


def resolve_logmap_params(definition: Path, tags: Sequence[str]) -> LogmapParams:
    """Apply the definition's defaults, then each known tag in order."""
    doc = json.loads(Path(definition).read_text())
    values = dict(doc.get("defaults", {}))
    for tag in tags:
        values.update(doc.get("tags", {}).get(tag, {}))
    return LogmapParams(
        workload=int(values.get("workload", 0)),
        intensity=float(values.get("intensity", 1.0)),
        r=float(values.get("r", 2.4)),
        x0=float(values.get("x0", 0.5)),
    )


def _write_script(path: Path, workdir: Path, launcher_prefix: str | None, command: str) -> None:
    lines = ["#!/bin/sh", "set -e", f"cd {shlex.quote(str(workdir))}"]
    if launcher_prefix:
        lines.append(launcher_prefix)
    lines.append(command)
    path.write_text("\n".join(lines) + "\n")
    path.chmod(0o755)


def _child_env() -> dict[str, str]:
    env = dict(os.environ)
    src = str(Path(__file__).resolve().parent.parent)
    env["PYTHONPATH"] = os.pathsep.join(p for p in (src, env.get("PYTHONPATH")) if p)
    return env


def _run_script(script: Path, workdir: Path) -> subprocess.CompletedProcess:
    return subprocess.run(
        ["sh", str(script)],
        cwd=workdir,
        env=_child_env(),
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )


def format_harness_command(template: str, definition: Path, tags: Sequence[str]) -> str:
    if "{definition}" not in template or "{tags}" not in template:
        raise ValueError("harness command needs {definition} and {tags} placeholders")
    return template.format(
        definition=shlex.quote(str(definition)),
        tags=" ".join(shlex.quote(t) for t in tags),
    )


def _find_results(workdir: Path, since: float) -> Path | None:
    direct = workdir / RESULTS_FILENAME
    if direct.is_file():
        return direct
    found = [p for p in workdir.rglob(RESULTS_FILENAME) if p.stat().st_mtime >= since]
    return max(found, key=lambda p: p.stat().st_mtime) if found else None


def _run_external(inv: HarnessInvocation) -> Path:
    script = inv.working_dir / RUN_SCRIPT
    command = format_harness_command(inv.harness_command, inv.definition_path, inv.tags)
    _write_script(script, inv.working_dir, inv.launcher_prefix, command)
    since = time.time() - 1.0
    proc = _run_script(script, inv.working_dir)
    found = _find_results(inv.working_dir, since)
    if proc.returncode != 0:
        raise HarnessError(
            f"harness exited with status {proc.returncode}", proc.stdout, found
        )
    if found is None:
        raise HarnessError(f"{RESULTS_FILENAME} not found after harness run", proc.stdout)
    return found


def _run_builtin(inv: HarnessInvocation) -> Path:
    params = resolve_logmap_params(inv.definition_path, inv.tags)
    outdir = inv.working_dir / "logmap"
    command = " ".join(
        shlex.quote(part)
        for part in (
            sys.executable, "-m", "exacb", "workload", "logmap",
            "--workload", str(params.workload),
            "--intensity", repr(params.intensity),
            "--r", repr(params.r),
            "--x0", repr(params.x0),
            "--outdir", str(outdir),
        )
    )
    script = inv.working_dir / RUN_SCRIPT
    _write_script(script, inv.working_dir, inv.launcher_prefix, command)
    proc = _run_script(script, inv.working_dir)

    common = dict(
        system=inv.tags[0],
        version=inv.system_version or "builtin",
        queue=inv.queue,
        variant="+".join(inv.tags[1:]) or inv.tags[0],
        jobid=inv.job_id or str(os.getpid()),
        nodes=1,
        taskspernode=1,
        threadspertasks=1,
    )
    extras = {"workload": str(params.workload), "intensity": repr(params.intensity)}
    csv_path = inv.working_dir / RESULTS_FILENAME
    if proc.returncode != 0:
        row = HarnessRow(**common, runtime=0.0, success=False, extras=extras)
        write_results_csv([row], csv_path)
        raise HarnessError(f"logmap exited with status {proc.returncode}", proc.stdout, csv_path)

    out = read_kv_file(outdir / "logmap.out")
    stats = read_kv_file(outdir / "logmap.stats")
    checksum = parse_real(out.get("checksum", ""))
    extras["checksum"] = out.get("checksum", "")
    extras.update({f"time_{k}": v for k, v in stats.items()})
    row = HarnessRow(
        **common,
        runtime=float(out["runtime"]),
        success=checksum is not None,
        extras=extras,
    )
    return write_results_csv([row], csv_path)


def run_harness(inv: HarnessInvocation) -> Path:
    """Run the harness and return the path of its results CSV.

    The definition file is only read, never written.
    """
    if inv.definition_path is None or not Path(inv.definition_path).is_file():
        raise DefinitionNotFoundError(f"definition not found: {inv.definition_path}")
    inv.working_dir.mkdir(parents=True, exist_ok=True)
    stale = inv.working_dir / RESULTS_FILENAME
    if stale.exists():
        stale.unlink()
    if inv.harness_kind == HarnessKind.BUILTIN_LOGMAP:
        return _run_builtin(inv)
    return _run_external(inv)
