"""Versioned benchmark-report documents.

A report has five top-level sections, emitted in this order::

    version, reporter, parameter, experiment, data

Values are frozen dataclasses. ``validate_report`` turns an arbitrary parsed
JSON tree into a typed :class:`BenchmarkReport` or raises
:class:`ValidationError` carrying every violated path; it never raises
anything else.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Mapping, Sequence, Union

SCHEMA_VERSION = "1"
SUPPORTED_VERSIONS = frozenset({SCHEMA_VERSION})

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"

# the sentinel the orchestrator uses when no commit is known
UNKNOWN_COMMIT = "unknown"

REPORT_KEYS = ("version", "reporter", "parameter", "experiment", "data")
REPORTER_KEYS = (
    "generator",
    "pipeline_id",
    "job_id",
    "commit",
    "user",
    "system",
    "software_version",
    "timestamp",
)
EXPERIMENT_KEYS = ("system", "software_version", "variant", "started_at")
ENTRY_KEYS = (
    "success",
    "runtime",
    "nodes",
    "tasks_per_node",
    "threads_per_task",
    "job_id",
    "queue",
    "metrics",
)

_HEX_RE = re.compile(r"[0-9a-fA-F]{7,64}")

MetricValue = Union[float, str]


class ValidationError(ValueError):
    """A document or value violates the report schema.

    ``errors`` lists one ``"<path>: <problem>"`` string per violation.
    """

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class MergeConflictError(ValueError):
    pass


def utc(ts: datetime) -> datetime:
    """Normalize ``ts`` to an aware UTC datetime at whole-second precision."""
    if ts.tzinfo is None:
        raise ValueError("timestamp must carry a timezone")
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return utc(ts).strftime(TIMESTAMP_FORMAT)


def parse_timestamp(text: str) -> datetime:
    """Parse ``YYYY-MM-DDTHH:MM:SSZ`` (offsets like ``+01:00`` are accepted too)."""
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    return utc(ts)


def _fix_timestamp(obj: Any, name: str) -> None:
    value = getattr(obj, name)
    if isinstance(value, datetime) and value.tzinfo is not None:
        object.__setattr__(obj, name, utc(value))


@dataclass(frozen=True)
class Reporter:
    generator: str
    pipeline_id: str
    job_id: str
    commit: str
    user: str
    system: str
    software_version: str
    timestamp: datetime

    def __post_init__(self):
        _fix_timestamp(self, "timestamp")


@dataclass(frozen=True)
class Experiment:
    system: str
    software_version: str
    variant: str
    started_at: datetime

    def __post_init__(self):
        _fix_timestamp(self, "started_at")


@dataclass(frozen=True)
class DataEntry:
    success: bool
    runtime: float
    nodes: int = 1
    tasks_per_node: int = 1
    threads_per_task: int = 1
    job_id: str = ""
    queue: str = ""
    metrics: Mapping[str, MetricValue] = field(default_factory=dict)


@dataclass(frozen=True)
class BenchmarkReport:
    version: str
    reporter: Reporter
    parameter: Mapping[str, str]
    experiment: Experiment
    data: tuple[DataEntry, ...] = ()

    def __post_init__(self):
        if not isinstance(self.data, tuple):
            object.__setattr__(self, "data", tuple(self.data))

    def with_data(self, entries: Iterable[DataEntry]) -> BenchmarkReport:
        return BenchmarkReport(
            self.version, self.reporter, dict(self.parameter), self.experiment, tuple(entries)
        )


# -- checks on typed values -------------------------------------------------


def _is_real(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_count(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_str(value: Any, path: str, errors: list[str], *, required: bool = False) -> None:
    if not isinstance(value, str):
        errors.append(f"{path}: must be a string")
    elif required and not value:
        errors.append(f"{path}: must be non-empty")


def _check_instant(value: Any, path: str, errors: list[str]) -> None:
    if not isinstance(value, datetime) or value.tzinfo is None:
        errors.append(f"{path}: must be a timezone-aware instant")


def reporter_errors(r: Reporter, path: str = "reporter") -> list[str]:
    errors: list[str] = []
    for name in ("generator", "pipeline_id", "job_id", "user", "software_version"):
        _check_str(getattr(r, name), f"{path}.{name}", errors)
    _check_str(r.system, f"{path}.system", errors, required=True)
    _check_str(r.commit, f"{path}.commit", errors)
    if (
        isinstance(r.commit, str)
        and r.commit not in ("", UNKNOWN_COMMIT)
        and not _HEX_RE.fullmatch(r.commit)
    ):
        errors.append(f"{path}.commit: must be 7-64 hex characters")
    _check_instant(r.timestamp, f"{path}.timestamp", errors)
    return errors


def experiment_errors(e: Experiment, path: str = "experiment") -> list[str]:
    errors: list[str] = []
    _check_str(e.system, f"{path}.system", errors, required=True)
    _check_str(e.software_version, f"{path}.software_version", errors)
    _check_str(e.variant, f"{path}.variant", errors, required=True)
    _check_instant(e.started_at, f"{path}.started_at", errors)
    return errors


def entry_errors(d: DataEntry, path: str) -> list[str]:
    errors: list[str] = []
    if not isinstance(d.success, bool):
        errors.append(f"{path}.success: must be a boolean")
    if not _is_real(d.runtime) or not math.isfinite(d.runtime):
        errors.append(f"{path}.runtime: must be a finite number")
    elif d.runtime < 0:
        errors.append(f"{path}.runtime: must be ≥ 0")
    for name in ("nodes", "tasks_per_node", "threads_per_task"):
        value = getattr(d, name)
        if not _is_count(value):
            errors.append(f"{path}.{name}: must be an integer")
        elif value < 1:
            errors.append(f"{path}.{name}: must be ≥ 1")
    _check_str(d.job_id, f"{path}.job_id", errors)
    _check_str(d.queue, f"{path}.queue", errors)
    if not isinstance(d.metrics, Mapping):
        errors.append(f"{path}.metrics: must be an object")
        return errors
    for key, value in d.metrics.items():
        if not isinstance(key, str) or not key:
            errors.append(f"{path}.metrics: keys must be non-empty strings")
        elif isinstance(value, str):
            pass
        elif not _is_real(value) or not math.isfinite(value):
            errors.append(f"{path}.metrics.{key}: must be a finite number or a string")
    return errors


def report_errors(report: BenchmarkReport) -> list[str]:
    errors: list[str] = []
    if not isinstance(report.version, str) or not report.version:
        errors.append("missing: version")
    elif report.version not in SUPPORTED_VERSIONS:
        errors.append(f"version: unsupported version {report.version!r}")
    errors += reporter_errors(report.reporter)
    if not isinstance(report.parameter, Mapping):
        errors.append("parameter: must be an object")
    else:
        for key, value in report.parameter.items():
            if not isinstance(key, str) or not key:
                errors.append("parameter: keys must be non-empty strings")
            elif not isinstance(value, str):
                errors.append(f"parameter.{key}: must be a string")
    errors += experiment_errors(report.experiment)
    for i, entry in enumerate(report.data):
        errors += entry_errors(entry, f"data[{i}]")
    return errors


def check_report(report: BenchmarkReport) -> BenchmarkReport:
    errors = report_errors(report)
    if errors:
        raise ValidationError(errors)
    return report


# -- construction -----------------------------------------------------------


def new_report(reporter: Reporter, experiment: Experiment) -> BenchmarkReport:
    """Empty report at the current schema version."""
    errors = reporter_errors(reporter) + experiment_errors(experiment)
    if errors:
        raise ValidationError(errors)
    return BenchmarkReport(SCHEMA_VERSION, reporter, {}, experiment, ())


# -- raw documents ----------------------------------------------------------


class _Doc:
    """Typed accessor over an untrusted tree that records problems by path."""

    def __init__(self, errors: list[str]):
        self.errors = errors

    def obj(self, value: Any, path: str) -> dict | None:
        if not isinstance(value, dict):
            self.errors.append(f"{path}: must be an object")
            return None
        return value

    def get(self, node: dict, key: str, path: str) -> Any:
        if key not in node:
            self.errors.append(f"missing: {path}")
            return _MISSING
        return node[key]

    def instant(self, value: Any, path: str) -> Any:
        if value is _MISSING:
            return value
        if not isinstance(value, str):
            self.errors.append(f"{path}: must be a timestamp string")
            return _MISSING
        try:
            return parse_timestamp(value)
        except ValueError:
            self.errors.append(f"{path}: not a valid timestamp {value!r}")
            return _MISSING

    def unknown(self, node: dict, allowed: Sequence[str], path: str) -> None:
        for key in node:
            if key not in allowed:
                self.errors.append(f"{path}.{key}: unknown field" if path else f"{key}: unknown field")


_MISSING = object()


def _reporter_from(doc: _Doc, raw: Any) -> Reporter | None:
    node = doc.obj(raw, "reporter")
    if node is None:
        return None
    doc.unknown(node, REPORTER_KEYS, "reporter")
    values = {k: doc.get(node, k, f"reporter.{k}") for k in REPORTER_KEYS}
    values["timestamp"] = doc.instant(values["timestamp"], "reporter.timestamp")
    if any(v is _MISSING for v in values.values()):
        return None
    reporter = Reporter(**values)
    doc.errors += reporter_errors(reporter)
    return reporter


def _experiment_from(doc: _Doc, raw: Any) -> Experiment | None:
    node = doc.obj(raw, "experiment")
    if node is None:
        return None
    doc.unknown(node, EXPERIMENT_KEYS, "experiment")
    values = {k: doc.get(node, k, f"experiment.{k}") for k in EXPERIMENT_KEYS}
    values["started_at"] = doc.instant(values["started_at"], "experiment.started_at")
    if any(v is _MISSING for v in values.values()):
        return None
    experiment = Experiment(**values)
    doc.errors += experiment_errors(experiment)
    return experiment


def _entry_from(doc: _Doc, raw: Any, path: str) -> DataEntry | None:
    node = doc.obj(raw, path)
    if node is None:
        return None
    doc.unknown(node, ENTRY_KEYS, path)
    values = {k: doc.get(node, k, f"{path}.{k}") for k in ENTRY_KEYS}
    if any(v is _MISSING for v in values.values()):
        return None
    if _is_real(values["runtime"]):
        values["runtime"] = float(values["runtime"])
    metrics = values["metrics"]
    if isinstance(metrics, dict):
        values["metrics"] = {
            k: float(v) if _is_real(v) else v for k, v in metrics.items()
        }
    entry = DataEntry(**values)
    errors = entry_errors(entry, path)
    doc.errors += errors
    return None if errors else entry


def validate_report(raw: Any) -> BenchmarkReport:
    """Build a typed report from a parsed document.

    Raises :class:`ValidationError` listing every violated path.
    """
    errors: list[str] = []
    doc = _Doc(errors)
    if not isinstance(raw, dict):
        raise ValidationError(["document: must be an object"])
    doc.unknown(raw, REPORT_KEYS, "")

    version = raw.get("version", _MISSING)
    if version is _MISSING or version in ("", None):
        errors.append("missing: version")
    elif not isinstance(version, str) or version not in SUPPORTED_VERSIONS:
        errors.append(f"version: unsupported version {version!r}")

    reporter = None
    if "reporter" not in raw:
        errors.append("missing: reporter")
    else:
        reporter = _reporter_from(doc, raw["reporter"])

    parameter: dict[str, str] = {}
    if "parameter" not in raw:
        errors.append("missing: parameter")
    else:
        node = doc.obj(raw["parameter"], "parameter")
        if node is not None:
            for key, value in node.items():
                if not key:
                    errors.append("parameter: keys must be non-empty strings")
                elif not isinstance(value, str):
                    errors.append(f"parameter.{key}: must be a string")
                else:
                    parameter[key] = value

    experiment = None
    if "experiment" not in raw:
        errors.append("missing: experiment")
    else:
        experiment = _experiment_from(doc, raw["experiment"])

    entries: list[DataEntry] = []
    if "data" not in raw:
        errors.append("missing: data")
    elif not isinstance(raw["data"], list):
        errors.append("data: must be an array")
    else:
        for i, item in enumerate(raw["data"]):
            entry = _entry_from(doc, item, f"data[{i}]")
            if entry is not None:
                entries.append(entry)

    if errors:
        raise ValidationError(errors)
    return BenchmarkReport(version, reporter, parameter, experiment, tuple(entries))


# -- wire format ------------------------------------------------------------


def _entry_document(d: DataEntry) -> dict:
    return {
        "success": d.success,
        "runtime": float(d.runtime),
        "nodes": d.nodes,
        "tasks_per_node": d.tasks_per_node,
        "threads_per_task": d.threads_per_task,
        "job_id": d.job_id,
        "queue": d.queue,
        "metrics": {
            k: (v if isinstance(v, str) else float(v)) for k, v in sorted(d.metrics.items())
        },
    }


def to_document(report: BenchmarkReport) -> dict:
    """Plain-JSON tree with keys in wire order; maps sorted by key."""
    r, e = report.reporter, report.experiment
    return {
        "version": report.version,
        "reporter": {
            "generator": r.generator,
            "pipeline_id": r.pipeline_id,
            "job_id": r.job_id,
            "commit": r.commit,
            "user": r.user,
            "system": r.system,
            "software_version": r.software_version,
            "timestamp": format_timestamp(r.timestamp),
        },
        "parameter": dict(sorted(report.parameter.items())),
        "experiment": {
            "system": e.system,
            "software_version": e.software_version,
            "variant": e.variant,
            "started_at": format_timestamp(e.started_at),
        },
        "data": [_entry_document(d) for d in report.data],
    }


def serialize_report(report: BenchmarkReport) -> bytes:
    check_report(report)
    text = json.dumps(to_document(report), indent=2, ensure_ascii=False, allow_nan=False)
    return (text + "\n").encode("utf-8")


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name}")


def parse_document(data: bytes | str) -> Any:
    """Parse wire bytes into a raw tree; malformed JSON becomes a ValidationError."""
    try:
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return json.loads(data, parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError) as exc:
        raise ValidationError([f"document: not valid JSON ({exc})"]) from None


def deserialize_report(data: bytes | str) -> BenchmarkReport:
    return validate_report(parse_document(data))


# -- aggregation ------------------------------------------------------------


def merge_reports(reports: Sequence[BenchmarkReport]) -> BenchmarkReport:
    """Concatenate the data of reports from one system and variant.

    The reporter and experiment come from the first report.
    """
    if not reports:
        raise ValueError("merge_reports needs at least one report")
    first = reports[0]
    parameter: dict[str, str] = {}
    entries: list[DataEntry] = []
    for report in reports:
        if report.version != first.version:
            raise MergeConflictError(
                f"version mismatch: {first.version!r} vs {report.version!r}"
            )
        for name in ("system", "variant"):
            a, b = getattr(first.experiment, name), getattr(report.experiment, name)
            if a != b:
                raise MergeConflictError(f"experiment.{name} mismatch: {a!r} vs {b!r}")
        for key, value in report.parameter.items():
            if key in parameter and parameter[key] != value:
                raise MergeConflictError(
                    f"parameter conflict on {key!r}: {parameter[key]!r} vs {value!r}"
                )
            parameter[key] = value
        entries.extend(report.data)
    return BenchmarkReport(first.version, first.reporter, parameter, first.experiment, tuple(entries))
