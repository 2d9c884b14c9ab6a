"""Execution orchestration: spec -> plan -> harness run -> report -> store."""

from __future__ import annotations

import getpass
import json
import logging
import os
import re
import subprocess
import warnings
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .harness import (
    DEFAULT_HARNESS_COMMAND,
    HarnessError,
    HarnessInvocation,
    HarnessKind,
    default_definition,
    expand_tags,
    parse_results_csv,
    rows_to_entries,
    run_harness,
)
from .protocol import (
    UNKNOWN_COMMIT,
    BenchmarkReport,
    Experiment,
    Reporter,
    check_report,
    new_report,
    serialize_report,
)
from .store import ResultStore, StoreError

log = logging.getLogger(__name__)

_PREFIX_RE = re.compile(r"[A-Za-z0-9_-]+(\.[A-Za-z0-9_-]+)*")

SPEC_KEYS = {
    "prefix", "usecase", "variant", "jube_file", "definition_path", "machine", "queue",
    "project", "budget", "fixture", "record", "in_command", "harness", "software_version",
}


class ConfigError(ValueError):
    """A spec or config is malformed or refers to something that does not exist."""


class FixtureError(RuntimeError):
    pass


class ExecutionError(RuntimeError):
    """The run step failed. ``report`` holds whatever results could be recovered."""

    def __init__(self, message: str, report: BenchmarkReport, output: str = ""):
        super().__init__(message)
        self.report = report
        self.output = output


class EmptyResultsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    prefix: str
    machine: str
    usecase: str = ""
    variant: str = ""
    definition_path: Path | None = None
    queue: str = ""
    project: str = ""
    budget: str = ""
    fixture: str | None = None
    record: bool = False
    in_command: str | None = None
    harness_kind: HarnessKind = HarnessKind.BUILTIN_LOGMAP
    software_version: str = ""

    def check(self) -> None:
        if not isinstance(self.prefix, str) or not _PREFIX_RE.fullmatch(self.prefix):
            raise ConfigError(f"prefix: invalid job-name prefix {self.prefix!r}")
        if not self.machine:
            raise ConfigError("machine: must be non-empty")


@dataclass(frozen=True)
class Fixture:
    setup: str
    teardown: str


@dataclass(frozen=True)
class ExecutionPlan:
    spec: ExperimentSpec
    job_names: tuple[str, ...]
    invocation: HarnessInvocation
    fixture_steps: Fixture | None = None
    record_target: str | None = None


def _as_bool(value, key: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "false"):
        return value.lower() == "true"
    raise ConfigError(f"{key}: expected true or false, got {value!r}")


def spec_from_mapping(doc: Mapping, base_dir: str | Path = ".") -> ExperimentSpec:
    """Build a spec from the component-input keys (``jube_file`` maps to the definition)."""
    if not isinstance(doc, Mapping):
        raise ConfigError("spec: must be an object")
    for key in doc:
        if key not in SPEC_KEYS:
            raise ConfigError(f"{key}: unknown spec key")
    for key in ("prefix", "machine"):
        if key not in doc:
            raise ConfigError(f"{key}: required")
    for key, value in doc.items():
        if key != "record" and value is not None and not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")

    definition = doc.get("jube_file") or doc.get("definition_path")
    kind_name = doc.get("harness") or (
        HarnessKind.JUBE_CSV.value if definition else HarnessKind.BUILTIN_LOGMAP.value
    )
    try:
        kind = HarnessKind(kind_name)
    except ValueError:
        raise ConfigError(f"harness: unknown harness kind {kind_name!r}") from None
    definition_path = None
    if definition:
        definition_path = Path(definition)
        if not definition_path.is_absolute():
            definition_path = Path(base_dir) / definition_path

    spec = ExperimentSpec(
        prefix=doc["prefix"],
        machine=doc["machine"],
        usecase=doc.get("usecase", ""),
        variant=doc.get("variant", ""),
        definition_path=definition_path,
        queue=doc.get("queue", ""),
        project=doc.get("project", ""),
        budget=doc.get("budget", ""),
        fixture=doc.get("fixture") or None,
        record=_as_bool(doc.get("record", False), "record"),
        in_command=doc.get("in_command") or None,
        harness_kind=kind,
        software_version=doc.get("software_version", ""),
    )
    spec.check()
    return spec


def load_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from None
    return spec_from_mapping(doc, path.parent)


def plan_experiment(
    spec: ExperimentSpec,
    work_root: str | Path = ".exacb-work",
    fixtures: Mapping[str, Fixture] | None = None,
    harness_command: str = DEFAULT_HARNESS_COMMAND,
) -> ExecutionPlan:
    spec.check()
    definition = spec.definition_path
    if definition is None:
        if spec.harness_kind != HarnessKind.BUILTIN_LOGMAP:
            raise ConfigError("jube_file: required for external harnesses")
        definition = default_definition()
    if not Path(definition).is_file():
        raise ConfigError(f"jube_file: definition not found: {definition}")

    fixture = None
    if spec.fixture:
        fixture = (fixtures or {}).get(spec.fixture)
        if fixture is None:
            raise ConfigError(f"fixture: unknown fixture {spec.fixture!r}")

    invocation = HarnessInvocation(
        harness_kind=spec.harness_kind,
        definition_path=Path(definition),
        tags=tuple(expand_tags(spec.machine, spec.usecase, spec.variant)),
        working_dir=Path(work_root) / spec.prefix,
        launcher_prefix=spec.in_command,
        harness_command=harness_command,
        queue=spec.queue or "local",
        system_version=spec.software_version,
        job_id=os.environ.get("EXACB_JOB_ID", ""),
    )
    steps = ["run", "collect"]
    if fixture:
        steps = ["setup", *steps, "teardown"]
    plan = ExecutionPlan(
        spec=spec,
        job_names=tuple(f"{spec.prefix}.{step}" for step in steps),
        invocation=invocation,
        fixture_steps=fixture,
        record_target=spec.prefix if spec.record else None,
    )
    if spec.in_command:
        try:
            plan = inject_feature(plan, spec.in_command)
        except ValueError as exc:
            raise ConfigError(f"in_command: {exc}") from None
    return plan


def inject_feature(plan: ExecutionPlan, command: str) -> ExecutionPlan:
    """Same plan, with ``command`` placed before the benchmark launch line."""
    if not command or not command.strip():
        raise ValueError("injected command must be non-empty")
    if "\n" in command or "\r" in command:
        raise ValueError("injected command must be a single line")
    return replace(plan, invocation=replace(plan.invocation, launcher_prefix=command))


def reporter_from_env(system: str, software_version: str, env: Mapping[str, str] | None = None) -> Reporter:
    env = os.environ if env is None else env
    try:
        user = getpass.getuser()
    except (KeyError, OSError):
        user = "unknown"
    return Reporter(
        generator=f"exacb {__version__}",
        pipeline_id=env.get("EXACB_PIPELINE_ID", "local"),
        job_id=env.get("EXACB_JOB_ID", str(os.getpid())),
        commit=env.get("EXACB_COMMIT", UNKNOWN_COMMIT),
        user=env.get("EXACB_USER", user),
        system=system,
        software_version=software_version,
        timestamp=datetime.now(timezone.utc),
    )


def _run_hook(command: str, workdir: Path, what: str) -> None:
    proc = subprocess.run(
        command,
        shell=True,
        cwd=workdir,
        env=dict(os.environ, EXACB_WORK_DIR=str(workdir)),
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    if proc.returncode != 0:
        raise FixtureError(f"{what} hook failed with status {proc.returncode}: {proc.stdout.strip()}")


def _build_report(plan: ExecutionPlan, started: datetime, csv_path: Path | None) -> BenchmarkReport:
    spec = plan.spec
    rows = parse_results_csv(csv_path) if csv_path is not None else []
    versions = {row.version for row in rows}
    software_version = spec.software_version or (versions.pop() if len(versions) == 1 else "")
    reporter = reporter_from_env(spec.machine, software_version)
    experiment = Experiment(
        system=spec.machine,
        software_version=software_version,
        variant=spec.variant or spec.usecase or "default",
        started_at=started,
    )
    report = new_report(reporter, experiment)
    parameter = {
        k: v
        for k, v in (
            ("prefix", spec.prefix),
            ("usecase", spec.usecase),
            ("project", spec.project),
            ("budget", spec.budget),
        )
        if v
    }
    report = BenchmarkReport(report.version, reporter, parameter, experiment, tuple(rows_to_entries(rows)))
    return check_report(report)


def execute_plan(
    plan: ExecutionPlan, store: ResultStore | Sequence[ResultStore] | None = None
) -> BenchmarkReport:
    """Setup fixture, harness run, CSV ingestion, report; teardown always follows setup.

    With a store (or several mirrors) and a record target, the report and its
    raw CSV are recorded.
    A failed run raises :class:`ExecutionError` carrying the recovered report,
    which is still recorded first.
    """
    workdir = plan.invocation.working_dir
    workdir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    failure: HarnessError | None = None
    csv_path: Path | None = None

    fixture = plan.fixture_steps
    try:
        if fixture:
            _run_hook(fixture.setup, workdir, "setup")
        try:
            csv_path = run_harness(plan.invocation)
        except HarnessError as exc:
            failure = exc
            csv_path = exc.csv_path
    finally:
        if fixture:
            _run_hook(fixture.teardown, workdir, "teardown")

    report = _build_report(plan, started, csv_path)
    if failure is None and not report.data:
        warnings.warn(f"{csv_path}: no result rows", EmptyResultsWarning, stacklevel=2)

    stores = [] if store is None else [store] if isinstance(store, ResultStore) else list(store)
    if stores and plan.record_target:
        raw = {"results.csv": csv_path.read_bytes()} if csv_path is not None else None
        for target_store in stores:
            record_results(report, plan.record_target, target_store, raw)

    if failure is not None:
        raise ExecutionError(str(failure), report, failure.output)
    return report


def report_key(report: BenchmarkReport, target: str) -> str:
    return f"{target}/{report.reporter.pipeline_id}/{report.reporter.job_id}.json"


def record_results(
    report: BenchmarkReport,
    target: str,
    store: ResultStore,
    attachments: Mapping[str, bytes] | None = None,
) -> str:
    key = report_key(report, target)
    try:
        store.put_report(key, serialize_report(report), attachments)
    except StoreError as exc:
        raise StoreError(f"recording {key} failed: {exc}") from exc
    return key
