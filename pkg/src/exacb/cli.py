"""Command-line entry point.

Exit codes: 0 success, 1 benchmark or validation failure, 2 configuration or
usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .harness import DEFAULT_HARNESS_COMMAND, ResultsFormatError, format_harness_command
from .orchestrator import (
    ConfigError,
    ExecutionError,
    Fixture,
    FixtureError,
    execute_plan,
    load_spec,
    plan_experiment,
    report_key,
)
from .protocol import ValidationError, deserialize_report, serialize_report
from .store import (
    DEFAULT_BRANCH,
    KeyNotFoundError,
    ResultStore,
    StoreError,
    open_store,
    parse_time_span,
)
from .workload import DomainError, LogmapParams, ResourceGuardError, emit_outputs, run_workload

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2
DEFAULT_OUT_DIR = "exacb-out"

CONFIG_KEYS = {"store", "harness_command", "fixtures", "metric_orientation"}


@dataclass
class StoreSettings:
    backend: str = "filesystem"
    root: str = ""
    branch: str = DEFAULT_BRANCH


@dataclass
class CliConfig:
    stores: list[StoreSettings] = field(default_factory=list)
    harness_command: str = DEFAULT_HARNESS_COMMAND
    fixtures: dict[str, Fixture] = field(default_factory=dict)
    metric_orientation: dict[str, str] = field(default_factory=dict)

    def higher_is_better(self, label: str) -> bool:
        return self.metric_orientation.get(label, "lower") == "higher"


def _store_settings(raw: Any, key: str, base: Path) -> StoreSettings:
    if isinstance(raw, str):
        raw = {"root": raw}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{key}: expected an object")
    unknown = set(raw) - {"backend", "root", "branch"}
    if unknown:
        raise ConfigError(f"{key}.{sorted(unknown)[0]}: unknown key")
    if not raw.get("root"):
        raise ConfigError(f"{key}.root: required")
    backend = raw.get("backend", "filesystem")
    if backend not in ("filesystem", "git", "git_orphan_branch", "object"):
        raise ConfigError(f"{key}.backend: unknown backend {backend!r}")
    root = Path(raw["root"])
    if backend != "object" and not root.is_absolute():
        root = base / root
    return StoreSettings(backend, str(root), raw.get("branch", DEFAULT_BRANCH))


def load_config(path: str | Path | None) -> CliConfig:
    config = CliConfig()
    if path is None:
        return config
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config: expected an object")
    for key in doc:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{key}: unknown config key")
    base = path.parent
    stores = doc.get("store")
    if stores is not None:
        items = stores if isinstance(stores, list) else [stores]
        config.stores = [_store_settings(s, f"store[{i}]", base) for i, s in enumerate(items)]
    if "harness_command" in doc:
        command = doc["harness_command"]
        try:
            format_harness_command(command, Path("x"), ["t"])
        except (ValueError, KeyError, IndexError, AttributeError) as exc:
            raise ConfigError(f"harness_command: {exc}") from None
        config.harness_command = command
    for name, hooks in (doc.get("fixtures") or {}).items():
        if not isinstance(hooks, Mapping) or not {"setup", "teardown"} <= set(hooks):
            raise ConfigError(f"fixtures.{name}: needs setup and teardown commands")
        config.fixtures[name] = Fixture(str(hooks["setup"]), str(hooks["teardown"]))
    for label, orientation in (doc.get("metric_orientation") or {}).items():
        if orientation not in ("higher", "lower"):
            raise ConfigError(f"metric_orientation.{label}: expected 'higher' or 'lower'")
        config.metric_orientation[label] = orientation
    return config


def resolve_stores(args, config: CliConfig) -> list[ResultStore]:
    """``--store`` wins over the config file, which wins over EXACB_STORE_PATH."""
    if args.store:
        settings = [StoreSettings(args.store_backend, args.store)]
    elif config.stores:
        settings = config.stores
    elif os.environ.get("EXACB_STORE_PATH"):
        settings = [StoreSettings(args.store_backend, os.environ["EXACB_STORE_PATH"])]
    else:
        return []
    stores = []
    for s in settings:
        if s.backend == "filesystem":
            Path(s.root).mkdir(parents=True, exist_ok=True)
        try:
            stores.append(open_store(s.backend, s.root, s.branch))
        except (StoreError, ValueError) as exc:
            raise ConfigError(f"store: {exc}") from None
    return stores


def _one_store(args, config: CliConfig) -> ResultStore:
    stores = resolve_stores(args, config)
    if not stores:
        raise ConfigError("store: no store configured (use --store or EXACB_STORE_PATH)")
    return stores[0]


def _err(message: str) -> None:
    print(f"exacb: {message}", file=sys.stderr)


# -- run --------------------------------------------------------------------


def cmd_run(args) -> int:
    config = load_config(args.config)
    spec = load_spec(args.spec)
    out_dir = Path(args.out_dir)
    plan = plan_experiment(
        spec,
        work_root=out_dir / "work",
        fixtures=config.fixtures,
        harness_command=config.harness_command,
    )
    stores = resolve_stores(args, config) if spec.record else []
    if spec.record and not stores:
        raise ConfigError("record: true but no store configured")

    status = EXIT_OK
    try:
        report = execute_plan(plan, stores)
    except ExecutionError as exc:
        _err(f"benchmark failed: {exc}")
        if exc.output:
            print(exc.output.rstrip(), file=sys.stderr)
        report, status = exc.report, EXIT_FAILURE
    except (FixtureError, ValidationError, ResultsFormatError) as exc:
        _err(f"benchmark failed: {exc}")
        return EXIT_FAILURE

    if status == EXIT_OK and any(not e.success for e in report.data):
        status = EXIT_FAILURE
    path = out_dir / f"{spec.prefix}.report.json"
    path.write_bytes(serialize_report(report))
    print(report_key(report, plan.record_target) if plan.record_target else path)
    return status


# -- analyze ----------------------------------------------------------------

_STR, _LIST, _NUM, _MAP = "string", "list", "number", "object"

ANALYSIS_SCHEMAS: dict[str, dict[str, tuple[str, bool]]] = {
    "comparison": {
        "prefix": (_STR, True),
        "selector": (_LIST, True),
        "pipeline": (_LIST, False),
        "efficiency": (_NUM, False),
        "display_scale": (_MAP, False),
        "title": (_STR, False),
    },
    "timeseries": {
        "prefix": (_STR, True),
        "data_labels": (_LIST, True),
        "pipeline": (_LIST, False),
        "ylabel": (_LIST, False),
        "plot_labels": (_LIST, False),
        "time_span": (_LIST, False),
        "window": (_NUM, False),
        "threshold": (_NUM, False),
        "title": (_STR, False),
    },
    "scaling": {
        "prefix": (_STR, True),
        "selector": (_LIST, True),
        "pipeline": (_LIST, False),
        "mode": (_STR, False),
    },
    "energy": {
        "prefix": (_STR, True),
        "traces": (_LIST, True),
        "alpha": (_NUM, False),
    },
}


def _check_type(value: Any, kind: str) -> bool:
    if kind == _STR:
        return isinstance(value, str)
    if kind == _LIST:
        return isinstance(value, list)
    if kind == _NUM:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, dict)


def load_analysis_config(kind: str, path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read analysis config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config: expected an object")
    schema = ANALYSIS_SCHEMAS[kind]
    for key in doc:
        if key not in schema:
            raise ConfigError(f"{key}: unknown key for {kind} analysis")
    for key, (type_name, required) in schema.items():
        if key not in doc:
            if required:
                raise ConfigError(f"{key}: required for {kind} analysis")
            continue
        value = doc[key]
        # the component inputs allow a bare string where a one-element list is meant
        if type_name == _LIST and isinstance(value, str):
            doc[key] = value = [value]
        if not _check_type(value, type_name):
            raise ConfigError(f"{key}: expected {type_name}")
    if not _valid_prefix(doc["prefix"]):
        raise ConfigError(f"prefix: invalid output prefix {doc['prefix']!r}")
    doc["_base"] = Path(path).parent
    return doc


def _valid_prefix(prefix: str) -> bool:
    return bool(prefix) and "/" not in prefix and prefix not in (".", "..")


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def analyze_timeseries(doc: dict, store: ResultStore, config: CliConfig, out_dir: Path) -> list[Path]:
    from .analysis.timeseries import DEFAULT_THRESHOLD, DEFAULT_WINDOW, assemble_timeseries, detect_regressions
    from .plotting import plot_timeseries

    prefix = doc["prefix"]
    labels = [str(x) for x in doc["data_labels"]]
    plot_labels = [str(x) for x in doc.get("plot_labels") or []] or labels
    if len(plot_labels) != len(labels):
        raise ConfigError("plot_labels: needs one entry per data_label")
    try:
        span = parse_time_span(doc.get("time_span"))
    except ValueError as exc:
        raise ConfigError(f"time_span: {exc}") from None
    window = int(doc.get("window", DEFAULT_WINDOW))
    threshold = float(doc.get("threshold", DEFAULT_THRESHOLD))
    if window < 3:
        raise ConfigError("window: must be >= 3")

    # the prefix names an experiment, so select whole key segments only
    series = assemble_timeseries(store, f"{prefix}/", labels, span, [str(p) for p in doc.get("pipeline") or []])
    flags = {}
    rows = []
    for s in series:
        found = []
        if len(s) >= window:
            found = detect_regressions(s, window, threshold, config.higher_is_better(s.metric_label))
        flags[s.metric_label] = found
        by_index = {f.index: f.direction for f in found}
        for i, p in enumerate(s.points):
            rows.append(
                (s.metric_label, p.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"), p.pipeline_id, p.value, by_index.get(i, ""))
            )
    ylabel = " ".join(str(y) for y in doc.get("ylabel") or [])
    table = _write_table(
        out_dir / f"{prefix}.timeseries.csv", ("label", "timestamp", "pipeline_id", "value", "flag"), rows
    )
    figure = plot_timeseries(
        series, out_dir / f"{prefix}.timeseries.svg", plot_labels, ylabel, flags, doc.get("title", "")
    )
    return [table, figure]


def analyze_comparison(doc: dict, store: ResultStore, config: CliConfig, out_dir: Path) -> list[Path]:
    from .analysis.compare import compare_machines
    from .analysis.scaling import scaling_band, strong_scaling
    from .plotting import plot_comparison

    efficiency = float(doc.get("efficiency", 0.8))
    if not 0 < efficiency <= 1:
        raise ConfigError("efficiency: must lie in (0, 1]")
    try:
        comparison = compare_machines(store, [str(s) for s in doc["selector"]], [str(p) for p in doc.get("pipeline") or []])
    except ValueError as exc:
        raise ConfigError(f"pipeline: {exc}") from None
    rows = []
    for selector, s in comparison.series.items():
        if not s.points:
            continue
        n0, t0 = s.points[0]
        for (n, t), sp in zip(s.points, strong_scaling(s)):
            ideal, band = scaling_band(n0, t0, efficiency, n)
            rows.append((selector, n, t, ideal, band, sp.speedup, sp.efficiency))
    table = _write_table(
        out_dir / f"{doc['prefix']}.comparison.csv",
        ("selector", "nodes", "runtime", "ideal", "band", "speedup", "efficiency"),
        rows,
    )
    for selector, count in comparison.excluded.items():
        if count:
            _err(f"warning: {count} failed entries excluded for {selector}")
    figure = plot_comparison(
        comparison,
        out_dir / f"{doc['prefix']}.comparison.svg",
        efficiency,
        {str(k): float(v) for k, v in (doc.get("display_scale") or {}).items()},
        doc.get("title", ""),
    )
    return [table, figure]


def analyze_scaling(doc: dict, store: ResultStore, config: CliConfig, out_dir: Path) -> list[Path]:
    from .analysis.compare import compare_machines
    from .analysis.scaling import strong_scaling, weak_scaling_efficiency
    from .plotting import plot_scaling

    mode = doc.get("mode", "strong")
    if mode not in ("strong", "weak"):
        raise ConfigError("mode: expected 'strong' or 'weak'")
    try:
        comparison = compare_machines(store, [str(s) for s in doc["selector"]], [str(p) for p in doc.get("pipeline") or []])
    except ValueError as exc:
        raise ConfigError(f"pipeline: {exc}") from None
    rows, curves = [], []
    for selector, s in comparison.series.items():
        if not s.points:
            curves.append([])
            continue
        if mode == "strong":
            points = strong_scaling(s)
            curves.append([(p.nodes, p.efficiency) for p in points])
            rows += [(selector, p.nodes, t, p.speedup, p.efficiency) for p, t in zip(points, s.runtimes)]
        else:
            eff = weak_scaling_efficiency(s)
            curves.append(eff)
            rows += [(selector, n, t, "", e) for (n, e), t in zip(eff, s.runtimes)]
    table = _write_table(
        out_dir / f"{doc['prefix']}.scaling.csv", ("selector", "nodes", "runtime", "speedup", "efficiency"), rows
    )
    figure = plot_scaling(list(comparison.series.values()), curves, out_dir / f"{doc['prefix']}.scaling.svg", mode)
    return [table, figure]


def analyze_energy(doc: dict, store: ResultStore | None, config: CliConfig, out_dir: Path) -> list[Path]:
    from .analysis.energy import SweepPoint, energy_summary, read_trace_csv, sweep_optimum
    from .plotting import plot_energy

    alpha = float(doc.get("alpha", 0.5))
    if not 0 < alpha <= 1:
        raise ConfigError("alpha: must lie in (0, 1]")
    prefix = doc["prefix"]
    rows, sweep, outputs = [], [], []
    for i, item in enumerate(doc["traces"]):
        if isinstance(item, str):
            item = {"path": item}
        if not isinstance(item, dict) or "path" not in item:
            raise ConfigError(f"traces[{i}].path: required")
        unknown = set(item) - {"path", "frequency", "window", "label"}
        if unknown:
            raise ConfigError(f"traces[{i}].{sorted(unknown)[0]}: unknown key")
        path = Path(item["path"])
        if not path.is_absolute():
            path = doc["_base"] / path
        try:
            trace = read_trace_csv(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"traces[{i}].path: {exc}") from None
        override = tuple(item["window"]) if item.get("window") else None
        summary = energy_summary(trace, alpha, override)
        label = item.get("label", path.stem)
        frequency = item.get("frequency", "")
        rows.append(
            (label, frequency, summary.window[0], summary.window[1], summary.windowed_energy, summary.full_energy, summary.window_runtime)
        )
        if frequency != "":
            sweep.append(SweepPoint(float(frequency), summary.windowed_energy, summary.window_runtime))
        outputs.append(plot_energy(trace, summary.window, out_dir / f"{prefix}.energy.{i}.svg", label))
    outputs.insert(
        0,
        _write_table(
            out_dir / f"{prefix}.energy.csv",
            ("trace", "frequency", "window_start", "window_end", "energy_windowed", "energy_full", "runtime"),
            rows,
        ),
    )
    if sweep:
        best = sweep_optimum(sweep)
        outputs.append(
            _write_table(
                out_dir / f"{prefix}.sweep.csv",
                ("frequency", "energy", "runtime", "optimum"),
                [(p.frequency, p.energy, p.runtime, p is best) for p in sorted(sweep, key=lambda p: p.frequency)],
            )
        )
    return outputs


ANALYZERS: dict[str, Callable] = {
    "comparison": analyze_comparison,
    "timeseries": analyze_timeseries,
    "scaling": analyze_scaling,
    "energy": analyze_energy,
}


def cmd_analyze(args) -> int:
    config = load_config(args.config)
    doc = load_analysis_config(args.kind, args.analysis_config)
    store = None if args.kind == "energy" else _one_store(args, config)
    out_dir = Path(args.out_dir)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        outputs = ANALYZERS[args.kind](doc, store, config, out_dir)
    for w in caught:
        _err(f"warning: {w.message}")
    for path in outputs:
        print(path)
    return EXIT_OK


# -- validate / store -------------------------------------------------------


def cmd_validate(args) -> int:
    status = EXIT_OK
    for name in args.files:
        try:
            deserialize_report(Path(name).read_bytes())
        except OSError as exc:
            print(f"{name}: ERROR {exc}")
            status = EXIT_FAILURE
        except ValidationError as exc:
            print(f"{name}: INVALID")
            for problem in exc.errors:
                print(f"  {problem}")
            status = EXIT_FAILURE
        else:
            print(f"{name}: OK")
    return status


def cmd_store(args) -> int:
    config = load_config(args.config)
    store = _one_store(args, config)
    if args.action == "list":
        try:
            span = parse_time_span([args.since or "", args.until or ""]) if (args.since or args.until) else None
        except ValueError as exc:
            raise ConfigError(f"time span: {exc}") from None
        for key in store.list_reports(args.prefix or "", span):
            print(key)
        return EXIT_OK
    if args.action == "push":
        data = Path(args.file).read_bytes()
        try:
            if args.external:
                receipt = store.inject_external(args.key, data)
            else:
                deserialize_report(data)
                receipt = store.put_report(args.key, data)
        except ValidationError as exc:
            _err(f"{args.file}: invalid report: {exc}")
            return EXIT_FAILURE
        print(f"{receipt.key} {receipt.revision}" + ("" if receipt.trusted else " untrusted"))
        return EXIT_OK
    try:
        data = store.get_report(args.key)
    except KeyNotFoundError as exc:
        _err(str(exc))
        return EXIT_FAILURE
    if args.output:
        target = Path(args.out_dir) / args.output
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
        print(target)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_OK


# -- workload ---------------------------------------------------------------


def cmd_workload(args) -> int:
    params = LogmapParams(workload=args.workload, intensity=args.intensity, r=args.r, x0=args.x0)
    try:
        result = run_workload(params)
    except ResourceGuardError as exc:
        _err(str(exc))
        return EXIT_FAILURE
    except DomainError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    out, stats = emit_outputs(result, args.outdir)
    print(f"checksum={result.checksum!r} runtime={result.runtime:.6f}s -> {out}, {stats}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=default(None), help="toolkit config file (JSON)")
    parser.add_argument("--out-dir", default=default(DEFAULT_OUT_DIR), help="directory for all outputs")
    parser.add_argument("--store", default=default(None), help="store root (overrides config and EXACB_STORE_PATH)")
    parser.add_argument(
        "--store-backend",
        choices=("filesystem", "git"),
        default=default("filesystem"),
        help="backend for --store / EXACB_STORE_PATH",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exacb", description="Continuous benchmarking toolkit")
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="plan, execute and optionally record an experiment")
    _global_options(p, suppress=True)
    p.add_argument("spec", help="experiment spec (JSON)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="post-process stored reports")
    _global_options(p, suppress=True)
    p.add_argument("kind", choices=sorted(ANALYZERS))
    p.add_argument("analysis_config", help="analysis config (JSON)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="check report files against the protocol")
    _global_options(p, suppress=True)
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("store", help="push, pull or list stored reports")
    store_sub = p.add_subparsers(dest="action", required=True)
    q = store_sub.add_parser("push")
    _global_options(q, suppress=True)
    q.add_argument("file")
    q.add_argument("--key", required=True)
    q.add_argument("--external", action="store_true", help="mark as untrusted third-party data")
    q = store_sub.add_parser("pull")
    _global_options(q, suppress=True)
    q.add_argument("key")
    q.add_argument("-o", "--output", help="file name under --out-dir (default: stdout)")
    q = store_sub.add_parser("list")
    _global_options(q, suppress=True)
    q.add_argument("prefix", nargs="?", default="")
    q.add_argument("--from", dest="since", help="earliest experiment start (date or timestamp)")
    q.add_argument("--to", dest="until", help="latest experiment start (date or timestamp)")
    p.set_defaults(func=cmd_store)

    p = sub.add_parser("workload", help="built-in workloads")
    wsub = p.add_subparsers(dest="workload_name", required=True)
    q = wsub.add_parser("logmap", help="logistic-map microbenchmark")
    q.add_argument("--workload", type=int, default=0, help="vector of 10**WORKLOAD elements")
    q.add_argument("--intensity", type=float, default=1.0, help="round(1000*INTENSITY) iterations")
    q.add_argument("--r", type=float, default=2.4)
    q.add_argument("--x0", type=float, default=0.5)
    q.add_argument("--outdir", default=".")
    p.set_defaults(func=cmd_workload)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"configuration error: {exc}")
        return EXIT_CONFIG
    except StoreError as exc:
        _err(f"store error: {exc}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
