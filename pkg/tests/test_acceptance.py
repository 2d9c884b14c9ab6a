"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line to the terminal
(outside pytest's capture) before asserting.
"""

import copy
import csv
import json
import random
import subprocess
import time
from datetime import timedelta

import numpy as np
import pytest

from exacb.analysis import (
    EnergyTrace,
    RuntimeSeries,
    SweepPoint,
    detect_measurement_window,
    detect_regressions,
    energy_to_solution,
    scaling_band,
    strong_scaling,
    sweep_optimum,
)
from exacb.cli import EXIT_OK, main
from exacb.harness import REQUIRED_COLUMNS, ResultsFormatError, parse_results_csv, rows_to_entries
from exacb.protocol import ValidationError, deserialize_report, serialize_report, to_document, validate_report
from exacb.store import DEFAULT_BRANCH, FilesystemStore, GitBranchStore
from exacb.workload import LogmapParams, iterate, run_workload

from factories import T0, git, init_repo, make_entry, make_experiment, make_report, make_reporter, random_report

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(autouse=True)
def pipeline_env(monkeypatch):
    monkeypatch.setenv("EXACB_PIPELINE_ID", "221622")
    monkeypatch.setenv("EXACB_JOB_ID", "run")
    monkeypatch.setenv("EXACB_COMMIT", "0123456789abcdef")
    monkeypatch.setenv("EXACB_USER", "ci")
    monkeypatch.delenv("EXACB_STORE_PATH", raising=False)


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


# -- 1 ----------------------------------------------------------------------

def _error_paths(errors):
    paths = set()
    for e in errors:
        head, _, tail = e.partition(": ")
        paths.add(tail if head == "missing" else head)
    return paths


def _mutations(doc, rng):
    """Yield (mutated document, path that must be named)."""
    n = len(doc["data"])
    i = rng.randrange(n) if n else None
    choices = [
        ("version", lambda d: d.pop("version"), "version"),
        ("version", lambda d: d.__setitem__("version", "9"), "version"),
        ("reporter.user", lambda d: d["reporter"].pop("user"), "reporter.user"),
        ("reporter.system", lambda d: d["reporter"].__setitem__("system", ""), "reporter.system"),
        ("reporter.commit", lambda d: d["reporter"].__setitem__("commit", "not-hex"), "reporter.commit"),
        ("reporter.timestamp", lambda d: d["reporter"].__setitem__("timestamp", "yesterday"), "reporter.timestamp"),
        ("experiment.variant", lambda d: d["experiment"].__setitem__("variant", 7), "experiment.variant"),
        ("experiment.started_at", lambda d: d["experiment"].pop("started_at"), "experiment.started_at"),
        ("parameter", lambda d: d.__setitem__("parameter", ["x"]), "parameter"),
        ("parameter.k", lambda d: d["parameter"].__setitem__("k", 1), "parameter.k"),
        ("data", lambda d: d.__setitem__("data", {"0": 1}), "data"),
        ("surplus", lambda d: d.__setitem__("surplus", True), "surplus"),
    ]
    if i is not None:
        p = f"data[{i}]"
        choices += [
            (p, lambda d: d["data"][i].__setitem__("runtime", -1.0), f"{p}.runtime"),
            (p, lambda d: d["data"][i].__setitem__("nodes", 0), f"{p}.nodes"),
            (p, lambda d: d["data"][i].__setitem__("success", "yes"), f"{p}.success"),
            (p, lambda d: d["data"][i].pop("tasks_per_node"), f"{p}.tasks_per_node"),
            (p, lambda d: d["data"][i].__setitem__("threads_per_task", 1.5), f"{p}.threads_per_task"),
            (p, lambda d: d["data"][i]["metrics"].__setitem__("bad", [1]), f"{p}.metrics.bad"),
            (p, lambda d: d["data"][i].__setitem__("colour", "red"), f"{p}.colour"),
        ]
    _, mutate, path = rng.choice(choices)
    mutated = copy.deepcopy(doc)
    mutate(mutated)
    return mutated, path


def test_1_protocol_round_trip(verdict):
    rng = random.Random(20260101)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        report = random_report(rng)
        back = validate_report(json.loads(serialize_report(report)))
        if back != report or deserialize_report(serialize_report(report)) != report:
            mismatches += 1
    unnamed = 0
    for _ in range(200):
        doc, path = _mutations(to_document(random_report(rng)), rng)
        try:
            validate_report(doc)
        except ValidationError as exc:
            if path not in _error_paths(exc.errors):
                unnamed += 1
        else:
            unnamed += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and unnamed == 0 and elapsed < 10
    verdict(1, ok, f"1000 round trips, {mismatches} mismatches; 200 mutations, {unnamed} not named; {elapsed:.2f}s (< 10s)")


# -- 2 ----------------------------------------------------------------------

CORE = dict(zip(REQUIRED_COLUMNS, ["jedi", "2025", "booster", "single", "4711", "2", "4", "8", "12.5", "true"]))
EXTRAS = {"Copy BW  [MBytes/sec]": "1234.5", "note": "warm"}


def _csv(tmp_path, columns):
    values = {**CORE, **EXTRAS}
    path = tmp_path / "results.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerow([values[c] for c in columns])
    return path


def test_2_result_columns(tmp_path, verdict):
    columns = [*REQUIRED_COLUMNS, *EXTRAS]
    (entry,) = rows_to_entries(parse_results_csv(_csv(tmp_path, columns)))
    typed = (
        entry.success is True
        and type(entry.runtime) is float and entry.runtime == 12.5
        and (entry.nodes, entry.tasks_per_node, entry.threads_per_task) == (2, 4, 8)
        and all(type(v) is int for v in (entry.nodes, entry.tasks_per_node, entry.threads_per_task))
        and entry.job_id == "4711" and entry.queue == "booster"
    )
    (row,) = parse_results_csv(_csv(tmp_path, columns))
    typed = typed and (row.system, row.version, row.variant) == ("jedi", "2025", "single")
    extras_ok = entry.metrics == {"Copy BW  [MBytes/sec]": 1234.5, "note": "warm"}
    named = 0
    for missing in REQUIRED_COLUMNS:
        try:
            parse_results_csv(_csv(tmp_path, [c for c in columns if c != missing]))
        except ResultsFormatError as exc:
            named += f"missing column: {missing}" in str(exc)
    ok = typed and extras_ok and named == 10
    verdict(2, ok, f"core fields typed={typed}, extras in metrics={extras_ok}, deletions named {named}/10")


# -- 3 ----------------------------------------------------------------------

def _orbit(x0, r, steps):
    xs = [x0]
    for _ in range(steps):
        xs.append(r * xs[-1] * (1 - xs[-1]))
    return xs[-1]


def test_3_logistic_map_oracle(verdict):
    rng = random.Random(3)
    worst = worst_inside = 0.0
    orbit_ok = True
    outside = []
    # the error contracts by |2 - r| per step, so 1e-9 after 2000 steps needs |2 - r| < 1e-9 ** (1 / 2000)
    rate_limit = 1e-9 ** (1 / 2000)
    for _ in range(50):
        x0 = rng.uniform(0.0, 1.0)
        r = rng.uniform(1.0, 3.0)
        assert 0 < x0 < 1 and 1 < r < 3
        x = iterate(x0, r, 2000)
        orbit_ok &= x == _orbit(x0, r, 2000)
        err = abs(x - (1 - 1 / r))
        worst = max(worst, err)
        if abs(2 - r) < rate_limit:
            worst_inside = max(worst_inside, err)
        else:
            outside.append(round(r, 5))
    checksum_ok = True
    for w in (0, 1, 2):
        p = LogmapParams(workload=w, intensity=0.5, r=2.4, x0=0.5)
        n = p.elements
        checksum_ok &= abs(run_workload(p).checksum - n * iterate(p.x0, p.r, p.steps)) <= 1e-9 * n
    ok = worst < 1e-9 and checksum_ok
    verdict(
        3, ok,
        f"max |x_2000 - (1-1/r)| = {worst:.3e} (< 1e-9) over 50 pairs; checksums w=0,1,2 match={checksum_ok}; "
        f"orbit oracle exact={orbit_ok}; pairs with |2-r| >= {rate_limit:.5f} (too slow to converge in 2000 steps): "
        f"{outside}; worst among the rest {worst_inside:.3e}",
    )


# -- 4 ----------------------------------------------------------------------

def test_4_end_to_end(tmp_path, verdict):
    repo = init_repo(tmp_path / "repo")
    main_before = git(repo, "rev-parse", "main")
    log_before = git(repo, "log", "--format=%H", "main")
    config = write_json(
        tmp_path / "exacb.json",
        {"store": [{"backend": "filesystem", "root": str(tmp_path / "fs")}, {"backend": "git", "root": str(repo)}]},
    )
    spec = write_json(
        tmp_path / "spec.json",
        {"prefix": "jedi.strong.tiny", "machine": "jedi", "usecase": "strong", "variant": "tiny", "record": "true"},
    )
    start = time.perf_counter()
    code = main(["--config", str(config), "--out-dir", str(tmp_path / "out"), "run", str(spec)])
    elapsed = time.perf_counter() - start
    key = "jedi.strong.tiny/221622/run.json"
    from_fs = FilesystemStore(tmp_path / "fs").get_report(key)
    from_git = GitBranchStore(repo).get_report(key)
    # read back through git itself too, independent of the store code
    raw_git = subprocess.run(
        ["git", "show", f"{DEFAULT_BRANCH}:{key}"], cwd=repo, capture_output=True, check=True
    ).stdout
    orphan = subprocess.run(["git", "merge-base", "main", DEFAULT_BRANCH], cwd=repo, capture_output=True).returncode != 0
    unchanged = git(repo, "rev-parse", "main") == main_before and git(repo, "log", "--format=%H", "main") == log_before
    report = deserialize_report(from_fs)
    ok = (
        code == EXIT_OK and from_fs == from_git == raw_git and orphan and unchanged
        and all(e.success for e in report.data) and elapsed < 30
    )
    verdict(
        4, ok,
        f"exit {code}; fs == git branch == git show: {from_fs == from_git == raw_git}; orphan={orphan}; "
        f"default branch unchanged={unchanged}; {elapsed:.2f}s (< 30s)",
    )


# -- 5 ----------------------------------------------------------------------

def _comparable(report_bytes):
    doc = json.loads(report_bytes)
    doc["reporter"].pop("timestamp")
    doc["experiment"].pop("started_at")
    for entry in doc["data"]:
        entry.pop("runtime")
        entry["metrics"] = {k: v for k, v in entry["metrics"].items() if not k.startswith("time_")}
    return doc


def test_5_feature_injection(tmp_path, verdict):
    definition = write_json(tmp_path / "logmap.json", {"defaults": {"workload": 2, "intensity": 0.05}})
    before = definition.read_bytes()
    base = {"prefix": "jupiter.single", "machine": "jupiter", "usecase": "problem", "variant": "single",
            "jube_file": str(definition), "harness": "builtin_logmap"}
    plain = write_json(tmp_path / "plain.json", base)
    injected_line = "export UCX_RNDV_THRESH=intra:65536,inter:65536"
    injected = write_json(tmp_path / "injected.json", {**base, "in_command": injected_line})
    assert main(["--out-dir", str(tmp_path / "a"), "run", str(plain)]) == EXIT_OK
    assert main(["--out-dir", str(tmp_path / "b"), "run", str(injected)]) == EXIT_OK

    lines = (tmp_path / "b" / "work" / "jupiter.single" / "run.sh").read_text().splitlines()
    launch = next(i for i, line in enumerate(lines) if "workload logmap" in line)
    placed = injected_line in lines and lines.index(injected_line) < launch
    untouched = definition.read_bytes() == before
    same = _comparable((tmp_path / "a" / "jupiter.single.report.json").read_bytes()) == _comparable(
        (tmp_path / "b" / "jupiter.single.report.json").read_bytes()
    )
    ok = placed and untouched and same
    verdict(5, ok, f"definition byte-identical={untouched}; injected line before launch={placed}; reports match={same}")


# -- 6 ----------------------------------------------------------------------

def test_6_scaling_math(verdict):
    point = strong_scaling(RuntimeSeries(((1, 100), (2, 62.5))))[1]
    band = scaling_band(1, 100, 0.8, 4)
    worst = 0.0
    n = 1
    series = []
    while n <= 1024:
        series.append((n, 100.0 / n))
        n *= 2
    series += [(3, 100.0 / 3), (7, 100.0 / 7), (1000, 100.0 / 1000)]
    for p in strong_scaling(RuntimeSeries.from_pairs(series)):
        worst = max(worst, abs(p.efficiency - 1.0))
    ok = point.efficiency == 0.8 and band == (25.0, 31.25) and worst <= 1e-12
    verdict(6, ok, f"E(2)={point.efficiency!r}; band={band}; max |E(n)-1| up to n=1024 = {worst:.1e} (<= 1e-12)")


# -- 7 ----------------------------------------------------------------------

def test_7_regression_detection(verdict):
    rng = random.Random(7)
    hits = 0
    invariant = True
    for _ in range(100):
        length = rng.randint(20, 60)
        step = rng.randint(7, length - 1)
        base = rng.uniform(10.0, 1e4)
        values = [base * (1.3 if i >= step else 1.0) * (1 + rng.gauss(0, 0.01)) for i in range(length)]
        flags = detect_regressions(values, window=7, threshold=0.1)
        hits += any(f.index == step and f.direction == "regression" for f in flags)
        indices = [f.index for f in flags]
        for c in (0.5, 7, 1e6):
            invariant &= [f.index for f in detect_regressions([c * v for v in values], 7, 0.1)] == indices
    constant_flags = sum(len(detect_regressions([rng.uniform(1, 1e4)] * rng.randint(7, 60), 7, 0.1)) for _ in range(100))
    ok = hits == 100 and constant_flags == 0 and invariant
    verdict(7, ok, f"step flagged {hits}/100; constant-series flags {constant_flags}; invariant under x0.5, x7, x1e6: {invariant}")


# -- 8 ----------------------------------------------------------------------

def _percentile(xs, q):
    s = sorted(xs)
    pos = (len(s) - 1) * q / 100
    lo = int(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def _window_oracle(times, total, alpha=0.5):
    ref = _percentile(list(total), 95)
    best = None
    for i in range(len(times)):
        for j in range(i, len(times)):
            if all(total[k] >= alpha * ref for k in range(i, j + 1)):
                cand = (j - i, times[j] - times[i], -i)
                if best is None or cand > best[0]:
                    best = (cand, (float(times[i]), float(times[j])))
    return best[1]


def test_8_energy(verdict):
    t = np.linspace(0.0, 10.0, 11)
    constant = energy_to_solution(EnergyTrace(t, np.full(11, 100.0), (0.0, 10.0)))
    ramp_t = np.linspace(0.0, 10.0, 101)
    ramp = energy_to_solution(EnergyTrace(ramp_t, 10.0 * ramp_t, (0.0, 10.0)))

    # 0 W for 2 s, 100 W for 10 s, 0 W for 2 s; each ramp spans one sample interval
    dt = 0.25
    times = np.arange(0.0, 14.0 + dt / 2, dt)
    power = np.where((times >= 2) & (times <= 12), 100.0, 0.0)
    trace = EnergyTrace(times, power)
    window = detect_measurement_window(trace)
    oracle = _window_oracle(times, trace.total)
    plateau_ok = window == oracle and abs(window[0] - 2.0) <= dt and abs(window[1] - 12.0) <= dt

    best = sweep_optimum([SweepPoint(1.2e9, 900, 10), SweepPoint(1.5e9, 800, 9), SweepPoint(1.8e9, 850, 8)])
    tie = sweep_optimum([SweepPoint(1.5e9, 800, 9), SweepPoint(1.2e9, 800, 10)])
    sweep_ok = best.frequency == 1.5e9 and tie.frequency == 1.2e9
    ok = constant == 1000.0 and abs(ramp - 500.0) <= 1e-9 and plateau_ok and sweep_ok
    verdict(
        8, ok,
        f"constant={constant!r} J; ramp={ramp!r} J; window={window} oracle={oracle} (plateau 2..12, dt={dt}); "
        f"sweep optimum {best.frequency:.2e} Hz, tie -> {tie.frequency:.2e} Hz",
    )


# -- 9 ----------------------------------------------------------------------

def test_9_analysis_determinism(tmp_path, verdict):
    root = tmp_path / "store"
    root.mkdir()
    store = FilesystemStore(root)
    rng = random.Random(9)
    for i in range(20):
        bw = 1000.0 * (0.7 if i == 14 else 1.0) + rng.uniform(-5, 5)
        report = make_report(
            [make_entry(runtime=10 + rng.random(), metrics={"Copy BW  [MBytes/sec]": bw, "Triad BW [MBytes/sec]": bw * 1.1})],
            reporter=make_reporter(pipeline_id=str(1000 + i)),
            experiment=make_experiment(started_at=T0 + timedelta(days=i)),
        )
        store.put_report(f"jupiter.benchmark.stream.cuda/{1000 + i}/run.json", serialize_report(report))
    cfg = write_json(
        tmp_path / "ts.json",
        {
            "prefix": "jupiter.benchmark.stream.cuda",
            "pipeline": [],
            "data_labels": ["Copy BW  [MBytes/sec]", "Triad BW [MBytes/sec]"],
            "ylabel": ["Bandwidth / MB/s"],
            "plot_labels": ["Copy kernel", "Triad kernel"],
            "time_span": ["2026-01-01", "2026-04-01"],
        },
    )
    config = write_json(tmp_path / "exacb.json", {"metric_orientation": {"Copy BW  [MBytes/sec]": "higher", "Triad BW [MBytes/sec]": "higher"}})
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        assert main(["--config", str(config), "--store", str(root), "--out-dir", str(out), "analyze", "timeseries", str(cfg)]) == EXIT_OK
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    names = sorted(outputs[0])
    identical = outputs[0] == outputs[1]
    ok = identical and names == ["jupiter.benchmark.stream.cuda.timeseries.csv", "jupiter.benchmark.stream.cuda.timeseries.svg"]
    verdict(9, ok, f"outputs {names}; byte-identical across two runs={identical}")
