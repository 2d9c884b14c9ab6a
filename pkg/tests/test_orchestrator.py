import json
import sys
import textwrap
import warnings
from dataclasses import replace

import pytest

from exacb.harness import REQUIRED_COLUMNS, HarnessKind
from exacb.orchestrator import (
    ConfigError,
    EmptyResultsWarning,
    ExecutionError,
    ExperimentSpec,
    Fixture,
    FixtureError,
    execute_plan,
    inject_feature,
    load_spec,
    plan_experiment,
    record_results,
    reporter_from_env,
    spec_from_mapping,
)
from exacb.protocol import deserialize_report
from exacb.store import FilesystemStore
from exacb.workload import iterate

from factories import make_entry, make_report, make_reporter

HEADER = ",".join(REQUIRED_COLUMNS)


@pytest.fixture(autouse=True)
def pipeline_env(monkeypatch):
    monkeypatch.setenv("EXACB_PIPELINE_ID", "221622")
    monkeypatch.setenv("EXACB_JOB_ID", "run")
    monkeypatch.delenv("EXACB_COMMIT", raising=False)


def fake_harness(tmp_path, rows, exit_code=0):
    """A stand-in harness command that writes ``rows`` to results.csv."""
    script = tmp_path / "fake_harness.py"
    body = "\\n".join([HEADER, *rows])
    script.write_text(textwrap.dedent(f"""
        import sys
        with open("results.csv", "w") as fh:
            fh.write("{body}\\n" if "{body}" != "{HEADER}" else "{HEADER}\\n")
        print("harness says hi")
        sys.exit({exit_code})
    """))
    definition = tmp_path / "bench.yml"
    definition.write_text("name: bench\n")
    return definition, f"{sys.executable} {script} {{definition}} {{tags}}"


def external_spec(definition, **kw):
    values = dict(
        prefix="jedi.evaluation.jedi",
        machine="jedi",
        usecase="evaluation",
        variant="single",
        definition_path=definition,
        harness_kind=HarnessKind.JUBE_CSV,
    )
    values.update(kw)
    return ExperimentSpec(**values)


class TestSpec:
    def test_from_mapping(self, tmp_path):
        spec = spec_from_mapping(
            {"prefix": "a.b", "machine": "jedi", "jube_file": "bench.yml", "record": "true"}, tmp_path
        )
        assert spec.definition_path == tmp_path / "bench.yml"
        assert spec.harness_kind is HarnessKind.JUBE_CSV
        assert spec.record is True

    def test_builtin_when_no_definition(self):
        assert spec_from_mapping({"prefix": "a", "machine": "m"}).harness_kind is HarnessKind.BUILTIN_LOGMAP

    @pytest.mark.parametrize(
        "doc,key",
        [
            ({"machine": "m"}, "prefix"),
            ({"prefix": "a", "machine": "m", "colour": "red"}, "colour"),
            ({"prefix": "a b", "machine": "m"}, "prefix"),
            ({"prefix": "a", "machine": "m", "record": "maybe"}, "record"),
            ({"prefix": "a", "machine": "m", "harness": "slurm"}, "harness"),
            ({"prefix": "a", "machine": 3}, "machine"),
        ],
    )
    def test_bad_specs_name_the_key(self, doc, key):
        with pytest.raises(ConfigError, match=key):
            spec_from_mapping(doc)

    def test_load_spec_unreadable(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text("{oops")
        with pytest.raises(ConfigError, match="cannot read spec"):
            load_spec(path)


class TestPlan:
    def test_job_names_without_fixture(self, tmp_path):
        definition, _ = fake_harness(tmp_path, [])
        plan = plan_experiment(external_spec(definition), tmp_path / "work")
        assert plan.job_names == ("jedi.evaluation.jedi.run", "jedi.evaluation.jedi.collect")
        assert plan.record_target is None

    def test_job_names_with_fixture(self, tmp_path):
        definition, _ = fake_harness(tmp_path, [])
        plan = plan_experiment(
            external_spec(definition, fixture="fx", record=True), tmp_path / "work", {"fx": Fixture("true", "true")}
        )
        assert [n.rsplit(".", 1)[1] for n in plan.job_names] == ["setup", "run", "collect", "teardown"]
        assert all(n.startswith("jedi.evaluation.jedi.") for n in plan.job_names)
        assert plan.record_target == "jedi.evaluation.jedi"

    def test_missing_definition(self, tmp_path):
        with pytest.raises(ConfigError, match="definition not found"):
            plan_experiment(external_spec(tmp_path / "nope.yml"), tmp_path)

    def test_unknown_fixture(self, tmp_path):
        definition, _ = fake_harness(tmp_path, [])
        with pytest.raises(ConfigError, match="fixture"):
            plan_experiment(external_spec(definition, fixture="fx"), tmp_path)

    def test_multiline_in_command(self, tmp_path):
        definition, _ = fake_harness(tmp_path, [])
        with pytest.raises(ConfigError, match="single line"):
            plan_experiment(external_spec(definition, in_command="a\nb"), tmp_path)

    def test_tags(self, tmp_path):
        definition, _ = fake_harness(tmp_path, [])
        plan = plan_experiment(external_spec(definition), tmp_path)
        assert plan.invocation.tags == ("jedi", "evaluation", "single")


class TestInjection:
    def test_only_launcher_changes(self, tmp_path):
        definition, _ = fake_harness(tmp_path, [])
        plan = plan_experiment(external_spec(definition), tmp_path)
        injected = inject_feature(plan, "export OMP_PROC_BIND=close")
        assert injected.invocation.launcher_prefix == "export OMP_PROC_BIND=close"
        assert replace(injected, invocation=replace(injected.invocation, launcher_prefix=None)) == plan
        assert plan.invocation.launcher_prefix is None

    def test_idempotent(self, tmp_path):
        definition, _ = fake_harness(tmp_path, [])
        plan = plan_experiment(external_spec(definition), tmp_path)
        once = inject_feature(plan, "module load x")
        assert inject_feature(once, "module load x") == once

    @pytest.mark.parametrize("command", ["", "  ", "a\nb"])
    def test_rejected(self, tmp_path, command):
        definition, _ = fake_harness(tmp_path, [])
        with pytest.raises(ValueError):
            inject_feature(plan_experiment(external_spec(definition), tmp_path), command)


class TestExecute:
    def test_report_from_csv(self, tmp_path):
        definition, cmd = fake_harness(
            tmp_path, ["jedi,2025,all,single,1,1,4,8,10.5,true", "jedi,2025,all,single,2,2,4,8,5.5,true"]
        )
        plan = plan_experiment(external_spec(definition, project="cexalab"), tmp_path / "work", harness_command=cmd)
        report = execute_plan(plan)
        assert [(e.nodes, e.runtime) for e in report.data] == [(1, 10.5), (2, 5.5)]
        assert report.experiment.software_version == "2025"
        assert report.experiment.variant == "single"
        assert report.reporter.commit == "unknown"
        assert dict(report.parameter) == {
            "prefix": "jedi.evaluation.jedi", "usecase": "evaluation", "project": "cexalab",
        }

    def test_record_key(self, tmp_path, fs_store):
        definition, cmd = fake_harness(tmp_path, ["jedi,2025,all,single,1,1,4,8,10.5,true"])
        plan = plan_experiment(external_spec(definition, record=True), tmp_path / "work", harness_command=cmd)
        report = execute_plan(plan, fs_store)
        assert fs_store.list_reports() == ["jedi.evaluation.jedi/221622/run.json"]
        assert deserialize_report(fs_store.get_report("jedi.evaluation.jedi/221622/run.json")) == report
        assert fs_store.get_report("jedi.evaluation.jedi/221622/run.json.raw/results.csv").startswith(b"system,")

    def test_not_recorded_without_flag(self, tmp_path, fs_store):
        definition, cmd = fake_harness(tmp_path, ["jedi,2025,all,single,1,1,4,8,10.5,true"])
        plan = plan_experiment(external_spec(definition), tmp_path / "work", harness_command=cmd)
        execute_plan(plan, fs_store)
        assert fs_store.list_reports() == []

    def test_mirrors(self, tmp_path):
        roots = [tmp_path / "a", tmp_path / "b"]
        for root in roots:
            root.mkdir()
        stores = [FilesystemStore(r) for r in roots]
        definition, cmd = fake_harness(tmp_path, ["jedi,2025,all,single,1,1,4,8,10.5,true"])
        plan = plan_experiment(external_spec(definition, record=True), tmp_path / "work", harness_command=cmd)
        execute_plan(plan, stores)
        key = "jedi.evaluation.jedi/221622/run.json"
        assert stores[0].get_report(key) == stores[1].get_report(key)

    def test_fixture_order(self, tmp_path):
        log = tmp_path / "order.log"
        definition, cmd = fake_harness(tmp_path, ["jedi,2025,all,single,1,1,4,8,10.5,true"])
        cmd = f"echo run >> {log}; {cmd}"
        fixture = Fixture(f"echo setup >> {log}", f"echo teardown >> {log}")
        plan = plan_experiment(
            external_spec(definition, fixture="fx"), tmp_path / "work", {"fx": fixture}, harness_command=cmd
        )
        execute_plan(plan)
        assert log.read_text().split() == ["setup", "run", "teardown"]

    def test_teardown_after_failed_run(self, tmp_path, fs_store):
        marker = tmp_path / "torn-down"
        definition, cmd = fake_harness(tmp_path, ["jedi,2025,all,single,1,1,4,8,1.0,false"], exit_code=4)
        plan = plan_experiment(
            external_spec(definition, fixture="fx", record=True),
            tmp_path / "work",
            {"fx": Fixture("true", f"touch {marker}")},
            harness_command=cmd,
        )
        with pytest.raises(ExecutionError) as info:
            execute_plan(plan, fs_store)
        assert marker.exists()
        assert "harness says hi" in info.value.output
        assert [e.success for e in info.value.report.data] == [False]
        # the partial result is still recorded
        assert fs_store.list_reports() == ["jedi.evaluation.jedi/221622/run.json"]

    def test_teardown_after_failed_setup(self, tmp_path):
        marker = tmp_path / "torn-down"
        definition, cmd = fake_harness(tmp_path, [])
        plan = plan_experiment(
            external_spec(definition, fixture="fx"),
            tmp_path / "work",
            {"fx": Fixture("exit 2", f"touch {marker}")},
            harness_command=cmd,
        )
        with pytest.raises(FixtureError, match="setup"):
            execute_plan(plan)
        assert marker.exists()

    def test_empty_results_warn(self, tmp_path):
        definition, cmd = fake_harness(tmp_path, [])
        plan = plan_experiment(external_spec(definition), tmp_path / "work", harness_command=cmd)
        with pytest.warns(EmptyResultsWarning):
            report = execute_plan(plan)
        assert report.data == ()

    def test_injected_command_reaches_benchmark(self, tmp_path):
        script = tmp_path / "h.py"
        script.write_text(textwrap.dedent(f"""
            import os
            with open("results.csv", "w") as fh:
                fh.write("{HEADER},bind\\n")
                fh.write("jedi,1,all,single,1,1,1,1,1.0,true," + os.environ.get("OMP_PROC_BIND", "unset") + "\\n")
        """))
        definition = tmp_path / "bench.yml"
        definition.write_text("x")
        cmd = f"{sys.executable} {script} {{definition}} {{tags}}"
        base = plan_experiment(external_spec(definition), tmp_path / "w1", harness_command=cmd)
        plain = execute_plan(base)
        injected = execute_plan(
            inject_feature(replace(base, invocation=replace(base.invocation, working_dir=tmp_path / "w2")),
                           "export OMP_PROC_BIND=close")
        )
        assert plain.data[0].metrics["bind"] == "unset"
        assert injected.data[0].metrics["bind"] == "close"
        assert definition.read_text() == "x"

    def test_builtin_end_to_end(self, tmp_path, fs_store):
        spec = spec_from_mapping({"prefix": "local.tiny", "machine": "local", "variant": "tiny", "record": True})
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            report = execute_plan(plan_experiment(spec, tmp_path / "work"), fs_store)
        (entry,) = report.data
        assert entry.success
        assert entry.metrics["checksum"] == pytest.approx(iterate(0.5, 2.4, 10), abs=1e-12)
        assert fs_store.list_reports("local.tiny/") == ["local.tiny/221622/run.json"]


def test_reporter_from_env_defaults():
    reporter = reporter_from_env("jedi", "", env={})
    assert reporter.pipeline_id == "local"
    assert reporter.commit == "unknown"
    assert reporter.job_id.isdigit()


def test_reporter_from_env_values():
    env = {"EXACB_PIPELINE_ID": "7", "EXACB_JOB_ID": "j", "EXACB_COMMIT": "abcdef12", "EXACB_USER": "ci"}
    reporter = reporter_from_env("jedi", "1", env=env)
    assert (reporter.pipeline_id, reporter.job_id, reporter.commit, reporter.user) == ("7", "j", "abcdef12", "ci")


def test_record_results_key(fs_store):
    report = make_report([make_entry()], reporter=make_reporter(pipeline_id="42", job_id="bench"))
    assert record_results(report, "t", fs_store) == "t/42/bench.json"
    assert json.loads(fs_store.get_report("t/42/bench.json"))["reporter"]["pipeline_id"] == "42"
