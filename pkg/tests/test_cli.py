"""Operator CLI: validate, simulate, report, replay, export/import."""

import json
from importlib import resources
from pathlib import Path

import pytest
from click.testing import CliRunner

from conftest import make_engine
from dima.cli import main
from dima.program import fixture_program_path
from dima.store import FileStore

GOLDEN = Path(__file__).parent / "golden" / "unit5_phone_practice.txt"
DATA = Path(__file__).parent / "data" / "programs"


@pytest.fixture
def runner():
    return CliRunner()


def sim_script_path() -> str:
    return str(resources.files("dima").joinpath("data/simulations/unit5_phone_practice.yaml"))


class TestValidate:
    def test_fixture_program_passes(self, runner):
        result = runner.invoke(main, ["validate", str(fixture_program_path())])
        assert result.exit_code == 0
        assert "ok: comm-training" in result.output

    def test_zero_unit_program_fails_with_named_violation(self, runner):
        result = runner.invoke(main, ["validate", str(DATA / "zero_units.yaml")])
        assert result.exit_code == 1
        assert "at least one unit" in result.output

    def test_machine_readable_error_on_stderr(self, runner):
        result = runner.invoke(
            main, ["validate", str(DATA / "zero_units.yaml")], catch_exceptions=False
        )
        # last line is the JSON error document
        payload = json.loads(result.output.strip().splitlines()[-1])
        assert payload["error"] == "ValidationError"
        assert any("at least one unit" in v for v in payload["violations"])


class TestSimulate:
    def test_golden_transcript_is_byte_identical(self, runner):
        result = runner.invoke(main, ["simulate", sim_script_path()])
        assert result.exit_code == 0
        assert result.output == GOLDEN.read_text(encoding="utf-8")

    def test_simulation_is_fast_enough(self, runner):
        import time

        start = time.perf_counter()
        result = runner.invoke(main, ["simulate", sim_script_path()])
        elapsed = time.perf_counter() - start
        assert result.exit_code == 0
        assert elapsed < 5.0


@pytest.fixture
def populated_store(program, tmp_path):
    store_path = tmp_path / "store.jsonl"
    engine = make_engine(program, store=FileStore(store_path))
    session = engine.create_session("learner-0001")
    engine.handle_learner_message(session.session_id, "How do I greet a caller?")
    run, _ = engine.start_exercise(session.session_id, "ex-greeting-call")
    engine.exercise_turn(session.session_id, "Good morning, city services.")
    engine.end_exercise(session.session_id)
    engine.generate_feedback(session.session_id)
    engine.complete_unit_check(session.session_id)
    engine.store.close()
    return store_path, run.run_id


class TestReport:
    def test_coverage_table_renders(self, runner, populated_store):
        store_path, _ = populated_store
        result = runner.invoke(main, ["report", "learner-0001", "--store", str(store_path)])
        assert result.exit_code == 0
        assert "inquisitory" in result.output
        assert "autonomy" in result.output
        assert "yes" in result.output


class TestReplay:
    def test_stored_transcript_rerenders(self, runner, populated_store):
        store_path, run_id = populated_store
        result = runner.invoke(main, ["replay", run_id, "--store", str(store_path)])
        assert result.exit_code == 0
        assert "persona/telephone" in result.output
        assert "Good morning, city services." in result.output

    def test_unknown_run_fails(self, runner, populated_store):
        store_path, _ = populated_store
        result = runner.invoke(main, ["replay", "run-9999", "--store", str(store_path)])
        assert result.exit_code == 1


class TestExportImport:
    def test_round_trip(self, runner, populated_store, tmp_path):
        store_path, _ = populated_store
        exported = runner.invoke(main, ["export", "--store", str(store_path)])
        assert exported.exit_code == 0

        dump = tmp_path / "dump.jsonl"
        dump.write_text(exported.output, encoding="utf-8")
        imported = runner.invoke(
            main, ["import-records", str(dump), "--store", str(tmp_path / "copy.jsonl")]
        )
        assert imported.exit_code == 0
        counts = json.loads(imported.output)["imported"]
        assert counts["session"] >= 1
        assert counts["transcript"] >= 3
