"""Operator command line: serve, validate, simulate, report, replay, export."""

from __future__ import annotations

import json
import sys
import warnings
from pathlib import Path

import click

from .config import ServiceConfig, load_config
from .errors import DimaError, NotFound, ParseError, ValidationError
from .metrics import MethodEvent, build_sdt_report, infer_session_facts, render_coverage_table
from .program import ProgramWarning, load_fixture_program, load_program
from .simulate import run_simulation
from .store import FileStore, RecordKind


def _fail(error: Exception, code: int = 1) -> None:
    payload = {"error": type(error).__name__, "detail": str(error)}
    if isinstance(error, ValidationError):
        payload["violations"] = error.violations
    click.echo(json.dumps(payload), err=True)
    sys.exit(code)


@click.group()
def main():
    """Communication-training engine."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config_path, host, port):
    """Run the HTTP service."""
    import uvicorn

    from .api import create_app
    from .service import Service

    try:
        config = load_config(config_path) if config_path else ServiceConfig()
        service = Service(config=config)
    except DimaError as exc:
        _fail(exc)
        return
    app = create_app(service)
    uvicorn.run(app, host=host or config.host, port=port or config.port)


@main.command()
@click.argument("program_file", type=click.Path(exists=True))
def validate(program_file):
    """Validate a program document; exit 0 when it passes."""
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ProgramWarning)
            program = load_program(program_file)
    except ValidationError as exc:
        for violation in exc.violations:
            click.echo(f"violation: {violation}")
        _fail(exc)
        return
    except (ParseError, DimaError) as exc:
        _fail(exc)
        return
    for warning in caught:
        click.echo(f"warning: {warning.message}")
    click.echo(
        f"ok: {program.id} ({len(program.units)} units, "
        f"{len(program.exercises)} exercises, {len(program.rubrics)} rubrics)"
    )


@main.command()
@click.argument("script", type=click.Path(exists=True))
def simulate(script):
    """Drive a scripted learner end-to-end and print the transcript."""
    try:
        text = run_simulation(script)
    except DimaError as exc:
        _fail(exc)
        return
    click.echo(text, nl=False)


@main.command()
@click.argument("learner_id")
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--program", "program_path", type=click.Path(exists=True), default=None)
def report(learner_id, store_path, program_path):
    """Render a learner's didactics coverage table."""
    try:
        program = load_program(program_path) if program_path else load_fixture_program()
        store = FileStore(store_path)
        try:
            payloads = store.read_log(RecordKind.METHOD_EVENT, learner_id)
        except NotFound:
            payloads = []
        events = [MethodEvent.from_dict(p) for p in payloads]
        facts = infer_session_facts(events, [u.id for u in program.units])
        sdt = build_sdt_report(events, facts, learner_id=learner_id)
    except DimaError as exc:
        _fail(exc)
        return
    click.echo(render_coverage_table(sdt))


@main.command()
@click.argument("run_id")
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
def replay(run_id, store_path):
    """Re-render a stored exercise transcript."""
    try:
        store = FileStore(store_path)
        turns = store.read_log(RecordKind.TRANSCRIPT, f"run:{run_id}")
    except DimaError as exc:
        _fail(exc)
        return
    click.echo(f"--- transcript of run {run_id} ---")
    for raw in turns:
        marker = ">" if raw["speaker"] == "learner" else "<"
        click.echo(f"{marker} {raw['speaker']}/{raw['channel']} [{raw['seq']:04d}]: {raw['text']}")


@main.command()
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
def export(store_path):
    """Dump the raw record journal (one JSON record per line)."""
    try:
        store = FileStore(store_path)
        click.echo(store.export_records(), nl=False)
    except DimaError as exc:
        _fail(exc)


@main.command("import-records")
@click.argument("records_file", type=click.Path(exists=True))
@click.option("--store", "store_path", type=click.Path(), required=True)
def import_records(records_file, store_path):
    """Create a store from a previously exported journal."""
    try:
        text = Path(records_file).read_text(encoding="utf-8")
        store = FileStore.import_records(text, store_path)
    except DimaError as exc:
        _fail(exc)
        return
    kinds = {k.value: len(store.list_kind(k)) for k in RecordKind}
    click.echo(json.dumps({"imported": kinds}))


if __name__ == "__main__":
    main()
