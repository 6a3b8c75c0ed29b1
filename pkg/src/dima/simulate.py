"""Scripted end-to-end simulation producing byte-stable transcripts.

A simulation script names a learner, a provider script, and a list of
actions (chat messages, exercise starts, phone/e-mail turns). Run with the
stepping clock and deterministic ids, the rendered transcript is identical
across runs and machines, which makes golden-file comparison meaningful.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import yaml

from .channels import ChannelEvent, EventKind
from .config import EngineConfig, ServiceConfig
from .engine import DeterministicIds, SessionState, SteppingClock
from .errors import ParseError
from .feedback import FeedbackReport
from .program import Channel, load_fixture_program, load_program
from .providers import ScriptedProvider, parse_script_entries
from .service import Service
from .store import MemoryStore
from .transcript import DialogTurn


def _load_script(source: str | Path | dict) -> dict:
    if isinstance(source, dict):
        return source
    try:
        raw = yaml.safe_load(Path(source).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ParseError(f"cannot read simulation script {source}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError("simulation script must be a mapping")
    return raw


class _Renderer:
    def __init__(self):
        self.lines: list[str] = []

    def line(self, text: str = "") -> None:
        self.lines.append(text)

    def turn(self, turn: DialogTurn) -> None:
        arrow = ">" if turn.speaker.value == "learner" else "<"
        self.line(f"{arrow} {turn.speaker.value}/{turn.channel.value} [{turn.seq:04d}]: {turn.text}")

    def feedback(self, report: FeedbackReport, show_scores: bool) -> None:
        self.line(f"--- feedback for run {report.run_id} ---")
        for item in report.per_criterion:
            if show_scores:
                self.line(f"* {item.criterion_id} ({item.score:.2f}): {item.assessment}")
            else:
                self.line(f"* {item.criterion_id}: {item.assessment}")
        self.line(f"summary: {report.narrative}")
        for tip in report.tips:
            self.line(f"tip: {tip}")
        if report.notice:
            self.line(f"notice: {report.notice}")

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def run_simulation(source: str | Path | dict, mailbox_dir: str | Path | None = None) -> str:
    """Drive a scripted learner end-to-end; returns the rendered transcript."""
    script = _load_script(source)
    program = (
        load_program(script["program"]) if script.get("program") else load_fixture_program()
    )
    provider_script = script.get("provider_script", [])
    if isinstance(provider_script, str):
        provider = ScriptedProvider.from_file(provider_script)
    else:
        provider = ScriptedProvider(parse_script_entries(provider_script))

    tmp = None
    if mailbox_dir is None:
        tmp = tempfile.TemporaryDirectory(prefix="dima-sim-")
        mailbox_dir = tmp.name
    try:
        service = Service(
            config=ServiceConfig(engine=EngineConfig()),
            program=program,
            provider=provider,
            store=MemoryStore(),
            clock=SteppingClock(),
            ids=DeterministicIds(),
            mailbox_dir=mailbox_dir,
        )
        learner_cfg = script.get("learner", {})
        api_session = service.create_learner(
            learner_cfg.get("name", "Learner"), learner_cfg.get("tutor_gender", "female")
        )
        engine, router = service.engine, service.router
        session_id = api_session.session_id
        session = engine.get_session(session_id)

        out = _Renderer()
        out.line(f"=== dima simulation: {script.get('title', 'untitled')} ===")
        out.line(
            f"program: {program.id} | learner: {learner_cfg.get('name', 'Learner')} "
            f"| tutor: {session.tutor_profile.name} ({session.tutor_profile.gender.value})"
        )
        out.line()

        for action in script.get("actions", []):
            if not isinstance(action, dict):
                raise ParseError(f"bad action: {action!r}")
            if "chat" in action:
                reply = engine.handle_learner_message(session_id, str(action["chat"]))
                learner_turn = session.tutor_transcript.turns[-2]
                out.turn(learner_turn)
                out.turn(reply.turn)
            elif "start_exercise" in action:
                override = Channel(action["channel"]) if action.get("channel") else None
                run, opening, _ = router.start_exercise(
                    session_id, str(action["start_exercise"]), override
                )
                out.line(
                    f"--- exercise {run.exercise_id} over {run.channel.value} "
                    f"(run {run.run_id}) ---"
                )
                out.turn(opening)
            elif "phone_audio" in action:
                outcome = router.ingest(
                    ChannelEvent(
                        channel=Channel.TELEPHONE,
                        session_id=session_id,
                        kind=EventKind.AUDIO_IN,
                        payload={
                            "audio_ref": {
                                "audio_text": str(action["phone_audio"]),
                                "confidence": float(action.get("confidence", 1.0)),
                            }
                        },
                    )
                )
                out.turn(outcome.turn)
                if outcome.reply_turn is not None:
                    out.turn(outcome.reply_turn)
                elif outcome.clarification:
                    out.line(f"< persona/telephone [----]: {outcome.reply_text}")
                run = outcome.run
                if run is not None and run.status.value == "ended":
                    out.line(f"--- run {run.run_id} ended: {run.end_reason.value} ---")
            elif "exercise_text" in action:
                reply, run = engine.exercise_turn(session_id, str(action["exercise_text"]))
                out.turn(run.transcript.learner_turns()[-1])
                if reply is not None:
                    router.deliver(session, run, reply.text)
                    out.turn(reply)
                if run.status.value == "ended":
                    out.line(f"--- run {run.run_id} ended: {run.end_reason.value} ---")
            elif "email" in action:
                payload = action["email"]
                run = session.current_run()
                outcome = router.run_email_exercise_turn(
                    session_id,
                    {
                        "thread_id": run.thread_id if run else "",
                        "subject": str(payload.get("subject", "")),
                        "body": str(payload.get("body", "")),
                    },
                )
                out.turn(outcome.turn)
                if outcome.reply_turn is not None:
                    out.turn(outcome.reply_turn)
                if outcome.run is not None and outcome.run.status.value == "ended":
                    out.line(
                        f"--- run {outcome.run.run_id} ended: {outcome.run.end_reason.value} ---"
                    )
            elif "hangup" in action:
                run = session.current_run()
                outcome = router.ingest(
                    ChannelEvent(
                        channel=run.channel if run else Channel.TELEPHONE,
                        session_id=session_id,
                        kind=EventKind.HANGUP,
                    )
                )
                out.line(f"--- run {outcome.run.run_id} ended: {outcome.run.end_reason.value} ---")
            elif "resource_view" in action:
                payload = action["resource_view"]
                engine.record_resource_view(
                    api_session.learner_id,
                    str(payload.get("unit", "")),
                    str(payload.get("resource", "")),
                )
                out.line(f"(viewed resource {payload.get('resource', '?')} in {payload.get('unit', '?')})")
            elif "end_run" in action:
                run = session.current_run()
                if session.state is SessionState.EXERCISE_ACTIVE:
                    engine.end_exercise(session_id)
                    out.line(f"--- run {run.run_id} ended: learner_ended ---")
                report = engine.generate_feedback(session_id)
                out.line()
                out.feedback(report, engine.config.show_scores)
                progress = engine.complete_unit_check(session_id)
                unit_id = run.unit_id
                unit_progress = progress.unit_progress(unit_id)
                out.line(
                    f"progress: {unit_id} {unit_progress.status.value} "
                    f"(exercises done: {unit_progress.exercises_done})"
                )
                out.line()
            else:
                raise ParseError(f"unknown simulation action: {sorted(action)!r}")

        out.line(f"=== end of simulation (state: {session.state.value}) ===")
        return out.text()
    finally:
        if tmp is not None:
            tmp.cleanup()
