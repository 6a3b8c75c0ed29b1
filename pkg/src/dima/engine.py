"""Per-learner session state machine.

Sessions move through a closed set of states: tutor dialog, exercise setup
and execution, feedback, unit completion. Every event outside the allowed
edges raises InvalidState and leaves the session untouched. All events for
one session are serialized behind a per-session lock; distinct sessions
proceed in parallel.
"""

from __future__ import annotations

import itertools
import logging
import re
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from .config import EngineConfig
from .errors import (
    ChannelUnavailable,
    InvalidState,
    NotFound,
    PlanExecutionError,
    ProviderError,
    UnknownExercise,
    UnknownRun,
    UnknownSession,
    UnknownUnit,
)
from .feedback import (
    FeedbackReport,
    build_feedback_plan,
    compose_report,
    render_feedback_message,
)
from .metrics import (
    MethodEvent,
    SdtReport,
    SourceEvent,
    SourceKind,
    build_sdt_report,
    classify,
    default_mapping_table,
    infer_session_facts,
    MappingTable,
)
from .program import Channel, ExerciseSpec, TrainingProgram
from .progress import ProgressRecord, new_progress, record_completion
from .prompts import (
    AgentRole,
    PromptContext,
    TutorProfile,
    Gender,
    assemble_prompt,
    build_vocabulary,
    check_confinement,
    render_template,
)
from .providers import GenerationProvider, GenerationRequest, _generate_with_retry, execute_plan
from .store import MemoryStore, RecordKind
from .transcript import DialogTurn, Speaker, Transcript

logger = logging.getLogger(__name__)

GOAL_MARKER = "<<dima:goal-reached>>"


class SessionState(str, Enum):
    IDLE = "idle"
    TUTOR_DIALOG = "tutor_dialog"
    EXERCISE_SETUP = "exercise_setup"
    EXERCISE_ACTIVE = "exercise_active"
    AWAITING_FEEDBACK = "awaiting_feedback"
    FEEDBACK_DELIVERED = "feedback_delivered"


class RunStatus(str, Enum):
    RUNNING = "running"
    ENDED = "ended"


class EndReason(str, Enum):
    LEARNER_ENDED = "learner_ended"
    MAX_TURNS = "max_turns"
    GOAL_REACHED = "goal_reached"
    CHANNEL_ERROR = "channel_error"


@dataclass
class ExerciseRun:
    run_id: str
    exercise_id: str
    unit_id: str
    channel: Channel
    transcript: Transcript = field(default_factory=Transcript)
    status: RunStatus = RunStatus.RUNNING
    end_reason: EndReason | None = None
    thread_id: str = ""
    call_id: str = ""

    @property
    def turn_count(self) -> int:
        return len(self.transcript)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "exercise_id": self.exercise_id,
            "unit_id": self.unit_id,
            "channel": self.channel.value,
            "status": self.status.value,
            "end_reason": self.end_reason.value if self.end_reason else None,
            "thread_id": self.thread_id,
            "call_id": self.call_id,
        }

    @classmethod
    def from_dict(cls, payload: dict, transcript: Transcript) -> "ExerciseRun":
        return cls(
            run_id=payload["run_id"],
            exercise_id=payload["exercise_id"],
            unit_id=payload["unit_id"],
            channel=Channel(payload["channel"]),
            transcript=transcript,
            status=RunStatus(payload["status"]),
            end_reason=EndReason(payload["end_reason"]) if payload.get("end_reason") else None,
            thread_id=payload.get("thread_id", ""),
            call_id=payload.get("call_id", ""),
        )


@dataclass
class LearnerSession:
    session_id: str
    learner_id: str
    program_id: str
    tutor_profile: TutorProfile = field(default_factory=TutorProfile)
    state: SessionState = SessionState.IDLE
    active_unit: str | None = None
    active_exercise: ExerciseRun | None = None
    pending_run: ExerciseRun | None = None
    progress: ProgressRecord | None = None
    tutor_transcript: Transcript = field(default_factory=Transcript)
    last_activity: float = 0.0
    state_trace: list[str] = field(default_factory=list)
    counted_runs: set[str] = field(default_factory=set)
    run_ids: list[str] = field(default_factory=list)

    def current_run(self) -> ExerciseRun | None:
        return self.active_exercise or self.pending_run

    def to_dict(self) -> dict:
        runs = {}
        for run in (self.active_exercise, self.pending_run):
            if run is not None:
                runs[run.run_id] = run.to_dict()
        return {
            "session_id": self.session_id,
            "learner_id": self.learner_id,
            "program_id": self.program_id,
            "tutor_profile": {
                "name": self.tutor_profile.name,
                "gender": self.tutor_profile.gender.value,
                "register": self.tutor_profile.register,
            },
            "state": self.state.value,
            "active_unit": self.active_unit,
            "active_run_id": self.active_exercise.run_id if self.active_exercise else None,
            "pending_run_id": self.pending_run.run_id if self.pending_run else None,
            "runs": runs,
            "last_activity": self.last_activity,
            "state_trace": list(self.state_trace),
            "counted_runs": sorted(self.counted_runs),
            "run_ids": list(self.run_ids),
        }


@dataclass(frozen=True)
class ExerciseOffer:
    unit_id: str | None
    exercise_ids: tuple[str, ...]


@dataclass(frozen=True)
class TutorReply:
    text: str
    turn: DialogTurn
    state: SessionState
    redirected: bool = False
    offer: ExerciseOffer | None = None


# ---------------------------------------------------------------------------
# Determinism helpers
# ---------------------------------------------------------------------------


class SteppingClock:
    """Deterministic clock: each reading advances by a fixed step."""

    def __init__(self, start: float = 1_700_000_000.0, step: float = 1.0):
        self._value = start
        self._step = step

    def __call__(self) -> float:
        value = self._value
        self._value += self._step
        return value


class DeterministicIds:
    """Stable ``prefix-0001`` style identifiers for golden transcripts."""

    def __init__(self):
        self._counters: dict[str, itertools.count] = {}

    def __call__(self, prefix: str) -> str:
        counter = self._counters.setdefault(prefix, itertools.count(1))
        return f"{prefix}-{next(counter):04d}"


def random_ids(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4().hex[:12]}"


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


class DialogEngine:
    """Owns sessions, routes events through roles, providers and feedback."""

    def __init__(
        self,
        program: TrainingProgram,
        provider: GenerationProvider,
        store: MemoryStore | None = None,
        config: EngineConfig | None = None,
        clock: Callable[[], float] = time.time,
        ids: Callable[[str], str] = random_ids,
        channel_opener: Callable[[LearnerSession, ExerciseRun], None] | None = None,
        mapping_table: MappingTable | None = None,
    ):
        self.program = program
        self.provider = provider
        self.store = store if store is not None else MemoryStore()
        self.config = config or EngineConfig()
        self.clock = clock
        self.ids = ids
        self.channel_opener = channel_opener
        self.mapping_table = mapping_table or default_mapping_table()
        self._sessions: dict[str, LearnerSession] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._registry_lock = threading.Lock()
        self._vocabulary = build_vocabulary(PromptContext(program))

    # -- session registry ------------------------------------------------------

    def _lock_for(self, session_id: str) -> threading.RLock:
        with self._registry_lock:
            return self._locks.setdefault(session_id, threading.RLock())

    def create_session(
        self, learner_id: str, tutor_profile: TutorProfile | None = None
    ) -> LearnerSession:
        session = LearnerSession(
            session_id=self.ids("session"),
            learner_id=learner_id,
            program_id=self.program.id,
            tutor_profile=tutor_profile or TutorProfile(),
            progress=self._load_progress(learner_id),
            last_activity=self.clock(),
        )
        session.state_trace.append(session.state.value)
        with self._registry_lock:
            self._sessions[session.session_id] = session
        self._persist_session(session)
        return session

    def get_session(self, session_id: str) -> LearnerSession:
        with self._registry_lock:
            session = self._sessions.get(session_id)
        if session is not None:
            return session
        session = self._hydrate_session(session_id)
        with self._registry_lock:
            self._sessions.setdefault(session_id, session)
            return self._sessions[session_id]

    def find_session_by_run(self, run_id: str) -> LearnerSession:
        with self._registry_lock:
            for session in self._sessions.values():
                if run_id in session.run_ids:
                    return session
        for record in self.store.list_kind(RecordKind.SESSION):
            if run_id in record.payload.get("run_ids", []):
                return self.get_session(record.payload["session_id"])
        raise UnknownRun(f"no session owns run {run_id!r}")

    def find_session_by_thread(self, thread_id: str) -> LearnerSession:
        with self._registry_lock:
            for session in self._sessions.values():
                run = session.current_run()
                if run is not None and run.thread_id == thread_id:
                    return session
        for record in self.store.list_kind(RecordKind.SESSION):
            for run_payload in record.payload.get("runs", {}).values():
                if run_payload.get("thread_id") == thread_id:
                    return self.get_session(record.payload["session_id"])
        raise UnknownSession(f"no session owns thread {thread_id!r}")

    def _hydrate_session(self, session_id: str) -> LearnerSession:
        try:
            payload = self.store.get(RecordKind.SESSION, session_id)
        except NotFound as exc:
            raise UnknownSession(f"unknown session {session_id!r}") from exc
        profile_raw = payload.get("tutor_profile", {})
        session = LearnerSession(
            session_id=payload["session_id"],
            learner_id=payload["learner_id"],
            program_id=payload["program_id"],
            tutor_profile=TutorProfile(
                name=profile_raw.get("name", "DIMA"),
                gender=Gender(profile_raw.get("gender", "female")),
                register=profile_raw.get("register", "informal"),
            ),
            state=SessionState(payload["state"]),
            active_unit=payload.get("active_unit"),
            progress=self._load_progress(payload["learner_id"]),
            tutor_transcript=self._load_transcript(f"tutor:{session_id}"),
            last_activity=float(payload.get("last_activity", 0.0)),
            state_trace=list(payload.get("state_trace", [])),
            counted_runs=set(payload.get("counted_runs", [])),
            run_ids=list(payload.get("run_ids", [])),
        )
        runs = payload.get("runs", {})
        for field_name, run_id in (
            ("active_exercise", payload.get("active_run_id")),
            ("pending_run", payload.get("pending_run_id")),
        ):
            if run_id and run_id in runs:
                run = ExerciseRun.from_dict(
                    runs[run_id], self._load_transcript(f"run:{run_id}")
                )
                setattr(session, field_name, run)
        return session

    def _load_transcript(self, key: str) -> Transcript:
        try:
            return Transcript.from_dicts(self.store.read_log(RecordKind.TRANSCRIPT, key))
        except NotFound:
            return Transcript()

    def _load_progress(self, learner_id: str) -> ProgressRecord:
        try:
            return ProgressRecord.from_dict(self.store.get(RecordKind.PROGRESS, learner_id))
        except NotFound:
            return new_progress(learner_id, self.program)

    # -- persistence -------------------------------------------------------------

    def _persist_session(self, session: LearnerSession) -> None:
        self.store.put(
            RecordKind.SESSION, session.session_id, session.to_dict(), session.learner_id
        )

    def _persist_progress(self, session: LearnerSession) -> None:
        self.store.put(
            RecordKind.PROGRESS,
            session.learner_id,
            session.progress.to_dict(),
            session.learner_id,
        )

    def _append_turn(
        self,
        session: LearnerSession,
        transcript: Transcript,
        key: str,
        speaker: Speaker,
        channel: Channel,
        text: str,
        meta: dict[str, Any] | None = None,
    ) -> DialogTurn:
        turn = transcript.append(speaker, channel, text, self.clock(), meta)
        self.store.append(RecordKind.TRANSCRIPT, key, turn.to_dict(), session.learner_id)
        return turn

    def _emit(self, session: LearnerSession, kind: SourceKind, unit_id: str = "", exercise: ExerciseSpec | None = None) -> None:
        event = classify(
            SourceEvent(
                kind=kind,
                learner_id=session.learner_id,
                unit_id=unit_id or (session.active_unit or ""),
                timestamp=self.clock(),
                exercise_method=exercise.method if exercise else None,
            )
        )
        self.store.append(
            RecordKind.METHOD_EVENT, session.learner_id, event.to_dict(), session.learner_id
        )

    # -- state machine plumbing ---------------------------------------------------

    def _transition(self, session: LearnerSession, state: SessionState) -> None:
        session.state = state
        session.state_trace.append(state.value)

    def _guard(self, session: LearnerSession, event: str, *allowed: SessionState) -> None:
        if session.state not in allowed:
            raise InvalidState(event, session.state.value)

    def _expire_if_idle(self, session: LearnerSession) -> None:
        timeout_s = self.config.session_timeout_minutes * 60.0
        if (
            session.state is SessionState.EXERCISE_ACTIVE
            and session.last_activity > 0
            and self.clock() - session.last_activity > timeout_s
        ):
            logger.info("session %s timed out; ending active run", session.session_id)
            self._end_run(session, EndReason.CHANNEL_ERROR)

    def _touch(self, session: LearnerSession) -> None:
        session.last_activity = self.clock()

    # -- tutor dialog ---------------------------------------------------------------

    def _context(self, session: LearnerSession) -> PromptContext:
        return PromptContext(program=self.program, unit_id=session.active_unit)

    def _detect_unit(self, session: LearnerSession, text: str) -> None:
        lowered = text.lower()
        match = re.search(r"unit\s+(\d+)", lowered)
        if match:
            index = int(match.group(1)) - 1
            if 0 <= index < len(self.program.units):
                session.active_unit = self.program.units[index].id
                return
        for unit in self.program.units:
            if unit.id.lower() in lowered:
                session.active_unit = unit.id
                return

    def _detect_exercise_intent(self, text: str) -> bool:
        lowered = text.lower()
        return any(phrase in lowered for phrase in self.config.exercise_intents)

    def _build_offer(self, session: LearnerSession) -> tuple[str, ExerciseOffer]:
        unit = self.program.unit(session.active_unit) if session.active_unit else None
        if unit is not None and unit.exercises:
            exercise_ids = unit.exercises
            unit_title = unit.title
        else:
            exercise_ids = tuple(
                eid for u in self.program.units for eid in u.exercises
            )
            unit_title = self.program.title
        lines = []
        for eid in exercise_ids:
            spec = self.program.exercise(eid)
            lines.append(f"- {eid}: a {spec.method.value} exercise over {spec.channel.value}")
        text = render_template(
            "exercise_offer",
            {"unit_title": unit_title, "exercise_lines": "\n".join(lines)},
        )
        offer = ExerciseOffer(
            unit_id=unit.id if unit is not None else None, exercise_ids=tuple(exercise_ids)
        )
        return text, offer

    def handle_learner_message(
        self, session_id: str, text: str, channel: Channel = Channel.CHAT
    ) -> TutorReply:
        """Tutor Q&A path: confinement gate, prompt assembly, provider call.

        Recognized exercise-start intents return an offer instead of a
        free-form reply; provider failures degrade to an apologetic tutor
        line rather than surfacing raw errors.
        """
        with self._lock_for(session_id):
            session = self.get_session(session_id)
            self._expire_if_idle(session)
            self._guard(
                session, "learner_message", SessionState.IDLE, SessionState.TUTOR_DIALOG
            )
            if session.state is not SessionState.TUTOR_DIALOG:
                self._transition(session, SessionState.TUTOR_DIALOG)
            self._touch(session)
            key = f"tutor:{session.session_id}"
            prior_learner_turns = len(session.tutor_transcript.learner_turns())
            self._append_turn(
                session, session.tutor_transcript, key, Speaker.LEARNER, channel, text
            )
            self._detect_unit(session, text)

            verdict = check_confinement(text, self._context(session), self._vocabulary)
            if not verdict.in_scope:
                turn = self._append_turn(
                    session,
                    session.tutor_transcript,
                    key,
                    Speaker.AGENT_TUTOR,
                    channel,
                    verdict.redirect_text,
                    {"bundle_role": "tutor", "redirect": True},
                )
                self._persist_session(session)
                return TutorReply(
                    text=verdict.redirect_text, turn=turn, state=session.state, redirected=True
                )

            if self._detect_exercise_intent(text):
                offer_text, offer = self._build_offer(session)
                turn = self._append_turn(
                    session,
                    session.tutor_transcript,
                    key,
                    Speaker.AGENT_TUTOR,
                    channel,
                    offer_text,
                    {"bundle_role": "tutor", "offer": True},
                )
                self._persist_session(session)
                return TutorReply(text=offer_text, turn=turn, state=session.state, offer=offer)

            bundle = assemble_prompt(
                AgentRole.tutor(),
                session.tutor_profile,
                session.tutor_transcript.turns,
                self._context(session),
                self.config.window_size,
            )
            request = GenerationRequest(
                bundle=bundle,
                max_output_tokens=self.config.max_output_tokens,
                temperature=self.config.feedback_temperature,
                request_id=self.ids("req"),
                meta={
                    "purpose": "tutor",
                    "turn": prior_learner_turns,
                    "user_text": text,
                    "unit": session.active_unit or "",
                },
            )
            meta: dict[str, Any] = {"bundle_role": "tutor"}
            try:
                result = _generate_with_retry(self.provider, request)
                reply_text = result.text
                meta["provider_tag"] = result.provider_tag
                meta["latency_ms"] = result.latency_ms
            except ProviderError as exc:
                logger.warning("tutor generation failed: %s", exc)
                reply_text = render_template("tutor_fallback")
                meta["fallback"] = True
            turn = self._append_turn(
                session,
                session.tutor_transcript,
                key,
                Speaker.AGENT_TUTOR,
                channel,
                reply_text,
                meta,
            )
            if "fallback" not in meta:
                self._emit(session, SourceKind.TUTOR_QA)
            self._persist_session(session)
            return TutorReply(text=reply_text, turn=turn, state=session.state)

    # -- exercises ---------------------------------------------------------------

    def _resolve_exercise_unit(self, session: LearnerSession, exercise_id: str) -> str:
        spec = self.program.exercise(exercise_id)
        if spec is None:
            raise UnknownExercise(f"unknown exercise {exercise_id!r}")
        owners = self.program.units_for_exercise(exercise_id)
        if session.active_unit and any(u.id == session.active_unit for u in owners):
            return session.active_unit
        if len(owners) == 1:
            return owners[0].id
        if not owners:
            raise UnknownExercise(f"exercise {exercise_id!r} is not part of any unit")
        raise UnknownExercise(
            f"exercise {exercise_id!r} appears in several units; ask about the unit first"
        )

    def start_exercise(
        self,
        session_id: str,
        exercise_id: str,
        channel_override: Channel | None = None,
    ) -> tuple[ExerciseRun, DialogTurn]:
        with self._lock_for(session_id):
            session = self.get_session(session_id)
            self._expire_if_idle(session)
            self._guard(
                session, "start_exercise", SessionState.IDLE, SessionState.TUTOR_DIALOG
            )
            unit_id = self._resolve_exercise_unit(session, exercise_id)
            spec = self.program.exercise(exercise_id)
            self._transition(session, SessionState.EXERCISE_SETUP)
            channel = channel_override or spec.channel
            run_id = self.ids("run")
            run = ExerciseRun(
                run_id=run_id,
                exercise_id=exercise_id,
                unit_id=unit_id,
                channel=channel,
                thread_id=f"thr-{run_id}" if channel is Channel.EMAIL else "",
                call_id=self.ids("call") if channel is Channel.TELEPHONE else "",
            )
            if self.channel_opener is not None:
                try:
                    self.channel_opener(session, run)
                except ChannelUnavailable:
                    # setup failed; session settles back into tutor dialog
                    self._transition(session, SessionState.TUTOR_DIALOG)
                    self._persist_session(session)
                    raise
            session.active_exercise = run
            session.active_unit = unit_id
            session.run_ids.append(run_id)
            self._transition(session, SessionState.EXERCISE_ACTIVE)
            self._touch(session)
            opening = self._append_turn(
                session,
                run.transcript,
                f"run:{run_id}",
                Speaker.AGENT_PERSONA,
                channel,
                spec.scenario.opening_line,
                {"bundle_role": "sparring", "opening": True},
            )
            self._persist_session(session)
            return run, opening

    def _end_run(self, session: LearnerSession, reason: EndReason) -> ExerciseRun:
        run = session.active_exercise
        assert run is not None
        run.status = RunStatus.ENDED
        run.end_reason = reason
        session.active_exercise = None
        session.pending_run = run
        self._transition(session, SessionState.AWAITING_FEEDBACK)
        spec = self.program.exercise(run.exercise_id)
        self._emit(session, SourceKind.EXERCISE_RUN, run.unit_id, spec)
        self._persist_session(session)
        return run

    def _ends_with_phrase(self, text: str) -> bool:
        lowered = text.lower()
        return any(phrase in lowered for phrase in self.config.end_phrases)

    def exercise_turn(
        self,
        session_id: str,
        text: str,
        turn_meta: dict[str, Any] | None = None,
    ) -> tuple[DialogTurn | None, ExerciseRun]:
        """One learner/persona exchange inside the active exercise.

        The run ends on a learner end-phrase, on the scripted goal-reached
        signal, or when the transcript reaches twice the exercise's turn
        budget; the session then awaits feedback.
        """
        with self._lock_for(session_id):
            session = self.get_session(session_id)
            self._expire_if_idle(session)
            self._guard(session, "exercise_turn", SessionState.EXERCISE_ACTIVE)
            run = session.active_exercise
            assert run is not None
            spec = self.program.exercise(run.exercise_id)
            self._touch(session)
            key = f"run:{run.run_id}"
            learner_turns_before = len(run.transcript.learner_turns())
            self._append_turn(
                session, run.transcript, key, Speaker.LEARNER, run.channel, text, turn_meta
            )
            if self._ends_with_phrase(text):
                run = self._end_run(session, EndReason.LEARNER_ENDED)
                return None, run
            if run.turn_count >= 2 * spec.max_turns:
                run = self._end_run(session, EndReason.MAX_TURNS)
                return None, run

            bundle = assemble_prompt(
                AgentRole.sparring(spec.scenario),
                session.tutor_profile,
                run.transcript.turns,
                self._context(session),
                self.config.window_size,
            )
            request = GenerationRequest(
                bundle=bundle,
                max_output_tokens=self.config.max_output_tokens,
                temperature=self.config.persona_temperature,
                request_id=self.ids("req"),
                meta={
                    "purpose": "persona",
                    "exercise": run.exercise_id,
                    "turn": learner_turns_before,
                    "user_text": text,
                },
            )
            meta: dict[str, Any] = {"bundle_role": "sparring"}
            goal_reached = False
            try:
                result = _generate_with_retry(self.provider, request)
                reply_text = result.text
                meta["provider_tag"] = result.provider_tag
                meta["latency_ms"] = result.latency_ms
                if GOAL_MARKER in reply_text:
                    goal_reached = True
                    reply_text = reply_text.replace(GOAL_MARKER, "").strip()
            except ProviderError as exc:
                logger.warning("persona generation failed: %s", exc)
                reply_text = render_template("holding_line")
                meta["fallback"] = True
            reply = self._append_turn(
                session, run.transcript, key, Speaker.AGENT_PERSONA, run.channel, reply_text, meta
            )
            if goal_reached:
                run = self._end_run(session, EndReason.GOAL_REACHED)
            elif run.turn_count >= 2 * spec.max_turns:
                run = self._end_run(session, EndReason.MAX_TURNS)
            else:
                self._persist_session(session)
            return reply, run

    def record_flagged_turn(
        self, session_id: str, text: str, channel: Channel, meta: dict[str, Any]
    ) -> DialogTurn:
        """Persist a learner turn that will not get a generated reply
        (low-confidence transcription); the channel answers with a
        clarification request instead."""
        with self._lock_for(session_id):
            session = self.get_session(session_id)
            self._guard(session, "flagged_turn", SessionState.EXERCISE_ACTIVE)
            run = session.active_exercise
            assert run is not None
            self._touch(session)
            turn = self._append_turn(
                session, run.transcript, f"run:{run.run_id}", Speaker.LEARNER, channel, text, meta
            )
            spec = self.program.exercise(run.exercise_id)
            if run.turn_count >= 2 * spec.max_turns:
                self._end_run(session, EndReason.MAX_TURNS)
            else:
                self._persist_session(session)
            return turn

    def end_exercise(
        self, session_id: str, reason: EndReason = EndReason.LEARNER_ENDED
    ) -> ExerciseRun:
        with self._lock_for(session_id):
            session = self.get_session(session_id)
            self._guard(session, "end_exercise", SessionState.EXERCISE_ACTIVE)
            self._touch(session)
            return self._end_run(session, reason)

    def record_event_marker(
        self, session_id: str, event: str, channel: Channel
    ) -> DialogTurn:
        """Persist a non-verbal channel event (hangup, delivery failure) as an
        explicit silence-marker turn on the active run."""
        with self._lock_for(session_id):
            session = self.get_session(session_id)
            self._guard(session, event, SessionState.EXERCISE_ACTIVE)
            run = session.active_exercise
            assert run is not None
            return self._append_turn(
                session,
                run.transcript,
                f"run:{run.run_id}",
                Speaker.LEARNER,
                channel,
                "",
                {"event": event},
            )

    # -- feedback -----------------------------------------------------------------

    def generate_feedback(self, session_id: str) -> FeedbackReport:
        """Assess the ended run criterion by criterion, then synthesize.

        Criterion calls run as one concurrent group; the narrative call runs
        after them and receives their outputs. A member failure after retry
        degrades to a partial report instead of failing the session.
        """
        with self._lock_for(session_id):
            session = self.get_session(session_id)
            self._guard(session, "generate_feedback", SessionState.AWAITING_FEEDBACK)
            run = session.pending_run
            assert run is not None and run.status is RunStatus.ENDED
            self._touch(session)
            rubric = self.program.rubric_for(run.exercise_id)
            plan = build_feedback_plan(
                session.tutor_profile,
                rubric,
                run.transcript.turns,
                self._context(session),
                self.config,
                run.exercise_id,
                run.run_id,
            )
            criterion_count = len(rubric.criteria)
            try:
                results = execute_plan(plan, self.provider)
                report = compose_report(
                    run.run_id, rubric, results[:criterion_count], results[criterion_count]
                )
            except PlanExecutionError as exc:
                logger.warning("feedback plan degraded to partial: %s", exc)
                partial = exc.partial
                report = compose_report(
                    run.run_id,
                    rubric,
                    partial[:criterion_count],
                    partial[criterion_count] if len(partial) > criterion_count else None,
                )
            self.store.put(
                RecordKind.FEEDBACK, run.run_id, report.to_dict(), session.learner_id
            )
            message = render_feedback_message(report, self.config.show_scores)
            self._append_turn(
                session,
                session.tutor_transcript,
                f"tutor:{session.session_id}",
                Speaker.AGENT_TUTOR,
                Channel.CHAT,
                message,
                {"bundle_role": "tutor", "feedback_run": run.run_id},
            )
            self._transition(session, SessionState.FEEDBACK_DELIVERED)
            self._emit(session, SourceKind.FEEDBACK_DELIVERY, run.unit_id)
            self._persist_session(session)
            return report

    def _run_passed(self, run: ExerciseRun) -> bool:
        spec = self.program.exercise(run.exercise_id)
        if spec.pass_policy.kind != "rubric_threshold":
            return True
        try:
            report = self.feedback_for_run(run.run_id)
        except NotFound:
            return False
        return report.overall >= spec.pass_policy.threshold

    def complete_unit_check(self, session_id: str) -> ProgressRecord:
        """Fold the finished run into unit progress; repeat calls are no-ops.

        A run only counts toward the unit's exercise quota if its pass policy
        is satisfied (threshold policies compare the feedback's overall
        score); a failed attempt still marks the unit as started.
        """
        with self._lock_for(session_id):
            session = self.get_session(session_id)
            if (
                session.state is SessionState.TUTOR_DIALOG
                and session.pending_run is None
            ):
                return session.progress
            self._guard(session, "complete_unit_check", SessionState.FEEDBACK_DELIVERED)
            run = session.pending_run
            assert run is not None
            self._touch(session)
            if run.run_id not in session.counted_runs:
                done = session.progress.unit_progress(run.unit_id).exercises_done
                if self._run_passed(run):
                    done += 1
                session.progress = record_completion(
                    self.program, session.progress, run.unit_id, done
                )
                session.counted_runs.add(run.run_id)
                self._persist_progress(session)
            session.pending_run = None
            self._transition(session, SessionState.TUTOR_DIALOG)
            self._persist_session(session)
            return session.progress

    # -- reporting ------------------------------------------------------------------

    def record_resource_view(self, learner_id: str, unit_id: str, resource_id: str = "") -> None:
        unit = self.program.unit(unit_id)
        if unit is None:
            raise UnknownUnit(f"unknown unit {unit_id!r}")
        if resource_id and all(r.id != resource_id for r in unit.resources):
            raise UnknownUnit(f"unit {unit_id!r} has no resource {resource_id!r}")
        event = classify(
            SourceEvent(
                kind=SourceKind.RESOURCE_VIEW,
                learner_id=learner_id,
                unit_id=unit_id,
                timestamp=self.clock(),
            )
        )
        self.store.append(RecordKind.METHOD_EVENT, learner_id, event.to_dict(), learner_id)

    def remind(self, session_id: str) -> str | None:
        """Passive nudge: a gentle tutor line when the session is between
        activities; never interrupts an exercise and never changes state."""
        with self._lock_for(session_id):
            session = self.get_session(session_id)
            if session.state not in (SessionState.IDLE, SessionState.TUTOR_DIALOG):
                return None
            text = render_template("reminder")
            self._append_turn(
                session,
                session.tutor_transcript,
                f"tutor:{session.session_id}",
                Speaker.AGENT_TUTOR,
                Channel.CHAT,
                text,
                {"bundle_role": "tutor", "reminder": True},
            )
            self._persist_session(session)
            return text

    def progress_for(self, learner_id: str) -> ProgressRecord:
        return self._load_progress(learner_id)

    def method_events_for(self, learner_id: str) -> list[MethodEvent]:
        try:
            payloads = self.store.read_log(RecordKind.METHOD_EVENT, learner_id)
        except NotFound:
            return []
        return [MethodEvent.from_dict(p) for p in payloads]

    def sdt_report_for(self, learner_id: str) -> SdtReport:
        events = self.method_events_for(learner_id)
        facts = infer_session_facts(events, [u.id for u in self.program.units])
        return build_sdt_report(
            events, facts, self.mapping_table, learner_id=learner_id
        )

    def feedback_for_run(self, run_id: str) -> FeedbackReport:
        return FeedbackReport.from_dict(self.store.get(RecordKind.FEEDBACK, run_id))

    def run_transcript(self, run_id: str) -> Transcript:
        return Transcript.from_dicts(self.store.read_log(RecordKind.TRANSCRIPT, f"run:{run_id}"))
