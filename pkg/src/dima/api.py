"""HTTP+JSON surface for the learner UI and test drivers.

Every dialog-engine InvalidState maps to 409, unknown entities to 404,
schema violations to 400, provider trouble to 503 with a Retry-After hint.
Script misses stay 500: they are test-authoring bugs and must be loud.
"""

from __future__ import annotations

from typing import Literal, Optional

from fastapi import Depends, FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .channels import ChannelEvent, EventKind
from .engine import SessionState
from .errors import (
    AuthError,
    ChannelUnavailable,
    DimaError,
    InvalidState,
    NotFound,
    ParseError,
    ProviderError,
    SttFailure,
    ThreadMismatch,
    UnknownExercise,
    UnknownProgram,
    UnknownRun,
    UnknownSession,
    UnknownUnit,
    ValidationError,
)
from .program import Channel
from .progress import available_units
from .service import ApiSession, Service


# ---------------------------------------------------------------------------
# Request/response schemas
# ---------------------------------------------------------------------------


class CreateLearnerRequest(BaseModel):
    name: str = Field(min_length=1)
    tutor_gender: Literal["female", "male"]


class CreateLearnerResponse(BaseModel):
    learner_id: str
    session_id: str
    token: str
    expiry: float
    tutor_name: str
    tutor_voice_id: str


class MessageRequest(BaseModel):
    text: str = Field(min_length=1)


class TurnPayload(BaseModel):
    seq: int
    speaker: str
    channel: str
    text: str
    timestamp: float
    meta: dict = Field(default_factory=dict)


class MessageResponse(BaseModel):
    reply: str
    state: str
    redirected: bool = False
    offer: Optional[dict] = None
    turn: TurnPayload


class StartExerciseRequest(BaseModel):
    exercise_id: str
    channel: Optional[Literal["telephone", "email", "chat"]] = None


class StartExerciseResponse(BaseModel):
    run_id: str
    exercise_id: str
    unit_id: str
    channel: str
    state: str
    opening: TurnPayload
    thread_id: str = ""
    call_id: str = ""


class RunTurnRequest(BaseModel):
    text: Optional[str] = None
    audio_ref: Optional[dict] = None


class RunTurnResponse(BaseModel):
    reply: Optional[str]
    run_status: str
    end_reason: Optional[str]
    state: str
    clarification: bool = False
    turn_count: int


class UnitPayload(BaseModel):
    id: str
    title: str
    objective: str
    estimated_minutes: int
    status: str
    exercises: list[str]
    suggested_position: int


class UnitsResponse(BaseModel):
    program_id: str
    units: list[UnitPayload]


class EndRunResponse(BaseModel):
    run_id: str
    feedback: dict
    progress: dict
    state: str


class PhoneSimEvent(BaseModel):
    call_id: str
    kind: Literal["audio_in", "text_in", "hangup"]
    payload: dict = Field(default_factory=dict)


class EmailInbound(BaseModel):
    session_id: str = ""
    thread_id: str
    subject: str = ""
    body: str = Field(min_length=1)


class LearnerEventRequest(BaseModel):
    kind: Literal["resource_view"]
    unit_id: str
    resource_id: str = ""


# ---------------------------------------------------------------------------
# App factory
# ---------------------------------------------------------------------------

_ERROR_STATUS = [
    (AuthError, 401),
    (InvalidState, 409),
    (ThreadMismatch, 409),
    ((NotFound, UnknownSession, UnknownExercise, UnknownUnit, UnknownProgram, UnknownRun), 404),
    ((ValidationError, ParseError, SttFailure), 400),
    (ChannelUnavailable, 503),
]


def create_app(service: Service) -> FastAPI:
    app = FastAPI(title="dima-engine", version="0.1.0")
    app.state.service = service

    def svc() -> Service:
        return app.state.service

    def auth(authorization: str = Header(default="")) -> ApiSession:
        if not authorization.startswith("Bearer "):
            raise AuthError("missing bearer token")
        return svc().authenticate(authorization.removeprefix("Bearer ").strip())

    @app.exception_handler(RequestValidationError)
    async def on_schema_violation(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "schema", "detail": exc.errors()})

    @app.exception_handler(DimaError)
    async def on_engine_error(request: Request, exc: DimaError):
        for types, status in _ERROR_STATUS:
            if isinstance(exc, types):
                return JSONResponse(
                    status_code=status,
                    content={"error": type(exc).__name__, "detail": str(exc)},
                )
        if isinstance(exc, ProviderError):
            return JSONResponse(
                status_code=503,
                headers={"Retry-After": "1"},
                content={"error": type(exc).__name__, "detail": str(exc)},
            )
        return JSONResponse(
            status_code=500, content={"error": type(exc).__name__, "detail": str(exc)}
        )

    # -- learners -----------------------------------------------------------------

    @app.post("/learners", response_model=CreateLearnerResponse)
    def create_learner(body: CreateLearnerRequest):
        api_session = svc().create_learner(body.name, body.tutor_gender)
        session = svc().engine.get_session(api_session.session_id)
        return CreateLearnerResponse(
            learner_id=api_session.learner_id,
            session_id=api_session.session_id,
            token=api_session.token,
            expiry=api_session.expiry,
            tutor_name=session.tutor_profile.name,
            tutor_voice_id=session.tutor_profile.voice_id,
        )

    @app.get("/programs/{program_id}/units", response_model=UnitsResponse)
    def list_units(program_id: str, learner: str, _=Depends(auth)):
        engine = svc().engine
        if program_id != engine.program.id:
            raise UnknownProgram(f"unknown program {program_id!r}")
        progress = engine.progress_for(learner)
        open_units = {u.id for u in available_units(engine.program, progress)}
        units = []
        for position, unit in enumerate(engine.program.units, start=1):
            units.append(
                UnitPayload(
                    id=unit.id,
                    title=unit.title,
                    objective=unit.objective,
                    estimated_minutes=unit.estimated_minutes,
                    status=progress.unit_progress(unit.id).status.value,
                    exercises=list(unit.exercises),
                    suggested_position=position,
                )
            )
        return UnitsResponse(program_id=program_id, units=units)

    @app.get("/learners/{learner_id}/progress")
    def learner_progress(learner_id: str, _=Depends(auth)):
        return svc().engine.progress_for(learner_id).to_dict()

    @app.get("/learners/{learner_id}/sdt-report")
    def learner_sdt_report(learner_id: str, _=Depends(auth)):
        return svc().engine.sdt_report_for(learner_id).to_dict()

    @app.post("/learners/{learner_id}/events", status_code=201)
    def learner_event(learner_id: str, body: LearnerEventRequest, _=Depends(auth)):
        svc().engine.record_resource_view(learner_id, body.unit_id, body.resource_id)
        return {"recorded": True}

    # -- tutor dialog ---------------------------------------------------------------

    @app.post("/sessions/{session_id}/messages", response_model=MessageResponse)
    def post_message(session_id: str, body: MessageRequest, _=Depends(auth)):
        reply = svc().engine.handle_learner_message(session_id, body.text)
        svc().router.deliver_chat(svc().engine.get_session(session_id), reply.text)
        offer = None
        if reply.offer is not None:
            offer = {
                "unit_id": reply.offer.unit_id,
                "exercise_ids": list(reply.offer.exercise_ids),
            }
        return MessageResponse(
            reply=reply.text,
            state=reply.state.value,
            redirected=reply.redirected,
            offer=offer,
            turn=TurnPayload(**reply.turn.to_dict()),
        )

    @app.get("/sessions/{session_id}")
    def session_snapshot(session_id: str, _=Depends(auth)):
        session = svc().engine.get_session(session_id)
        run = session.current_run()
        return {
            "session_id": session.session_id,
            "learner_id": session.learner_id,
            "state": session.state.value,
            "active_unit": session.active_unit,
            "run": run.to_dict() if run else None,
            "tutor_turns": len(session.tutor_transcript),
            "run_turns": run.turn_count if run else 0,
        }

    @app.get("/sessions/{session_id}/messages")
    def session_messages(session_id: str, after_seq: int = 0, _=Depends(auth)):
        session = svc().engine.get_session(session_id)
        turns = [t.to_dict() for t in session.tutor_transcript if t.seq > after_seq]
        return {"turns": turns}

    # -- exercises -------------------------------------------------------------------

    @app.post("/sessions/{session_id}/exercises", response_model=StartExerciseResponse)
    def start_exercise(session_id: str, body: StartExerciseRequest, _=Depends(auth)):
        override = Channel(body.channel) if body.channel else None
        run, opening, _receipt = svc().router.start_exercise(
            session_id, body.exercise_id, override
        )
        session = svc().engine.get_session(session_id)
        return StartExerciseResponse(
            run_id=run.run_id,
            exercise_id=run.exercise_id,
            unit_id=run.unit_id,
            channel=run.channel.value,
            state=session.state.value,
            opening=TurnPayload(**opening.to_dict()),
            thread_id=run.thread_id,
            call_id=run.call_id,
        )

    @app.post("/runs/{run_id}/turns", response_model=RunTurnResponse)
    def run_turn(run_id: str, body: RunTurnRequest, _=Depends(auth)):
        engine = svc().engine
        session = engine.find_session_by_run(run_id)
        run = session.current_run()
        if run is None or run.run_id != run_id:
            raise InvalidState("run_turn", session.state.value)
        if body.audio_ref is not None:
            outcome = svc().router.ingest(
                ChannelEvent(
                    channel=run.channel,
                    session_id=session.session_id,
                    kind=EventKind.AUDIO_IN,
                    payload={"audio_ref": body.audio_ref},
                )
            )
            reply_text = outcome.reply_text
            clarification = outcome.clarification
            run = outcome.run or run
        else:
            if body.text is None:
                raise ParseError("either text or audio_ref is required")
            reply, run = engine.exercise_turn(session.session_id, body.text)
            if reply is not None:
                svc().router.deliver(session, run, reply.text)
            reply_text = reply.text if reply else None
            clarification = False
        return RunTurnResponse(
            reply=reply_text,
            run_status=run.status.value,
            end_reason=run.end_reason.value if run.end_reason else None,
            state=session.state.value,
            clarification=clarification,
            turn_count=run.turn_count,
        )

    @app.get("/runs/{run_id}/turns")
    def run_turns(run_id: str, after_seq: int = 0, _=Depends(auth)):
        transcript = svc().engine.run_transcript(run_id)
        return {"turns": [t.to_dict() for t in transcript if t.seq > after_seq]}

    @app.post("/runs/{run_id}/end", response_model=EndRunResponse)
    def end_run(run_id: str, _=Depends(auth)):
        engine = svc().engine
        session = engine.find_session_by_run(run_id)
        try:
            # Retried end: the report already exists; fold progress only if
            # this run is still the one awaiting completion.
            report = engine.feedback_for_run(run_id)
            pending = session.pending_run
            if pending is not None and pending.run_id == run_id:
                progress = engine.complete_unit_check(session.session_id)
            else:
                progress = engine.progress_for(session.learner_id)
        except NotFound:
            if (
                session.state is SessionState.EXERCISE_ACTIVE
                and session.active_exercise is not None
                and session.active_exercise.run_id == run_id
            ):
                engine.end_exercise(session.session_id)
            report = engine.generate_feedback(session.session_id)
            progress = engine.complete_unit_check(session.session_id)
        return EndRunResponse(
            run_id=run_id,
            feedback=report.to_dict(),
            progress=progress.to_dict(),
            state=session.state.value,
        )

    @app.get("/runs/{run_id}/feedback")
    def run_feedback(run_id: str, _=Depends(auth)):
        return svc().engine.feedback_for_run(run_id).to_dict()

    # -- channel drivers ---------------------------------------------------------------

    @app.post("/channels/phone-sim/events")
    def phone_sim_event(body: PhoneSimEvent):
        call = svc().router.calls.get(body.call_id)
        if call is None:
            raise UnknownRun(f"unknown call {body.call_id!r}")
        kind = EventKind(body.kind)
        outcome = svc().router.ingest(
            ChannelEvent(
                channel=Channel.TELEPHONE,
                session_id=call.session_id,
                kind=kind,
                payload=body.payload,
            )
        )
        return {
            "reply": outcome.reply_text,
            "clarification": outcome.clarification,
            "run_status": outcome.run.status.value if outcome.run else None,
        }

    @app.post("/channels/email/inbound")
    def email_inbound(body: EmailInbound):
        router = svc().router
        if body.session_id:
            session = svc().engine.get_session(body.session_id)
        else:
            session = svc().engine.find_session_by_thread(body.thread_id)
        outcome = router.run_email_exercise_turn(
            session.session_id,
            {"thread_id": body.thread_id, "subject": body.subject, "body": body.body},
        )
        return {
            "reply": outcome.reply_text,
            "message_id": outcome.receipt.detail.get("message_id") if outcome.receipt else None,
            "run_status": outcome.run.status.value if outcome.run else None,
        }

    static_dir = service.config.static_dir
    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
