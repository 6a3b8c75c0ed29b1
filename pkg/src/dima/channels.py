"""Channel adapters: chat, simulated telephone (STT/TTS seam), e-mail.

Adapters normalize inbound events into dialog turns for the engine and carry
agent output back out. They adapt, never decide: the engine's state trace for
a fixed conversation is identical across channels.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from email.message import EmailMessage
from email.parser import Parser
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Protocol

from .engine import DialogEngine, EndReason, ExerciseRun, LearnerSession, SessionState
from .errors import (
    ChannelUnavailable,
    DeliveryError,
    InvalidState,
    ParseError,
    SttFailure,
    ThreadMismatch,
    UnknownSession,
)
from .program import Channel
from .prompts import render_template
from .transcript import DialogTurn


class EventKind(str, Enum):
    TEXT_IN = "text_in"
    AUDIO_IN = "audio_in"
    EMAIL_IN = "email_in"
    HANGUP = "hangup"
    DELIVERY_FAILURE = "delivery_failure"


@dataclass(frozen=True)
class ChannelEvent:
    channel: Channel
    session_id: str
    kind: EventKind
    payload: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SttResult:
    text: str
    confidence: float


class SpeechAdapter(Protocol):
    def stt(self, audio_ref: dict) -> SttResult: ...

    def tts(self, text: str, voice_id: str) -> dict: ...


class SimulatedSpeechAdapter:
    """Text-carrying stand-in for STT/TTS vendors.

    A simulated audio ref is ``{"audio_text": ..., "confidence": ...}``; the
    adapter returns the embedded text, optionally corrupted at a configured
    rate (deterministic per seed). TTS wraps text with the chosen voice.
    """

    def __init__(self, noise_rate: float = 0.0, seed: int = 7):
        if not 0.0 <= noise_rate <= 1.0:
            raise ValueError("noise_rate must lie in [0, 1]")
        self.noise_rate = noise_rate
        self._rng = random.Random(seed)

    def _corrupt(self, text: str) -> str:
        if self.noise_rate == 0.0:
            return text
        return "".join(
            "*" if c.isalpha() and self._rng.random() < self.noise_rate else c
            for c in text
        )

    def stt(self, audio_ref: dict) -> SttResult:
        if not isinstance(audio_ref, dict) or "audio_text" not in audio_ref:
            raise SttFailure("audio reference carries no transcribable signal")
        confidence = float(audio_ref.get("confidence", 1.0))
        return SttResult(text=self._corrupt(str(audio_ref["audio_text"])), confidence=confidence)

    def tts(self, text: str, voice_id: str) -> dict:
        return {"voice_id": voice_id, "text": text}


@dataclass
class SimulatedPhoneCall:
    call_id: str
    session_id: str
    run_id: str
    turn_latency_ms: float = 0.0
    noise_rate: float = 0.0
    outbound: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class DeliveryReceipt:
    receipt_id: str
    channel: Channel
    detail: dict[str, Any] = field(default_factory=dict)


def parse_phone_event_line(line: str) -> dict:
    """One line of the newline-delimited phone-sim driver stream."""
    try:
        event = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad phone-sim event line: {exc}") from exc
    if not isinstance(event, dict) or "call_id" not in event or "kind" not in event:
        raise ParseError("phone-sim events need call_id and kind")
    return event


class EmailMailbox:
    """On-disk mailbox: one RFC-822 style file per message."""

    def __init__(self, directory: str | Path, ids: Callable[[str], str]):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._ids = ids

    def write_message(
        self, thread_id: str, subject: str, sender: str, recipient: str, body: str
    ) -> str:
        message_id = self._ids("msg")
        msg = EmailMessage()
        msg["Message-Id"] = message_id
        msg["Thread-Id"] = thread_id
        msg["Subject"] = subject
        msg["From"] = sender
        msg["To"] = recipient
        msg.set_content(body)
        (self.directory / f"{message_id}.eml").write_text(msg.as_string(), encoding="utf-8")
        return message_id

    def read_message(self, message_id: str) -> dict:
        path = self.directory / f"{message_id}.eml"
        if not path.exists():
            raise DeliveryError(f"no stored message {message_id!r}")
        parsed = Parser().parsestr(path.read_text(encoding="utf-8"))
        return {
            "message_id": parsed["Message-Id"],
            "thread_id": parsed["Thread-Id"],
            "subject": parsed["Subject"],
            "from": parsed["From"],
            "to": parsed["To"],
            "body": parsed.get_payload().strip(),
        }

    def message_ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.eml"))


@dataclass
class IngestOutcome:
    turn: DialogTurn | None
    reply_text: str | None = None
    reply_turn: DialogTurn | None = None
    receipt: DeliveryReceipt | None = None
    clarification: bool = False
    run: ExerciseRun | None = None


def reply_subject(subject: str) -> str:
    return subject if subject.lower().startswith("re:") else f"Re: {subject}"


class ChannelRouter:
    """Normalizes channel events into engine calls and delivers output back."""

    def __init__(
        self,
        engine: DialogEngine,
        speech: SpeechAdapter | None = None,
        mailbox_dir: str | Path = "mailbox",
        unavailable_channels: frozenset[Channel] = frozenset(),
        phone_turn_latency_ms: float = 0.0,
    ):
        self.engine = engine
        self.speech = speech or SimulatedSpeechAdapter(
            noise_rate=engine.config.phone_noise_rate
        )
        self.mailbox = EmailMailbox(mailbox_dir, engine.ids)
        self.chat_outbox: list[dict] = []
        self.calls: dict[str, SimulatedPhoneCall] = {}
        self.failed_deliveries: list[dict] = []
        self.unavailable_channels = unavailable_channels
        self.phone_turn_latency_ms = phone_turn_latency_ms
        engine.channel_opener = self.open_channel

    # -- channel session management ------------------------------------------------

    def open_channel(self, session: LearnerSession, run: ExerciseRun) -> None:
        if run.channel in self.unavailable_channels:
            raise ChannelUnavailable(f"channel {run.channel.value} unavailable")
        if run.channel is Channel.TELEPHONE:
            self.calls[run.call_id] = SimulatedPhoneCall(
                call_id=run.call_id,
                session_id=session.session_id,
                run_id=run.run_id,
                turn_latency_ms=self.phone_turn_latency_ms,
                noise_rate=self.engine.config.phone_noise_rate,
            )

    def call_for_run(self, run_id: str) -> SimulatedPhoneCall | None:
        return next((c for c in self.calls.values() if c.run_id == run_id), None)

    # -- exercise driving ----------------------------------------------------------

    def start_exercise(
        self,
        session_id: str,
        exercise_id: str,
        channel_override: Channel | None = None,
    ) -> tuple[ExerciseRun, DialogTurn, DeliveryReceipt]:
        """Engine start plus delivery of the persona's opening turn."""
        run, opening = self.engine.start_exercise(session_id, exercise_id, channel_override)
        session = self.engine.get_session(session_id)
        receipt = self.deliver(session, run, opening.text, kind="opening")
        return run, opening, receipt

    # -- delivery -------------------------------------------------------------------

    def deliver(
        self,
        session: LearnerSession,
        run: ExerciseRun | None,
        text: str,
        kind: str = "reply",
        subject: str = "",
    ) -> DeliveryReceipt:
        channel = run.channel if run is not None else Channel.CHAT
        if channel in self.unavailable_channels:
            failure = {"session_id": session.session_id, "kind": kind, "text": text}
            self.failed_deliveries.append(failure)
            raise DeliveryError(f"delivery on {channel.value} failed")
        receipt_id = self.engine.ids("rcpt")
        if channel is Channel.CHAT:
            self.chat_outbox.append(
                {"receipt_id": receipt_id, "session_id": session.session_id, "text": text, "kind": kind}
            )
            return DeliveryReceipt(receipt_id=receipt_id, channel=channel, detail={"text": text})
        if channel is Channel.TELEPHONE:
            audio_ref = self.speech.tts(text, session.tutor_profile.voice_id)
            call = self.call_for_run(run.run_id) if run else None
            if call is not None:
                if call.turn_latency_ms > 0:
                    time.sleep(call.turn_latency_ms / 1000.0)
                call.outbound.append(audio_ref)
            return DeliveryReceipt(
                receipt_id=receipt_id, channel=channel, detail={"audio_ref": audio_ref}
            )
        # e-mail
        assert run is not None
        persona = self.engine.program.exercise(run.exercise_id).scenario.persona
        message_id = self.mailbox.write_message(
            thread_id=run.thread_id,
            subject=subject or f"Question from {persona.name}",
            sender=f"{persona.name} <training@local>",
            recipient=session.learner_id,
            body=text,
        )
        return DeliveryReceipt(
            receipt_id=receipt_id, channel=channel, detail={"message_id": message_id}
        )

    def deliver_chat(self, session: LearnerSession, text: str, kind: str = "reply") -> DeliveryReceipt:
        return self.deliver(session, None, text, kind=kind)

    # -- ingest ----------------------------------------------------------------------

    def ingest(self, event: ChannelEvent) -> IngestOutcome:
        """Route one inbound event; yields exactly one persisted turn or
        raises one typed error, never a silent drop."""
        session = self.engine.get_session(event.session_id)
        if event.kind is EventKind.TEXT_IN:
            return self._ingest_text(session, event)
        if event.kind is EventKind.AUDIO_IN:
            return self._ingest_audio(session, event)
        if event.kind is EventKind.EMAIL_IN:
            return self.run_email_exercise_turn(session.session_id, event.payload)
        if event.kind is EventKind.HANGUP:
            return self._ingest_hangup(session, event)
        return self._ingest_delivery_failure(session, event)

    def _active_run(self, session: LearnerSession) -> ExerciseRun | None:
        return session.active_exercise

    def _ingest_text(self, session: LearnerSession, event: ChannelEvent) -> IngestOutcome:
        text = str(event.payload.get("text", ""))
        run = self._active_run(session)
        if session.state is SessionState.EXERCISE_ACTIVE:
            if run is None or event.channel is not run.channel:
                raise InvalidState("text_in", session.state.value)
            reply, run = self.engine.exercise_turn(session.session_id, text)
            receipt = None
            if reply is not None:
                receipt = self.deliver(session, run, reply.text)
            return IngestOutcome(
                turn=run.transcript.learner_turns()[-1],
                reply_text=reply.text if reply else None,
                reply_turn=reply,
                receipt=receipt,
                run=run,
            )
        tutor_reply = self.engine.handle_learner_message(session.session_id, text, event.channel)
        receipt = self.deliver_chat(session, tutor_reply.text)
        return IngestOutcome(
            turn=session.tutor_transcript.learner_turns()[-1],
            reply_text=tutor_reply.text,
            reply_turn=tutor_reply.turn,
            receipt=receipt,
        )

    def _ingest_audio(self, session: LearnerSession, event: ChannelEvent) -> IngestOutcome:
        run = self._active_run(session)
        if session.state is not SessionState.EXERCISE_ACTIVE or run is None:
            raise InvalidState("audio_in", session.state.value)
        if event.channel is not run.channel:
            raise InvalidState("audio_in", session.state.value)
        try:
            stt = self.speech.stt(event.payload.get("audio_ref", {}))
        except SttFailure:
            # No transcript at all: persona asks the caller to repeat.
            self.deliver(session, run, render_template("clarification_request"))
            raise
        meta = {"stt_confidence": stt.confidence}
        if stt.confidence < self.engine.config.stt_confidence_threshold:
            meta["low_confidence"] = True
            turn = self.engine.record_flagged_turn(session.session_id, stt.text, run.channel, meta)
            clarification = render_template("clarification_request")
            receipt = self.deliver(session, run, clarification)
            return IngestOutcome(
                turn=turn,
                reply_text=clarification,
                receipt=receipt,
                clarification=True,
                run=session.current_run(),
            )
        reply, run = self.engine.exercise_turn(session.session_id, stt.text, meta)
        receipt = None
        if reply is not None:
            receipt = self.deliver(session, run, reply.text)
        return IngestOutcome(
            turn=run.transcript.learner_turns()[-1],
            reply_text=reply.text if reply else None,
            reply_turn=reply,
            receipt=receipt,
            run=run,
        )

    def _ingest_hangup(self, session: LearnerSession, event: ChannelEvent) -> IngestOutcome:
        turn = self.engine.record_event_marker(session.session_id, "hangup", event.channel)
        run = self.engine.end_exercise(session.session_id, EndReason.LEARNER_ENDED)
        return IngestOutcome(turn=turn, run=run)

    def _ingest_delivery_failure(
        self, session: LearnerSession, event: ChannelEvent
    ) -> IngestOutcome:
        self.failed_deliveries.append(
            {"session_id": session.session_id, "payload": dict(event.payload)}
        )
        turn = self.engine.record_event_marker(
            session.session_id, "delivery_failure", event.channel
        )
        run = self.engine.end_exercise(session.session_id, EndReason.CHANNEL_ERROR)
        return IngestOutcome(turn=turn, run=run)

    def ingest_phone_stream(self, text: str) -> list[IngestOutcome]:
        """Feed a newline-delimited phone-sim driver stream.

        Each line is ``{"call_id", "kind", "payload"}``; events are routed to
        the call's owning session in order.
        """
        outcomes = []
        for line in text.splitlines():
            if not line.strip():
                continue
            raw = parse_phone_event_line(line)
            call = self.calls.get(str(raw["call_id"]))
            if call is None:
                raise UnknownSession(f"unknown call {raw['call_id']!r}")
            outcomes.append(
                self.ingest(
                    ChannelEvent(
                        channel=Channel.TELEPHONE,
                        session_id=call.session_id,
                        kind=EventKind(raw["kind"]),
                        payload=raw.get("payload", {}) or {},
                    )
                )
            )
        return outcomes

    # -- e-mail exercises --------------------------------------------------------------

    def run_email_exercise_turn(self, session_id: str, inbound: dict) -> IngestOutcome:
        """One asynchronous e-mail exchange; the thread id must match the
        active run, and the session may have been rehydrated after a restart."""
        session = self.engine.get_session(session_id)
        run = self._active_run(session)
        if run is None or run.channel is not Channel.EMAIL:
            raise InvalidState("email_in", session.state.value)
        thread_id = str(inbound.get("thread_id", ""))
        if thread_id and thread_id != run.thread_id:
            raise ThreadMismatch(
                f"inbound thread {thread_id!r} does not match active thread {run.thread_id!r}"
            )
        subject = str(inbound.get("subject", ""))
        body = str(inbound.get("body", ""))
        reply, run = self.engine.exercise_turn(
            session.session_id, body, {"subject": subject}
        )
        receipt = None
        if reply is not None:
            receipt = self.deliver(
                session, run, reply.text, subject=reply_subject(subject)
            )
        return IngestOutcome(
            turn=run.transcript.learner_turns()[-1],
            reply_text=reply.text if reply else None,
            reply_turn=reply,
            receipt=receipt,
            run=run,
        )
