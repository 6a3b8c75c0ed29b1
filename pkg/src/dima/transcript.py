"""Append-only conversation records."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator

from .program import Channel


class Speaker(str, Enum):
    LEARNER = "learner"
    AGENT_TUTOR = "tutor"
    AGENT_PERSONA = "persona"


@dataclass(frozen=True)
class DialogTurn:
    seq: int
    speaker: Speaker
    channel: Channel
    text: str
    timestamp: float
    meta: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "speaker": self.speaker.value,
            "channel": self.channel.value,
            "text": self.text,
            "timestamp": self.timestamp,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DialogTurn":
        return cls(
            seq=int(payload["seq"]),
            speaker=Speaker(payload["speaker"]),
            channel=Channel(payload["channel"]),
            text=payload["text"],
            timestamp=float(payload["timestamp"]),
            meta=dict(payload.get("meta", {})),
        )


class Transcript:
    """Ordered, append-only list of turns with strictly increasing seq."""

    def __init__(self, turns: list[DialogTurn] | None = None):
        self._turns: list[DialogTurn] = []
        for turn in turns or []:
            self._append_checked(turn)

    def _append_checked(self, turn: DialogTurn) -> None:
        if self._turns and turn.seq <= self._turns[-1].seq:
            raise ValueError(
                f"turn seq {turn.seq} does not increase past {self._turns[-1].seq}"
            )
        if not turn.text and "event" not in turn.meta:
            raise ValueError("turn text must be non-empty unless it is an event marker")
        self._turns.append(turn)

    def append(
        self,
        speaker: Speaker,
        channel: Channel,
        text: str,
        timestamp: float,
        meta: dict[str, Any] | None = None,
    ) -> DialogTurn:
        turn = DialogTurn(
            seq=self.next_seq(),
            speaker=speaker,
            channel=channel,
            text=text,
            timestamp=timestamp,
            meta=meta or {},
        )
        self._append_checked(turn)
        return turn

    def next_seq(self) -> int:
        return self._turns[-1].seq + 1 if self._turns else 1

    @property
    def turns(self) -> tuple[DialogTurn, ...]:
        return tuple(self._turns)

    def learner_turns(self) -> tuple[DialogTurn, ...]:
        return tuple(t for t in self._turns if t.speaker is Speaker.LEARNER)

    def last(self) -> DialogTurn | None:
        return self._turns[-1] if self._turns else None

    def __len__(self) -> int:
        return len(self._turns)

    def __iter__(self) -> Iterator[DialogTurn]:
        return iter(self._turns)

    def to_dicts(self) -> list[dict]:
        return [t.to_dict() for t in self._turns]

    @classmethod
    def from_dicts(cls, payloads: list[dict]) -> "Transcript":
        return cls([DialogTurn.from_dict(p) for p in payloads])
