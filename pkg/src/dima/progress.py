"""Per-learner progress through a program.

There is deliberately no prerequisite gating: every not-yet-completed unit is
available, in the suggested order, and the learner picks freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import UnknownProgram, UnknownUnit
from .program import LearningUnit, TrainingProgram


class UnitStatus(str, Enum):
    NOT_STARTED = "not_started"
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"


@dataclass(frozen=True)
class UnitProgress:
    status: UnitStatus = UnitStatus.NOT_STARTED
    exercises_done: int = 0


@dataclass(frozen=True)
class ProgressRecord:
    learner_id: str
    program_id: str
    units: dict[str, UnitProgress] = field(default_factory=dict)

    def unit_progress(self, unit_id: str) -> UnitProgress:
        return self.units.get(unit_id, UnitProgress())

    def completed_unit_ids(self) -> set[str]:
        return {uid for uid, p in self.units.items() if p.status is UnitStatus.COMPLETED}

    def to_dict(self) -> dict:
        return {
            "learner_id": self.learner_id,
            "program_id": self.program_id,
            "units": {
                uid: {"status": p.status.value, "exercises_done": p.exercises_done}
                for uid, p in sorted(self.units.items())
            },
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ProgressRecord":
        return cls(
            learner_id=payload["learner_id"],
            program_id=payload["program_id"],
            units={
                uid: UnitProgress(
                    status=UnitStatus(p["status"]), exercises_done=int(p["exercises_done"])
                )
                for uid, p in payload.get("units", {}).items()
            },
        )


def new_progress(learner_id: str, program: TrainingProgram) -> ProgressRecord:
    return ProgressRecord(learner_id=learner_id, program_id=program.id)


def available_units(program: TrainingProgram, progress: ProgressRecord) -> list[LearningUnit]:
    """All not-yet-completed units, in the suggested display order."""
    if progress.program_id != program.id:
        raise UnknownProgram(
            f"progress belongs to program {progress.program_id!r}, not {program.id!r}"
        )
    done = progress.completed_unit_ids()
    return [u for u in program.units if u.id not in done]


def record_completion(
    program: TrainingProgram,
    progress: ProgressRecord,
    unit_id: str,
    exercises_done: int,
) -> ProgressRecord:
    """Mark a unit completed iff ``exercises_done`` satisfies its policy.

    Pure and idempotent: repeating the call with the same arguments yields an
    identical record. A unit that was already completed stays completed.
    """
    unit = program.unit(unit_id)
    if unit is None:
        raise UnknownUnit(f"unit {unit_id!r} is not part of program {program.id!r}")
    if exercises_done < 0:
        raise ValueError("exercises_done must be >= 0")
    previous = progress.unit_progress(unit_id)
    completed = (
        exercises_done >= unit.completion_policy.min_exercises
        or previous.status is UnitStatus.COMPLETED
    )
    status = UnitStatus.COMPLETED if completed else UnitStatus.IN_PROGRESS
    updated = dict(progress.units)
    updated[unit_id] = UnitProgress(
        status=status, exercises_done=max(exercises_done, previous.exercises_done)
    )
    return replace(progress, units=updated)
