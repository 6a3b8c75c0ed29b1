"""State-machine fuzz: random event storms must never break the session.

Every illegal event raises InvalidState and leaves the state untouched;
feedback states are reachable only through the legal corridor; no event
sequence crashes the engine.
"""

import random

import pytest

from conftest import CATCHALL_ENTRIES, make_engine
from dima.engine import SessionState
from dima.errors import InvalidState, UnknownExercise
from dima.program import Channel

SEQUENCES = 10_000
MAX_EVENTS = 7

LEGAL_EDGES = {
    ("idle", "tutor_dialog"),
    ("idle", "exercise_setup"),
    ("tutor_dialog", "exercise_setup"),
    ("exercise_setup", "exercise_active"),
    ("exercise_setup", "tutor_dialog"),
    ("exercise_active", "awaiting_feedback"),
    ("awaiting_feedback", "feedback_delivered"),
    ("feedback_delivered", "tutor_dialog"),
}

EVENTS = (
    "message",
    "message_offtopic",
    "start_valid",
    "start_invalid",
    "turn",
    "turn_endphrase",
    "end",
    "feedback",
    "complete",
    "flagged",
)


def apply_event(engine, session, event, rng):
    sid = session.session_id
    if event == "message":
        engine.handle_learner_message(sid, "A question about the greeting exercise")
    elif event == "message_offtopic":
        engine.handle_learner_message(sid, "What's the weather tomorrow?")
    elif event == "start_valid":
        engine.start_exercise(
            sid, rng.choice(["ex-greeting-call", "ex-noise-complaint", "ex-callback-promise"])
        )
    elif event == "start_invalid":
        engine.start_exercise(sid, "ex-does-not-exist")
    elif event == "turn":
        engine.exercise_turn(sid, "Let me look into that for you right away.")
    elif event == "turn_endphrase":
        engine.exercise_turn(sid, "Thank you for calling, goodbye")
    elif event == "end":
        engine.end_exercise(sid)
    elif event == "feedback":
        engine.generate_feedback(sid)
    elif event == "complete":
        engine.complete_unit_check(sid)
    elif event == "flagged":
        engine.record_flagged_turn(
            sid, "mumbled words", Channel.TELEPHONE, {"stt_confidence": 0.2, "low_confidence": True}
        )


def run_fuzz(program, sequences=SEQUENCES, seed=0xD1A):
    """Drive random event sequences; returns violation counters."""
    engine = make_engine(program, entries=CATCHALL_ENTRIES)
    rng = random.Random(seed)
    stats = {"sequences": 0, "illegal_transitions": 0, "crashes": 0, "feedback_violations": 0}

    for i in range(sequences):
        stats["sequences"] += 1
        session = engine.create_session(f"fuzz-{i}")
        for _ in range(rng.randrange(3, MAX_EVENTS + 1)):
            event = rng.choice(EVENTS)
            before = session.state
            try:
                apply_event(engine, session, event, rng)
            except (InvalidState, UnknownExercise):
                if session.state is not before:
                    stats["illegal_transitions"] += 1
            except Exception:  # noqa: BLE001 - the property is "no crashes"
                stats["crashes"] += 1
                break
            if session.state is SessionState.AWAITING_FEEDBACK:
                run = session.pending_run
                if run is None or run.status.value != "ended":
                    stats["feedback_violations"] += 1
        for src, dst in zip(session.state_trace, session.state_trace[1:]):
            if (src, dst) not in LEGAL_EDGES:
                stats["illegal_transitions"] += 1
    return stats


@pytest.mark.slow
def test_ten_thousand_random_sequences_hold_the_state_machine(program):
    stats = run_fuzz(program)
    assert stats["sequences"] == SEQUENCES
    assert stats["crashes"] == 0
    assert stats["illegal_transitions"] == 0
    assert stats["feedback_violations"] == 0
