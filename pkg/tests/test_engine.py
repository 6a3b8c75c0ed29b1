"""Dialog-engine state machine, feedback generation, progress folding."""

import pytest

from conftest import CATCHALL_ENTRIES, make_engine
from dima.engine import (
    DialogEngine,
    EndReason,
    RunStatus,
    SessionState,
    SteppingClock,
    DeterministicIds,
)
from dima.errors import (
    ChannelUnavailable,
    InvalidState,
    ProviderError,
    UnknownExercise,
)
from dima.program import Channel
from dima.progress import UnitStatus
from dima.providers import ScriptEntry
from dima.store import MemoryStore
from dima.transcript import Speaker


class ManualClock:
    def __init__(self, start=1_000_000.0):
        self.value = start

    def __call__(self):
        self.value += 0.001
        return self.value

    def advance(self, seconds):
        self.value += seconds


DEESCALATION_FEEDBACK = [
    ScriptEntry(
        role="tutor", purpose="criterion", criterion="acknowledge-feelings",
        response="SCORE: 1.0\nStrong empathic opening.",
    ),
    ScriptEntry(
        role="tutor", purpose="criterion", criterion="stay-factual",
        response="SCORE: 0.5\nMostly calm, one slip.",
    ),
    ScriptEntry(
        role="tutor", purpose="criterion", criterion="concrete-step",
        response="SCORE: 0.0\nNo concrete step agreed.",
    ),
    ScriptEntry(
        role="tutor", purpose="narrative",
        response="Good session.\nTIP: Offer the next step yourself.",
    ),
]


def start_session(engine, learner="l1"):
    return engine.create_session(learner)


def run_to_awaiting_feedback(engine, session, exercise="ex-angry-citizen-parking"):
    engine.start_exercise(session.session_id, exercise)
    engine.exercise_turn(session.session_id, "I understand your frustration completely.")
    engine.end_exercise(session.session_id)
    return session


class TestHandleLearnerMessage:
    def test_idle_question_reaches_tutor_and_references_unit(self, program):
        objective = program.unit("unit-03").objective
        engine = make_engine(
            program,
            entries=[
                ScriptEntry(role="tutor", pattern="unit 3", response=f"Unit 3: {objective}"),
                *CATCHALL_ENTRIES,
            ],
        )
        session = start_session(engine)
        assert session.state is SessionState.IDLE
        reply = engine.handle_learner_message(session.session_id, "What does unit 3 cover?")
        assert session.state is SessionState.TUTOR_DIALOG
        assert objective in reply.text
        assert session.active_unit == "unit-03"

    def test_off_topic_text_redirects_without_state_change(self, engine):
        session = start_session(engine)
        engine.handle_learner_message(session.session_id, "Tell me about unit 2 please")
        reply = engine.handle_learner_message(session.session_id, "What's the weather tomorrow?")
        assert reply.redirected
        assert "training" in reply.text
        assert session.state is SessionState.TUTOR_DIALOG

    def test_message_during_exercise_is_invalid_state(self, engine):
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-greeting-call")
        with pytest.raises(InvalidState):
            engine.handle_learner_message(session.session_id, "Can I ask something?")
        assert session.state is SessionState.EXERCISE_ACTIVE

    def test_exercise_intent_returns_offer(self, engine):
        session = start_session(engine)
        engine.handle_learner_message(session.session_id, "Tell me about unit 5")
        reply = engine.handle_learner_message(session.session_id, "I would like to practice now")
        assert reply.offer is not None
        assert reply.offer.unit_id == "unit-05"
        assert "ex-angry-citizen-parking" in reply.offer.exercise_ids

    def test_provider_failure_degrades_to_apologetic_fallback(self, program):
        class Down:
            def generate(self, request):
                raise ProviderError("outage")

        engine = DialogEngine(program, Down(), MemoryStore(), clock=SteppingClock(), ids=DeterministicIds())
        session = start_session(engine)
        reply = engine.handle_learner_message(session.session_id, "How do I greet a caller?")
        assert "sorry" in reply.text.lower()
        assert reply.turn.meta.get("fallback") is True
        assert session.state is SessionState.TUTOR_DIALOG

    def test_both_turns_recorded_on_tutor_transcript(self, engine):
        session = start_session(engine)
        engine.handle_learner_message(session.session_id, "How do I greet a caller?")
        turns = session.tutor_transcript.turns
        assert [t.speaker for t in turns] == [Speaker.LEARNER, Speaker.AGENT_TUTOR]


class TestStartExercise:
    def test_telephone_exercise_opens_with_scenario_line(self, engine, program):
        session = start_session(engine)
        run, opening = engine.start_exercise(session.session_id, "ex-angry-citizen-parking")
        assert session.state is SessionState.EXERCISE_ACTIVE
        assert opening.speaker is Speaker.AGENT_PERSONA
        assert opening.text == program.exercise("ex-angry-citizen-parking").scenario.opening_line
        assert run.channel is Channel.TELEPHONE
        assert run.call_id

    def test_dangling_exercise_id_leaves_state_unchanged(self, engine):
        session = start_session(engine)
        engine.handle_learner_message(session.session_id, "hello, a question about the training")
        with pytest.raises(UnknownExercise):
            engine.start_exercise(session.session_id, "ex-nonexistent")
        assert session.state is SessionState.TUTOR_DIALOG
        assert session.active_exercise is None

    def test_start_while_active_is_invalid_state(self, engine):
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-greeting-call")
        with pytest.raises(InvalidState):
            engine.start_exercise(session.session_id, "ex-noise-complaint")
        assert session.state is SessionState.EXERCISE_ACTIVE

    def test_channel_unavailable_reverts_to_tutor_dialog(self, engine):
        def refuse(session, run):
            raise ChannelUnavailable("no line")

        engine.channel_opener = refuse
        session = start_session(engine)
        with pytest.raises(ChannelUnavailable):
            engine.start_exercise(session.session_id, "ex-greeting-call")
        assert session.state is SessionState.TUTOR_DIALOG
        assert session.active_exercise is None

    def test_channel_override_respected(self, engine):
        session = start_session(engine)
        run, _ = engine.start_exercise(session.session_id, "ex-greeting-call", Channel.CHAT)
        assert run.channel is Channel.CHAT

    def test_setup_state_appears_in_trace(self, engine):
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-greeting-call")
        assert "exercise_setup" in session.state_trace
        assert session.state_trace[-1] == "exercise_active"


class TestExerciseTurn:
    def test_within_limit_appends_and_stays_active(self, engine):
        session = start_session(engine)
        run, _ = engine.start_exercise(session.session_id, "ex-greeting-call")
        reply, run = engine.exercise_turn(session.session_id, "Good morning, city services.")
        assert reply is not None and reply.speaker is Speaker.AGENT_PERSONA
        assert run.status is RunStatus.RUNNING
        assert session.state is SessionState.EXERCISE_ACTIVE
        assert run.turn_count == 3

    def test_reaching_turn_cap_ends_run(self, engine, program):
        session = start_session(engine)
        max_turns = program.exercise("ex-greeting-call").max_turns
        run, _ = engine.start_exercise(session.session_id, "ex-greeting-call")
        reply = object()
        while session.state is SessionState.EXERCISE_ACTIVE:
            reply, run = engine.exercise_turn(session.session_id, "And another thing.")
        assert run.status is RunStatus.ENDED
        assert run.end_reason is EndReason.MAX_TURNS
        assert run.turn_count == 2 * max_turns
        assert reply is None  # the capping learner turn gets no persona reply
        assert session.state is SessionState.AWAITING_FEEDBACK

    def test_end_phrase_ends_run(self, engine):
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-greeting-call")
        reply, run = engine.exercise_turn(session.session_id, "Thanks for calling, goodbye!")
        assert reply is None
        assert run.end_reason is EndReason.LEARNER_ENDED
        assert session.state is SessionState.AWAITING_FEEDBACK

    def test_goal_marker_ends_run_and_is_stripped(self, program):
        engine = make_engine(
            program,
            entries=[
                ScriptEntry(role="sparring", response="Fine, that works. <<dima:goal-reached>>"),
                *CATCHALL_ENTRIES,
            ],
        )
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-greeting-call")
        reply, run = engine.exercise_turn(session.session_id, "I can register you right now.")
        assert run.end_reason is EndReason.GOAL_REACHED
        assert "<<dima:goal-reached>>" not in reply.text
        assert session.state is SessionState.AWAITING_FEEDBACK

    def test_provider_failure_keeps_turn_with_holding_line(self, program):
        class Down:
            def generate(self, request):
                raise ProviderError("outage")

        engine = DialogEngine(program, Down(), MemoryStore(), clock=SteppingClock(), ids=DeterministicIds())
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-greeting-call")
        reply, run = engine.exercise_turn(session.session_id, "Hello?")
        assert reply is not None
        assert reply.meta.get("fallback") is True
        assert run.turn_count == 3  # learner turn still recorded, plus holding line
        assert session.state is SessionState.EXERCISE_ACTIVE

    def test_turn_without_exercise_is_invalid(self, engine):
        session = start_session(engine)
        with pytest.raises(InvalidState):
            engine.exercise_turn(session.session_id, "hello?")
        assert session.state is SessionState.IDLE


class TestGenerateFeedback:
    def test_equal_full_scores_make_overall_one(self, program):
        entries = [
            ScriptEntry(role="tutor", purpose="criterion", response="SCORE: 1.0\nPerfect."),
            ScriptEntry(role="tutor", purpose="narrative", response="Great.\nTIP: Keep it up."),
            *CATCHALL_ENTRIES,
        ]
        engine = make_engine(program, entries=entries)
        session = start_session(engine)
        run_to_awaiting_feedback(engine, session)
        report = engine.generate_feedback(session.session_id)
        assert report.overall == pytest.approx(1.0, abs=1e-9)
        assert session.state is SessionState.FEEDBACK_DELIVERED

    def test_weighted_mean_matches_hand_computation(self, program):
        # weights (0.5, 0.3, 0.2) x scores (1.0, 0.5, 0.0) -> 0.65
        engine = make_engine(program, entries=[*DEESCALATION_FEEDBACK, *CATCHALL_ENTRIES])
        session = start_session(engine)
        run_to_awaiting_feedback(engine, session)
        report = engine.generate_feedback(session.session_id)
        assert report.overall == pytest.approx(0.65, abs=1e-9)
        assert not report.partial

    def test_criteria_set_equals_rubric_set(self, program):
        engine = make_engine(program, entries=[*DEESCALATION_FEEDBACK, *CATCHALL_ENTRIES])
        session = start_session(engine)
        run_to_awaiting_feedback(engine, session)
        report = engine.generate_feedback(session.session_id)
        rubric = program.rubric_for("ex-angry-citizen-parking")
        assert {c.criterion_id for c in report.per_criterion} == {c.id for c in rubric.criteria}

    def test_overall_recomputes_from_report(self, program):
        engine = make_engine(program, entries=[*DEESCALATION_FEEDBACK, *CATCHALL_ENTRIES])
        session = start_session(engine)
        run_to_awaiting_feedback(engine, session)
        report = engine.generate_feedback(session.session_id)
        rubric = program.rubric_for("ex-angry-citizen-parking")
        weights = {c.id: c.weight for c in rubric.criteria}
        recomputed = sum(weights[c.criterion_id] * c.score for c in report.per_criterion)
        assert abs(recomputed - report.overall) <= 1e-9

    def test_wrong_state_is_invalid(self, engine):
        session = start_session(engine)
        engine.handle_learner_message(session.session_id, "hello about the training")
        with pytest.raises(InvalidState):
            engine.generate_feedback(session.session_id)

    def test_one_broken_criterion_degrades_to_partial(self, program):
        entries = [
            ScriptEntry(
                role="tutor", purpose="criterion", criterion="stay-factual",
                response="no score line here",
            ),
            *DEESCALATION_FEEDBACK,
            *CATCHALL_ENTRIES,
        ]
        engine = make_engine(program, entries=entries)
        session = start_session(engine)
        run_to_awaiting_feedback(engine, session)
        report = engine.generate_feedback(session.session_id)
        assert report.partial
        assert "stay-factual" in report.notice
        assert {c.criterion_id for c in report.per_criterion} == {
            "acknowledge-feelings", "concrete-step",
        }
        assert session.state is SessionState.FEEDBACK_DELIVERED

    def test_feedback_delivered_in_tutor_voice_on_chat(self, program):
        engine = make_engine(program, entries=[*DEESCALATION_FEEDBACK, *CATCHALL_ENTRIES])
        session = start_session(engine)
        run_to_awaiting_feedback(engine, session)
        engine.generate_feedback(session.session_id)
        last = session.tutor_transcript.last()
        assert last.speaker is Speaker.AGENT_TUTOR
        assert last.channel is Channel.CHAT
        assert last.meta.get("bundle_role") == "tutor"
        assert "feedback" in last.text.lower()

    def test_scores_hidden_by_default_in_delivery(self, program):
        engine = make_engine(program, entries=[*DEESCALATION_FEEDBACK, *CATCHALL_ENTRIES])
        session = start_session(engine)
        run_to_awaiting_feedback(engine, session)
        engine.generate_feedback(session.session_id)
        assert "0.65" not in session.tutor_transcript.last().text

    def test_report_has_at_least_one_tip(self, program):
        engine = make_engine(program, entries=[*DEESCALATION_FEEDBACK, *CATCHALL_ENTRIES])
        session = start_session(engine)
        run_to_awaiting_feedback(engine, session)
        report = engine.generate_feedback(session.session_id)
        assert len(report.tips) >= 1


class TestCompleteUnitCheck:
    def _delivered(self, program, exercise="ex-angry-citizen-parking"):
        engine = make_engine(program, entries=[*DEESCALATION_FEEDBACK, *CATCHALL_ENTRIES])
        session = start_session(engine)
        engine.handle_learner_message(session.session_id, "Tell me about unit 5")
        run_to_awaiting_feedback(engine, session, exercise)
        engine.generate_feedback(session.session_id)
        return engine, session

    def test_single_exercise_completes_unit(self, program):
        engine, session = self._delivered(program)
        progress = engine.complete_unit_check(session.session_id)
        assert progress.unit_progress("unit-05").status is UnitStatus.COMPLETED
        assert session.state is SessionState.TUTOR_DIALOG

    def test_two_exercise_policy_stays_in_progress(self, program):
        engine = make_engine(program)
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-email-complaint")
        engine.exercise_turn(session.session_id, "Dear Mr. Vogel, thank you for writing. Goodbye")
        engine.generate_feedback(session.session_id)
        progress = engine.complete_unit_check(session.session_id)
        assert progress.unit_progress("unit-08").status is UnitStatus.IN_PROGRESS

    def test_failed_threshold_attempt_does_not_count(self, program):
        # ex-angry-citizen-parking requires overall >= 0.5
        entries = [
            ScriptEntry(role="tutor", purpose="criterion", response="SCORE: 0.0\nNot yet."),
            ScriptEntry(role="tutor", purpose="narrative", response="Keep at it.\nTIP: Try once more."),
            *CATCHALL_ENTRIES,
        ]
        engine = make_engine(program, entries=entries)
        session = start_session(engine)
        run_to_awaiting_feedback(engine, session)
        engine.generate_feedback(session.session_id)
        progress = engine.complete_unit_check(session.session_id)
        unit = progress.unit_progress("unit-05")
        assert unit.exercises_done == 0
        assert unit.status is UnitStatus.IN_PROGRESS

    def test_threshold_met_counts_normally(self, program):
        engine = make_engine(program, entries=[*DEESCALATION_FEEDBACK, *CATCHALL_ENTRIES])
        session = start_session(engine)
        run_to_awaiting_feedback(engine, session)  # overall 0.65 >= 0.5
        engine.generate_feedback(session.session_id)
        progress = engine.complete_unit_check(session.session_id)
        assert progress.unit_progress("unit-05").exercises_done == 1
        assert progress.unit_progress("unit-05").status is UnitStatus.COMPLETED

    def test_repeat_invocation_is_idempotent(self, program):
        engine, session = self._delivered(program)
        first = engine.complete_unit_check(session.session_id)
        second = engine.complete_unit_check(session.session_id)
        assert first == second
        assert session.state is SessionState.TUTOR_DIALOG

    def test_wrong_state_is_invalid(self, engine):
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-greeting-call")
        with pytest.raises(InvalidState):
            engine.complete_unit_check(session.session_id)


class TestSessionTimeout:
    def test_stale_exercise_auto_ends_with_channel_error(self, program):
        clock = ManualClock()
        engine = make_engine(program, clock=clock)
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-greeting-call")
        clock.advance(61 * 60)
        with pytest.raises(InvalidState):
            engine.exercise_turn(session.session_id, "Still there?")
        assert session.state is SessionState.AWAITING_FEEDBACK
        assert session.pending_run.end_reason is EndReason.CHANNEL_ERROR

    def test_fresh_exercise_not_expired(self, program):
        clock = ManualClock()
        engine = make_engine(program, clock=clock)
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-greeting-call")
        clock.advance(10 * 60)
        reply, run = engine.exercise_turn(session.session_id, "Hello, how can I help?")
        assert run.status is RunStatus.RUNNING


class TestRoleIntegrity:
    def test_every_agent_turn_carries_its_bundle_role(self, program):
        engine = make_engine(program, entries=[*DEESCALATION_FEEDBACK, *CATCHALL_ENTRIES])
        session = start_session(engine)
        engine.handle_learner_message(session.session_id, "How do I greet a caller?")
        run_to_awaiting_feedback(engine, session)
        engine.generate_feedback(session.session_id)
        for turn in session.tutor_transcript.turns:
            if turn.speaker is Speaker.AGENT_TUTOR:
                assert turn.meta.get("bundle_role") == "tutor"
        run = session.pending_run
        for turn in run.transcript.turns:
            if turn.speaker is Speaker.AGENT_PERSONA:
                assert turn.meta.get("bundle_role") == "sparring"

    def test_transcript_seqs_strictly_increase(self, program):
        engine = make_engine(program)
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-noise-complaint")
        for _ in range(3):
            engine.exercise_turn(session.session_id, "I see, tell me more.")
        seqs = [t.seq for t in session.active_exercise.transcript.turns]
        assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)


class TestReminderHook:
    def test_reminder_is_passive_and_state_preserving(self, engine):
        session = start_session(engine)
        text = engine.remind(session.session_id)
        assert text is not None
        assert session.state is SessionState.IDLE

    def test_reminder_never_interrupts_exercise(self, engine):
        session = start_session(engine)
        engine.start_exercise(session.session_id, "ex-greeting-call")
        assert engine.remind(session.session_id) is None
        assert session.state is SessionState.EXERCISE_ACTIVE


class TestMethodEventEmission:
    def test_full_flow_emits_inquisitory_practice_reflective(self, program):
        engine = make_engine(program, entries=[*DEESCALATION_FEEDBACK, *CATCHALL_ENTRIES])
        session = start_session(engine)
        engine.handle_learner_message(session.session_id, "How do I greet a caller?")
        run_to_awaiting_feedback(engine, session)
        engine.generate_feedback(session.session_id)
        engine.record_resource_view(session.learner_id, "unit-05", "res-deescalation-video")
        methods = [e.method.value for e in engine.method_events_for(session.learner_id)]
        assert methods.count("inquisitory") == 1
        assert methods.count("practice") == 1
        assert methods.count("reflective") == 1
        assert methods.count("expository") == 1
