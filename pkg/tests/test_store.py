"""Record store: round-trips, checksums, journaling, restart."""

import json

import pytest

from dima.errors import CorruptRecord, NotFound
from dima.feedback import CriterionAssessment, FeedbackReport
from dima.metrics import Method, MethodEvent, SourceKind
from dima.program import Channel
from dima.progress import ProgressRecord, UnitProgress, UnitStatus
from dima.store import FileStore, MemoryStore, RecordKind
from dima.transcript import DialogTurn, Speaker, Transcript


@pytest.fixture
def store(tmp_path):
    return FileStore(tmp_path / "store.jsonl")


class TestBasicOperations:
    def test_put_then_get_round_trips(self, store):
        payload = {"session_id": "s1", "state": "idle"}
        store.put(RecordKind.SESSION, "s1", payload, learner_id="l1")
        assert store.get(RecordKind.SESSION, "s1") == payload

    def test_append_preserves_order(self, store):
        for i in range(3):
            store.append(RecordKind.TRANSCRIPT, "run:r1", {"seq": i + 1, "text": f"t{i}"})
        log = store.read_log(RecordKind.TRANSCRIPT, "run:r1")
        assert [entry["seq"] for entry in log] == [1, 2, 3]

    def test_get_unknown_key_is_not_found(self, store):
        with pytest.raises(NotFound):
            store.get(RecordKind.SESSION, "missing")
        with pytest.raises(NotFound):
            store.read_log(RecordKind.TRANSCRIPT, "missing")

    def test_versions_increment_on_rewrite(self, store):
        first = store.put(RecordKind.SESSION, "s1", {"state": "idle"})
        second = store.put(RecordKind.SESSION, "s1", {"state": "tutor_dialog"})
        assert (first.version, second.version) == (1, 2)

    def test_transcripts_are_append_only(self, store):
        with pytest.raises(ValueError):
            store.put(RecordKind.TRANSCRIPT, "run:r1", {"seq": 1})
        with pytest.raises(ValueError):
            store.append(RecordKind.SESSION, "s1", {"state": "idle"})

    def test_list_by_learner_and_kind(self, store):
        store.put(RecordKind.SESSION, "s1", {"x": 1}, learner_id="l1")
        store.put(RecordKind.SESSION, "s2", {"x": 2}, learner_id="l2")
        store.append(RecordKind.METHOD_EVENT, "l1", {"method": "practice"}, learner_id="l1")
        sessions = store.list_by("l1", RecordKind.SESSION)
        events = store.list_by("l1", RecordKind.METHOD_EVENT)
        assert [r.key for r in sessions] == ["s1"]
        assert len(events) == 1


class TestDurability:
    def test_restart_reloads_everything(self, tmp_path):
        path = tmp_path / "store.jsonl"
        store = FileStore(path)
        store.put(RecordKind.PROGRESS, "l1", {"units": {"u": 1}}, learner_id="l1")
        store.append(RecordKind.TRANSCRIPT, "run:r1", {"seq": 1, "text": "hi"})
        store.close()

        reopened = FileStore(path)
        assert reopened.get(RecordKind.PROGRESS, "l1") == {"units": {"u": 1}}
        assert reopened.read_log(RecordKind.TRANSCRIPT, "run:r1")[0]["text"] == "hi"

    def test_checksum_mismatch_fails_loudly(self, tmp_path):
        path = tmp_path / "store.jsonl"
        store = FileStore(path)
        store.put(RecordKind.SESSION, "s1", {"state": "idle"})
        store.close()
        lines = path.read_text(encoding="utf-8").splitlines()
        record = json.loads(lines[0])
        record["payload"]["state"] = "tampered"
        path.write_text(json.dumps(record) + "\n", encoding="utf-8")
        with pytest.raises(CorruptRecord):
            FileStore(path)

    def test_torn_final_line_is_dropped_not_fatal(self, tmp_path):
        path = tmp_path / "store.jsonl"
        store = FileStore(path)
        store.put(RecordKind.SESSION, "s1", {"state": "idle"})
        store.close()
        with path.open("a", encoding="utf-8") as fh:
            fh.write('{"kind": "session", "key": "s2", "ver')  # killed mid-write
        reopened = FileStore(path)
        assert reopened.get(RecordKind.SESSION, "s1") == {"state": "idle"}
        assert not reopened.has(RecordKind.SESSION, "s2")

    def test_interior_unreadable_line_fails_loudly(self, tmp_path):
        path = tmp_path / "store.jsonl"
        store = FileStore(path)
        store.put(RecordKind.SESSION, "s1", {"state": "idle"})
        store.close()
        good_line = path.read_text(encoding="utf-8")
        path.write_text("this is not json\n" + good_line, encoding="utf-8")
        with pytest.raises(CorruptRecord):
            FileStore(path)

    def test_export_import_round_trip(self, tmp_path):
        path = tmp_path / "store.jsonl"
        store = FileStore(path)
        store.put(RecordKind.SESSION, "s1", {"state": "idle"}, learner_id="l1")
        store.append(RecordKind.METHOD_EVENT, "l1", {"method": "practice"}, learner_id="l1")
        dump = store.export_records()
        store.close()

        imported = FileStore.import_records(dump, tmp_path / "copy.jsonl")
        assert imported.get(RecordKind.SESSION, "s1") == {"state": "idle"}
        assert len(imported.read_log(RecordKind.METHOD_EVENT, "l1")) == 1

    def test_purge_drops_old_log_entries(self, tmp_path):
        store = FileStore(tmp_path / "store.jsonl")
        store.append(RecordKind.METHOD_EVENT, "l1", {"n": 1}, learner_id="l1")
        removed = store.purge_older_than(days=0, now=store.list_kind(RecordKind.METHOD_EVENT)[0].written_at + 10)
        assert removed == 1
        assert store.read_log(RecordKind.METHOD_EVENT, "l1") == []


class TestDomainRoundTrips:
    """serialize -> store -> load -> equal, for every persisted domain type."""

    def test_dialog_turn(self, store):
        turn = DialogTurn(
            seq=3,
            speaker=Speaker.AGENT_PERSONA,
            channel=Channel.TELEPHONE,
            text="And nobody does anything!",
            timestamp=1234.5,
            meta={"bundle_role": "sparring", "stt_confidence": 0.9},
        )
        store.append(RecordKind.TRANSCRIPT, "run:r1", turn.to_dict())
        loaded = DialogTurn.from_dict(store.read_log(RecordKind.TRANSCRIPT, "run:r1")[0])
        assert loaded == turn

    def test_transcript(self):
        transcript = Transcript()
        transcript.append(Speaker.LEARNER, Channel.CHAT, "hello", 1.0)
        transcript.append(Speaker.AGENT_TUTOR, Channel.CHAT, "hi there", 2.0)
        clone = Transcript.from_dicts(transcript.to_dicts())
        assert clone.turns == transcript.turns

    def test_progress_record(self, store):
        progress = ProgressRecord(
            learner_id="l1",
            program_id="comm-training",
            units={"unit-02": UnitProgress(status=UnitStatus.COMPLETED, exercises_done=2)},
        )
        store.put(RecordKind.PROGRESS, "l1", progress.to_dict(), learner_id="l1")
        loaded = ProgressRecord.from_dict(store.get(RecordKind.PROGRESS, "l1"))
        assert loaded == progress

    def test_feedback_report(self, store):
        report = FeedbackReport(
            run_id="r1",
            per_criterion=(
                CriterionAssessment("greeting", "Nice opening.", 1.0),
                CriterionAssessment("next-step", "No step agreed.", 0.0),
            ),
            narrative="Well done overall.",
            tips=("Try naming the next step first.",),
            overall=0.4,
        )
        store.put(RecordKind.FEEDBACK, "r1", report.to_dict(), learner_id="l1")
        loaded = FeedbackReport.from_dict(store.get(RecordKind.FEEDBACK, "r1"))
        assert loaded == report

    def test_method_event(self, store):
        event = MethodEvent(
            learner_id="l1",
            method=Method.PRACTICE,
            source=SourceKind.EXERCISE_RUN,
            timestamp=99.0,
            unit_id="unit-05",
        )
        store.append(RecordKind.METHOD_EVENT, "l1", event.to_dict(), learner_id="l1")
        loaded = MethodEvent.from_dict(store.read_log(RecordKind.METHOD_EVENT, "l1")[0])
        assert loaded == event

    def test_session_round_trip_through_engine(self, program, tmp_path):
        from conftest import make_engine
        from dima.store import FileStore

        store = FileStore(tmp_path / "s.jsonl")
        engine = make_engine(program, store=store)
        session = engine.create_session("l1")
        engine.handle_learner_message(session.session_id, "About unit 2 please")
        engine.start_exercise(session.session_id, "ex-greeting-call")
        store.close()

        engine2 = make_engine(program, store=FileStore(tmp_path / "s.jsonl"))
        loaded = engine2.get_session(session.session_id)
        assert loaded.state == session.state
        assert loaded.active_unit == session.active_unit
        assert loaded.tutor_transcript.turns == session.tutor_transcript.turns
        assert loaded.active_exercise.to_dict() == session.active_exercise.to_dict()
        assert loaded.active_exercise.transcript.turns == session.active_exercise.transcript.turns


class TestMemoryStoreParity:
    def test_memory_store_supports_same_operations(self):
        store = MemoryStore()
        store.put(RecordKind.SESSION, "s1", {"a": 1}, learner_id="l1")
        store.append(RecordKind.TRANSCRIPT, "t1", {"seq": 1}, learner_id="l1")
        assert store.get(RecordKind.SESSION, "s1") == {"a": 1}
        assert store.read_log(RecordKind.TRANSCRIPT, "t1") == [{"seq": 1}]
        assert store.has(RecordKind.SESSION, "s1")
        assert not store.has(RecordKind.SESSION, "s2")
