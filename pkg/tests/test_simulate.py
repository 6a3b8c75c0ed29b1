"""Simulation driver: action coverage beyond the CLI golden checks."""

from importlib import resources
from pathlib import Path

import pytest

from dima.errors import ParseError
from dima.simulate import run_simulation

GOLDEN_DIR = Path(__file__).parent / "golden"


def script_path(name: str) -> str:
    return str(resources.files("dima").joinpath(f"data/simulations/{name}"))


BASE_SCRIPT = {
    "title": "inline",
    "learner": {"name": "Kim", "tutor_gender": "female"},
    "provider_script": [
        {"match": {"role": "tutor", "purpose": "criterion"}, "response": "SCORE: 1.0\nGood."},
        {
            "match": {"role": "tutor", "purpose": "narrative"},
            "response": "Fine.\nTIP: Keep going.",
        },
        {"match": {"role": "tutor"}, "response": "Ask away."},
        {"match": {"role": "sparring"}, "response": "Go on."},
    ],
}


class TestGoldenScripts:
    def test_email_golden_is_byte_identical(self):
        text = run_simulation(script_path("unit7_email_practice.yaml"))
        golden = (GOLDEN_DIR / "unit7_email_practice.txt").read_text(encoding="utf-8")
        assert text == golden

    def test_phone_golden_is_byte_identical(self):
        text = run_simulation(script_path("unit5_phone_practice.yaml"))
        golden = (GOLDEN_DIR / "unit5_phone_practice.txt").read_text(encoding="utf-8")
        assert text == golden


class TestActions:
    def test_hangup_ends_the_call(self):
        script = {
            **BASE_SCRIPT,
            "actions": [
                {"start_exercise": "ex-greeting-call"},
                {"phone_audio": "Good morning, city services."},
                {"hangup": True},
                {"end_run": True},
            ],
        }
        text = run_simulation(script)
        assert "ended: learner_ended" in text
        assert "progress: unit-02 completed" in text

    def test_low_confidence_audio_renders_clarification(self):
        script = {
            **BASE_SCRIPT,
            "actions": [
                {"start_exercise": "ex-greeting-call"},
                {"phone_audio": "mumble mumble", "confidence": 0.2},
            ],
        }
        text = run_simulation(script)
        assert "repeat" in text
        assert "Go on." not in text  # no persona reply for the flagged turn

    def test_exercise_text_action_over_chat(self):
        script = {
            **BASE_SCRIPT,
            "actions": [
                {"start_exercise": "ex-service-pitch"},
                {"exercise_text": "The service promise means we answer reliably."},
                {"end_run": True},
            ],
        }
        text = run_simulation(script)
        assert "exercise ex-service-pitch over chat" in text
        assert "Go on." in text

    def test_unknown_action_is_loud(self):
        script = {**BASE_SCRIPT, "actions": [{"dance": True}]}
        with pytest.raises(ParseError, match="unknown simulation action"):
            run_simulation(script)

    def test_max_turns_cap_renders_ended_marker(self):
        script = {
            **BASE_SCRIPT,
            "actions": [
                {"start_exercise": "ex-greeting-call"},  # max_turns 4 -> cap 8
                {"exercise_text": "one"},
                {"exercise_text": "two"},
                {"exercise_text": "three"},
                {"exercise_text": "four"},
                {"end_run": True},
            ],
        }
        text = run_simulation(script)
        assert "ended: max_turns" in text
