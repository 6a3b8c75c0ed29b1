import sys

import pytest

from dima.engine import DeterministicIds, DialogEngine, SteppingClock
from dima.program import load_fixture_program
from dima.providers import ScriptedProvider, ScriptEntry
from dima.store import MemoryStore


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        status = "PASS" if report.passed else "FAIL"
        name = report.nodeid.split("::")[-1]
        print(f"ACCEPTANCE {status}: {name}", file=sys.stderr)

# Catch-all script: specific purposes first, generic role fallbacks last.
CATCHALL_ENTRIES = [
    ScriptEntry(role="tutor", purpose="criterion", response="SCORE: 0.5\nSteady work on this point."),
    ScriptEntry(
        role="tutor",
        purpose="narrative",
        response="A solid session overall.\nTIP: Keep your greeting formula within reach.",
    ),
    ScriptEntry(role="tutor", response="Happy to help with that part of the training."),
    ScriptEntry(role="sparring", response="And what exactly do you intend to do about it?"),
]


@pytest.fixture(scope="session")
def program():
    return load_fixture_program()


@pytest.fixture
def provider():
    return ScriptedProvider(CATCHALL_ENTRIES)


@pytest.fixture
def engine(program, provider):
    return DialogEngine(
        program,
        provider,
        MemoryStore(),
        clock=SteppingClock(),
        ids=DeterministicIds(),
    )


def make_engine(program, entries=None, store=None, config=None, clock=None):
    return DialogEngine(
        program,
        ScriptedProvider(entries if entries is not None else CATCHALL_ENTRIES),
        store if store is not None else MemoryStore(),
        config=config,
        clock=clock or SteppingClock(),
        ids=DeterministicIds(),
    )
