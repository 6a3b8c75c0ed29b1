"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class DimaError(Exception):
    """Base class for all engine errors."""


class ParseError(DimaError):
    """A source document could not be parsed at all."""


class ValidationError(DimaError):
    """A parsed document violates one or more invariants.

    Carries *every* violation found, never just the first.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnknownProgram(DimaError):
    pass


class UnknownUnit(DimaError):
    pass


class UnknownExercise(DimaError):
    pass


class UnknownSession(DimaError):
    pass


class UnknownRun(DimaError):
    pass


class InvalidState(DimaError):
    """An event arrived in a session state that does not permit it."""

    def __init__(self, event: str, state: str):
        self.event = event
        self.state = state
        super().__init__(f"event {event!r} not allowed in state {state!r}")


class ContextResolutionError(DimaError):
    """Prompt assembly referenced a unit/resource/scenario that does not resolve."""


class TemplateError(DimaError):
    """A directive template references a placeholder with no value."""


class ChannelUnavailable(DimaError):
    pass


class ThreadMismatch(DimaError):
    """Inbound e-mail does not belong to the active run's thread."""


class SttFailure(DimaError):
    """Speech-to-text failed outright (no transcript at all)."""


class DeliveryError(DimaError):
    """Outbound delivery on a channel failed."""


class ProviderError(DimaError):
    """Base class for text-generation failures the engine degrades around."""


class ProviderTimeout(ProviderError):
    pass


class RemoteError(ProviderError):
    def __init__(self, status: int, detail: str = ""):
        self.status = status
        super().__init__(f"remote provider returned {status}: {detail}")


class ScriptMiss(DimaError):
    """The scripted provider has no entry for a request.

    Deliberately *not* a ProviderError: a miss is a test-authoring bug and
    must surface loudly instead of triggering the in-character fallbacks.
    """


class PlanExecutionError(ProviderError):
    """A call plan member failed even after its retry.

    ``partial`` holds the results gathered so far, in declaration order,
    with ``None`` for requests that failed or were never dispatched.
    """

    def __init__(self, message: str, partial: list):
        self.partial = partial
        super().__init__(message)


class AuthError(DimaError):
    """Missing, unknown, or expired API token."""


class NotFound(DimaError):
    pass


class CorruptRecord(DimaError):
    """A stored record failed its checksum; the store refuses to return it."""


class MixedLearners(DimaError):
    """An aggregation received events from more than one learner."""


class UnknownSource(DimaError):
    """An interaction event carries a source kind outside the taxonomy."""
