"""Role-aware prompt assembly and topic confinement.

Every directive template carries a fixed sentinel marker, so tests can prove
role separation by plain substring scans: tutor bundles must never contain
the persona marker and sparring bundles must never contain the tutor or
assessment markers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources as importlib_resources
from typing import Sequence

from .errors import ContextResolutionError, TemplateError
from .program import Criterion, FeedbackRubric, Scenario, TrainingProgram
from .transcript import DialogTurn

TUTOR_MARKER = "<<dima:role=tutor>>"
PERSONA_MARKER = "<<dima:role=sparring>>"
CONFINEMENT_MARKER = "<<dima:confinement>>"
ASSESSMENT_MARKER = "<<dima:assessment>>"

DEFAULT_WINDOW_SIZE = 20

_PLACEHOLDER_RE = re.compile(r"\{\{([a-z_]+)\}\}")

REGISTER_CLAUSES = {
    "informal": (
        "Keep an informal, encouraging tone and stay on a first-name basis "
        "with the learner."
    ),
    "formal": "Keep a polite, formal tone and address the learner formally.",
}


class Gender(str, Enum):
    FEMALE = "female"
    MALE = "male"


# The voice follows the learner's gender choice for the tutor.
VOICE_BY_GENDER = {
    Gender.FEMALE: "voice-f-01",
    Gender.MALE: "voice-m-01",
}


@dataclass(frozen=True)
class TutorProfile:
    name: str = "DIMA"
    gender: Gender = Gender.FEMALE
    register: str = "informal"

    @property
    def voice_id(self) -> str:
        return VOICE_BY_GENDER[self.gender]


class RoleKind(str, Enum):
    TUTOR = "tutor"
    SPARRING = "sparring"


@dataclass(frozen=True)
class AgentRole:
    kind: RoleKind
    scenario: Scenario | None = None

    def __post_init__(self):
        if self.kind is RoleKind.SPARRING and self.scenario is None:
            raise ValueError("a sparring-partner role always carries a scenario")
        if self.kind is RoleKind.TUTOR and self.scenario is not None:
            raise ValueError("the tutor role never carries a scenario")

    @classmethod
    def tutor(cls) -> "AgentRole":
        return cls(kind=RoleKind.TUTOR)

    @classmethod
    def sparring(cls, scenario: Scenario) -> "AgentRole":
        return cls(kind=RoleKind.SPARRING, scenario=scenario)


@dataclass(frozen=True)
class PromptBundle:
    system_directives: tuple[str, ...]
    history_window: tuple[DialogTurn, ...]
    confinement_clause: str
    role_tag: AgentRole

    def as_text(self) -> str:
        """Canonical rendering sent to a provider; stable for equal bundles."""
        parts = list(self.system_directives)
        if self.confinement_clause:
            parts.append(self.confinement_clause)
        if self.history_window:
            parts.append("Conversation so far:")
            parts.extend(
                f"{t.speaker.value}: {t.text}" for t in self.history_window
            )
        return "\n\n".join(parts)


@dataclass(frozen=True)
class PromptContext:
    program: TrainingProgram
    unit_id: str | None = None
    learner_name: str = ""


@lru_cache(maxsize=None)
def _template(name: str) -> str:
    ref = importlib_resources.files("dima").joinpath(f"templates/{name}.txt")
    return ref.read_text(encoding="utf-8").strip()


def render_template(name: str, values: dict[str, str] | None = None) -> str:
    """Fill ``{{placeholder}}`` slots; unknown placeholders fail loudly."""
    text = _template(name)
    values = values or {}

    def fill(match: re.Match) -> str:
        key = match.group(1)
        if key not in values:
            raise TemplateError(f"template {name!r} needs a value for {{{{{key}}}}}")
        return str(values[key])

    return _PLACEHOLDER_RE.sub(fill, text)


def _resolve_unit(context: PromptContext):
    if context.unit_id is None:
        return None
    unit = context.program.unit(context.unit_id)
    if unit is None:
        raise ContextResolutionError(
            f"unit {context.unit_id!r} does not exist in program {context.program.id!r}"
        )
    return unit


def _tutor_directives(profile: TutorProfile, context: PromptContext) -> list[str]:
    register_clause = REGISTER_CLAUSES.get(profile.register, REGISTER_CLAUSES["informal"])
    directives = [
        render_template(
            "tutor_system",
            {
                "tutor_name": profile.name,
                "program_title": context.program.title,
                "register_clause": register_clause,
                "language": context.program.language,
            },
        )
    ]
    unit = _resolve_unit(context)
    if unit is not None:
        resource_lines = "\n".join(
            f"- {r.title} ({r.kind.value}): {r.content_summary}" for r in unit.resources
        ) or "- (none for this unit)"
        rule_lines = "\n".join(
            f"- {rule.statement}"
            for rule in context.program.guidelines
            if not rule.unit_refs or unit.id in rule.unit_refs
        ) or "- (none)"
        directives.append(
            render_template(
                "tutor_context",
                {
                    "unit_title": unit.title,
                    "unit_id": unit.id,
                    "unit_minutes": str(unit.estimated_minutes),
                    "unit_objective": unit.objective,
                    "resource_lines": resource_lines,
                    "rule_lines": rule_lines,
                },
            )
        )
    return directives


def _sparring_directives(scenario: Scenario) -> list[str]:
    persona = scenario.persona
    goal_lines = "\n".join(f"- {g}" for g in scenario.goals)
    directives = [
        render_template(
            "sparring_system",
            {
                "persona_name": persona.name,
                "mood": persona.mood.value,
                "persona_kind": persona.kind.value,
                "formality": persona.formality.value,
                "situation": scenario.situation,
                "opening_line": scenario.opening_line,
                "goal_lines": goal_lines,
            },
        )
    ]
    if persona.persistence.value == "persistent":
        directives.append(render_template("sparring_persistence"))
    return directives


def _window(history: Sequence[DialogTurn], window_size: int) -> tuple[DialogTurn, ...]:
    turns = list(history)
    for earlier, later in zip(turns, turns[1:]):
        if later.seq <= earlier.seq:
            raise ValueError("history turns must be ordered")
    return tuple(turns[-window_size:]) if window_size > 0 else ()


def assemble_prompt(
    role: AgentRole,
    profile: TutorProfile,
    history: Sequence[DialogTurn],
    context: PromptContext,
    window_size: int = DEFAULT_WINDOW_SIZE,
) -> PromptBundle:
    """Build the exact conditioning text for the provider.

    Pure: identical inputs produce identical bundles. Tutor bundles embed the
    current unit's resources and always carry the confinement clause;
    sparring bundles embed persona and situation and never any tutor or
    assessment directive.
    """
    window = _window(history, window_size)
    if role.kind is RoleKind.TUTOR:
        return PromptBundle(
            system_directives=tuple(_tutor_directives(profile, context)),
            history_window=window,
            confinement_clause=render_template("confinement_clause"),
            role_tag=role,
        )
    assert role.scenario is not None
    return PromptBundle(
        system_directives=tuple(_sparring_directives(role.scenario)),
        history_window=window,
        confinement_clause="",
        role_tag=role,
    )


def transcript_block(turns: Sequence[DialogTurn]) -> str:
    return "\n".join(f"{t.speaker.value}: {t.text}" for t in turns) or "(empty)"


def assemble_feedback_criterion_prompt(
    profile: TutorProfile,
    turns: Sequence[DialogTurn],
    criterion: Criterion,
    context: PromptContext,
) -> PromptBundle:
    """Tutor-voiced assessment bundle for exactly one rubric criterion."""
    directive = render_template(
        "feedback_criterion",
        {
            "criterion_description": criterion.description,
            "transcript_text": transcript_block(turns),
        },
    )
    return PromptBundle(
        system_directives=tuple(_tutor_directives(profile, context)) + (directive,),
        history_window=(),
        confinement_clause=render_template("confinement_clause"),
        role_tag=AgentRole.tutor(),
    )


def assemble_feedback_narrative_prompt(
    profile: TutorProfile,
    rubric: FeedbackRubric,
    context: PromptContext,
    criterion_results: str,
) -> PromptBundle:
    """Synthesis bundle; ``criterion_results`` may contain plan placeholders."""
    tip_line = (
        f"Guidance for the tips: {rubric.tip_guidance}" if rubric.tip_guidance else ""
    )
    directive = render_template(
        "feedback_narrative",
        {"tip_guidance_line": tip_line, "criterion_results": criterion_results},
    )
    return PromptBundle(
        system_directives=tuple(_tutor_directives(profile, context)) + (directive,),
        history_window=(),
        confinement_clause=render_template("confinement_clause"),
        role_tag=AgentRole.tutor(),
    )


# ---------------------------------------------------------------------------
# Topic confinement
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-zà-öø-ÿß]+")

# Function words that never count as topic evidence (program language plus
# English, since engine logic is language agnostic but fixtures mix both).
STOPWORDS = frozenset(
    """
    the a an and or but if then else when what which who whom how why where
    is are was were be been being am do does did doing have has had having
    can could may might must shall should will would not no nor you your
    yours i me my we us our they them their he she it its this that these
    those there here with without about into onto from for of to in on at
    by as so such than too very just also again more most some any all
    please tell know like want need going today tomorrow yesterday now
    one two three first second next last good bad big small new old every
    give gives take takes keep keeps kept make makes made get gets got
    come comes came look looks say says said see sees saw think thinks
    thought way thing things something anything nothing everything still
    full half day days week weeks year years time times people person
    der die das ein eine einer und oder aber wenn dann sonst wann was
    welche wer wie warum wo ist sind war waren sein bin habe hat hatte
    kann könnte darf muss soll wird würde nicht kein du dein sie ihr ich
    mich mein wir uns unser er es mit ohne über für von zu im am beim als
    auch noch mehr sehr nur bitte heute morgen gestern jetzt gut schlecht
    erste zweite nächste letzte jeden geben nehmen machen sehen denken
    tag tage woche wochen jahr jahre zeit
    """.split()
)

# Training-process vocabulary that is in scope for every program.
BASE_ALLOWLIST = frozenset(
    """
    training unit units exercise exercises practice practise practicing
    lesson module modules resource resources video videos feedback rubric
    tutor program course learn learning learned schedule session sessions
    question questions material criteria tip tips colleague citizen caller
    call telephone phone email mail chat communication
    """.split()
)


@dataclass(frozen=True)
class ConfinementResult:
    in_scope: bool
    redirect_text: str = ""
    matched: tuple[str, ...] = ()


def _tokens(text: str) -> set[str]:
    return {
        t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 3 and t not in STOPWORDS
    }


def build_vocabulary(context: PromptContext, extra: Sequence[str] = ()) -> frozenset[str]:
    """Topic allowlist derived from the program's own wording."""
    program = context.program
    chunks: list[str] = [program.title]
    for unit in program.units:
        chunks.extend([unit.title, unit.objective])
        for res in unit.resources:
            chunks.extend([res.title, res.content_summary])
    for rule in program.guidelines:
        chunks.append(rule.statement)
    for exercise in program.exercises.values():
        sc = exercise.scenario
        chunks.extend([sc.situation, sc.opening_line, sc.persona.name, *sc.goals])
    for rubric in program.rubrics.values():
        chunks.extend(c.description for c in rubric.criteria)
    vocab = set(BASE_ALLOWLIST)
    for chunk in chunks:
        vocab |= _tokens(chunk)
    for word in extra:
        vocab |= _tokens(word)
    return frozenset(vocab)


def check_confinement(
    user_text: str,
    context: PromptContext,
    vocabulary: frozenset[str] | None = None,
) -> ConfinementResult:
    """Pre-generation topic gate.

    Conservative by design: a message with no recognizable content tokens at
    all (greetings, empty input) passes through and the prompt-level clause
    remains the second line of defense.
    """
    vocab = vocabulary if vocabulary is not None else build_vocabulary(context)
    tokens = _tokens(user_text)
    if not tokens:
        return ConfinementResult(in_scope=True)
    matched = tuple(sorted(tokens & vocab))
    if matched:
        return ConfinementResult(in_scope=True, matched=matched)
    return ConfinementResult(
        in_scope=False, redirect_text=render_template("redirect_out_of_scope")
    )
