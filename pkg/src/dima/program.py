"""Training-program model: curriculum types, document loader, validation.

A program is authored as a single YAML document with top-level keys
``program``, ``units``, ``resources``, ``exercises``, ``scenarios``,
``rubrics`` and ``rules``. Units reference resources and exercises by id;
exercises reference scenarios and rubrics by id. ``load_program`` resolves
all references and reports *every* violated invariant at once.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Mapping

import yaml

from .errors import ParseError, ValidationError

WEIGHT_TOLERANCE = 1e-9
UNIT_MINUTES_RANGE = (20, 30)

FIXTURE_PROGRAM = "communication_training.yaml"


class ProgramWarning(UserWarning):
    """Soft validation findings (e.g. unit length outside the design band)."""


class ResourceKind(str, Enum):
    VIDEO = "video"
    TEXT = "text"
    QUESTION_SET = "question_set"


class ExerciseMethod(str, Enum):
    PRACTICE = "practice"
    INTERACTIVE = "interactive"


class Channel(str, Enum):
    TELEPHONE = "telephone"
    EMAIL = "email"
    CHAT = "chat"


class PersonaKind(str, Enum):
    CITIZEN = "citizen"
    COLLEAGUE = "colleague"


class Mood(str, Enum):
    NEUTRAL = "neutral"
    FRUSTRATED = "frustrated"
    ANGRY = "angry"
    CONFUSED = "confused"


class PersistenceStyle(str, Enum):
    YIELDING = "yielding"
    PERSISTENT = "persistent"


class Formality(str, Enum):
    FORMAL = "formal"
    INFORMAL = "informal"


# Citizens are addressed formally, colleagues informally.
FORMALITY_BY_KIND = {
    PersonaKind.CITIZEN: Formality.FORMAL,
    PersonaKind.COLLEAGUE: Formality.INFORMAL,
}

# Practice = handle a simulated citizen; interactive = explain to a colleague.
PERSONA_KIND_BY_METHOD = {
    ExerciseMethod.PRACTICE: PersonaKind.CITIZEN,
    ExerciseMethod.INTERACTIVE: PersonaKind.COLLEAGUE,
}


@dataclass(frozen=True)
class Persona:
    kind: PersonaKind
    name: str
    mood: Mood = Mood.NEUTRAL
    persistence: PersistenceStyle = PersistenceStyle.YIELDING
    formality: Formality = Formality.FORMAL


@dataclass(frozen=True)
class Scenario:
    id: str
    persona: Persona
    situation: str
    goals: tuple[str, ...]
    opening_line: str


@dataclass(frozen=True)
class Criterion:
    id: str
    description: str
    weight: float


@dataclass(frozen=True)
class FeedbackRubric:
    id: str
    criteria: tuple[Criterion, ...]
    tip_guidance: str = ""


@dataclass(frozen=True)
class PassPolicy:
    kind: str = "always_complete"  # "always_complete" | "rubric_threshold"
    threshold: float = 0.0


@dataclass(frozen=True)
class ExerciseSpec:
    id: str
    method: ExerciseMethod
    channel: Channel
    scenario: Scenario
    rubric_id: str
    max_turns: int = 6
    pass_policy: PassPolicy = PassPolicy()


@dataclass(frozen=True)
class LearningResource:
    id: str
    kind: ResourceKind
    title: str
    content_summary: str
    uri: str = ""


@dataclass(frozen=True)
class CompletionPolicy:
    min_exercises: int = 1


@dataclass(frozen=True)
class LearningUnit:
    id: str
    title: str
    objective: str
    estimated_minutes: int
    resources: tuple[LearningResource, ...] = ()
    exercises: tuple[str, ...] = ()
    completion_policy: CompletionPolicy = CompletionPolicy()


@dataclass(frozen=True)
class CommunicationRule:
    id: str
    statement: str
    unit_refs: tuple[str, ...] = ()


@dataclass(frozen=True)
class TrainingProgram:
    id: str
    title: str
    language: str
    units: tuple[LearningUnit, ...]
    guidelines: tuple[CommunicationRule, ...] = ()
    exercises: Mapping[str, ExerciseSpec] = field(default_factory=dict)
    rubrics: Mapping[str, FeedbackRubric] = field(default_factory=dict)

    def unit(self, unit_id: str) -> LearningUnit | None:
        return next((u for u in self.units if u.id == unit_id), None)

    def exercise(self, exercise_id: str) -> ExerciseSpec | None:
        return self.exercises.get(exercise_id)

    def rubric_for(self, exercise_id: str) -> FeedbackRubric | None:
        ex = self.exercises.get(exercise_id)
        return self.rubrics.get(ex.rubric_id) if ex else None

    def units_for_exercise(self, exercise_id: str) -> tuple[LearningUnit, ...]:
        return tuple(u for u in self.units if exercise_id in u.exercises)


# ---------------------------------------------------------------------------
# Document loading
# ---------------------------------------------------------------------------


def _as_dict(raw, where: str, violations: list[str]) -> dict:
    if isinstance(raw, dict):
        return raw
    violations.append(f"{where}: expected a mapping, got {type(raw).__name__}")
    return {}


def _as_list(raw, where: str, violations: list[str]) -> list:
    if raw is None:
        return []
    if isinstance(raw, list):
        return raw
    violations.append(f"{where}: expected a list, got {type(raw).__name__}")
    return []


def _require_str(raw: dict, key: str, where: str, violations: list[str]) -> str:
    value = raw.get(key)
    if not isinstance(value, str) or not value.strip():
        violations.append(f"{where}: {key} must be a non-empty string")
        return ""
    return value.strip()


def _as_enum(enum_cls, raw_value, where: str, key: str, violations: list[str]):
    try:
        return enum_cls(str(raw_value).strip().lower())
    except (ValueError, AttributeError):
        allowed = ", ".join(e.value for e in enum_cls)
        violations.append(f"{where}: {key} must be one of {allowed}, got {raw_value!r}")
        return next(iter(enum_cls))


def _parse_persona(raw: dict, where: str, violations: list[str]) -> Persona:
    kind = _as_enum(PersonaKind, raw.get("kind", ""), where, "persona.kind", violations)
    name = _require_str(raw, "name", where, violations)
    mood = _as_enum(Mood, raw.get("mood", "neutral"), where, "persona.mood", violations)
    persistence = _as_enum(
        PersistenceStyle, raw.get("persistence", "yielding"), where, "persona.persistence", violations
    )
    expected = FORMALITY_BY_KIND[kind]
    if "formality" in raw:
        formality = _as_enum(Formality, raw["formality"], where, "persona.formality", violations)
        if formality is not expected:
            violations.append(
                f"{where}: a {kind.value} persona speaks {expected.value}, not {formality.value}"
            )
    return Persona(kind=kind, name=name, mood=mood, persistence=persistence, formality=expected)


def _parse_scenario(raw: dict, violations: list[str]) -> Scenario:
    sid = str(raw.get("id", "")).strip()
    where = f"scenario {sid or '<missing id>'}"
    if not sid:
        violations.append("scenario: id is required")
    persona_raw = raw.get("persona")
    if not isinstance(persona_raw, dict):
        violations.append(f"{where}: persona is required")
        persona_raw = {"kind": "citizen", "name": "unnamed"}
    persona = _parse_persona(persona_raw, where, violations)
    situation = _require_str(raw, "situation", where, violations)
    opening = _require_str(raw, "opening_line", where, violations)
    goals = tuple(
        str(g).strip()
        for g in _as_list(raw.get("goals"), where, violations)
        if str(g).strip()
    )
    if not goals:
        violations.append(f"{where}: at least one goal is required")
    return Scenario(id=sid, persona=persona, situation=situation, goals=goals, opening_line=opening)


def _parse_rubric(raw: dict, violations: list[str]) -> FeedbackRubric:
    rid = str(raw.get("id", "")).strip()
    where = f"rubric {rid or '<missing id>'}"
    if not rid:
        violations.append("rubric: id is required")
    criteria = []
    for item in _as_list(raw.get("criteria"), where, violations):
        c = _as_dict(item, where, violations)
        cid = str(c.get("id", "")).strip()
        desc = str(c.get("description", "")).strip()
        try:
            weight = float(c.get("weight", 0.0))
        except (TypeError, ValueError):
            weight = 0.0
            violations.append(f"{where}: criterion {cid or '?'} weight is not a number")
        if not cid:
            violations.append(f"{where}: every criterion needs an id")
        if not desc:
            violations.append(f"{where}: criterion {cid or '?'} needs a description")
        if weight <= 0:
            violations.append(f"{where}: criterion {cid or '?'} weight must be > 0")
        criteria.append(Criterion(id=cid, description=desc, weight=weight))
    if not criteria:
        violations.append(f"{where}: at least one criterion is required")
    else:
        total = sum(c.weight for c in criteria)
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            violations.append(f"{where}: criterion weights sum to {total:.6g}, expected 1.0")
    return FeedbackRubric(
        id=rid, criteria=tuple(criteria), tip_guidance=str(raw.get("tip_guidance", "")).strip()
    )


def _parse_pass_policy(raw, where: str, violations: list[str]) -> PassPolicy:
    if raw is None:
        return PassPolicy()
    if isinstance(raw, str):
        if raw.strip().lower() == "always_complete":
            return PassPolicy()
        violations.append(f"{where}: unknown pass_policy {raw!r}")
        return PassPolicy()
    if isinstance(raw, dict) and "rubric_threshold" in raw:
        try:
            score = float(raw["rubric_threshold"])
        except (TypeError, ValueError):
            score = -1.0
        if not 0.0 <= score <= 1.0:
            violations.append(f"{where}: rubric_threshold must lie in [0, 1]")
            score = 0.0
        return PassPolicy(kind="rubric_threshold", threshold=score)
    violations.append(f"{where}: unknown pass_policy {raw!r}")
    return PassPolicy()


def _parse_exercise(
    raw: dict, scenarios: dict[str, Scenario], violations: list[str]
) -> ExerciseSpec:
    eid = str(raw.get("id", "")).strip()
    where = f"exercise {eid or '<missing id>'}"
    if not eid:
        violations.append("exercise: id is required")
    method = _as_enum(ExerciseMethod, raw.get("method", ""), where, "method", violations)
    channel = _as_enum(Channel, raw.get("channel", ""), where, "channel", violations)
    scenario_id = str(raw.get("scenario", "")).strip()
    scenario = scenarios.get(scenario_id)
    if scenario is None:
        violations.append(f"{where}: references unknown scenario {scenario_id!r}")
        scenario = Scenario(
            id=scenario_id,
            persona=Persona(kind=PersonaKind.CITIZEN, name="unnamed"),
            situation="-",
            goals=("-",),
            opening_line="-",
        )
    else:
        expected_kind = PERSONA_KIND_BY_METHOD[method]
        if scenario.persona.kind is not expected_kind:
            violations.append(
                f"{where}: a {method.value} exercise needs a {expected_kind.value} persona, "
                f"scenario {scenario_id!r} has a {scenario.persona.kind.value}"
            )
    rubric_id = str(raw.get("rubric", "")).strip()
    try:
        max_turns = int(raw.get("max_turns", 6))
    except (TypeError, ValueError):
        max_turns = 0
    if max_turns < 2:
        violations.append(f"{where}: max_turns must be at least 2, got {raw.get('max_turns')!r}")
        max_turns = 2
    pass_policy = _parse_pass_policy(raw.get("pass_policy"), where, violations)
    return ExerciseSpec(
        id=eid,
        method=method,
        channel=channel,
        scenario=scenario,
        rubric_id=rubric_id,
        max_turns=max_turns,
        pass_policy=pass_policy,
    )


def _parse_resource(raw: dict, violations: list[str]) -> LearningResource:
    rid = str(raw.get("id", "")).strip()
    where = f"resource {rid or '<missing id>'}"
    if not rid:
        violations.append("resource: id is required")
    kind = _as_enum(ResourceKind, raw.get("kind", ""), where, "kind", violations)
    title = _require_str(raw, "title", where, violations)
    # The tutor answers questions from this text, so it may never be blank.
    summary = _require_str(raw, "content_summary", where, violations)
    return LearningResource(
        id=rid, kind=kind, title=title, content_summary=summary, uri=str(raw.get("uri", "")).strip()
    )


def _parse_unit(
    raw: dict, resources: dict[str, LearningResource], violations: list[str], warns: list[str]
) -> LearningUnit:
    uid = str(raw.get("id", "")).strip()
    where = f"unit {uid or '<missing id>'}"
    if not uid:
        violations.append("unit: id is required")
    title = _require_str(raw, "title", where, violations)
    objective = str(raw.get("objective", "")).strip()
    if not objective:
        violations.append(f"{where}: objective must not be empty")
    try:
        minutes = int(raw.get("estimated_minutes", 0))
    except (TypeError, ValueError):
        minutes = 0
    if minutes <= 0:
        violations.append(f"{where}: estimated_minutes must be > 0")
    elif not UNIT_MINUTES_RANGE[0] <= minutes <= UNIT_MINUTES_RANGE[1]:
        warns.append(
            f"{where}: estimated_minutes {minutes} is outside the "
            f"{UNIT_MINUTES_RANGE[0]}-{UNIT_MINUTES_RANGE[1]} minute design band"
        )
    unit_resources = []
    for rid in _as_list(raw.get("resources"), where, violations):
        resource = resources.get(str(rid))
        if resource is None:
            violations.append(f"{where}: references unknown resource {rid!r}")
        else:
            unit_resources.append(resource)
    exercises = tuple(
        str(e).strip() for e in _as_list(raw.get("exercises"), where, violations)
    )
    policy_raw = _as_dict(raw.get("completion_policy") or {}, where, violations)
    try:
        min_exercises = int(policy_raw.get("min_exercises", 1))
    except (TypeError, ValueError):
        min_exercises = -1
    if min_exercises < 0:
        violations.append(f"{where}: completion_policy.min_exercises must be >= 0")
        min_exercises = 1
    return LearningUnit(
        id=uid,
        title=title,
        objective=objective,
        estimated_minutes=minutes,
        resources=tuple(unit_resources),
        exercises=exercises,
        completion_policy=CompletionPolicy(min_exercises=min_exercises),
    )


def _check_duplicates(items, what: str, violations: list[str]):
    seen = set()
    for item_id in items:
        if item_id is None:
            continue
        key = str(item_id)
        if key in seen:
            violations.append(f"duplicate {what} id {key!r}")
        seen.add(key)


def parse_program_document(doc: dict) -> tuple[TrainingProgram, list[str], list[str]]:
    """Build a TrainingProgram from a parsed document.

    Returns (program, violations, warnings); the program is only meaningful
    when violations is empty.
    """
    if not isinstance(doc, dict):
        raise ParseError("program document must be a mapping")
    violations: list[str] = []
    warns: list[str] = []

    header = _as_dict(doc.get("program") or {}, "program", violations)
    program_id = _require_str(header, "id", "program", violations)
    title = _require_str(header, "title", "program", violations)
    language = _require_str(header, "language", "program", violations)

    resource_items = [
        _as_dict(item, "resource", violations)
        for item in _as_list(doc.get("resources"), "resources", violations)
    ]
    resources: dict[str, LearningResource] = {}
    for raw in resource_items:
        res = _parse_resource(raw, violations)
        resources[res.id] = res
    _check_duplicates([r.get("id") for r in resource_items], "resource", violations)

    scenario_items = [
        _as_dict(item, "scenario", violations)
        for item in _as_list(doc.get("scenarios"), "scenarios", violations)
    ]
    scenarios: dict[str, Scenario] = {}
    for raw in scenario_items:
        sc = _parse_scenario(raw, violations)
        scenarios[sc.id] = sc
    _check_duplicates([s.get("id") for s in scenario_items], "scenario", violations)

    rubric_items = [
        _as_dict(item, "rubric", violations)
        for item in _as_list(doc.get("rubrics"), "rubrics", violations)
    ]
    rubrics: dict[str, FeedbackRubric] = {}
    for raw in rubric_items:
        rb = _parse_rubric(raw, violations)
        rubrics[rb.id] = rb
    _check_duplicates([r.get("id") for r in rubric_items], "rubric", violations)

    exercise_items = [
        _as_dict(item, "exercise", violations)
        for item in _as_list(doc.get("exercises"), "exercises", violations)
    ]
    exercises: dict[str, ExerciseSpec] = {}
    for raw in exercise_items:
        ex = _parse_exercise(raw, scenarios, violations)
        exercises[ex.id] = ex
        if ex.rubric_id not in rubrics:
            violations.append(f"exercise {ex.id}: references unknown rubric {ex.rubric_id!r}")
    _check_duplicates([e.get("id") for e in exercise_items], "exercise", violations)

    units = []
    for item in _as_list(doc.get("units"), "units", violations):
        unit = _parse_unit(_as_dict(item, "unit", violations), resources, violations, warns)
        units.append(unit)
        for eid in unit.exercises:
            if eid not in exercises:
                violations.append(f"unit {unit.id}: references unknown exercise {eid!r}")
    if not units:
        violations.append("program must contain at least one unit")
    _check_duplicates([u.id for u in units], "unit", violations)

    unit_ids = {u.id for u in units}
    rules = []
    for item in _as_list(doc.get("rules"), "rules", violations):
        raw = _as_dict(item, "rule", violations)
        rid = str(raw.get("id", "")).strip()
        statement = str(raw.get("statement", "")).strip()
        if not statement:
            violations.append(f"rule {rid or '<missing id>'}: statement must not be empty")
        refs = tuple(
            str(u).strip() for u in _as_list(raw.get("units"), f"rule {rid}", violations)
        )
        for ref in refs:
            if ref not in unit_ids:
                violations.append(f"rule {rid}: references unknown unit {ref!r}")
        rules.append(CommunicationRule(id=rid, statement=statement, unit_refs=refs))

    program = TrainingProgram(
        id=program_id,
        title=title,
        language=language,
        units=tuple(units),
        guidelines=tuple(rules),
        exercises=exercises,
        rubrics=rubrics,
    )
    return program, violations, warns


def load_program(source: str | Path | dict) -> TrainingProgram:
    """Load and validate a program-definition document.

    ``source`` may be a path to a YAML file, raw YAML text, or an already
    parsed mapping. Raises ParseError for malformed documents and
    ValidationError (listing every violation) for invalid ones; soft
    findings are emitted as ProgramWarning.
    """
    if isinstance(source, dict):
        doc = source
    else:
        text = None
        path = Path(str(source))
        try:
            if path.exists() and path.is_file():
                text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ParseError(f"cannot read {source}: {exc}") from exc
        if text is None:
            text = str(source)
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ParseError(f"malformed program document: {exc}") from exc
        if not isinstance(doc, dict):
            raise ParseError("program document must be a mapping")

    program, violations, warns = parse_program_document(doc)
    for message in warns:
        warnings.warn(message, ProgramWarning, stacklevel=2)
    if violations:
        raise ValidationError(violations)
    return program


def fixture_program_path() -> Path:
    """Path of the canonical nine-unit fixture program shipped with the package."""
    ref = importlib_resources.files("dima").joinpath("data/programs").joinpath(FIXTURE_PROGRAM)
    with importlib_resources.as_file(ref) as path:
        return path


def load_fixture_program() -> TrainingProgram:
    return load_program(fixture_program_path())
