"""Didactical method classification and self-determination reporting.

Interaction events are classified into the five method families (expository,
inquisitory, practice, interactive, reflective) and aggregated into a
per-learner report of how the three basic psychological needs (autonomy,
competence, relatedness) are supported. The method/aspect/need edges live in
a versioned mapping table so they can be corrected without code changes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from .errors import MixedLearners, ParseError, UnknownSource
from .program import ExerciseMethod


class Method(str, Enum):
    EXPOSITORY = "expository"
    INQUISITORY = "inquisitory"
    PRACTICE = "practice"
    INTERACTIVE = "interactive"
    REFLECTIVE = "reflective"


class SourceKind(str, Enum):
    RESOURCE_VIEW = "resource_view"
    TUTOR_QA = "tutor_qa"
    EXERCISE_RUN = "exercise_run"
    FEEDBACK_DELIVERY = "feedback_delivery"


class Aspect(str, Enum):
    SELF_DIRECTED = "self_directed"
    ADAPTIVE = "adaptive"
    EXPERIENTIAL = "experiential"
    THEORY_PRACTICE_INTEGRATION = "theory_practice_integration"
    FEEDBACK_ASSESSMENT = "feedback_assessment"
    SOCIAL_LEARNING = "social_learning"


class Need(str, Enum):
    AUTONOMY = "autonomy"
    COMPETENCE = "competence"
    RELATEDNESS = "relatedness"


@dataclass(frozen=True)
class SourceEvent:
    kind: SourceKind
    learner_id: str
    unit_id: str = ""
    timestamp: float = 0.0
    exercise_method: ExerciseMethod | None = None


@dataclass(frozen=True)
class MethodEvent:
    learner_id: str
    method: Method
    source: SourceKind
    timestamp: float = 0.0
    unit_id: str = ""

    def to_dict(self) -> dict:
        return {
            "learner_id": self.learner_id,
            "method": self.method.value,
            "source": self.source.value,
            "timestamp": self.timestamp,
            "unit_id": self.unit_id,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MethodEvent":
        return cls(
            learner_id=payload["learner_id"],
            method=Method(payload["method"]),
            source=SourceKind(payload["source"]),
            timestamp=float(payload.get("timestamp", 0.0)),
            unit_id=payload.get("unit_id", ""),
        )


def classify(event: SourceEvent) -> MethodEvent:
    """Map an interaction event onto its didactical method.

    Total and deterministic over the source taxonomy: resource views are
    expository, tutor Q&A is inquisitory, exercise runs carry their own
    method, delivered feedback is reflective.
    """
    if event.kind is SourceKind.RESOURCE_VIEW:
        method = Method.EXPOSITORY
    elif event.kind is SourceKind.TUTOR_QA:
        method = Method.INQUISITORY
    elif event.kind is SourceKind.EXERCISE_RUN:
        if event.exercise_method is None:
            raise UnknownSource("exercise_run events must carry the exercise method")
        method = (
            Method.PRACTICE
            if event.exercise_method is ExerciseMethod.PRACTICE
            else Method.INTERACTIVE
        )
    elif event.kind is SourceKind.FEEDBACK_DELIVERY:
        method = Method.REFLECTIVE
    else:  # pragma: no cover - enum is closed, guards hand-built events
        raise UnknownSource(f"unknown source kind {event.kind!r}")
    return MethodEvent(
        learner_id=event.learner_id,
        method=method,
        source=event.kind,
        timestamp=event.timestamp,
        unit_id=event.unit_id,
    )


# ---------------------------------------------------------------------------
# Mapping table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MappingTable:
    version: int
    method_aspects: Mapping[Method, tuple[Aspect, ...]]
    need_aspects: Mapping[Need, tuple[Aspect, ...]]
    count_unit_choice_as_self_directed: bool = True

    @classmethod
    def from_file(cls, path: str | Path) -> "MappingTable":
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ParseError(f"cannot read mapping table {path}: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "MappingTable":
        if not isinstance(raw, dict):
            raise ParseError("mapping table must be a mapping")
        try:
            method_aspects = {
                Method(m): tuple(Aspect(a) for a in aspects)
                for m, aspects in raw["method_aspects"].items()
            }
            need_aspects = {
                Need(n): tuple(Aspect(a) for a in aspects)
                for n, aspects in raw["need_aspects"].items()
            }
        except (KeyError, ValueError) as exc:
            raise ParseError(f"invalid mapping table: {exc}") from exc
        missing_methods = set(Method) - set(method_aspects)
        missing_needs = set(Need) - set(need_aspects)
        if missing_methods or missing_needs:
            raise ParseError(
                "mapping table incomplete: missing "
                + ", ".join(sorted(x.value for x in (missing_methods | missing_needs)))
            )
        return cls(
            version=int(raw.get("version", 0)),
            method_aspects=method_aspects,
            need_aspects=need_aspects,
            count_unit_choice_as_self_directed=bool(
                raw.get("count_unit_choice_as_self_directed", True)
            ),
        )


def default_mapping_table() -> MappingTable:
    ref = importlib_resources.files("dima").joinpath("data/sdt_mapping_v1.yaml")
    return MappingTable.from_dict(yaml.safe_load(ref.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionFacts:
    """Out-of-band evidence that is not an interaction event."""

    chose_unit_order: bool = False


@dataclass(frozen=True)
class NeedSupport:
    supported: bool
    supporting_methods: tuple[Method, ...] = ()


@dataclass(frozen=True)
class SdtReport:
    learner_id: str
    method_counts: Mapping[Method, int]
    needs: Mapping[Need, NeedSupport]
    aspects: Mapping[Aspect, int]
    mapping_version: int = 0

    def to_dict(self) -> dict:
        return {
            "learner_id": self.learner_id,
            "mapping_version": self.mapping_version,
            "method_counts": {m.value: c for m, c in self.method_counts.items()},
            "aspects": {a.value: c for a, c in self.aspects.items()},
            "needs": {
                n.value: {
                    "supported": s.supported,
                    "supporting_methods": [m.value for m in s.supporting_methods],
                }
                for n, s in self.needs.items()
            },
        }


def build_sdt_report(
    events: Sequence[MethodEvent],
    facts: SessionFacts = SessionFacts(),
    table: MappingTable | None = None,
    learner_id: str = "",
) -> SdtReport:
    """Aggregate one learner's events into need-support evidence.

    A need counts as supported iff at least one of its mapped aspects has
    evidence; evidence counts ride along so the binary verdict stays
    auditable.
    """
    table = table or default_mapping_table()
    learners = {e.learner_id for e in events}
    if len(learners) > 1:
        raise MixedLearners(f"events span learners {sorted(learners)}")
    if not learner_id:
        learner_id = next(iter(learners), "")

    method_counts = {m: 0 for m in Method}
    for event in events:
        method_counts[event.method] += 1

    aspect_counts = {a: 0 for a in Aspect}
    for method, count in method_counts.items():
        for aspect in table.method_aspects[method]:
            aspect_counts[aspect] += count
    if facts.chose_unit_order and table.count_unit_choice_as_self_directed:
        aspect_counts[Aspect.SELF_DIRECTED] += 1

    needs = {}
    for need, aspects in table.need_aspects.items():
        supported = any(aspect_counts[a] > 0 for a in aspects)
        supporting = tuple(
            m
            for m in Method
            if method_counts[m] > 0 and set(table.method_aspects[m]) & set(aspects)
        )
        needs[need] = NeedSupport(supported=supported, supporting_methods=supporting)

    return SdtReport(
        learner_id=learner_id,
        method_counts=method_counts,
        needs=needs,
        aspects=aspect_counts,
        mapping_version=table.version,
    )


def infer_session_facts(
    events: Iterable[MethodEvent], suggested_unit_order: Sequence[str]
) -> SessionFacts:
    """Derive the unit-choice fact from the first-touch order of units."""
    first_touch: list[str] = []
    for event in sorted(events, key=lambda e: e.timestamp):
        if event.unit_id and event.unit_id not in first_touch:
            first_touch.append(event.unit_id)
    position = {uid: i for i, uid in enumerate(suggested_unit_order)}
    touched_positions = [position[u] for u in first_touch if u in position]
    chose = any(b < a for a, b in zip(touched_positions, touched_positions[1:]))
    return SessionFacts(chose_unit_order=chose)


def render_coverage_table(report: SdtReport) -> str:
    """Plain-text coverage table for the CLI."""
    lines = [f"didactics coverage for learner {report.learner_id or '<unknown>'}"]
    lines.append("")
    lines.append("method        events")
    for method in Method:
        lines.append(f"  {method.value:<12}{report.method_counts.get(method, 0)}")
    lines.append("")
    lines.append("aspect                        evidence")
    for aspect in Aspect:
        lines.append(f"  {aspect.value:<28}{report.aspects.get(aspect, 0)}")
    lines.append("")
    lines.append("need         supported  via")
    for need in Need:
        support = report.needs[need]
        via = ", ".join(m.value for m in support.supporting_methods) or "-"
        lines.append(f"  {need.value:<11}{'yes' if support.supported else 'no':<11}{via}")
    return "\n".join(lines)
