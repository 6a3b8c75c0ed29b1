"""Rubric-based feedback reports and the call plan that produces them.

Each rubric criterion gets its own assessment call; all criterion calls run
as one concurrent group, then a single sequential narrative call receives
their outputs and writes the summary and tips. Assessment responses carry a
machine-readable first line (``SCORE: <0..1>``) so scores stay exact while
the prose stays free.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .config import EngineConfig
from .errors import ProviderError
from .program import FeedbackRubric
from .prompts import (
    PromptContext,
    TutorProfile,
    assemble_feedback_criterion_prompt,
    assemble_feedback_narrative_prompt,
)
from .providers import CallPlan, GenerationRequest, GenerationResult
from .transcript import DialogTurn

SCORE_LINE_RE = re.compile(r"^\s*SCORE:\s*([0-9]*\.?[0-9]+)\s*$", re.MULTILINE)
TIP_PREFIX_RE = re.compile(r"^\s*TIP:\s*")

TONE_DIRECTIVE = "supportive and non-judgmental"


@dataclass(frozen=True)
class CriterionAssessment:
    criterion_id: str
    assessment: str
    score: float


@dataclass(frozen=True)
class FeedbackReport:
    run_id: str
    per_criterion: tuple[CriterionAssessment, ...]
    narrative: str
    tips: tuple[str, ...]
    overall: float
    tone: str = TONE_DIRECTIVE
    partial: bool = False
    notice: str = ""

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "per_criterion": [
                {"criterion_id": c.criterion_id, "assessment": c.assessment, "score": c.score}
                for c in self.per_criterion
            ],
            "narrative": self.narrative,
            "tips": list(self.tips),
            "overall": self.overall,
            "tone": self.tone,
            "partial": self.partial,
            "notice": self.notice,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FeedbackReport":
        return cls(
            run_id=payload["run_id"],
            per_criterion=tuple(
                CriterionAssessment(
                    criterion_id=c["criterion_id"],
                    assessment=c["assessment"],
                    score=float(c["score"]),
                )
                for c in payload.get("per_criterion", [])
            ),
            narrative=payload.get("narrative", ""),
            tips=tuple(payload.get("tips", [])),
            overall=float(payload.get("overall", 0.0)),
            tone=payload.get("tone", TONE_DIRECTIVE),
            partial=bool(payload.get("partial", False)),
            notice=payload.get("notice", ""),
        )


def parse_criterion_response(text: str) -> tuple[float, str]:
    """Extract (score, assessment) from an assessment response."""
    match = SCORE_LINE_RE.search(text)
    if match is None:
        raise ProviderError("assessment response is missing its SCORE line")
    score = float(match.group(1))
    if not 0.0 <= score <= 1.0:
        raise ProviderError(f"assessment score {score} outside [0, 1]")
    assessment = SCORE_LINE_RE.sub("", text, count=1).strip()
    return score, assessment


def parse_narrative_response(text: str) -> tuple[str, tuple[str, ...]]:
    """Split the synthesis response into narrative and TIP items.

    A tip starts at a ``TIP:`` line and runs until the next tip or a blank
    line, so wrapped tips stay whole.
    """
    narrative_lines: list[str] = []
    tips: list[str] = []
    current_tip: list[str] | None = None
    for line in text.splitlines():
        prefix = TIP_PREFIX_RE.match(line)
        if prefix:
            if current_tip:
                tips.append(" ".join(current_tip))
            current_tip = [line[prefix.end():].strip()]
        elif current_tip is not None and line.strip():
            current_tip.append(line.strip())
        else:
            if current_tip:
                tips.append(" ".join(current_tip))
                current_tip = None
            narrative_lines.append(line)
    if current_tip:
        tips.append(" ".join(current_tip))
    narrative = "\n".join(narrative_lines).strip()
    return narrative, tuple(tips)


def build_feedback_plan(
    profile: TutorProfile,
    rubric: FeedbackRubric,
    turns: Sequence[DialogTurn],
    context: PromptContext,
    config: EngineConfig,
    exercise_id: str,
    run_id: str,
) -> CallPlan:
    """One concurrent group of criterion calls, then the narrative call."""
    criterion_requests = []
    for index, criterion in enumerate(rubric.criteria):
        bundle = assemble_feedback_criterion_prompt(profile, turns, criterion, context)
        criterion_requests.append(
            GenerationRequest(
                bundle=bundle,
                max_output_tokens=config.max_output_tokens,
                temperature=config.feedback_temperature,
                request_id=f"{run_id}:criterion:{criterion.id}",
                meta={
                    "purpose": "criterion",
                    "criterion": criterion.id,
                    "exercise": exercise_id,
                    "turn": index,
                },
            )
        )
    results_block = "\n".join(
        f"- {criterion.id} (weight {criterion.weight:g}): {{{{stage:0:{i}}}}}"
        for i, criterion in enumerate(rubric.criteria)
    )
    narrative_bundle = assemble_feedback_narrative_prompt(
        profile, rubric, context, results_block
    )
    narrative_request = GenerationRequest(
        bundle=narrative_bundle,
        max_output_tokens=config.max_output_tokens,
        temperature=config.feedback_temperature,
        request_id=f"{run_id}:narrative",
        meta={"purpose": "narrative", "exercise": exercise_id},
    )
    return CallPlan.of(criterion_requests, [narrative_request])


def compose_report(
    run_id: str,
    rubric: FeedbackRubric,
    criterion_results: Sequence[GenerationResult | None],
    narrative_result: GenerationResult | None,
) -> FeedbackReport:
    """Assemble the report; missing or unparseable pieces make it partial."""
    assessments: list[CriterionAssessment] = []
    failed: list[str] = []
    for criterion, result in zip(rubric.criteria, criterion_results):
        if result is None:
            failed.append(criterion.id)
            continue
        try:
            score, assessment = parse_criterion_response(result.text)
        except ProviderError:
            failed.append(criterion.id)
            continue
        assessments.append(
            CriterionAssessment(criterion_id=criterion.id, assessment=assessment, score=score)
        )

    weights = {c.id: c.weight for c in rubric.criteria}
    overall = sum(weights[a.criterion_id] * a.score for a in assessments)

    narrative, tips = "", ()
    if narrative_result is not None:
        narrative, tips = parse_narrative_response(narrative_result.text)
    if not narrative:
        narrative = "Some of your feedback could not be prepared; here is what I have."
    if not tips:
        tips = (
            rubric.tip_guidance
            or "Take a moment to reread the conversation and note one thing to try next time.",
        )

    partial = bool(failed) or narrative_result is None
    notice = ""
    if failed:
        notice = "assessment unavailable for: " + ", ".join(failed)
    elif narrative_result is None:
        notice = "summary unavailable; per-criterion assessments are complete"

    return FeedbackReport(
        run_id=run_id,
        per_criterion=tuple(assessments),
        narrative=narrative,
        tips=tips,
        overall=overall,
        partial=partial,
        notice=notice,
    )


def render_feedback_message(report: FeedbackReport, show_scores: bool = False) -> str:
    """Tutor-voiced chat rendering; numeric scores stay hidden by default."""
    lines = ["Here is your feedback on the exercise.", ""]
    for item in report.per_criterion:
        header = f"On {item.criterion_id}:"
        if show_scores:
            header = f"On {item.criterion_id} (score {item.score:.2f}):"
        lines.append(header)
        lines.append(f"  {item.assessment}")
    lines.append("")
    lines.append(report.narrative)
    for tip in report.tips:
        lines.append(f"Tip: {tip}")
    if show_scores:
        lines.append(f"Overall: {report.overall:.2f}")
    if report.notice:
        lines.append(f"(Note: {report.notice})")
    return "\n".join(lines)
