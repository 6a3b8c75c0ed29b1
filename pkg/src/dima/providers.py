"""Text-generation boundary.

Two implementations live behind one protocol: a deterministic scripted
provider that resolves every request from a script file (the backbone of all
tests and golden transcripts), and a remote HTTP provider for live use.
``execute_plan`` runs groups of requests concurrently and stages of groups in
order, wiring earlier outputs into later prompts via placeholders.
"""

from __future__ import annotations

import json
import re
import time
from concurrent import futures
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import httpx
import yaml

from .config import provider_api_key
from .errors import (
    ParseError,
    PlanExecutionError,
    ProviderError,
    ProviderTimeout,
    RemoteError,
    ScriptMiss,
)
from .prompts import PERSONA_MARKER, TUTOR_MARKER, PromptBundle


class FinishReason(str, Enum):
    COMPLETE = "complete"
    TRUNCATED = "truncated"
    REFUSED = "refused"


@dataclass(frozen=True)
class GenerationRequest:
    bundle: PromptBundle
    max_output_tokens: int = 512
    temperature: float = 0.0
    request_id: str = ""
    # Routing hints for deterministic script matching: exercise, turn,
    # purpose, criterion, user_text.
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be > 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    latency_ms: float
    provider_tag: str
    finish: FinishReason = FinishReason.COMPLETE

    def __post_init__(self):
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be >= 0")


class GenerationProvider(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResult: ...


def bundle_role_name(bundle: PromptBundle) -> str:
    """Role as visible in the bundle's sentinel markers."""
    text = "\n".join(bundle.system_directives)
    if PERSONA_MARKER in text:
        return "sparring"
    if TUTOR_MARKER in text:
        return "tutor"
    return "unknown"


# ---------------------------------------------------------------------------
# Scripted provider
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScriptEntry:
    """One deterministic response rule.

    All present match fields must agree with the request; the first entry
    that matches wins. ``pattern`` is a regex searched in the request's
    last learner text.
    """

    response: str
    role: str | None = None
    exercise: str | None = None
    turn: int | None = None
    purpose: str | None = None
    criterion: str | None = None
    pattern: str | None = None
    finish: FinishReason = FinishReason.COMPLETE

    def matches(self, request: GenerationRequest, role: str) -> bool:
        meta = request.meta
        if self.role is not None and self.role != role:
            return False
        if self.exercise is not None and meta.get("exercise") != self.exercise:
            return False
        if self.turn is not None and meta.get("turn") != self.turn:
            return False
        if self.purpose is not None and meta.get("purpose") != self.purpose:
            return False
        if self.criterion is not None and meta.get("criterion") != self.criterion:
            return False
        if self.pattern is not None:
            text = str(meta.get("user_text", ""))
            if re.search(self.pattern, text, re.IGNORECASE) is None:
                return False
        return True


def parse_script_entries(raw: object) -> list[ScriptEntry]:
    if not isinstance(raw, list):
        raise ParseError("provider script must be a list of entries")
    entries = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "response" not in item:
            raise ParseError(f"script entry {i} needs a 'response'")
        match = item.get("match", {}) or {}
        turn = match.get("turn")
        entries.append(
            ScriptEntry(
                response=str(item["response"]),
                role=match.get("role"),
                exercise=match.get("exercise"),
                turn=int(turn) if turn is not None else None,
                purpose=match.get("purpose"),
                criterion=match.get("criterion"),
                pattern=match.get("pattern"),
                finish=FinishReason(item.get("finish", "complete")),
            )
        )
    return entries


class ScriptedProvider:
    """Deterministic provider resolving requests against an ordered script.

    Safe for concurrent calls (read-only after construction). ``latency_s``
    injects an artificial delay per call for orchestration-timing checks.
    """

    def __init__(self, entries: Sequence[ScriptEntry], latency_s: float = 0.0, tag: str = "scripted"):
        self._entries = tuple(entries)
        self._latency_s = latency_s
        self._tag = tag

    @classmethod
    def from_file(cls, path: str | Path, latency_s: float = 0.0) -> "ScriptedProvider":
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ParseError(f"cannot read provider script {path}: {exc}") from exc
        return cls(parse_script_entries(raw), latency_s=latency_s)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        start = time.perf_counter()
        role = bundle_role_name(request.bundle)
        for entry in self._entries:
            if entry.matches(request, role):
                if self._latency_s > 0:
                    time.sleep(self._latency_s)
                elapsed_ms = (time.perf_counter() - start) * 1000.0
                return GenerationResult(
                    text=entry.response,
                    latency_ms=elapsed_ms,
                    provider_tag=self._tag,
                    finish=entry.finish,
                )
        raise ScriptMiss(
            f"no script entry matches role={role!r} meta={dict(request.meta)!r}"
        )


# ---------------------------------------------------------------------------
# Remote provider
# ---------------------------------------------------------------------------


class RemoteProvider:
    """HTTP+JSON provider.

    Request body: {"model", "input": {"directives": [...], "history":
    [{"speaker", "text"}, ...]}, "max_output_tokens", "temperature"}.
    Expected response: {"text": "...", "finish": "complete"}.
    """

    def __init__(self, endpoint: str, model: str = "", timeout_s: float = 30.0, tag: str = "remote"):
        self._endpoint = endpoint
        self._model = model
        self._timeout_s = timeout_s
        self._tag = tag

    def _payload(self, request: GenerationRequest) -> dict:
        bundle = request.bundle
        return {
            "model": self._model,
            "input": {
                "directives": list(bundle.system_directives)
                + ([bundle.confinement_clause] if bundle.confinement_clause else []),
                "history": [
                    {"speaker": t.speaker.value, "text": t.text}
                    for t in bundle.history_window
                ],
            },
            "max_output_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        }

    def generate(self, request: GenerationRequest) -> GenerationResult:
        start = time.perf_counter()
        headers = {}
        key = provider_api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            response = httpx.post(
                self._endpoint,
                json=self._payload(request),
                headers=headers,
                timeout=self._timeout_s,
            )
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(f"provider timed out after {self._timeout_s}s") from exc
        except httpx.HTTPError as exc:
            raise RemoteError(0, str(exc)) from exc
        if response.status_code >= 400:
            raise RemoteError(response.status_code, response.text[:200])
        try:
            body = response.json()
            text = body["text"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise RemoteError(response.status_code, "response missing 'text'") from exc
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        return GenerationResult(
            text=text,
            latency_ms=elapsed_ms,
            provider_tag=self._tag,
            finish=FinishReason(body.get("finish", "complete")),
        )


# ---------------------------------------------------------------------------
# Call planning
# ---------------------------------------------------------------------------

PLACEHOLDER_RE = re.compile(r"\{\{stage:(\d+):(\d+)\}\}")


@dataclass(frozen=True)
class CallPlan:
    """Ordered stages of concurrently executed request groups.

    Directive text in stage n+1 may embed ``{{stage:N:K}}`` placeholders
    referring to the K-th request of an *earlier* stage N; forward or
    self references are rejected, which keeps plans acyclic.
    """

    stages: tuple[tuple[GenerationRequest, ...], ...]

    def __post_init__(self):
        for stage_index, group in enumerate(self.stages):
            for request in group:
                text = "\n".join(request.bundle.system_directives)
                for match in PLACEHOLDER_RE.finditer(text):
                    ref_stage, ref_index = int(match.group(1)), int(match.group(2))
                    if ref_stage >= stage_index:
                        raise ValueError(
                            f"stage {stage_index} references stage {ref_stage}; "
                            "placeholders may only point backwards"
                        )
                    if ref_index >= len(self.stages[ref_stage]):
                        raise ValueError(
                            f"placeholder {match.group(0)} exceeds stage {ref_stage} size"
                        )

    @classmethod
    def of(cls, *stages: Sequence[GenerationRequest]) -> "CallPlan":
        return cls(stages=tuple(tuple(stage) for stage in stages))

    def __len__(self) -> int:
        return sum(len(group) for group in self.stages)


def _substitute(request: GenerationRequest, completed: dict[tuple[int, int], GenerationResult]) -> GenerationRequest:
    def fill(match: re.Match) -> str:
        return completed[(int(match.group(1)), int(match.group(2)))].text

    directives = tuple(
        PLACEHOLDER_RE.sub(fill, directive)
        for directive in request.bundle.system_directives
    )
    if directives == request.bundle.system_directives:
        return request
    return replace(request, bundle=replace(request.bundle, system_directives=directives))


def _generate_with_retry(provider: GenerationProvider, request: GenerationRequest) -> GenerationResult:
    try:
        return provider.generate(request)
    except ProviderError:
        return provider.generate(request)


def execute_plan(
    plan: CallPlan,
    provider: GenerationProvider,
    max_workers: int = 8,
) -> list[GenerationResult]:
    """Run the plan: groups concurrently, stages in order.

    Results come back in declaration order regardless of completion order.
    Any member that still fails after one retry aborts the plan with a
    PlanExecutionError carrying the partial results.
    """
    completed: dict[tuple[int, int], GenerationResult] = {}
    order: list[tuple[int, int]] = [
        (s, i) for s, group in enumerate(plan.stages) for i in range(len(group))
    ]
    failures: list[str] = []
    for stage_index, group in enumerate(plan.stages):
        if failures:
            break
        substituted = [_substitute(r, completed) for r in group]
        if len(substituted) == 1:
            try:
                completed[(stage_index, 0)] = _generate_with_retry(provider, substituted[0])
            except ProviderError as exc:
                failures.append(f"stage {stage_index} request 0: {exc}")
        elif substituted:
            with futures.ThreadPoolExecutor(max_workers=min(max_workers, len(substituted))) as pool:
                jobs = {
                    i: pool.submit(_generate_with_retry, provider, request)
                    for i, request in enumerate(substituted)
                }
                for i, job in jobs.items():
                    try:
                        completed[(stage_index, i)] = job.result()
                    except ProviderError as exc:
                        failures.append(f"stage {stage_index} request {i}: {exc}")
    partial = [completed.get(key) for key in order]
    if failures:
        raise PlanExecutionError("; ".join(failures), partial=partial)
    return [completed[key] for key in order]
