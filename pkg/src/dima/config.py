"""Engine and service configuration.

All knobs live here with their defaults; a YAML config file can override any
of them. Provider credentials are the one thing that must come from the
environment, never from the file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ParseError

DEFAULT_END_PHRASES = (
    "goodbye",
    "bye for now",
    "thank you and goodbye",
    "have a nice day, goodbye",
)

DEFAULT_EXERCISE_INTENTS = (
    "start an exercise",
    "start the exercise",
    "i want to practice",
    "i would like to practice",
    "let's practice",
    "practice now",
)


@dataclass(frozen=True)
class EngineConfig:
    # Prompt assembly
    window_size: int = 20

    # Generation
    provider: str = "scripted"  # "scripted" | "remote"
    provider_timeout_s: float = 30.0
    persona_temperature: float = 0.7
    feedback_temperature: float = 0.0
    max_output_tokens: int = 512
    remote_endpoint: str = ""
    remote_model: str = ""
    script_path: str = ""

    # Channels
    stt_confidence_threshold: float = 0.5
    phone_noise_rate: float = 0.0
    mailbox_dir: str = "mailbox"

    # Sessions
    session_timeout_minutes: float = 60.0
    end_phrases: tuple[str, ...] = DEFAULT_END_PHRASES
    exercise_intents: tuple[str, ...] = DEFAULT_EXERCISE_INTENTS

    # Feedback
    show_scores: bool = False

    # Didactics
    sdt_mapping_path: str = ""  # empty -> packaged default table
    count_unit_choice_as_self_directed: bool = True

    # Persistence
    store_path: str = "dima-store.jsonl"
    retention_days: int = 90


@dataclass(frozen=True)
class ServiceConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    program_path: str = ""  # empty -> packaged fixture program
    host: str = "127.0.0.1"
    port: int = 8087
    token_ttl_hours: float = 12.0
    static_dir: str = ""  # optional built frontend to serve at /


def provider_api_key() -> str:
    """Provider credential, environment-only by design."""
    return os.environ.get("DIMA_PROVIDER_API_KEY", "")


def _apply(cfg, overrides: dict, what: str):
    known = {f.name for f in fields(cfg)}
    unknown = set(overrides) - known
    if unknown:
        raise ParseError(f"unknown {what} config keys: {', '.join(sorted(unknown))}")
    coerced = {
        k: tuple(v) if isinstance(getattr(cfg, k), tuple) else v
        for k, v in overrides.items()
    }
    return replace(cfg, **coerced)


def load_config(path: str | Path) -> ServiceConfig:
    """Read a YAML config file into a ServiceConfig.

    Top-level keys mirror ServiceConfig fields; the ``engine`` key holds
    EngineConfig overrides.
    """
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    if raw is None:
        return ServiceConfig()
    if not isinstance(raw, dict):
        raise ParseError("config file must contain a mapping")
    engine = _apply(EngineConfig(), raw.pop("engine", {}) or {}, "engine")
    service = _apply(ServiceConfig(), raw, "service")
    return replace(service, engine=engine)
