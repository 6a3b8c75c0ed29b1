"""Service assembly: program, provider, store, engine, channels, auth tokens.

Single-tenant pilot scale by design: one token per learner, no roles.
"""

from __future__ import annotations

import secrets
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .channels import ChannelRouter
from .config import ServiceConfig
from .engine import DialogEngine, random_ids
from .errors import AuthError, ParseError
from .metrics import MappingTable, default_mapping_table
from .program import TrainingProgram, load_fixture_program, load_program
from .prompts import Gender, TutorProfile
from .providers import GenerationProvider, RemoteProvider, ScriptedProvider
from .store import FileStore, MemoryStore


@dataclass
class ApiSession:
    token: str
    learner_id: str
    session_id: str
    expiry: float


class Service:
    def __init__(
        self,
        config: ServiceConfig | None = None,
        program: TrainingProgram | None = None,
        provider: GenerationProvider | None = None,
        store: MemoryStore | None = None,
        clock: Callable[[], float] = time.time,
        ids: Callable[[str], str] = random_ids,
        mailbox_dir: str | Path | None = None,
    ):
        self.config = config or ServiceConfig()
        engine_cfg = self.config.engine
        if program is None:
            program = (
                load_program(self.config.program_path)
                if self.config.program_path
                else load_fixture_program()
            )
        if provider is None:
            provider = self._build_provider(engine_cfg)
        if store is None:
            store = FileStore(engine_cfg.store_path)
        mapping = (
            MappingTable.from_file(engine_cfg.sdt_mapping_path)
            if engine_cfg.sdt_mapping_path
            else default_mapping_table()
        )
        self.program = program
        self.engine = DialogEngine(
            program,
            provider,
            store,
            engine_cfg,
            clock=clock,
            ids=ids,
            mapping_table=mapping,
        )
        self.router = ChannelRouter(
            self.engine,
            mailbox_dir=mailbox_dir or engine_cfg.mailbox_dir,
        )
        self.clock = clock
        self._tokens: dict[str, ApiSession] = {}

    @staticmethod
    def _build_provider(engine_cfg) -> GenerationProvider:
        if engine_cfg.provider == "remote":
            if not engine_cfg.remote_endpoint:
                raise ParseError("remote provider selected but remote_endpoint is empty")
            return RemoteProvider(
                engine_cfg.remote_endpoint,
                model=engine_cfg.remote_model,
                timeout_s=engine_cfg.provider_timeout_s,
            )
        if not engine_cfg.script_path:
            raise ParseError("scripted provider selected but script_path is empty")
        return ScriptedProvider.from_file(engine_cfg.script_path)

    # -- learners & auth -----------------------------------------------------------

    def create_learner(self, name: str, tutor_gender: str) -> ApiSession:
        learner_id = self.engine.ids("learner")
        profile = TutorProfile(gender=Gender(tutor_gender))
        session = self.engine.create_session(learner_id, profile)
        api_session = ApiSession(
            token=secrets.token_urlsafe(24),
            learner_id=learner_id,
            session_id=session.session_id,
            expiry=self.clock() + self.config.token_ttl_hours * 3600.0,
        )
        self._tokens[api_session.token] = api_session
        return api_session

    def authenticate(self, token: str) -> ApiSession:
        api_session = self._tokens.get(token)
        if api_session is None:
            raise AuthError("unknown token")
        if self.clock() > api_session.expiry:
            raise AuthError("token expired")
        return api_session
