"""Application configuration and the engine composition root.

Precedence: CLI flags > environment variables (KT_BACKEND_URL, KT_KB_DIR,
KT_PORT) > JSON config file > built-in defaults. A backend_url of "stub"
selects the deterministic in-process backend.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from .addrep import AddRepConfig
from .agents import (
    AgentRegistry,
    Agents,
    InferenceBackend,
    OllamaBackend,
    StubBackend,
    filter_snippet,
    AgentRole,
)
from .embed import Embedder
from .hnsw import HnswParams
from .ingest import ChunkingConfig, RawDocument, read_document
from .kb import KnowledgeBase, MANIFEST_NAME

logger = logging.getLogger(__name__)

ENV_BACKEND_URL = "KT_BACKEND_URL"
ENV_KB_DIR = "KT_KB_DIR"
ENV_PORT = "KT_PORT"


@dataclass(frozen=True)
class AppConfig:
    backend_url: str = "http://localhost:11434"
    kb_dir: str = "./kb"
    port: int = 8000
    host: str = "127.0.0.1"
    embedding_model: str = "bge-m3"
    chat_model: str = "qwen2.5:7b"
    answer_model: str = "deepseek-r1:7b"
    stub_dim: int = 64
    stub_seed: int = 0
    filter_agent_enabled: bool = False
    extractor_cmd: list[str] | None = None
    frontend_dir: str | None = None
    embed_retries: int = 2
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    addrep: AddRepConfig = field(default_factory=AddRepConfig)
    hnsw: HnswParams = field(default_factory=HnswParams)


_NESTED = {"chunking": ChunkingConfig, "addrep": AddRepConfig, "hnsw": HnswParams}


def load_config(
    path: str | os.PathLike | None = None,
    env: dict | None = None,
    **overrides,
) -> AppConfig:
    """Merge file, environment, and explicit overrides into an AppConfig."""
    env = os.environ if env is None else env
    values: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read config file {path}: {exc}") from exc
        for key, val in raw.items():
            if key in _NESTED:
                values[key] = _NESTED[key](**val)
            else:
                values[key] = val
    if env.get(ENV_BACKEND_URL):
        values["backend_url"] = env[ENV_BACKEND_URL]
    if env.get(ENV_KB_DIR):
        values["kb_dir"] = env[ENV_KB_DIR]
    if env.get(ENV_PORT):
        values["port"] = int(env[ENV_PORT])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return AppConfig(**values)


def make_backend(cfg: AppConfig) -> InferenceBackend:
    if cfg.backend_url.strip().lower() == "stub":
        return StubBackend(dim=cfg.stub_dim, seed=cfg.stub_seed)
    return OllamaBackend(cfg.backend_url)


class Engine:
    """Wires the backend, agents, and knowledge base together."""

    def __init__(self, config: AppConfig, backend: InferenceBackend | None = None):
        self.config = config
        self.backend = backend or make_backend(config)
        self.registry = AgentRegistry.with_defaults(
            chat_model=config.chat_model, answer_model=config.answer_model
        )
        self.agents = Agents(backend=self.backend, registry=self.registry)
        self.embedder = Embedder(
            self.backend, config.embedding_model, retries=config.embed_retries
        )
        kb_dir = Path(config.kb_dir)
        if (kb_dir / MANIFEST_NAME).exists():
            self.kb = KnowledgeBase.load(
                kb_dir, self.embedder, hnsw_params=config.hnsw, chunking=config.chunking
            )
        else:
            self.kb = KnowledgeBase(
                self.embedder, hnsw_params=config.hnsw, chunking=config.chunking
            )

    def agent_filter(self):
        """The snippet-approval callable for ingestion, or None when disabled."""
        if not self.config.filter_agent_enabled:
            return None
        cfg = self.registry.get(AgentRole.FILTER)
        return lambda text: filter_snippet(self.backend, cfg, text)

    def ingest(self, raw: RawDocument, filter_agent: bool | None = None):
        use_filter = (
            self.config.filter_agent_enabled if filter_agent is None else filter_agent
        )
        callable_filter = None
        if use_filter:
            cfg = self.registry.get(AgentRole.FILTER)
            callable_filter = lambda text: filter_snippet(self.backend, cfg, text)
        return self.kb.ingest_document(raw, agent_filter=callable_filter)

    def ingest_path(self, path: str, filter_agent: bool | None = None):
        raw = read_document(path, extractor_cmd=self.config.extractor_cmd)
        return self.ingest(raw, filter_agent=filter_agent)

    def save_kb(self) -> None:
        self.kb.save(self.config.kb_dir)
