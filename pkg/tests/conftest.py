"""Shared fixtures: stub-backed agents and knowledge bases, plus a scriptable backend."""

from __future__ import annotations

import pytest

from ktalk.agents import (
    AgentRegistry,
    Agents,
    BackendError,
    ChatMessage,
    InferenceBackend,
    StubBackend,
)
from ktalk.embed import Embedder
from ktalk.hnsw import HnswParams
from ktalk.ingest import ChunkingConfig, make_document
from ktalk.kb import KnowledgeBase


class ScriptedBackend(InferenceBackend):
    """Replays queued responses; raises BackendError when the queue holds one."""

    def __init__(self, responses=None, dim: int = 16, seed: int = 0):
        self.base_url = "scripted"
        self.responses = list(responses or [])
        self._stub = StubBackend(dim=dim, seed=seed)
        self.calls = []
        self.last_messages = None

    def _next(self, opts):
        self.calls.append(("complete", opts.role, opts.variables))
        if not self.responses:
            raise BackendError("script exhausted")
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item

    def complete(self, messages, opts):
        self.last_messages = list(messages)
        return self._next(opts)

    def stream(self, messages, opts):
        self.last_messages = list(messages)
        item = self._next(opts)
        if isinstance(item, (list, tuple)):  # pre-split chunks, may end in an exception
            for piece in item:
                if isinstance(piece, Exception):
                    raise piece
                yield piece
            return
        for i in range(0, len(item), 7):
            yield item[i : i + 7]

    def embed(self, model, text):
        return self._stub.embed(model, text)

    def health(self):
        return True


@pytest.fixture
def stub_backend():
    return StubBackend(dim=32, seed=0)


@pytest.fixture
def registry():
    return AgentRegistry.with_defaults(chat_model="stub-model")


@pytest.fixture
def agents(stub_backend, registry):
    return Agents(backend=stub_backend, registry=registry)


@pytest.fixture
def small_chunking():
    # one chunk per short line of text keeps fixtures readable
    return ChunkingConfig(max_tokens=64, overlap_fraction=0.25, min_chars=10)


@pytest.fixture
def kb(stub_backend, small_chunking):
    embedder = Embedder(stub_backend, "stub-embed")
    return KnowledgeBase(
        embedder,
        hnsw_params=HnswParams(rng_seed=11),
        chunking=small_chunking,
    )


def ingest_texts(kb: KnowledgeBase, texts: list[str], title: str = "doc", agent_filter=None):
    """Each text becomes one single-chunk document."""
    records = []
    for i, text in enumerate(texts):
        raw = make_document(f"mem:{title}:{i}", f"{title}-{i}", "txt", text)
        records.append(kb.ingest_document(raw, agent_filter=agent_filter))
    return records


@pytest.fixture
def history():
    return [
        ChatMessage("user", "earlier question about type 2 diabetes"),
        ChatMessage("assistant", "earlier answer"),
    ]
