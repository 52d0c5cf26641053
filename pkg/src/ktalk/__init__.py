"""ktalk: fully local retrieval-augmented Q&A.

Documents are chunked, filtered, embedded, and indexed in an HNSW graph;
queries run through a multi-agent retrieval pipeline against any
Ollama-compatible inference server (or a deterministic stub for tests).
"""

from .addrep import (
    AddRepConfig,
    PipelineMode,
    PipelineResult,
    TraceEvent,
    run_addrep,
    run_baseline,
    run_baseline_rs,
    stream_events,
)
from .agents import (
    AgentConfig,
    AgentRegistry,
    AgentRole,
    Agents,
    BackendError,
    ChatMessage,
    InferenceBackend,
    OllamaBackend,
    StubBackend,
)
from .config import AppConfig, Engine, load_config
from .embed import Embedder, cosine_distance, normalize
from .hnsw import HnswIndex, HnswParams
from .ingest import Chunk, ChunkingConfig, DocumentFormat, RawDocument, chunk_document, tokenize
from .kb import KnowledgeBase, RetrievalHit

__version__ = "0.1.0"

__all__ = [
    "AddRepConfig",
    "AgentConfig",
    "AgentRegistry",
    "AgentRole",
    "Agents",
    "AppConfig",
    "BackendError",
    "ChatMessage",
    "Chunk",
    "ChunkingConfig",
    "DocumentFormat",
    "Embedder",
    "Engine",
    "HnswIndex",
    "HnswParams",
    "InferenceBackend",
    "KnowledgeBase",
    "OllamaBackend",
    "PipelineMode",
    "PipelineResult",
    "RawDocument",
    "RetrievalHit",
    "StubBackend",
    "TraceEvent",
    "chunk_document",
    "cosine_distance",
    "load_config",
    "normalize",
    "run_addrep",
    "run_baseline",
    "run_baseline_rs",
    "stream_events",
    "tokenize",
]
