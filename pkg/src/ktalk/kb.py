"""Knowledge base: ingestion orchestration, document metadata, retrieval.

Owns the document/snippet records and their enable state, feeds filtered
chunks through embedding into the HNSW index, and answers retrieval queries
with disabled/deleted content filtered out.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from .embed import Embedder
from .hnsw import HnswIndex, HnswParams
from .ingest import (
    Chunk,
    ChunkingConfig,
    RawDocument,
    chunk_document,
    make_document,
    plain_text,
    rule_filter,
)

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
INDEX_NAME = "index.kthn"

# Tombstoned fraction of live snippets that triggers an index rebuild.
REBUILD_TOMBSTONE_FRACTION = 0.2


class KnowledgeBaseError(Exception):
    pass


class DocumentNotFound(KnowledgeBaseError):
    def __init__(self, doc_id: int):
        super().__init__(f"document {doc_id} not found")
        self.doc_id = doc_id


@dataclass
class DocumentRecord:
    doc_id: int
    title: str
    source_path: str
    format: str
    enabled: bool
    created_at: str
    snippet_count: int
    dropped_by_rule: int
    dropped_by_agent: int

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SnippetRecord:
    snippet_id: int
    doc_id: int
    seq: int
    text: str


@dataclass(frozen=True)
class RetrievalHit:
    snippet_id: int
    text: str
    distance: float
    doc_id: int
    doc_title: str
    source_path: str

    def to_json(self) -> dict:
        return asdict(self)


class KnowledgeBase:
    """Single-writer knowledge base with concurrent reads.

    Mutations (ingest/delete/toggle) serialize on a writer lock; retrieval and
    listing read a consistent snapshot of the enable flags.
    """

    def __init__(
        self,
        embedder: Embedder,
        hnsw_params: HnswParams | None = None,
        chunking: ChunkingConfig | None = None,
    ):
        self.embedder = embedder
        self.hnsw_params = hnsw_params or HnswParams()
        self.chunking = chunking or ChunkingConfig()
        self._index: HnswIndex | None = None
        self._documents: dict[int, DocumentRecord] = {}
        self._snippets: dict[int, SnippetRecord] = {}
        self._tombstones: set[int] = set()
        self._next_doc_id = 1
        self._next_snippet_id = 1
        self._writer = threading.Lock()

    # ------------------------------------------------------------------ state

    @property
    def embedding_dim(self) -> int | None:
        return self.embedder.dim

    def counts(self) -> dict[str, int]:
        return {
            "documents": len(self._documents),
            "snippets": len(self._snippets),
            "tombstones": len(self._tombstones),
        }

    def list_documents(self) -> list[DocumentRecord]:
        return [self._documents[i] for i in sorted(self._documents)]

    def get_document(self, doc_id: int) -> DocumentRecord:
        rec = self._documents.get(doc_id)
        if rec is None:
            raise DocumentNotFound(doc_id)
        return rec

    def get_snippet(self, snippet_id: int) -> SnippetRecord | None:
        return self._snippets.get(snippet_id)

    # ------------------------------------------------------------------ ingestion

    def ingest_document(
        self,
        raw: RawDocument,
        cfg: ChunkingConfig | None = None,
        agent_filter: Callable[[str], bool] | None = None,
    ) -> DocumentRecord:
        """Chunk, filter, embed, and index one document.

        `agent_filter` is the snippet-approval agent (None disables it); it is
        expected to fail open rather than raise. The operation is atomic per
        document: embedding happens before any state mutation, so a failure
        leaves the knowledge base unchanged.
        """
        cfg = cfg or self.chunking
        body = plain_text(raw)
        work = make_document(raw.source_id, raw.title, raw.format, body, raw.byte_size)
        chunks = chunk_document(work, cfg)
        kept_rule = [c for c in chunks if rule_filter(c, cfg)]
        dropped_rule = len(chunks) - len(kept_rule)
        if agent_filter is not None:
            kept = [c for c in kept_rule if agent_filter(c.text)]
        else:
            kept = kept_rule
        dropped_agent = len(kept_rule) - len(kept)
        vectors = [self.embedder.embed(c.text) for c in kept]  # may raise; no state yet
        with self._writer:
            if self._index is None and vectors:
                self._index = HnswIndex(dim=vectors[0].size, params=self.hnsw_params)
            doc_id = self._next_doc_id
            self._next_doc_id += 1
            snippet_ids = list(
                range(self._next_snippet_id, self._next_snippet_id + len(kept))
            )
            self._next_snippet_id += len(kept)
            for sid, vec in zip(snippet_ids, vectors):
                self._index.insert(sid, vec)
            # publish records only after every vector landed in the index
            for sid, c in zip(snippet_ids, kept):
                self._snippets[sid] = SnippetRecord(
                    snippet_id=sid, doc_id=doc_id, seq=c.seq, text=c.text
                )
            record = DocumentRecord(
                doc_id=doc_id,
                title=raw.title,
                source_path=raw.source_id,
                format=raw.format.value,
                enabled=True,
                created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
                snippet_count=len(kept),
                dropped_by_rule=dropped_rule,
                dropped_by_agent=dropped_agent,
            )
            self._documents[doc_id] = record
            return record

    # ------------------------------------------------------------------ retrieval

    def retrieve(self, query: str, topk: int) -> list[RetrievalHit]:
        """The `topk` nearest live snippets, ascending by distance.

        Over-fetches 4x from the index, then drops hits from disabled or
        deleted documents; fewer than `topk` hits can come back when most
        candidates are filtered out.
        """
        if topk < 1:
            raise ValueError("topk must be >= 1")
        if self._index is None or self._index.count == 0:
            return []
        qvec = self.embedder.embed(query)
        ef = max(self.hnsw_params.ef_search, 4 * topk)
        found = self._index.search(qvec, topk * 4, ef=ef)
        # snapshot so one result list never mixes two toggle states
        disabled = {d for d, rec in self._documents.items() if not rec.enabled}
        hits: list[RetrievalHit] = []
        for sid, dist in found:
            if sid in self._tombstones:
                continue
            snip = self._snippets.get(sid)
            if snip is None or snip.doc_id in disabled:
                continue
            doc = self._documents.get(snip.doc_id)
            if doc is None:
                continue
            hits.append(
                RetrievalHit(
                    snippet_id=sid,
                    text=snip.text,
                    distance=dist,
                    doc_id=snip.doc_id,
                    doc_title=doc.title,
                    source_path=doc.source_path,
                )
            )
            if len(hits) == topk:
                break
        return hits

    # ------------------------------------------------------------------ curation

    def set_document_enabled(self, doc_id: int, enabled: bool) -> DocumentRecord:
        with self._writer:
            rec = self.get_document(doc_id)
            rec.enabled = bool(enabled)
            return rec

    def delete_document(self, doc_id: int) -> None:
        """Tombstone the document's snippets; rebuild the index past the threshold."""
        with self._writer:
            if doc_id not in self._documents:
                raise DocumentNotFound(doc_id)
            del self._documents[doc_id]
            doomed = [s for s in self._snippets.values() if s.doc_id == doc_id]
            for snip in doomed:
                del self._snippets[snip.snippet_id]
                self._tombstones.add(snip.snippet_id)
            live = len(self._snippets)
            if self._tombstones and len(self._tombstones) > REBUILD_TOMBSTONE_FRACTION * live:
                self._rebuild_index()

    def _rebuild_index(self) -> None:
        if self._index is None:
            self._tombstones.clear()
            return
        old = self._index
        fresh = HnswIndex(dim=old.dim, params=self.hnsw_params)
        for sid in sorted(self._snippets):
            fresh.insert(sid, old.vector(sid))
        self._index = fresh
        self._tombstones.clear()
        logger.info("rebuilt index with %d live snippets", fresh.count)

    # ------------------------------------------------------------------ persistence

    def save(self, directory: str | os.PathLike) -> None:
        """Write manifest.json plus index.kthn into `directory`."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with self._writer:
            manifest = {
                "version": MANIFEST_VERSION,
                "embedding_dim": self.embedder.dim,
                "embedding_model": self.embedder.model_name,
                "next_doc_id": self._next_doc_id,
                "next_snippet_id": self._next_snippet_id,
                "documents": [rec.to_json() for rec in self.list_documents()],
                "snippets": [asdict(self._snippets[i]) for i in sorted(self._snippets)],
                "tombstones": sorted(self._tombstones),
                "index_file": INDEX_NAME if self._index is not None else None,
            }
            tmp = directory / (MANIFEST_NAME + ".tmp")
            tmp.write_text(json.dumps(manifest, ensure_ascii=False, indent=1), "utf-8")
            os.replace(tmp, directory / MANIFEST_NAME)
            if self._index is not None:
                self._index.save(directory / INDEX_NAME)

    @classmethod
    def load(
        cls,
        directory: str | os.PathLike,
        embedder: Embedder,
        hnsw_params: HnswParams | None = None,
        chunking: ChunkingConfig | None = None,
    ) -> "KnowledgeBase":
        """Load a saved knowledge base; index CRC and dimension are verified."""
        directory = Path(directory)
        try:
            manifest = json.loads((directory / MANIFEST_NAME).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise KnowledgeBaseError(f"cannot read manifest: {exc}") from exc
        if manifest.get("version") != MANIFEST_VERSION:
            raise KnowledgeBaseError(
                f"unsupported manifest version {manifest.get('version')}"
            )
        saved_model = manifest.get("embedding_model")
        if saved_model and saved_model != embedder.model_name:
            logger.warning(
                "knowledge base was embedded with %r but embedder uses %r; "
                "distances across models are not comparable",
                saved_model,
                embedder.model_name,
            )
        kb = cls(embedder=embedder, hnsw_params=hnsw_params, chunking=chunking)
        kb._next_doc_id = int(manifest["next_doc_id"])
        kb._next_snippet_id = int(manifest["next_snippet_id"])
        for rec in manifest["documents"]:
            kb._documents[int(rec["doc_id"])] = DocumentRecord(**rec)
        for srec in manifest["snippets"]:
            kb._snippets[int(srec["snippet_id"])] = SnippetRecord(**srec)
        kb._tombstones = set(manifest.get("tombstones", []))
        if manifest.get("index_file"):
            index = HnswIndex.load(directory / manifest["index_file"])
            dim = manifest.get("embedding_dim")
            if dim is not None and index.dim != dim:
                raise KnowledgeBaseError(
                    f"index dim {index.dim} != manifest embedding_dim {dim}"
                )
            kb._index = index
            kb.hnsw_params = index.params
            if dim is not None:
                embedder.latch_dim(int(dim))
        return kb
