"""The adaptive retrieval pipeline: refine, diverge, retrieve, filter, judge, answer.

Three modes share one streaming core: `baseline` asks the model directly,
`baseline_rs` adds a single raw-query retrieval, and `addrep` runs the full
multi-agent expansion. Every step emits a TraceEvent so callers can replay
exactly what happened.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Generator, Iterable

from .agents import Agents, ChatMessage
from .kb import KnowledgeBase, RetrievalHit


class PipelineMode(str, Enum):
    BASELINE = "baseline"
    BASELINE_RS = "baseline_rs"
    ADDREP = "addrep"


@dataclass(frozen=True)
class AddRepConfig:
    topk_per_query: int = 3
    m: int = 3
    distance_threshold: float = 0.5
    history_window: int = 6
    mode: PipelineMode = PipelineMode.ADDREP

    def __post_init__(self) -> None:
        if self.topk_per_query < 1:
            raise ValueError("topk_per_query must be >= 1")
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if not (0.0 < self.distance_threshold <= 2.0):
            raise ValueError("distance_threshold must be in (0, 2]")
        if self.history_window < 0:
            raise ValueError("history_window must be >= 0")
        object.__setattr__(self, "mode", PipelineMode(self.mode))


@dataclass(frozen=True)
class TraceEvent:
    """One pipeline step on the wire: an event type plus its JSON-able payload."""

    type: str
    data: dict

    def to_json(self) -> str:
        return json.dumps(
            {"type": self.type, "data": self.data}, ensure_ascii=False, sort_keys=True
        )


@dataclass
class PipelineResult:
    answer: str
    used_snippets: list[tuple[RetrievalHit, str]]
    trace: list[TraceEvent]
    mode: PipelineMode
    no_context: bool = False
    error: str | None = None

    def summary(self) -> dict:
        return {
            "answer": self.answer,
            "mode": self.mode.value,
            "no_context": self.no_context,
            "used_snippets": [
                {**hit.to_json(), "reason": reason} for hit, reason in self.used_snippets
            ],
        }


def trace_json(trace: Iterable[TraceEvent]) -> str:
    """Canonical serialization of a whole trace (handy for determinism checks)."""
    return "\n".join(ev.to_json() for ev in trace)


def _provenance(hit: RetrievalHit) -> str:
    return f"{hit.doc_title} — {hit.source_path}"


def _answer_events(
    agents: Agents,
    query: str,
    kept: list[tuple[RetrievalHit, str]],
    trace: list[TraceEvent],
    result: PipelineResult,
) -> Generator[TraceEvent, None, None]:
    parts: list[str] = []
    for delta in agents.answer_stream(query, [(h.text, _provenance(h)) for h, _ in kept]):
        if delta.kind == "no_context":
            result.no_context = True
            continue
        if delta.kind == "error":
            result.error = delta.text
            ev = TraceEvent("error", {"message": delta.text})
            trace.append(ev)
            yield ev
            break
        ev_type = "reasoning_delta" if delta.kind == "reasoning" else "answer_delta"
        if delta.kind == "answer":
            parts.append(delta.text)
        ev = TraceEvent(ev_type, {"text": delta.text})
        trace.append(ev)
        yield ev
    result.answer = "".join(parts)


def _retrieve_events(
    kb: KnowledgeBase,
    query: str,
    topk: int,
    trace: list[TraceEvent],
) -> Generator[TraceEvent, None, list[RetrievalHit]]:
    hits = kb.retrieve(query, topk)
    ev = TraceEvent(
        "retrieval", {"for_query": query, "hits": [h.to_json() for h in hits]}
    )
    trace.append(ev)
    yield ev
    return hits


def _gather_addrep_context(
    query: str,
    history: list[ChatMessage],
    kb: KnowledgeBase,
    agents: Agents,
    cfg: AddRepConfig,
    trace: list[TraceEvent],
) -> Generator[TraceEvent, None, list[tuple[RetrievalHit, str]]]:
    """Steps 1-6: refinement through judging. Returns the approved snippets."""
    window = history[-cfg.history_window :] if cfg.history_window else []
    refined = agents.refine(query, window)
    ev = TraceEvent("refined_query", {"query": refined})
    trace.append(ev)
    yield ev

    first_hits = yield from _retrieve_events(kb, refined, cfg.topk_per_query, trace)

    divergent: list[str] = []
    if cfg.m >= 1:
        divergent = agents.diverge(refined, [h.text for h in first_hits], cfg.m)
    for i, dq in enumerate(divergent, 1):
        ev = TraceEvent("divergent_query", {"index": i, "query": dq})
        trace.append(ev)
        yield ev

    # union of all retrievals, deduplicated by snippet id; when the same
    # snippet comes back for several queries, keep its best (smallest) distance
    pool: dict[int, RetrievalHit] = {h.snippet_id: h for h in first_hits}
    for dq in divergent:
        hits = yield from _retrieve_events(kb, dq, cfg.topk_per_query, trace)
        for h in hits:
            prev = pool.get(h.snippet_id)
            if prev is None or h.distance < prev.distance:
                pool[h.snippet_id] = h

    survivors: list[RetrievalHit] = []
    for sid in sorted(pool):
        hit = pool[sid]
        if hit.distance > cfg.distance_threshold:
            ev = TraceEvent(
                "threshold_drop", {"snippet_id": sid, "distance": hit.distance}
            )
            trace.append(ev)
            yield ev
        else:
            survivors.append(hit)

    kept: list[tuple[RetrievalHit, str]] = []
    if survivors:
        with ThreadPoolExecutor(max_workers=min(4, len(survivors))) as pool_exec:
            judgements = list(
                pool_exec.map(lambda h: agents.judge(query, h.text), survivors)
            )
        for hit, verdict in zip(survivors, judgements):  # snippet_id order
            ev = TraceEvent(
                "judgement",
                {
                    "snippet_id": hit.snippet_id,
                    "helpful": verdict.helpful,
                    "reason": verdict.reason,
                },
            )
            trace.append(ev)
            yield ev
            if verdict.helpful:
                kept.append((hit, verdict.reason))
    return kept


def stream_events(
    query: str,
    history: list[ChatMessage],
    kb: KnowledgeBase,
    agents: Agents,
    cfg: AddRepConfig,
) -> Generator[TraceEvent, None, PipelineResult]:
    """Run the pipeline for cfg.mode, yielding TraceEvents as they happen.

    The generator's return value (StopIteration.value) is the PipelineResult.
    A retrieval failure emits an error event and aborts.
    """
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    trace: list[TraceEvent] = []
    result = PipelineResult(answer="", used_snippets=[], trace=trace, mode=cfg.mode)
    try:
        if cfg.mode is PipelineMode.BASELINE:
            kept: list[tuple[RetrievalHit, str]] = []
        elif cfg.mode is PipelineMode.BASELINE_RS:
            hits = yield from _retrieve_events(kb, query, cfg.topk_per_query, trace)
            kept = []
            for hit in hits:
                if hit.distance > cfg.distance_threshold:
                    ev = TraceEvent(
                        "threshold_drop",
                        {"snippet_id": hit.snippet_id, "distance": hit.distance},
                    )
                    trace.append(ev)
                    yield ev
                else:
                    kept.append((hit, ""))
        else:
            kept = yield from _gather_addrep_context(
                query, history, kb, agents, cfg, trace
            )
    except Exception as exc:  # retrieval/backend failure aborts the run
        result.error = str(exc)
        ev = TraceEvent("error", {"message": str(exc)})
        trace.append(ev)
        yield ev
        return result
    result.used_snippets = kept
    yield from _answer_events(agents, query, kept, trace, result)
    return result


def drain(
    gen: Generator[TraceEvent, None, PipelineResult],
) -> PipelineResult:
    """Exhaust a pipeline generator and hand back its result."""
    while True:
        try:
            next(gen)
        except StopIteration as stop:
            return stop.value


def run_addrep(
    query: str,
    history: list[ChatMessage],
    kb: KnowledgeBase,
    agents: Agents,
    cfg: AddRepConfig,
) -> PipelineResult:
    if cfg.mode is not PipelineMode.ADDREP:
        raise ValueError(f"config mode is {cfg.mode.value}, expected addrep")
    return drain(stream_events(query, history, kb, agents, cfg))


def run_baseline(query: str, agents: Agents) -> PipelineResult:
    cfg = AddRepConfig(mode=PipelineMode.BASELINE)
    return drain(stream_events(query, [], None, agents, cfg))


def run_baseline_rs(
    query: str, kb: KnowledgeBase, agents: Agents, cfg: AddRepConfig
) -> PipelineResult:
    if cfg.mode is not PipelineMode.BASELINE_RS:
        raise ValueError(f"config mode is {cfg.mode.value}, expected baseline_rs")
    return drain(stream_events(query, [], kb, agents, cfg))


def gather_context(
    query: str,
    history: list[ChatMessage],
    kb: KnowledgeBase,
    agents: Agents,
    cfg: AddRepConfig,
) -> tuple[list[tuple[RetrievalHit, str]], list[TraceEvent]]:
    """Refinement through judging without answer generation (used by the eval
    harness, which builds its own answer prompt)."""
    trace: list[TraceEvent] = []
    gen = _gather_addrep_context(query, history, kb, agents, cfg, trace)
    while True:
        try:
            next(gen)
        except StopIteration as stop:
            return stop.value, trace
