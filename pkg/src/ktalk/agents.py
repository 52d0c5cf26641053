"""Inference backends and the five pipeline agents.

Agents are thin functions over an abstract backend: render a role template,
send it, parse the reply. The stub backend makes every agent a pure function
of its inputs so the whole pipeline runs and tests without a model server.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from typing import Iterator

import numpy as np
import requests

from .ingest import tokenize

logger = logging.getLogger(__name__)


class AgentRole(str, Enum):
    FILTER = "filter"
    QUERY_REFINE = "query_refine"
    DIVERGENT = "divergent"
    JUDGE = "judge"
    ANSWER = "answer"


# Placeholders each role's prompt template must contain.
REQUIRED_PLACEHOLDERS: dict[AgentRole, tuple[str, ...]] = {
    AgentRole.FILTER: ("snippet",),
    AgentRole.QUERY_REFINE: ("query", "history"),
    AgentRole.DIVERGENT: ("query", "snippets", "m"),
    AgentRole.JUDGE: ("query", "snippet"),
    AgentRole.ANSWER: ("query", "snippets"),
}

_ALL_PLACEHOLDERS = {name for names in REQUIRED_PLACEHOLDERS.values() for name in names}

# Classification stays greedy-deterministic; expansion runs warm.
DEFAULT_TEMPERATURES = {
    AgentRole.FILTER: 0.0,
    AgentRole.JUDGE: 0.0,
    AgentRole.QUERY_REFINE: 0.7,
    AgentRole.DIVERGENT: 0.7,
    AgentRole.ANSWER: 0.3,
}


class BackendError(Exception):
    """The inference backend failed or is unreachable."""


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown chat role {self.role!r}")


@dataclass(frozen=True)
class AgentConfig:
    role: AgentRole
    model_name: str
    prompt_template: str
    temperature: float = 0.0
    max_output_tokens: int = 1024
    timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        missing = [
            name
            for name in REQUIRED_PLACEHOLDERS[self.role]
            if "{" + name + "}" not in self.prompt_template
        ]
        if missing:
            raise ValueError(
                f"{self.role.value} template missing placeholders: {missing}"
            )


@dataclass(frozen=True)
class GenOptions:
    """Per-call generation options handed to a backend.

    `role` and `variables` carry the structured inputs behind the rendered
    prompt; HTTP backends ignore them, the deterministic stub keys on them.
    """

    model: str
    temperature: float = 0.0
    max_output_tokens: int = 1024
    timeout: float = 120.0
    role: AgentRole | None = None
    variables: dict | None = None


def options_for(cfg: AgentConfig, variables: dict | None = None) -> GenOptions:
    return GenOptions(
        model=cfg.model_name,
        temperature=cfg.temperature,
        max_output_tokens=cfg.max_output_tokens,
        timeout=cfg.timeout,
        role=cfg.role,
        variables=variables,
    )


def render_template(template: str, variables: dict[str, object]) -> str:
    """Substitute {name} placeholders in one pass.

    Placeholder text inside substituted values is left alone. Raises if the
    template references a known placeholder that was not supplied.
    """
    wanted = set(re.findall(r"\{([a-z_]+)\}", template)) & _ALL_PLACEHOLDERS
    missing = wanted - set(variables)
    if missing:
        raise ValueError(f"template references unbound placeholders: {sorted(missing)}")
    if not variables:
        return template
    pattern = re.compile(r"\{(" + "|".join(sorted(variables)) + r")\}")
    return pattern.sub(lambda m: str(variables[m.group(1)]), template)


def _load_default_template(role: AgentRole) -> str:
    return (
        resources.files("ktalk").joinpath(f"prompts/{role.value}.txt").read_text("utf-8")
    )


def default_config(
    role: AgentRole, model_name: str = "qwen2.5:7b", **overrides
) -> AgentConfig:
    cfg = AgentConfig(
        role=role,
        model_name=model_name,
        prompt_template=_load_default_template(role),
        temperature=DEFAULT_TEMPERATURES[role],
    )
    return replace(cfg, **overrides) if overrides else cfg


class InferenceBackend(ABC):
    """Contract every inference server adapter satisfies."""

    base_url: str = ""

    @abstractmethod
    def complete(self, messages: list[ChatMessage], opts: GenOptions) -> str:
        """Return the assistant reply for a chat exchange."""

    @abstractmethod
    def stream(self, messages: list[ChatMessage], opts: GenOptions) -> Iterator[str]:
        """Yield the assistant reply incrementally."""

    @abstractmethod
    def embed(self, model: str, text: str) -> list[float]:
        """Return the raw (unnormalized) embedding for `text`."""

    @abstractmethod
    def health(self) -> bool:
        """True when the backend is reachable."""


class OllamaBackend(InferenceBackend):
    """Adapter for the Ollama-compatible HTTP API.

    POST {base}/api/chat with newline-delimited JSON stream events and
    POST {base}/api/embeddings for vectors.
    """

    def __init__(self, base_url: str = "http://localhost:11434"):
        self.base_url = base_url.rstrip("/")

    def _chat_payload(self, messages: list[ChatMessage], opts: GenOptions, stream: bool) -> dict:
        return {
            "model": opts.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "stream": stream,
            "options": {
                "temperature": opts.temperature,
                "num_predict": opts.max_output_tokens,
            },
        }

    def complete(self, messages: list[ChatMessage], opts: GenOptions) -> str:
        try:
            resp = requests.post(
                f"{self.base_url}/api/chat",
                json=self._chat_payload(messages, opts, stream=False),
                timeout=opts.timeout,
            )
            resp.raise_for_status()
            return resp.json().get("message", {}).get("content", "")
        except (requests.RequestException, ValueError) as exc:
            raise BackendError(f"chat request failed: {exc}") from exc

    def stream(self, messages: list[ChatMessage], opts: GenOptions) -> Iterator[str]:
        try:
            with requests.post(
                f"{self.base_url}/api/chat",
                json=self._chat_payload(messages, opts, stream=True),
                timeout=opts.timeout,
                stream=True,
            ) as resp:
                resp.raise_for_status()
                for line in resp.iter_lines():
                    if not line:
                        continue
                    event = json.loads(line)
                    piece = event.get("message", {}).get("content", "")
                    if piece:
                        yield piece
                    if event.get("done"):
                        return
        except (requests.RequestException, ValueError) as exc:
            raise BackendError(f"chat stream failed: {exc}") from exc

    def embed(self, model: str, text: str) -> list[float]:
        try:
            resp = requests.post(
                f"{self.base_url}/api/embeddings",
                json={"model": model, "prompt": text},
                timeout=120,
            )
            resp.raise_for_status()
            return resp.json()["embedding"]
        except (requests.RequestException, ValueError, KeyError) as exc:
            raise BackendError(f"embeddings request failed: {exc}") from exc

    def health(self) -> bool:
        try:
            resp = requests.get(f"{self.base_url}/api/tags", timeout=2)
            return resp.ok
        except requests.RequestException:
            return False


def _token_set(text: str) -> set[str]:
    folded = text.casefold()
    return {folded[a:b] for a, b in tokenize(folded)}


class StubBackend(InferenceBackend):
    """Deterministic in-process backend.

    Replies are pure functions of the structured call inputs, and embeddings
    are seeded-hash unit vectors, so pipeline traces are bit-reproducible.
    Calls are recorded on `.calls` for test introspection.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        self.base_url = "stub"
        self.dim = dim
        self.seed = seed
        self.calls: list[tuple] = []
        self.last_messages: list[ChatMessage] | None = None

    def _respond(self, opts: GenOptions) -> str:
        v = opts.variables or {}
        if opts.role is AgentRole.FILTER:
            return "Y" if "med" in str(v.get("snippet", "")) else "N"
        if opts.role is AgentRole.QUERY_REFINE:
            return "REFINED:" + str(v.get("query", ""))
        if opts.role is AgentRole.DIVERGENT:
            query = str(v.get("query", ""))
            m = int(v.get("m", 0))
            return "\n".join(f"DT{i}:{query}" for i in range(1, m + 1))
        if opts.role is AgentRole.JUDGE:
            shared = _token_set(str(v.get("query", ""))) & _token_set(
                str(v.get("snippet", ""))
            )
            return "Y: stub-reason" if shared else "N"
        if opts.role is AgentRole.ANSWER:
            query = str(v.get("query", ""))
            count = len(v.get("snippets") or [])
            return f"ANSWER({query})[{count}]"
        return ""

    def complete(self, messages: list[ChatMessage], opts: GenOptions) -> str:
        self.calls.append(("complete", opts.role, opts.variables))
        self.last_messages = list(messages)
        return self._respond(opts)

    def stream(self, messages: list[ChatMessage], opts: GenOptions) -> Iterator[str]:
        text = self.complete(messages, opts)
        for i in range(0, len(text), 16):
            yield text[i : i + 16]

    def embed(self, model: str, text: str) -> list[float]:
        self.calls.append(("embed", model, text))
        digest = hashlib.sha256(f"{self.seed}|{text}".encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
        vec = rng.standard_normal(self.dim)
        vec /= np.linalg.norm(vec)
        return vec.astype(np.float32).tolist()

    def health(self) -> bool:
        return True


class AgentRegistry:
    """The active AgentConfig per role. Swaps are atomic; in-flight calls keep
    the config they captured at call time."""

    def __init__(self, configs: dict[AgentRole, AgentConfig]):
        missing = set(AgentRole) - set(configs)
        if missing:
            raise ValueError(f"missing agent configs: {sorted(r.value for r in missing)}")
        self._configs = dict(configs)

    @classmethod
    def with_defaults(
        cls, chat_model: str = "qwen2.5:7b", answer_model: str | None = None
    ) -> "AgentRegistry":
        configs = {role: default_config(role, chat_model) for role in AgentRole}
        if answer_model:
            configs[AgentRole.ANSWER] = default_config(AgentRole.ANSWER, answer_model)
        return cls(configs)

    def get(self, role: AgentRole) -> AgentConfig:
        return self._configs[role]

    def set(self, cfg: AgentConfig) -> None:
        self._configs = {**self._configs, cfg.role: cfg}

    def all(self) -> dict[AgentRole, AgentConfig]:
        return dict(self._configs)


def _parse_yes_no(raw: str) -> tuple[str | None, str]:
    """First non-whitespace character decides; the remainder is the rationale."""
    stripped = raw.strip()
    head = stripped[:1].upper()
    rest = stripped[1:].lstrip(" \t:.,;—–-").strip()
    if head in ("Y", "N"):
        return head, rest
    return None, stripped


def filter_snippet(
    backend: InferenceBackend, cfg: AgentConfig, snippet_text: str
) -> bool:
    """True to keep the snippet. Fails open: backend trouble never drops content."""
    if cfg.role is not AgentRole.FILTER:
        raise ValueError(f"expected filter config, got {cfg.role.value}")
    prompt = render_template(cfg.prompt_template, {"snippet": snippet_text})
    opts = options_for(cfg, {"snippet": snippet_text})
    try:
        raw = backend.complete([ChatMessage("user", prompt)], opts)
    except BackendError as exc:
        logger.warning("filter agent unreachable, keeping snippet: %s", exc)
        return True
    head, _ = _parse_yes_no(raw)
    if head == "Y":
        return True
    if head == "N":
        return False
    logger.warning("filter agent reply %r not Y/N, keeping snippet", raw[:60])
    return True


def refine_query(
    backend: InferenceBackend,
    cfg: AgentConfig,
    query: str,
    history: list[ChatMessage],
) -> str:
    """Rewrite the query with conversation context; identity fallback on trouble."""
    if cfg.role is not AgentRole.QUERY_REFINE:
        raise ValueError(f"expected query_refine config, got {cfg.role.value}")
    history_text = "\n".join(f"{m.role}: {m.content}" for m in history) or "(none)"
    variables = {"query": query, "history": history_text}
    prompt = render_template(cfg.prompt_template, variables)
    opts = options_for(cfg, variables)
    try:
        raw = backend.complete([ChatMessage("user", prompt)], opts)
    except BackendError as exc:
        logger.warning("refine agent unreachable, using query unchanged: %s", exc)
        return query
    refined = raw.strip()
    return refined if refined else query


_LIST_MARKER = re.compile(r"^(\d+[.)]\s*|[-*•]\s*)")


def _numbered(snippets: list[str]) -> str:
    return "\n\n".join(f"[{i}] {s}" for i, s in enumerate(snippets, 1)) or "(none)"


def divergent_queries(
    backend: InferenceBackend,
    cfg: AgentConfig,
    query: str,
    snippets: list[str],
    m: int,
) -> list[str]:
    """Up to `m` reformulations of `query`, deduplicated, never echoing it back."""
    if cfg.role is not AgentRole.DIVERGENT:
        raise ValueError(f"expected divergent config, got {cfg.role.value}")
    if m < 1:
        raise ValueError("m must be >= 1")
    variables = {"query": query, "snippets": _numbered(snippets), "m": m}
    prompt = render_template(cfg.prompt_template, variables)
    opts = options_for(cfg, {"query": query, "snippets": snippets, "m": m})
    try:
        raw = backend.complete([ChatMessage("user", prompt)], opts)
    except BackendError as exc:
        logger.warning("divergent agent unreachable, no expansion: %s", exc)
        return []
    out: list[str] = []
    seen = {query.strip().casefold()}
    for line in raw.splitlines():
        line = _LIST_MARKER.sub("", line.strip()).strip()
        if not line:
            continue
        key = line.casefold()
        if key in seen:
            continue
        seen.add(key)
        out.append(line)
        if len(out) == m:
            break
    return out


@dataclass(frozen=True)
class Judgement:
    helpful: bool
    reason: str


def judge_snippet(
    backend: InferenceBackend, cfg: AgentConfig, query: str, snippet_text: str
) -> Judgement:
    """Does the snippet genuinely help answer the query? Fails open to helpful."""
    if cfg.role is not AgentRole.JUDGE:
        raise ValueError(f"expected judge config, got {cfg.role.value}")
    variables = {"query": query, "snippet": snippet_text}
    prompt = render_template(cfg.prompt_template, variables)
    opts = options_for(cfg, variables)
    try:
        raw = backend.complete([ChatMessage("user", prompt)], opts)
    except BackendError as exc:
        logger.warning("judge agent unreachable, keeping snippet: %s", exc)
        return Judgement(True, "(judge unavailable)")
    head, rest = _parse_yes_no(raw)
    if head == "Y":
        return Judgement(True, rest)
    if head == "N":
        return Judgement(False, rest)
    logger.warning("judge reply %r not Y/N, keeping snippet", raw[:60])
    return Judgement(True, rest)


@dataclass(frozen=True)
class AnswerDelta:
    """One streamed piece of the answer.

    kind: "answer" | "reasoning" | "no_context" | "error".
    Reasoning is the text between <think> and </think> delimiters.
    """

    kind: str
    text: str


_THINK_OPEN = "<think>"
_THINK_CLOSE = "</think>"


class _ThinkSplitter:
    """Incremental splitter flagging <think>...</think> spans as reasoning."""

    def __init__(self) -> None:
        self._buf = ""
        self._in_think = False

    def feed(self, piece: str) -> list[AnswerDelta]:
        self._buf += piece
        return self._drain(final=False)

    def flush(self) -> list[AnswerDelta]:
        return self._drain(final=True)

    def _drain(self, final: bool) -> list[AnswerDelta]:
        out: list[AnswerDelta] = []
        while True:
            tag = _THINK_CLOSE if self._in_think else _THINK_OPEN
            pos = self._buf.find(tag)
            if pos >= 0:
                if pos:
                    out.append(self._emit(self._buf[:pos]))
                self._buf = self._buf[pos + len(tag) :]
                self._in_think = not self._in_think
                continue
            # hold back a trailing prefix of the delimiter we may be mid-way through
            hold = 0
            if not final:
                for k in range(min(len(tag) - 1, len(self._buf)), 0, -1):
                    if self._buf.endswith(tag[:k]):
                        hold = k
                        break
            emit_upto = len(self._buf) - hold
            if emit_upto > 0:
                out.append(self._emit(self._buf[:emit_upto]))
                self._buf = self._buf[emit_upto:]
            return [d for d in out if d.text]

    def _emit(self, text: str) -> AnswerDelta:
        return AnswerDelta("reasoning" if self._in_think else "answer", text)


def generate_answer(
    backend: InferenceBackend,
    cfg: AgentConfig,
    query: str,
    snippets: list[tuple[str, str]],
) -> Iterator[AnswerDelta]:
    """Stream the final answer built from (text, provenance) context snippets.

    Reasoning spans are flagged; a leading no_context marker is emitted when
    the context is empty; a mid-stream backend failure ends the stream with an
    error delta, keeping whatever text already went out.
    """
    if cfg.role is not AgentRole.ANSWER:
        raise ValueError(f"expected answer config, got {cfg.role.value}")
    block = (
        "\n\n".join(f"[{i}] ({prov})\n{text}" for i, (text, prov) in enumerate(snippets, 1))
        or "(no retrieved context)"
    )
    prompt = render_template(cfg.prompt_template, {"query": query, "snippets": block})
    opts = options_for(
        cfg, {"query": query, "snippets": [text for text, _ in snippets]}
    )
    if not snippets:
        yield AnswerDelta("no_context", "")
    splitter = _ThinkSplitter()
    try:
        for piece in backend.stream([ChatMessage("user", prompt)], opts):
            yield from splitter.feed(piece)
    except BackendError as exc:
        yield from splitter.flush()
        yield AnswerDelta("error", f"answer generation failed: {exc}")
        return
    yield from splitter.flush()


@dataclass
class Agents:
    """An inference backend bound to the per-role configs."""

    backend: InferenceBackend
    registry: AgentRegistry

    def filter(self, snippet_text: str) -> bool:
        return filter_snippet(self.backend, self.registry.get(AgentRole.FILTER), snippet_text)

    def refine(self, query: str, history: list[ChatMessage]) -> str:
        return refine_query(
            self.backend, self.registry.get(AgentRole.QUERY_REFINE), query, history
        )

    def diverge(self, query: str, snippets: list[str], m: int) -> list[str]:
        return divergent_queries(
            self.backend, self.registry.get(AgentRole.DIVERGENT), query, snippets, m
        )

    def judge(self, query: str, snippet_text: str) -> Judgement:
        return judge_snippet(
            self.backend, self.registry.get(AgentRole.JUDGE), query, snippet_text
        )

    def answer_stream(
        self, query: str, snippets: list[tuple[str, str]]
    ) -> Iterator[AnswerDelta]:
        return generate_answer(
            self.backend, self.registry.get(AgentRole.ANSWER), query, snippets
        )
