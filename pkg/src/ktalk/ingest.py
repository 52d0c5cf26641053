"""Document ingestion: parsing, tokenization, sliding-window chunking, rule filtering.

Everything here is pure and deterministic so chunk boundaries are testable;
the only side effect lives in the external text-extractor hook.
"""

from __future__ import annotations

import re
import shlex
import subprocess
import unicodedata
from dataclasses import dataclass
from enum import Enum
from pathlib import Path


class DocumentFormat(str, Enum):
    TXT = "txt"
    MARKDOWN = "markdown"
    EXTERNAL_TEXT = "external_text"


class IngestError(Exception):
    """A document could not be read, decoded, or extracted."""


@dataclass(frozen=True)
class RawDocument:
    """A parsed source document. Build via `make_document` so the body is sanitized."""

    source_id: str
    title: str
    format: DocumentFormat
    body: str
    byte_size: int


@dataclass(frozen=True)
class ChunkingConfig:
    max_tokens: int = 512
    overlap_fraction: float = 0.25
    min_chars: int = 10

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if not (0.0 <= self.overlap_fraction < 0.5):
            raise ValueError("overlap_fraction must be in [0, 0.5)")
        if self.min_chars < 0:
            raise ValueError("min_chars must be >= 0")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def overlap_tokens(self) -> int:
        return int(self.max_tokens * self.overlap_fraction)

    @property
    def stride(self) -> int:
        return self.max_tokens - self.overlap_tokens


@dataclass(frozen=True)
class Chunk:
    doc_source_id: str
    seq: int
    text: str
    token_count: int
    # window position over the document's token list, [token_start, token_end)
    token_start: int
    token_end: int


# Ideograph and syllabary blocks treated as one-token-per-codepoint.
_CJK_RANGES = (
    (0x3040, 0x30FF),  # hiragana, katakana
    (0x3400, 0x4DBF),  # CJK extension A
    (0x4E00, 0x9FFF),  # CJK unified ideographs
    (0xAC00, 0xD7A3),  # hangul syllables
    (0xF900, 0xFAFF),  # CJK compatibility ideographs
    (0x20000, 0x2EBEF),  # CJK extensions B..F
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str) -> list[tuple[int, int]]:
    """Split text into token spans (start, end) covering all non-whitespace content.

    A token is either a maximal run of non-whitespace, non-CJK characters, or a
    single CJK codepoint. Deterministic and language-neutral.
    """
    spans: list[tuple[int, int]] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if _is_cjk(ch):
            spans.append((i, i + 1))
            i += 1
            continue
        j = i + 1
        while j < n and not text[j].isspace() and not _is_cjk(text[j]):
            j += 1
        spans.append((i, j))
        i = j
    return spans


def chunk_document(doc: RawDocument, cfg: ChunkingConfig | None = None) -> list[Chunk]:
    """Cut a document into token windows of at most `max_tokens` with fixed overlap.

    Windows start every `cfg.stride` tokens; the final window may be shorter.
    Together they cover every token of the document.
    """
    cfg = cfg or ChunkingConfig()
    spans = tokenize(doc.body)
    if not spans:
        return []
    chunks: list[Chunk] = []
    start, seq = 0, 0
    total = len(spans)
    while True:
        end = min(start + cfg.max_tokens, total)
        text = doc.body[spans[start][0] : spans[end - 1][1]]
        chunks.append(
            Chunk(
                doc_source_id=doc.source_id,
                seq=seq,
                text=text,
                token_count=end - start,
                token_start=start,
                token_end=end,
            )
        )
        if end == total:
            break
        start += cfg.stride
        seq += 1
    return chunks


def rule_filter(chunk: Chunk, cfg: ChunkingConfig | None = None) -> bool:
    """Keep a chunk unless, after trimming, it is blank or shorter than `min_chars`."""
    cfg = cfg or ChunkingConfig()
    trimmed = chunk.text.strip()
    return bool(trimmed) and len(trimmed) >= cfg.min_chars


def sanitize_text(text: str) -> str:
    """Normalize newlines and strip control characters other than newline/tab."""
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    return "".join(
        ch for ch in text if ch in ("\n", "\t") or unicodedata.category(ch) != "Cc"
    )


_MD_PATTERNS = [
    (re.compile(r"^(```|~~~)[^\n]*$", re.M), ""),  # code fence markers
    (re.compile(r"!\[([^\]]*)\]\([^)]*\)"), r"\1"),  # images keep alt text
    (re.compile(r"\[([^\]]+)\]\([^)]*\)"), r"\1"),  # links keep link text
    (re.compile(r"^\s*\[[^\]]+\]:\s+\S+.*$", re.M), ""),  # reference definitions
    (re.compile(r"^#{1,6}\s+", re.M), ""),  # atx headings
    (re.compile(r"^\s{0,3}>\s?", re.M), ""),  # blockquotes
    (re.compile(r"^(\s*)[-*+]\s+", re.M), r"\1"),  # bullet markers
    (re.compile(r"^(\s*)\d+[.)]\s+", re.M), r"\1"),  # ordered-list markers
    (re.compile(r"^\s*\|?[\s:]*-{3,}[-\s:|]*$", re.M), ""),  # table separator rows
    (re.compile(r"^\s{0,3}(={3,}|\*{3,}|_{3,})\s*$", re.M), ""),  # rules/setext
    (re.compile(r"(\*\*|__)(.+?)\1", re.S), r"\2"),  # bold
    (re.compile(r"(?<![\w*])(\*|_)(?=\S)(.+?)(?<=\S)\1(?![\w*])", re.S), r"\2"),  # italics
    (re.compile(r"`([^`\n]*)`"), r"\1"),  # inline code
]


def strip_markdown(text: str) -> str:
    """Reduce Markdown to plain text: markup removed, link/alt text kept."""
    for pattern, repl in _MD_PATTERNS:
        text = pattern.sub(repl, text)
    return text.replace("|", " ")


def plain_text(doc: RawDocument) -> str:
    """The document body as the chunker should see it (Markdown stripped)."""
    if doc.format is DocumentFormat.MARKDOWN:
        return strip_markdown(doc.body)
    return doc.body


def make_document(
    source_id: str,
    title: str,
    fmt: DocumentFormat | str,
    body: str,
    byte_size: int | None = None,
) -> RawDocument:
    fmt = DocumentFormat(fmt)
    body = sanitize_text(body)
    if byte_size is None:
        byte_size = len(body.encode("utf-8"))
    return RawDocument(
        source_id=source_id, title=title, format=fmt, body=body, byte_size=byte_size
    )


def run_extractor(command: list[str] | str, data: bytes) -> str:
    """Run the configured text extractor: document bytes on stdin, UTF-8 text on stdout."""
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    try:
        proc = subprocess.run(argv, input=data, capture_output=True, timeout=300)
    except OSError as exc:
        raise IngestError(f"extractor failed to start: {exc}") from exc
    except subprocess.TimeoutExpired as exc:
        raise IngestError("extractor timed out") from exc
    if proc.returncode != 0:
        stderr = proc.stderr.decode("utf-8", errors="replace").strip()
        raise IngestError(f"extractor exited with {proc.returncode}: {stderr}")
    return proc.stdout.decode("utf-8", errors="replace")


_FORMAT_BY_SUFFIX = {
    ".txt": DocumentFormat.TXT,
    ".md": DocumentFormat.MARKDOWN,
    ".markdown": DocumentFormat.MARKDOWN,
}


def read_document(
    path: str | Path,
    *,
    title: str | None = None,
    extractor_cmd: list[str] | str | None = None,
) -> RawDocument:
    """Read a file into a RawDocument.

    TXT and Markdown parse natively; any other suffix requires the extractor
    hook (stdin bytes in, UTF-8 text out, nonzero exit means failure).
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    fmt = _FORMAT_BY_SUFFIX.get(path.suffix.lower())
    if fmt is not None:
        try:
            body = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IngestError(f"{path} is not valid UTF-8: {exc}") from exc
    elif extractor_cmd:
        body = run_extractor(extractor_cmd, data)
        fmt = DocumentFormat.EXTERNAL_TEXT
    else:
        raise IngestError(
            f"no native parser for {path.suffix!r} and no extractor configured"
        )
    return make_document(
        source_id=str(path),
        title=title or path.stem,
        fmt=fmt,
        body=body,
        byte_size=len(data),
    )
