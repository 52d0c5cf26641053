"""Tokenizer, chunker, rule filter, markdown stripping, extractor hook."""

from __future__ import annotations

import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ktalk.ingest import (
    Chunk,
    ChunkingConfig,
    DocumentFormat,
    IngestError,
    chunk_document,
    make_document,
    plain_text,
    read_document,
    rule_filter,
    run_extractor,
    sanitize_text,
    strip_markdown,
    tokenize,
)


def doc_of(text: str, fmt: str = "txt") -> "RawDocument":
    return make_document("mem:test", "test", fmt, text)


def words(n: int) -> str:
    return " ".join(f"w{i}" for i in range(n))


class TestTokenize:
    def test_empty(self):
        assert tokenize("") == []

    def test_three_latin_tokens(self):
        assert len(tokenize("metformin 500 mg")) == 3

    def test_cjk_one_token_per_codepoint(self):
        assert len(tokenize("慢性肾脏病")) == 5

    def test_mixed_script(self):
        # "CKD4" run, then 期 as its own token
        spans = tokenize("CKD4期 患者")
        assert len(spans) == 4

    def test_spans_slice_back(self):
        text = "alpha  beta\tgamma"
        assert [text[a:b] for a, b in tokenize(text)] == ["alpha", "beta", "gamma"]

    def test_punctuation_rides_with_run(self):
        assert len(tokenize("e.g. dose-dependent")) == 2

    @given(st.text(max_size=300))
    @settings(max_examples=200)
    def test_spans_ordered_disjoint_and_cover_nonspace(self, text):
        spans = tokenize(text)
        prev_end = 0
        covered = 0
        for a, b in spans:
            assert a >= prev_end and b > a
            assert not text[a:b][0].isspace() and not text[a:b][-1].isspace()
            covered += sum(1 for ch in text[a:b] if not ch.isspace())
            prev_end = b
        assert covered == sum(1 for ch in text if not ch.isspace())

    def test_deterministic(self):
        text = "alpha 病 beta 42"
        assert tokenize(text) == tokenize(text)


class TestChunkDocument:
    def ranges(self, n_tokens: int, cfg: ChunkingConfig) -> list[tuple[int, int]]:
        chunks = chunk_document(doc_of(words(n_tokens)), cfg)
        return [(c.token_start, c.token_end) for c in chunks]

    def test_1000_tokens_default_cfg(self):
        # stride 512 - 128 = 384: windows computed by hand
        assert self.ranges(1000, ChunkingConfig()) == [(0, 512), (384, 896), (768, 1000)]

    def test_exactly_one_window(self):
        assert self.ranges(512, ChunkingConfig()) == [(0, 512)]

    def test_one_token_past_window(self):
        assert self.ranges(513, ChunkingConfig()) == [(0, 512), (384, 513)]

    def test_empty_document(self):
        assert chunk_document(doc_of(""), ChunkingConfig()) == []

    def test_seq_consecutive_from_zero(self):
        chunks = chunk_document(doc_of(words(1000)), ChunkingConfig())
        assert [c.seq for c in chunks] == list(range(len(chunks)))

    def test_chunk_text_matches_token_range(self):
        text = words(700)
        chunks = chunk_document(doc_of(text), ChunkingConfig())
        spans = tokenize(text)
        for c in chunks:
            assert c.text == text[spans[c.token_start][0] : spans[c.token_end - 1][1]]

    def test_determinism(self):
        doc = doc_of(words(900))
        cfg = ChunkingConfig()
        assert chunk_document(doc, cfg) == chunk_document(doc, cfg)

    @given(st.integers(min_value=0, max_value=1500))
    @settings(max_examples=60, deadline=None)
    def test_coverage_overlap_bound(self, n_tokens):
        cfg = ChunkingConfig(max_tokens=64, overlap_fraction=0.25)
        chunks = chunk_document(doc_of(words(n_tokens)), cfg)
        if n_tokens == 0:
            assert chunks == []
            return
        assert chunks[0].token_start == 0
        assert chunks[-1].token_end == n_tokens
        overlap = cfg.overlap_tokens
        for a, b in zip(chunks, chunks[1:]):
            assert b.token_start == a.token_start + cfg.stride
            assert len(range(max(a.token_start, b.token_start), min(a.token_end, b.token_end))) == overlap
        for c in chunks:
            assert c.token_count == c.token_end - c.token_start <= cfg.max_tokens

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ChunkingConfig(overlap_fraction=0.5)
        with pytest.raises(ValueError):
            ChunkingConfig(max_tokens=0)


class TestRuleFilter:
    def chunk_of(self, text: str) -> Chunk:
        return Chunk("d", 0, text, 1, 0, 1)

    def test_blank_dropped(self):
        assert rule_filter(self.chunk_of(""), ChunkingConfig()) is False
        assert rule_filter(self.chunk_of("   \n\t "), ChunkingConfig()) is False

    def test_short_dropped(self):
        assert rule_filter(self.chunk_of("abc"), ChunkingConfig()) is False

    def test_exactly_ten_chars_kept(self):
        assert rule_filter(self.chunk_of("abcdefghij"), ChunkingConfig()) is True

    def test_nine_chars_dropped(self):
        assert rule_filter(self.chunk_of("abcdefghi"), ChunkingConfig()) is False

    def test_surrounding_whitespace_trimmed_before_counting(self):
        assert rule_filter(self.chunk_of("  abcdefghi  "), ChunkingConfig()) is False
        assert rule_filter(self.chunk_of("  abcdefghij  "), ChunkingConfig()) is True

    @given(st.text(max_size=60))
    @settings(max_examples=200)
    def test_keep_iff_trimmed_length_at_least_min(self, text):
        cfg = ChunkingConfig()
        expected = len(text.strip()) >= cfg.min_chars and bool(text.strip())
        assert rule_filter(self.chunk_of(text), cfg) is expected


class TestSanitizeAndMarkdown:
    def test_control_chars_stripped(self):
        assert sanitize_text("a\x00b\x07c\nd\te") == "abc\nd\te"

    def test_crlf_normalized(self):
        assert sanitize_text("a\r\nb\rc") == "a\nb\nc"

    def test_markdown_stripped(self):
        md = "# Title\n\n- item one\n- item two\n\nSee [the guide](http://x) and `code`.\n\n**bold** text\n"
        out = strip_markdown(md)
        assert "#" not in out and "](" not in out and "`" not in out and "**" not in out
        assert "Title" in out and "item one" in out and "the guide" in out and "bold" in out

    def test_plain_text_strips_markdown_format_only(self):
        md_doc = doc_of("# Head\nbody", fmt="markdown")
        txt_doc = doc_of("# Head\nbody", fmt="txt")
        assert "#" not in plain_text(md_doc)
        assert "#" in plain_text(txt_doc)


class TestReadDocument:
    def test_txt(self, tmp_path):
        p = tmp_path / "note.txt"
        p.write_text("hello world", "utf-8")
        doc = read_document(p)
        assert doc.format is DocumentFormat.TXT
        assert doc.body == "hello world"
        assert doc.byte_size == 11

    def test_markdown_by_suffix(self, tmp_path):
        p = tmp_path / "note.md"
        p.write_text("# hi", "utf-8")
        assert read_document(p).format is DocumentFormat.MARKDOWN

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestError):
            read_document(tmp_path / "absent.txt")

    def test_unknown_suffix_without_extractor(self, tmp_path):
        p = tmp_path / "scan.pdf"
        p.write_bytes(b"%PDF fake")
        with pytest.raises(IngestError, match="extractor"):
            read_document(p)

    def test_extractor_hook(self, tmp_path):
        p = tmp_path / "scan.pdf"
        p.write_bytes(b"raw-bytes-here")
        cmd = [sys.executable, "-c", "import sys; sys.stdout.write(sys.stdin.read().upper())"]
        doc = read_document(p, extractor_cmd=cmd)
        assert doc.format is DocumentFormat.EXTERNAL_TEXT
        assert doc.body == "RAW-BYTES-HERE"

    def test_extractor_nonzero_exit(self):
        cmd = [sys.executable, "-c", "import sys; sys.exit(3)"]
        with pytest.raises(IngestError, match="exited with 3"):
            run_extractor(cmd, b"data")
