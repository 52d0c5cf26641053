"""Dataset loading, answer parsing, metric arithmetic, and the eval loop."""

from __future__ import annotations

import csv
import json
import random
from importlib import resources

import pytest

from conftest import ingest_texts
from ktalk.addrep import PipelineMode
from ktalk.evalharness import (
    DatasetError,
    McqItem,
    Prediction,
    build_answer_prompt,
    build_eval_query,
    load_dataset,
    parse_answer,
    run_eval,
    score,
)

OPTIONS = {"A": "first", "B": "second", "C": "third", "D": "fourth"}


def item(id_: str, gold: str, qtype: str = "A1A2", stem: str = "stem?") -> McqItem:
    letters = frozenset(gold)
    return McqItem(
        id=id_, qtype=qtype, stem=stem, options=dict(OPTIONS), gold=letters,
        multi=len(letters) > 1,
    )


def pred(id_: str, selected: str = "", rejected: bool = False) -> Prediction:
    return Prediction(
        item_id=id_, selected=frozenset(selected), rejected=rejected, raw_response=""
    )


SAMPLE = resources.files("ktalk").joinpath("data/sample_mcq.jsonl")


class TestLoadDataset:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("", "utf-8")
        assert load_dataset(p) == []

    def test_shipped_sample_has_20_items(self, tmp_path):
        p = tmp_path / "sample.jsonl"
        p.write_text(SAMPLE.read_text("utf-8"), "utf-8")
        items = load_dataset(p)
        assert len(items) == 20
        assert {i.qtype for i in items} == {"A1A2", "A3A4", "X", "CaseStudy"}

    def test_gold_not_in_options_names_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        good = json.dumps({"id": "1", "qtype": "X", "stem": "s", "options": {"A": "a"}, "gold": "A", "multi": False})
        bad = json.dumps({"id": "2", "qtype": "X", "stem": "s", "options": {"A": "a"}, "gold": "Z", "multi": False})
        p.write_text(good + "\n" + bad + "\n", "utf-8")
        with pytest.raises(DatasetError, match="line 2"):
            load_dataset(p)

    def test_duplicate_ids_rejected(self, tmp_path):
        p = tmp_path / "dup.jsonl"
        row = json.dumps({"id": "1", "qtype": "X", "stem": "s", "options": {"A": "a"}, "gold": "A", "multi": False})
        p.write_text(row + "\n" + row + "\n", "utf-8")
        with pytest.raises(DatasetError, match="duplicate id"):
            load_dataset(p)

    def test_single_choice_must_have_one_gold(self):
        with pytest.raises(DatasetError):
            McqItem(id="x", qtype="A1A2", stem="s", options=dict(OPTIONS),
                    gold=frozenset("AB"), multi=False)


class TestBuildEvalQuery:
    def test_stem_verbatim(self):
        it = item("1", "A", stem="What  regulates\nsodium?")
        assert build_eval_query(it) == "What  regulates\nsodium?"

    def test_options_never_included(self):
        it = item("1", "A")
        q = build_eval_query(it)
        assert "first" not in q and "second" not in q


class TestBuildAnswerPrompt:
    def test_contains_every_option_letter(self):
        prompt = build_answer_prompt(item("1", "A"), [], allow_reject=True)
        for letter, text in OPTIONS.items():
            assert f"{letter}. {text}" in prompt

    def test_reject_instruction_toggle(self):
        with_reject = build_answer_prompt(item("1", "A"), [], allow_reject=True)
        without = build_answer_prompt(item("1", "A"), [], allow_reject=False)
        assert "[REJECT]" in with_reject
        assert "[REJECT]" not in without

    def test_snippet_order_preserved(self):
        prompt = build_answer_prompt(item("1", "A"), ["zzz", "aaa"], allow_reject=True)
        assert prompt.index("[1] zzz") < prompt.index("[2] aaa")

    def test_multi_items_ask_for_letter_set(self):
        prompt = build_answer_prompt(item("1", "AB"), [], allow_reject=False)
        assert "all correct options" in prompt


class TestParseAnswer:
    def test_reject_token(self):
        assert parse_answer("[REJECT]", OPTIONS).rejected is True

    def test_reject_case_insensitive(self):
        for raw in ("[reject]", "[Reject]", "I must [ReJeCt] this one"):
            assert parse_answer(raw, OPTIONS).rejected is True

    def test_answer_line(self):
        p = parse_answer("The answer is B.", OPTIONS)
        assert p.selected == frozenset("B") and not p.rejected

    def test_multi_letter_run(self):
        assert parse_answer("ACD", OPTIONS).selected == frozenset("ACD")

    def test_letters_after_marker_preferred(self):
        p = parse_answer("Considering A and C, the answer is B", OPTIONS)
        assert p.selected == frozenset("B")

    def test_last_line_fallback(self):
        p = parse_answer("Some discussion.\nB) looks right\n", OPTIONS)
        assert p.selected == frozenset("B")

    def test_unparseable_scored_wrong_not_rejected(self):
        p = parse_answer("no idea whatsoever", OPTIONS)
        assert p.selected == frozenset() and p.rejected is False

    def test_think_block_does_not_pollute(self):
        raw = "<think>maybe A? or C? let me weigh D...</think>\nThe answer is B"
        assert parse_answer(raw, OPTIONS).selected == frozenset("B")

    def test_invalid_letters_ignored(self):
        assert parse_answer("The answer is E", OPTIONS).selected == frozenset()


class TestScore:
    def test_two_exact_matches(self):
        items = [item("1", "A"), item("2", "BC", qtype="X")]
        preds = [pred("1", "A"), pred("2", "BC")]
        report = score(items, preds)
        assert report.accuracy == 1.0
        assert report.macro_f1 == 1.0
        assert report.micro_f1 == 1.0
        assert report.rejection_rate == 0.0

    def test_partial_multi_f1_two_thirds(self):
        items = [item("1", "AB", qtype="X")]
        report = score(items, [pred("1", "A")])
        assert report.macro_f1 == pytest.approx(2 / 3)

    def test_hand_computed_four_item_fixture(self):
        # 1 correct single, 1 rejected, 1 wrong single, 1 multi at F1 2/3
        items = [
            item("1", "A"),
            item("2", "B"),
            item("3", "C"),
            item("4", "AB", qtype="X"),
        ]
        preds = [
            pred("1", "A"),
            pred("2", rejected=True),
            pred("3", "D"),
            pred("4", "A"),
        ]
        report = score(items, preds)
        assert report.accuracy == pytest.approx(0.25)
        assert report.rejection_rate == pytest.approx(0.25)
        assert report.macro_f1 == pytest.approx(5 / 12)
        # option-level aggregate: TP=2, FP=1, FN=3 -> 2*2/(4+1+3) = 0.5
        assert report.micro_f1 == pytest.approx(0.5)

    def test_per_type_accuracy(self):
        items = [item("1", "A"), item("2", "B", qtype="X")]
        report = score(items, [pred("1", "A"), pred("2", "C")])
        assert report.per_type["A1A2"] == {"n": 1, "accuracy": 1.0}
        assert report.per_type["X"] == {"n": 1, "accuracy": 0.0}
        assert report.per_type["CaseStudy"]["n"] == 0

    def test_accuracy_plus_rejection_plus_wrong_is_one(self):
        rng = random.Random(4)
        items = [item(str(i), "A") for i in range(30)]
        preds = []
        for i in range(30):
            roll = rng.random()
            if roll < 0.3:
                preds.append(pred(str(i), "A"))
            elif roll < 0.5:
                preds.append(pred(str(i), rejected=True))
            else:
                preds.append(pred(str(i), rng.choice(["B", "C", ""])))
        report = score(items, preds)
        wrong = sum(
            1 for p in preds if not p.rejected and p.selected != frozenset("A")
        ) / 30
        assert report.accuracy + report.rejection_rate + wrong == pytest.approx(1.0)

    def test_permutation_invariance(self):
        items = [item("1", "A"), item("2", "B"), item("3", "CD", qtype="X")]
        preds = [pred("1", "A"), pred("2", "C"), pred("3", "C")]
        fwd = score(items, preds)
        rev = score(list(reversed(items)), list(reversed(preds)))
        assert fwd.to_json() == rev.to_json()

    def test_micro_equals_macro_for_singleton_world(self):
        # all golds singletons, all predictions singletons, none empty/rejected
        items = [item(str(i), "A") for i in range(10)]
        preds = [pred(str(i), "A" if i % 3 else "B") for i in range(10)]
        report = score(items, preds)
        assert report.micro_f1 == pytest.approx(report.macro_f1)

    def test_id_mismatch_rejected(self):
        with pytest.raises(ValueError, match="ids"):
            score([item("1", "A")], [pred("2", "A")])


class TestRunEval:
    @pytest.fixture
    def sample_path(self, tmp_path):
        p = tmp_path / "sample.jsonl"
        p.write_text(SAMPLE.read_text("utf-8"), "utf-8")
        return p

    def test_stub_eval_writes_reports(self, kb, agents, sample_path, tmp_path):
        items = load_dataset(sample_path)
        report_path = tmp_path / "report.json"
        report = run_eval(items, kb, agents, "addrep", report_path)
        assert report_path.exists()
        assert report_path.with_suffix(".csv").exists()
        on_disk = json.loads(report_path.read_text("utf-8"))
        assert on_disk["n"] == 20
        assert set(on_disk["per_type"]) == {"A1A2", "A3A4", "X", "CaseStudy"}
        assert on_disk["mode"] == "addrep"
        with open(report_path.with_suffix(".csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 20
        assert set(rows[0]) == {"id", "qtype", "gold", "selected", "rejected", "correct", "f1"}

    def test_deterministic_across_fresh_runs(self, kb, agents, sample_path, tmp_path):
        items = load_dataset(sample_path)
        r1 = run_eval(items, kb, agents, "baseline", tmp_path / "a.json")
        r2 = run_eval(items, kb, agents, "baseline", tmp_path / "b.json")
        assert r1.to_json() == r2.to_json()

    def test_cache_makes_rerun_free(self, kb, agents, stub_backend, sample_path, tmp_path):
        items = load_dataset(sample_path)
        ingest_texts(kb, ["aldosterone regulates sodium in the distal nephron"])
        report_path = tmp_path / "report.json"
        first = run_eval(items, kb, agents, "addrep", report_path)
        stub_backend.calls.clear()
        second = run_eval(items, kb, agents, "addrep", report_path)
        assert stub_backend.calls == []
        assert first.to_json() == second.to_json()

    def test_baseline_mode_never_retrieves(self, kb, agents, sample_path, tmp_path, monkeypatch):
        calls = []
        monkeypatch.setattr(kb, "retrieve", lambda q, k: calls.append(q))
        run_eval(load_dataset(sample_path), kb, agents, PipelineMode.BASELINE, tmp_path / "r.json")
        assert calls == []

    def test_baseline_rs_retrieves_once_per_item(self, kb, agents, sample_path, tmp_path, monkeypatch):
        calls = []
        original = kb.retrieve
        monkeypatch.setattr(kb, "retrieve", lambda q, k: calls.append(q) or original(q, k))
        items = load_dataset(sample_path)[:5]
        run_eval(items, kb, agents, "baseline_rs", tmp_path / "r.json")
        assert calls == [it.stem for it in items]

    def test_retrieval_query_is_stem_only(self, kb, agents, sample_path, tmp_path, monkeypatch):
        queries = []
        original = kb.retrieve
        monkeypatch.setattr(kb, "retrieve", lambda q, k: queries.append(q) or original(q, k))
        items = load_dataset(sample_path)[:2]
        run_eval(items, kb, agents, "baseline_rs", tmp_path / "r.json")
        for q, it in zip(queries, items):
            for option_text in it.options.values():
                assert option_text not in q
