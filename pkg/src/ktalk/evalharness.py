"""MCQ evaluation harness: three retrieval modes, accuracy, rejection, F1.

Datasets are JSONL (one item per line); retrieval uses only the question
stem; answers may be the literal token [REJECT] to decline. Reports land as
JSON plus a per-item CSV, with a per-item cache for resumable runs.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .agents import Agents, AgentRole, BackendError, ChatMessage, options_for
from .addrep import AddRepConfig, PipelineMode, gather_context
from .kb import KnowledgeBase

logger = logging.getLogger(__name__)

QUESTION_TYPES = ("A1A2", "A3A4", "X", "CaseStudy")

REJECT_TOKEN = "[REJECT]"
_REJECT_RE = re.compile(re.escape(REJECT_TOKEN), re.IGNORECASE)
_THINK_RE = re.compile(r"<think>.*?</think>", re.DOTALL)
_ANSWER_MARKER = re.compile(
    r"(?i)\b(?:final answer|answer|correct options?|choices?|选择|答案)\b\s*(?:is|are|:|：)?"
)
_LETTER_RUN = re.compile(r"(?<![A-Za-z])([A-E]{1,5})(?![A-Za-z])")


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class McqItem:
    id: str
    qtype: str
    stem: str
    options: dict[str, str]  # letter -> text, insertion-ordered
    gold: frozenset[str]
    multi: bool

    def __post_init__(self) -> None:
        if self.qtype not in QUESTION_TYPES:
            raise DatasetError(f"unknown qtype {self.qtype!r}")
        if not self.gold <= set(self.options):
            raise DatasetError(
                f"gold letters {sorted(self.gold)} not all among options "
                f"{sorted(self.options)}"
            )
        if not self.multi and len(self.gold) != 1:
            raise DatasetError("single-choice item must have exactly one gold letter")


@dataclass(frozen=True)
class Prediction:
    item_id: str
    selected: frozenset[str]
    rejected: bool
    raw_response: str

    def __post_init__(self) -> None:
        if self.rejected and self.selected:
            raise ValueError("a rejected prediction cannot select options")


@dataclass
class EvalReport:
    mode: str
    model: str
    n: int
    accuracy: float
    per_type: dict[str, dict]
    rejection_rate: float
    macro_f1: float
    micro_f1: float

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "model": self.model,
            "n": self.n,
            "accuracy": self.accuracy,
            "per_type": self.per_type,
            "rejection_rate": self.rejection_rate,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
        }


def load_dataset(path: str | Path) -> list[McqItem]:
    """Parse a JSONL dataset; validation failures name the offending line."""
    items: list[McqItem] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                gold = obj["gold"]
                letters = frozenset(gold) if isinstance(gold, str) else frozenset(gold)
                item = McqItem(
                    id=str(obj["id"]),
                    qtype=obj["qtype"],
                    stem=obj["stem"],
                    options=dict(obj["options"]),
                    gold=letters,
                    multi=bool(obj.get("multi", len(letters) > 1)),
                )
            except (KeyError, TypeError, ValueError, DatasetError) as exc:
                raise DatasetError(f"{path}, line {lineno}: {exc}") from exc
            if item.id in seen_ids:
                raise DatasetError(f"{path}, line {lineno}: duplicate id {item.id!r}")
            seen_ids.add(item.id)
            items.append(item)
    return items


def build_eval_query(item: McqItem) -> str:
    """Retrieval query is the bare stem; options never leak into retrieval."""
    return item.stem


def build_answer_prompt(item: McqItem, snippets: list[str], allow_reject: bool) -> str:
    lines: list[str] = []
    if snippets:
        lines.append("Context:")
        for i, text in enumerate(snippets, 1):
            lines.append(f"[{i}] {text}")
        lines.append("")
    lines.append(f"Question: {item.stem}")
    for letter, text in item.options.items():
        lines.append(f"{letter}. {text}")
    lines.append("")
    if item.multi:
        lines.append("Reply with the letters of all correct options, e.g. ABD.")
    else:
        lines.append("Reply with the letter of the single correct option.")
    if allow_reject:
        lines.append(
            f"If you are not sure, reply with exactly {REJECT_TOKEN} instead of guessing."
        )
    return "\n".join(lines)


def _letters_in(segment: str, valid: set[str]) -> frozenset[str]:
    found: set[str] = set()
    for run in _LETTER_RUN.findall(segment):
        found.update(ch for ch in run if ch in valid)
    return frozenset(found)


def parse_answer(raw: str, options: dict[str, str]) -> Prediction:
    """Extract the selected option letters (or a rejection) from model output.

    Preference order: the [REJECT] token, then an explicit answer line, then
    the last line containing standalone option letters. Unparseable output
    selects nothing and is scored wrong.
    """
    visible = _THINK_RE.sub(" ", raw).strip() or raw
    if _REJECT_RE.search(visible):
        return Prediction(item_id="", selected=frozenset(), rejected=True, raw_response=raw)
    valid = set(options)
    lines = [ln for ln in visible.splitlines() if ln.strip()]
    for line in reversed(lines):
        marker = None
        for m in _ANSWER_MARKER.finditer(line):
            marker = m
        if marker is None:
            continue
        letters = _letters_in(line[marker.end() :], valid) or _letters_in(line, valid)
        if letters:
            return Prediction("", letters, False, raw)
    for line in reversed(lines):
        letters = _letters_in(line, valid)
        if letters:
            return Prediction("", letters, False, raw)
    return Prediction("", frozenset(), False, raw)


def _question_f1(gold: frozenset[str], selected: frozenset[str]) -> float:
    if not selected:
        return 0.0
    tp = len(gold & selected)
    if tp == 0:
        return 0.0
    precision = tp / len(selected)
    recall = tp / len(gold)
    return 2 * precision * recall / (precision + recall)


def score(items: list[McqItem], predictions: list[Prediction], mode: str = "", model: str = "") -> EvalReport:
    """Aggregate metrics; rejected items count in every denominator."""
    by_id = {p.item_id: p for p in predictions}
    if set(by_id) != {item.id for item in items} or len(predictions) != len(items):
        raise ValueError("predictions do not match dataset item ids")
    n = len(items)
    correct = 0
    rejected = 0
    f1_sum = 0.0
    tp = fp = fn = 0
    type_counts = {t: 0 for t in QUESTION_TYPES}
    type_correct = {t: 0 for t in QUESTION_TYPES}
    for item in items:
        pred = by_id[item.id]
        type_counts[item.qtype] += 1
        if pred.rejected:
            rejected += 1
        is_correct = (not pred.rejected) and pred.selected == item.gold
        if is_correct:
            correct += 1
            type_correct[item.qtype] += 1
        f1_sum += _question_f1(item.gold, pred.selected)
        tp += len(item.gold & pred.selected)
        fp += len(pred.selected - item.gold)
        fn += len(item.gold - pred.selected)
    micro = (2 * tp / (2 * tp + fp + fn)) if (2 * tp + fp + fn) else 0.0
    per_type = {
        t: {
            "n": type_counts[t],
            "accuracy": (type_correct[t] / type_counts[t]) if type_counts[t] else 0.0,
        }
        for t in QUESTION_TYPES
    }
    return EvalReport(
        mode=mode,
        model=model,
        n=n,
        accuracy=correct / n if n else 0.0,
        per_type=per_type,
        rejection_rate=rejected / n if n else 0.0,
        macro_f1=f1_sum / n if n else 0.0,
        micro_f1=micro,
    )


def _load_cache(path: Path) -> dict[tuple[str, str, str], dict]:
    cache: dict[tuple[str, str, str], dict] = {}
    if not path.exists():
        return cache
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            cache[(obj["item_id"], obj["mode"], obj["model"])] = obj
    return cache


def _answer_via_backend(agents: Agents, item: McqItem, snippets: list[str], prompt: str) -> str:
    cfg = agents.registry.get(AgentRole.ANSWER)
    opts = options_for(cfg, {"query": item.stem, "snippets": snippets})
    return agents.backend.complete([ChatMessage("user", prompt)], opts)


def run_eval(
    items: list[McqItem],
    kb: KnowledgeBase | None,
    agents: Agents,
    mode: PipelineMode | str,
    report_path: str | Path,
    cfg: AddRepConfig | None = None,
    allow_reject: bool = True,
    cache_path: str | Path | None = None,
) -> EvalReport:
    """Evaluate every item under one mode and write JSON + CSV reports.

    Item results are cached by (item_id, mode, model); a rerun with a warm
    cache issues no backend calls. Backend failures skip the item's cache
    entry so a retry can fill it in.
    """
    mode = PipelineMode(mode)
    if mode is not PipelineMode.BASELINE and kb is None:
        raise ValueError(f"mode {mode.value} requires a knowledge base")
    cfg = cfg or AddRepConfig(mode=mode)
    report_path = Path(report_path)
    cache_file = Path(cache_path) if cache_path else report_path.with_suffix(".cache.jsonl")
    model = agents.registry.get(AgentRole.ANSWER).model_name
    cache = _load_cache(cache_file)
    report_path.parent.mkdir(parents=True, exist_ok=True)

    predictions: list[Prediction] = []
    with open(cache_file, "a", encoding="utf-8") as cache_out:
        for item in items:
            key = (item.id, mode.value, model)
            entry = cache.get(key)
            if entry is None:
                try:
                    entry = _evaluate_item(item, kb, agents, mode, cfg, allow_reject)
                except BackendError as exc:
                    logger.warning("item %s: backend failed (%s); scored as blank", item.id, exc)
                    entry = {
                        "item_id": item.id,
                        "mode": mode.value,
                        "model": model,
                        "selected": [],
                        "rejected": False,
                        "raw_response": f"(backend error: {exc})",
                        "cacheable": False,
                    }
                if entry.pop("cacheable", True):
                    cache_out.write(json.dumps(entry, ensure_ascii=False) + "\n")
                    cache_out.flush()
                    cache[key] = entry
            predictions.append(
                Prediction(
                    item_id=item.id,
                    selected=frozenset(entry["selected"]),
                    rejected=bool(entry["rejected"]),
                    raw_response=entry.get("raw_response", ""),
                )
            )

    report = score(items, predictions, mode=mode.value, model=model)
    report_path.write_text(
        json.dumps(report.to_json(), ensure_ascii=False, indent=1), "utf-8"
    )
    _write_csv(report_path.with_suffix(".csv"), items, predictions)
    return report


def _evaluate_item(
    item: McqItem,
    kb: KnowledgeBase | None,
    agents: Agents,
    mode: PipelineMode,
    cfg: AddRepConfig,
    allow_reject: bool,
) -> dict:
    snippets: list[str] = []
    if mode is PipelineMode.BASELINE_RS:
        hits = kb.retrieve(build_eval_query(item), cfg.topk_per_query)
        snippets = [h.text for h in hits if h.distance <= cfg.distance_threshold]
    elif mode is PipelineMode.ADDREP:
        kept, _ = gather_context(
            build_eval_query(item), [], kb, agents,
            AddRepConfig(
                topk_per_query=cfg.topk_per_query,
                m=cfg.m,
                distance_threshold=cfg.distance_threshold,
                history_window=cfg.history_window,
                mode=PipelineMode.ADDREP,
            ),
        )
        snippets = [hit.text for hit, _ in kept]
    prompt = build_answer_prompt(item, snippets, allow_reject)
    raw = _answer_via_backend(agents, item, snippets, prompt)
    parsed = parse_answer(raw, item.options)
    model = agents.registry.get(AgentRole.ANSWER).model_name
    return {
        "item_id": item.id,
        "mode": mode.value,
        "model": model,
        "selected": sorted(parsed.selected),
        "rejected": parsed.rejected,
        "raw_response": raw,
    }


def _write_csv(path: Path, items: list[McqItem], predictions: list[Prediction]) -> None:
    by_id = {p.item_id: p for p in predictions}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "qtype", "gold", "selected", "rejected", "correct", "f1"])
        for item in items:
            pred = by_id[item.id]
            correct = (not pred.rejected) and pred.selected == item.gold
            writer.writerow(
                [
                    item.id,
                    item.qtype,
                    "".join(sorted(item.gold)),
                    "".join(sorted(pred.selected)),
                    pred.rejected,
                    correct,
                    f"{_question_f1(item.gold, pred.selected):.6f}",
                ]
            )
