"""Multiple-choice benchmark evaluation: prompting, answer extraction, scoring,
seed aggregation, token statistics and the accuracy/token Pareto front."""

from __future__ import annotations

import csv
import json
import random
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Iterable, Sequence

from dcot.decode import (
    WHITESPACE,
    DecodeTranscript,
    RetryPolicy,
    SamplingPolicy,
    TokenCounter,
    decode_many,
)
from dcot.endpoints import ChatEndpoint
from dcot.errors import ConfigError, DomainError, EmptyRunError, MixedConditionsError
from dcot.tagparse import visible_text

LETTERS = string.ascii_uppercase


@dataclass
class BenchmarkItem:
    id: str
    question: str
    options: list[str]
    correct_label: str
    subject: str | None = None

    def __post_init__(self):
        if not 2 <= len(self.options) <= 26:
            raise ConfigError(f"item {self.id}: {len(self.options)} options (need 2-26)")
        if self.correct_label not in LETTERS[:len(self.options)]:
            raise ConfigError(f"item {self.id}: label {self.correct_label!r} out of range")


# -- loaders ------------------------------------------------------------------------

def _label(raw, n_options: int) -> str:
    if isinstance(raw, int):
        return LETTERS[raw]
    raw = str(raw).strip().strip("()")
    if raw.isdigit():
        return LETTERS[int(raw)]
    return raw.upper()


def load_jsonl(path: str | Path) -> list[BenchmarkItem]:
    """Generic JSONL (``id, question, options, answer``); also reads the public
    MMLU-Pro layout (``question_id``, ``answer_index``, ``category``)."""
    items = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            options = [o for o in d["options"] if o != "N/A"]
            answer = d.get("answer", d.get("answer_index"))
            items.append(BenchmarkItem(
                id=str(d.get("id", d.get("question_id"))),
                question=d["question"],
                options=options,
                correct_label=_label(answer, len(options)),
                subject=d.get("subject", d.get("category")),
            ))
    return items


def load_gpqa_csv(path: str | Path, shuffle_seed: int = 0) -> list[BenchmarkItem]:
    """Public GPQA CSV layout; option order is a seeded per-item shuffle."""
    items = []
    with open(path, newline="", encoding="utf-8") as f:
        for i, row in enumerate(csv.DictReader(f)):
            correct = row["Correct Answer"].strip()
            options = [correct] + [row[f"Incorrect Answer {k}"].strip() for k in (1, 2, 3)]
            item_id = row.get("Record ID") or str(i)
            random.Random(f"{shuffle_seed}:{item_id}").shuffle(options)
            items.append(BenchmarkItem(
                id=item_id,
                question=row["Question"].strip(),
                options=options,
                correct_label=LETTERS[options.index(correct)],
                subject=row.get("High-level domain") or row.get("Subdomain"),
            ))
    return items


def load_benchmark(path: str | Path, shuffle_seed: int = 0) -> list[BenchmarkItem]:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_gpqa_csv(path, shuffle_seed)
    return load_jsonl(path)


def synthetic_benchmark(n: int, num_options: int, seed: int = 0, prefix: str = "q") -> list[BenchmarkItem]:
    """Random items shaped like a real benchmark, for offline end-to-end runs."""
    rng = random.Random(seed)
    vocab = ["rate", "value", "mass", "note", "term", "energy", "price", "ratio", "field", "load"]
    items = []
    for i in range(n):
        q = f"Item {i}: " + " ".join(rng.choice(vocab) for _ in range(rng.randint(8, 30))) + "?"
        opts = [f"{rng.randint(1, 999)} {rng.choice(vocab)}" for _ in range(num_options)]
        items.append(BenchmarkItem(f"{prefix}{i}", q, opts, LETTERS[rng.randrange(num_options)],
                                   subject=rng.choice(["math", "physics", "law", "business"])))
    return items


def write_benchmark_jsonl(items: Iterable[BenchmarkItem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for it in items:
            f.write(json.dumps({"id": it.id, "question": it.question, "options": it.options,
                                "answer": it.correct_label, "subject": it.subject}) + "\n")


# -- prompting ----------------------------------------------------------------------

BASE_INSTRUCTION = (
    "The following is a multiple choice question. Think step by step and then finish "
    'your answer with "The answer is (X)" where X is the correct letter choice.'
)

# Editable slot: override via `custom_system_prompt` in the config.
CUSTOM_SYSTEM_PROMPT = (
    "Structure your reasoning with control tags. Use <TEMP_LOW> to list facts, "
    "prerequisites and constraints; <TEMP_HIGH> to explore alternative viewpoints and "
    "pitfalls; <TEMP_MID> for calculation and the step-by-step solution. Prefix each "
    "segment with its tag, then converge on a single answer."
)


def format_question(item: BenchmarkItem) -> str:
    lines = [BASE_INSTRUCTION, "", f"Question: {item.question}", "Options:"]
    lines += [f"{LETTERS[i]}. {opt}" for i, opt in enumerate(item.options)]
    return "\n".join(lines)


def build_prompt(item: BenchmarkItem, variant: str = "base", custom_system: str | None = None) -> list[dict]:
    messages = []
    if variant == "custom":
        messages.append({"role": "system", "content": custom_system or CUSTOM_SYSTEM_PROMPT})
    elif variant != "base":
        raise ConfigError(f"unknown prompt variant {variant!r}")
    messages.append({"role": "user", "content": format_question(item)})
    return messages


# -- answer extraction --------------------------------------------------------------

@dataclass(frozen=True)
class AnswerGrammar:
    """Declaration patterns outrank the standalone-letter fallback; within a
    tier the last in-range match in the visible text wins."""

    declarations: tuple[str, ...] = (
        r"(?i:answer\s+is)\s*:?\s*\(?\s*([A-Z])\s*\)?(?![A-Za-z])",
        r"(?i:answer)\s*:\s*\(?\s*([A-Z])\s*\)?(?![A-Za-z])",
        r"\\boxed\{\s*\(?\s*([A-Z])\s*\)?\s*\}",
    )
    standalone: str | None = r"\b([A-Z])\b"
    exclude_think: bool = True

    def compiled(self):
        return [re.compile(p) for p in self.declarations], (
            re.compile(self.standalone) if self.standalone else None)


DEFAULT_GRAMMAR = AnswerGrammar()


def _last_in_range(pattern: re.Pattern, text: str, valid: str) -> tuple[int, str] | None:
    best = None
    for m in pattern.finditer(text):
        if m.group(1) in valid:
            best = (m.start(), m.group(1))
    return best


def extract_answer(text: str, num_options: int, grammar: AnswerGrammar = DEFAULT_GRAMMAR) -> str | None:
    if num_options < 2:
        raise DomainError("num_options must be >= 2")
    valid = LETTERS[:num_options]
    body = visible_text(text) if grammar.exclude_think else text
    declarations, standalone = grammar.compiled()
    hits = [h for p in declarations if (h := _last_in_range(p, body, valid))]
    if hits:
        return max(hits)[1]
    if standalone is not None:
        h = _last_in_range(standalone, body, valid)
        if h:
            return h[1]
    return None


# -- scoring ------------------------------------------------------------------------

@dataclass
class EvalRecord:
    item_id: str
    transcript: DecodeTranscript | None
    extracted_label: str | None
    correct_label: str
    correct: bool
    is_null: bool
    output_tokens: int
    seed: int
    subject: str | None = None

    def to_dict(self, include_text: bool = True) -> dict:
        t = self.transcript
        d = {
            "item_id": self.item_id, "seed": self.seed, "subject": self.subject,
            "extracted_label": self.extracted_label, "correct_label": self.correct_label,
            "correct": self.correct, "is_null": self.is_null, "output_tokens": self.output_tokens,
        }
        if t is not None:
            d.update(finish_reason=t.finish_reason.value, truncated=t.truncated,
                     temperatures=t.temperatures, n_segments=len(t.segments))
            if include_text:
                d["text"] = t.text
        return d


def make_record(item: BenchmarkItem, transcript: DecodeTranscript, seed: int,
                grammar: AnswerGrammar = DEFAULT_GRAMMAR) -> EvalRecord:
    label = extract_answer(transcript.text, len(item.options), grammar)
    return EvalRecord(item.id, transcript, label, item.correct_label, label == item.correct_label,
                      label is None, transcript.total_tokens, seed, item.subject)


def null_corrected(accuracy: float, null_rate: float, num_options: int) -> float:
    """Accuracy plus chance credit (1/num_options) for every Null response."""
    return accuracy + null_rate / num_options


@dataclass
class RunMetrics:
    condition_name: str
    accuracy: float
    null_rate: float
    null_corrected: float
    mean_tokens: float
    n_items: int
    n_seeds: int = 1
    num_options: int | None = None
    benchmark: str = ""


def score_run(records: Sequence[EvalRecord], num_options: int, condition_name: str = "",
              benchmark: str = "") -> RunMetrics:
    if not records:
        raise EmptyRunError("no records to score")
    n = len(records)
    acc = sum(r.correct for r in records) / n
    null = sum(r.is_null for r in records) / n
    return RunMetrics(condition_name, acc, null, null_corrected(acc, null, num_options),
                      fmean(r.output_tokens for r in records), n, 1, num_options, benchmark)


def aggregate_seeds(per_seed: Sequence[RunMetrics]) -> RunMetrics:
    """Unweighted mean over seeds.

    The corrected score is the mean of per-seed corrected scores; with a fixed
    option count this equals correcting the averaged accuracy and Null rate.
    """
    if not per_seed:
        raise EmptyRunError("no seed runs to aggregate")
    names = {m.condition_name for m in per_seed}
    if len(names) > 1:
        raise MixedConditionsError(f"cannot aggregate conditions {sorted(names)}")
    first = per_seed[0]
    return RunMetrics(
        condition_name=first.condition_name,
        accuracy=fmean(m.accuracy for m in per_seed),
        null_rate=fmean(m.null_rate for m in per_seed),
        null_corrected=fmean(m.null_corrected for m in per_seed),
        mean_tokens=fmean(m.mean_tokens for m in per_seed),
        n_items=first.n_items,
        n_seeds=sum(m.n_seeds for m in per_seed),
        num_options=first.num_options,
        benchmark=first.benchmark,
    )


def token_reduction(base_tokens: float, new_tokens: float) -> float:
    if base_tokens <= 0:
        raise DomainError("baseline token count must be positive")
    return (base_tokens - new_tokens) / base_tokens


# -- Pareto front -------------------------------------------------------------------

@dataclass
class ParetoPoint:
    condition_name: str
    accuracy: float
    mean_tokens: float
    on_front: bool = False


def pareto_front(points: Sequence) -> list[ParetoPoint]:
    """Flag points not dominated in (higher accuracy, fewer tokens).

    Accepts ``(accuracy, tokens)``, ``(name, accuracy, tokens)`` or ParetoPoint.
    Sort by tokens, then sweep keeping the best accuracy seen at strictly fewer
    tokens; equal points never dominate each other.
    """
    pts = []
    for i, p in enumerate(points):
        if isinstance(p, ParetoPoint):
            pts.append(ParetoPoint(p.condition_name, p.accuracy, p.mean_tokens))
        elif len(p) == 2:
            pts.append(ParetoPoint(str(i), float(p[0]), float(p[1])))
        else:
            pts.append(ParetoPoint(str(p[0]), float(p[1]), float(p[2])))
    order = sorted(range(len(pts)), key=lambda i: pts[i].mean_tokens)
    best = float("-inf")
    k = 0
    while k < len(order):
        group = [order[k]]
        while k + len(group) < len(order) and pts[order[k + len(group)]].mean_tokens == pts[group[0]].mean_tokens:
            group.append(order[k + len(group)])
        top = max(pts[i].accuracy for i in group)
        if top > best:
            for i in group:
                pts[i].on_front = pts[i].accuracy == top
        best = max(best, top)
        k += len(group)
    return pts


# -- end-to-end run -----------------------------------------------------------------

@dataclass
class Condition:
    name: str
    model: str = "base"
    prompt_variant: str = "base"
    custom_system: str | None = None


@dataclass
class EvalRun:
    condition: Condition
    benchmark: str
    records: list[EvalRecord] = field(default_factory=list)
    per_seed: list[RunMetrics] = field(default_factory=list)
    aggregate: RunMetrics | None = None


def run_eval(
    items: Sequence[BenchmarkItem],
    condition: Condition,
    endpoint: ChatEndpoint,
    policy: SamplingPolicy,
    seeds: Sequence[int] = (0,),
    benchmark: str = "",
    counter: TokenCounter | None = WHITESPACE,
    retry: RetryPolicy | None = None,
    max_concurrency: int = 8,
    grammar: AnswerGrammar = DEFAULT_GRAMMAR,
) -> EvalRun:
    if not items:
        raise EmptyRunError("benchmark has no items")
    num_options = max(len(it.options) for it in items)
    run = EvalRun(condition, benchmark)
    prompts = [build_prompt(it, condition.prompt_variant, condition.custom_system) for it in items]
    for seed in seeds:
        transcripts = decode_many(prompts, policy, endpoint, counter, retry, seed, max_concurrency)
        recs = [make_record(it, t, seed, grammar) for it, t in zip(items, transcripts)]
        run.records.extend(recs)
        run.per_seed.append(score_run(recs, num_options, condition.name, benchmark))
    run.aggregate = aggregate_seeds(run.per_seed)
    return run


# -- output -------------------------------------------------------------------------

METRIC_FIELDS = ["condition", "benchmark", "model", "temperature_mode", "prompt", "seed",
                 "accuracy_pct", "null_rate_pct", "null_corrected_pct", "mean_tokens",
                 "n_items", "n_seeds", "token_counter"]


def metrics_row(m: RunMetrics, condition: Condition, temperature_mode: str, seed="mean",
                token_counter: str = "") -> dict:
    return {
        "condition": m.condition_name, "benchmark": m.benchmark, "model": condition.model,
        "temperature_mode": temperature_mode, "prompt": condition.prompt_variant, "seed": seed,
        "accuracy_pct": f"{100 * m.accuracy:.2f}", "null_rate_pct": f"{100 * m.null_rate:.2f}",
        "null_corrected_pct": f"{100 * m.null_corrected:.2f}", "mean_tokens": f"{m.mean_tokens:.1f}",
        "n_items": m.n_items, "n_seeds": m.n_seeds, "token_counter": token_counter,
    }


def write_metrics_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_records_jsonl(records: Iterable[EvalRecord], path: str | Path, include_text: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(include_text), ensure_ascii=False) + "\n")


COMPARISON_COLUMNS = ["Method", "Temp.", "Prompt", "MMLU-Pro Acc.", "MMLU-Pro Tokens", "GPQA Acc.",
                  "GPQA Null Rate", "GPQA Null-Corr.", "GPQA Tokens"]


def comparison_rows(metric_rows: Sequence[dict]) -> list[dict]:
    """Pivot per-benchmark aggregate rows into the wide comparison layout.

    Only the GPQA columns carry Null statistics.
    """
    table: dict[tuple, dict] = {}
    for r in metric_rows:
        if r.get("seed", "mean") != "mean":
            continue
        key = (r["model"], r["temperature_mode"], r["prompt"])
        row = table.setdefault(key, {c: "" for c in COMPARISON_COLUMNS})
        row.update({"Method": r["model"], "Temp.": r["temperature_mode"].capitalize(),
                    "Prompt": r["prompt"].capitalize()})
        bench = r["benchmark"].lower()
        if bench.startswith("mmlu"):
            row["MMLU-Pro Acc."] = r["accuracy_pct"]
            row["MMLU-Pro Tokens"] = r["mean_tokens"]
        elif bench.startswith("gpqa"):
            row.update({"GPQA Acc.": r["accuracy_pct"], "GPQA Null Rate": r["null_rate_pct"],
                        "GPQA Null-Corr.": r["null_corrected_pct"], "GPQA Tokens": r["mean_tokens"]})
    return list(table.values())


def write_pareto(points: Sequence[ParetoPoint], csv_path: str | Path, spec_path: str | Path | None = None,
                 title: str = "") -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["condition", "accuracy", "mean_tokens", "on_front"])
        for p in points:
            w.writerow([p.condition_name, f"{p.accuracy:.4f}", f"{p.mean_tokens:.1f}", int(p.on_front)])
    if spec_path is not None:
        spec = {
            "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
            "title": title or "Accuracy vs. average output tokens",
            "data": {"values": [{"condition": p.condition_name, "accuracy": p.accuracy,
                                 "mean_tokens": p.mean_tokens, "on_front": p.on_front} for p in points]},
            "mark": {"type": "point", "filled": True},
            "encoding": {
                "x": {"field": "mean_tokens", "type": "quantitative", "title": "Avg. output tokens"},
                "y": {"field": "accuracy", "type": "quantitative", "title": "Accuracy"},
                "color": {"field": "on_front", "type": "nominal"},
                "tooltip": [{"field": "condition"}],
            },
        }
        Path(spec_path).write_text(json.dumps(spec, indent=2), encoding="utf-8")
