"""Preference-pair generation: scenario matrix, teacher prompting, schema
validation and packing into ORPO chosen/rejected records."""

from __future__ import annotations

import enum
import itertools
import json
import logging
import random
import re
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import yaml

from dcot.endpoints import ChatEndpoint, complete
from dcot.errors import (
    ConfigError,
    EmptyAxisError,
    EndpointError,
    NoExemplarsError,
    NTooLargeError,
    TeacherParseError,
)
from dcot.tagparse import THINK_CLOSE_TAG, THINK_OPEN_TAG, count_tags

log = logging.getLogger(__name__)

CONTENT_FIELDS = (
    "user_prompt",
    "thought_chosen",
    "chosen_response",
    "thought_rejected",
    "rejected_response",
    "reasoning",
)
PACK_SEPARATOR = "\n"
NO_TAG_CATEGORY = "Complete Token Absence"


class Axis(str, enum.Enum):
    TAG_USAGE = "TAG_USAGE"
    CONTENT_QUALITY = "CONTENT_QUALITY"
    SAFETY_JUDGMENT = "SAFETY_JUDGMENT"


AXIS_DESCRIPTIONS = {
    Axis.TAG_USAGE: "a failure in how control tags are used or sequenced",
    Axis.CONTENT_QUALITY: "a response that is structurally well-formed but contains a domain-specific error",
    Axis.SAFETY_JUDGMENT: "a failure of safety or judgment, such as endangering people or understating risk",
}


@dataclass(frozen=True)
class Scenario:
    domain: str
    topic: str
    reconstructed: bool = False


@dataclass(frozen=True)
class Template:
    id: str
    description: str = ""


@dataclass(frozen=True)
class RejectionCategory:
    name: str
    axis: Axis
    instruction: str = ""
    reconstructed: bool = False


@dataclass
class ScenarioMatrix:
    domains: list[str]
    scenarios: list[Scenario]
    templates: list[Template]
    rejection_categories: list[RejectionCategory]

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioMatrix":
        try:
            m = cls(
                domains=list(raw.get("domains", [])),
                scenarios=[Scenario(**s) for s in raw.get("scenarios", [])],
                templates=[Template(**t) if isinstance(t, dict) else Template(t)
                           for t in raw.get("templates", [])],
                rejection_categories=[
                    RejectionCategory(c["name"], Axis(c["axis"]), c.get("instruction", ""),
                                      c.get("reconstructed", False))
                    for c in raw.get("rejection_categories", [])
                ],
            )
        except (TypeError, KeyError, ValueError) as e:
            raise ConfigError(f"malformed matrix: {e}") from e
        unknown = {s.domain for s in m.scenarios} - set(m.domains)
        if m.domains and unknown:
            raise ConfigError(f"scenarios reference unknown domains: {sorted(unknown)}")
        return m

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ScenarioMatrix":
        if path is None:
            text = resources.files("dcot.data").joinpath("matrix.yaml").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.from_dict(yaml.safe_load(text))

    def category(self, name: str) -> RejectionCategory:
        for c in self.rejection_categories:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def size(self) -> int:
        return len(self.scenarios) * len(self.templates) * len(self.rejection_categories)


@dataclass(frozen=True)
class Combo:
    scenario_id: int
    template_id: int
    category_id: int


def enumerate_matrix(matrix: ScenarioMatrix) -> list[Combo]:
    """Full product in (scenario, template, category) index order."""
    for name, axis in (("scenarios", matrix.scenarios), ("templates", matrix.templates),
                       ("rejection_categories", matrix.rejection_categories)):
        if not axis:
            raise EmptyAxisError(f"matrix axis '{name}' is empty")
    return [
        Combo(s, t, c)
        for s, t, c in itertools.product(
            range(len(matrix.scenarios)),
            range(len(matrix.templates)),
            range(len(matrix.rejection_categories)),
        )
    ]


def sample_combinations(combos: Sequence, n: int, rng_seed: int) -> list:
    if n < 1 or n > len(combos):
        raise NTooLargeError(f"cannot draw {n} distinct items from {len(combos)}")
    return random.Random(rng_seed).sample(list(combos), n)


# -- teacher prompting --------------------------------------------------------------

TAG_TABLE = """\
<TEMP_LOW>  verify facts; enumerate prerequisites and hard constraints.
<TEMP_MID>  ordinary answering, step-by-step procedures and arithmetic.
<TEMP_HIGH> explore alternatives; look at the problem from several angles."""

OUTPUT_CONTRACT = """\
Return exactly one JSON object with these six string fields and nothing else:
  "user_prompt":       a naturalistic, complex request with real-world constraints.
  "thought_chosen":    a plan for the ideal answer deciding where and why each control tag is used, ending with a token plan such as "LOW -> MID -> HIGH".
  "chosen_response":   the ideal answer following that plan, each segment prefixed by its control tag.
  "thought_rejected":  a plan written by a competent but misguided persona that leads to the targeted error.
  "rejected_response": a plausible, well-written answer containing that one fatal flaw.
  "reasoning":         one sentence naming the flaw in the rejected response.
Do not use <think> or </think> inside any field."""


def load_fewshot(path: str | Path | None = None) -> list[dict]:
    if path is None:
        text = resources.files("dcot.data").joinpath("fewshot.jsonl").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def _render_exemplar(i: int, ex: dict) -> str:
    head = f"### Worked example {i}"
    ctx = [f"{k}: {ex[k]}" for k in ("scenario", "template", "rejection_category") if k in ex]
    body = json.dumps({k: ex[k] for k in CONTENT_FIELDS if k in ex}, ensure_ascii=False, indent=2)
    return "\n".join([head, *ctx, body])


def category_instruction(category: RejectionCategory) -> str:
    if category.name == NO_TAG_CATEGORY:
        return "The rejected_response must use no control tags at all (no <TEMP_LOW>, <TEMP_MID> or <TEMP_HIGH>)."
    return category.instruction


def build_teacher_request(matrix: ScenarioMatrix, combo: Combo, fewshot: Sequence[dict]) -> list[dict]:
    if not fewshot:
        raise NoExemplarsError("at least one worked example is required")
    scenario = matrix.scenarios[combo.scenario_id]
    template = matrix.templates[combo.template_id]
    category = matrix.rejection_categories[combo.category_id]
    system = "\n\n".join([
        "You write training data that teaches disciplined reasoning with control tags.",
        "Control tags:\n" + TAG_TABLE,
        "A response may begin without a tag; the order of tags is chosen to fit the task.",
        OUTPUT_CONTRACT,
        *(_render_exemplar(i + 1, ex) for i, ex in enumerate(fewshot)),
    ])
    user = "\n".join([
        f"Domain: {scenario.domain}",
        f"Scenario: {scenario.topic}",
        f"Instruction template: {template.id} - {template.description}".rstrip(" -"),
        f"Rejection category: {category.name} (axis {category.axis.value}: {AXIS_DESCRIPTIONS[category.axis]})",
        f"Rejected response requirement: {category_instruction(category)}",
        "Write one new sample as a JSON object.",
    ])
    return [{"role": "system", "content": system}, {"role": "user", "content": user}]


REPAIR_INSTRUCTION = (
    "Your previous reply could not be parsed. Reply again with only the JSON object "
    "containing the six required string fields."
)

_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def parse_teacher_output(text: str) -> dict:
    """Extract the JSON object from a teacher reply (bare or fenced)."""
    candidates = [m.group(1) for m in _FENCE.finditer(text)] + [text]
    for cand in candidates:
        start, end = cand.find("{"), cand.rfind("}")
        if start < 0 or end <= start:
            continue
        try:
            obj = json.loads(cand[start:end + 1])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise TeacherParseError("no JSON object found in teacher output")


# -- validation ---------------------------------------------------------------------

@dataclass
class SampleMeta:
    scenario_id: int | None = None
    template_id: int | None = None
    rejection_category: str | None = None
    teacher_model_id: str | None = None
    generation_timestamp: str | None = None


@dataclass
class PreferencePair:
    user_prompt: str
    thought_chosen: str
    chosen_response: str
    thought_rejected: str
    rejected_response: str
    reasoning: str
    meta: SampleMeta = field(default_factory=SampleMeta)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)

    @classmethod
    def from_dict(cls, raw: dict) -> "PreferencePair":
        meta = SampleMeta(**(raw.get("meta") or {}))
        return cls(**{k: raw[k] for k in CONTENT_FIELDS}, meta=meta)


@dataclass(frozen=True)
class Violation:
    code: str
    field: str | None = None
    detail: str = ""

    def __str__(self) -> str:
        where = f"({self.field})" if self.field else ""
        return f"{self.code}{where}" + (f": {self.detail}" if self.detail else "")


_PLAN_TAG = re.compile(r"\b(?:TEMP_)?(?:LOW|MID|HIGH)\b")


def validate_sample(raw, category: str | None = None, meta: SampleMeta | None = None):
    """Return a ``PreferencePair`` or a non-empty list of ``Violation``.

    ``category`` defaults to ``meta.rejection_category``.
    """
    if not isinstance(raw, dict):
        return [Violation("PARSE_ERROR", detail=f"expected an object, got {type(raw).__name__}")]
    meta = meta or SampleMeta(**(raw.get("meta") or {}))
    category = category or meta.rejection_category
    out: list[Violation] = []
    for f in CONTENT_FIELDS:
        if f not in raw:
            out.append(Violation("MISSING_FIELD", f))
        elif not isinstance(raw[f], str):
            out.append(Violation("WRONG_TYPE", f, type(raw[f]).__name__))
        elif not raw[f].strip():
            out.append(Violation("EMPTY_FIELD", f))
    if out:
        return out
    for f in CONTENT_FIELDS[1:5]:
        if THINK_OPEN_TAG in raw[f] or THINK_CLOSE_TAG in raw[f]:
            out.append(Violation("THINK_DELIMITER", f, "packing would be ambiguous"))
    if count_tags(raw["chosen_response"]) < 1:
        out.append(Violation("NO_CHOSEN_TAG", "chosen_response"))
    if not _PLAN_TAG.search(raw["thought_chosen"]):
        out.append(Violation("PLAN_NAMES_NO_TAG", "thought_chosen"))
    if category == NO_TAG_CATEGORY and count_tags(raw["rejected_response"]) > 0:
        out.append(Violation("CATEGORY_CONTRACT", "rejected_response",
                             f"'{NO_TAG_CATEGORY}' requires a tag-free rejected response"))
    if out:
        return out
    return PreferencePair(**{f: raw[f] for f in CONTENT_FIELDS}, meta=meta)


# -- packing ------------------------------------------------------------------------

@dataclass(frozen=True)
class PackedOrpoRecord:
    prompt: str
    chosen: str
    rejected: str


def _wrap(thought: str, response: str) -> str:
    return f"{THINK_OPEN_TAG}{thought}{THINK_CLOSE_TAG}{PACK_SEPARATOR}{response}"


def _unwrap(text: str) -> tuple[str, str]:
    if not text.startswith(THINK_OPEN_TAG):
        raise ValueError("packed text does not start with a think block")
    body = text[len(THINK_OPEN_TAG):]
    end = body.index(THINK_CLOSE_TAG + PACK_SEPARATOR)
    return body[:end], body[end + len(THINK_CLOSE_TAG) + len(PACK_SEPARATOR):]


def pack(pair: PreferencePair) -> PackedOrpoRecord:
    """Assemble the ORPO record; ``reasoning`` is QA-only and is dropped."""
    return PackedOrpoRecord(
        prompt=pair.user_prompt,
        chosen=_wrap(pair.thought_chosen, pair.chosen_response),
        rejected=_wrap(pair.thought_rejected, pair.rejected_response),
    )


def unpack(record: PackedOrpoRecord) -> dict:
    tc, cr = _unwrap(record.chosen)
    tr, rr = _unwrap(record.rejected)
    return {"user_prompt": record.prompt, "thought_chosen": tc, "chosen_response": cr,
            "thought_rejected": tr, "rejected_response": rr}


# -- generation loop ----------------------------------------------------------------

@dataclass
class GenerationResult:
    accepted: int = 0
    dropped: list = field(default_factory=list)


def generate_one(matrix, combo, fewshot, endpoint: ChatEndpoint, sampling: dict,
                 teacher_model_id: str = "") -> PreferencePair | list:
    """One teacher call, plus a single repair retry if the reply does not parse."""
    category = matrix.rejection_categories[combo.category_id]
    meta = SampleMeta(combo.scenario_id, combo.template_id, category.name, teacher_model_id,
                      datetime.now(timezone.utc).isoformat(timespec="seconds"))
    messages = build_teacher_request(matrix, combo, fewshot)
    reply = complete(endpoint, messages, **sampling)
    try:
        raw = parse_teacher_output(reply)
    except TeacherParseError:
        messages = messages + [{"role": "assistant", "content": reply},
                               {"role": "user", "content": REPAIR_INSTRUCTION}]
        reply = complete(endpoint, messages, **sampling)
        try:
            raw = parse_teacher_output(reply)
        except TeacherParseError as e:
            return [Violation("PARSE_ERROR", detail=str(e))]
    return validate_sample(raw, category.name, meta)


def generate_samples(
    matrix: ScenarioMatrix,
    combos: Iterable[Combo],
    fewshot: Sequence[dict],
    endpoint: ChatEndpoint,
    out_path: str | Path,
    sampling: dict | None = None,
    teacher_model_id: str = "",
    max_concurrency: int = 4,
    rejects_path: str | Path | None = None,
) -> GenerationResult:
    """Generate, validate and append pairs to ``out_path`` as JSON Lines.

    Results are written by the calling thread only, in completion order.
    """
    sampling = {"temperature": 0.7, "top_p": 0.95, "top_k": 20, "max_tokens": 4096, **(sampling or {})}
    result = GenerationResult()
    lock = threading.Lock()
    combos = list(combos)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    def work(combo):
        try:
            return combo, generate_one(matrix, combo, fewshot, endpoint, sampling, teacher_model_id)
        except EndpointError as e:
            return combo, [Violation("ENDPOINT_ERROR", detail=str(e))]

    with open(out_path, "a", encoding="utf-8") as out, \
            ThreadPoolExecutor(max_workers=max(1, max_concurrency)) as pool:
        futures = [pool.submit(work, c) for c in combos]
        for fut in as_completed(futures):
            combo, res = fut.result()
            with lock:
                if isinstance(res, PreferencePair):
                    out.write(res.to_json() + "\n")
                    result.accepted += 1
                else:
                    log.warning("dropped %s: %s", combo, "; ".join(map(str, res)))
                    result.dropped.append({"combo": asdict(combo), "violations": [str(v) for v in res]})
    if rejects_path is not None:
        Path(rejects_path).write_text(
            "".join(json.dumps(d) + "\n" for d in result.dropped), encoding="utf-8")
    return result


def read_pairs(path: str | Path) -> list[PreferencePair]:
    with open(path, encoding="utf-8") as f:
        return [PreferencePair.from_dict(json.loads(line)) for line in f if line.strip()]


def write_packed(records: Iterable[PackedOrpoRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(asdict(r), ensure_ascii=False) + "\n")
            n += 1
    return n
