import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcot.datagen import (
    NO_TAG_CATEGORY,
    Axis,
    Combo,
    PackedOrpoRecord,
    PreferencePair,
    ScenarioMatrix,
    build_teacher_request,
    enumerate_matrix,
    generate_samples,
    load_fewshot,
    pack,
    parse_teacher_output,
    read_pairs,
    sample_combinations,
    unpack,
    validate_sample,
    write_packed,
)
from dcot.endpoints import ScriptedEndpoint
from dcot.errors import EmptyAxisError, NoExemplarsError, NTooLargeError, TeacherParseError

GOOD = {
    "user_prompt": "The pump failed. What now?",
    "thought_chosen": "Start LOW to list facts, then HIGH for options.",
    "chosen_response": "<TEMP_LOW> Isolate power. <TEMP_HIGH> Try a bypass line.",
    "thought_rejected": "Jump to ideas.",
    "rejected_response": "Just brainstorm a new pump design.",
    "reasoning": "Chosen verifies safety before ideation.",
}


def tiny_matrix(ns, nt, nc):
    return ScenarioMatrix.from_dict({
        "domains": ["d"],
        "scenarios": [{"domain": "d", "topic": f"s{i}"} for i in range(ns)],
        "templates": [f"t{i}" for i in range(nt)],
        "rejection_categories": [{"name": f"c{i}", "axis": "TAG_USAGE"} for i in range(nc)],
    })


def test_packaged_matrix_shape():
    m = ScenarioMatrix.load()
    assert len(m.domains) == 7
    assert (len(m.scenarios), len(m.templates), len(m.rejection_categories)) == (119, 5, 31)
    assert m.size == len(enumerate_matrix(m)) == 18445
    by_axis = {a: sum(c.axis is a for c in m.rejection_categories) for a in Axis}
    assert by_axis == {Axis.TAG_USAGE: 10, Axis.CONTENT_QUALITY: 11, Axis.SAFETY_JUDGMENT: 10}
    assert m.category(NO_TAG_CATEGORY).axis is Axis.TAG_USAGE


@pytest.mark.parametrize("dims, expected", [((1, 1, 1), 1), ((2, 3, 5), 30)])
def test_enumerate_counts(dims, expected):
    combos = enumerate_matrix(tiny_matrix(*dims))
    assert len(combos) == len(set(combos)) == expected


@pytest.mark.parametrize("dims", [(0, 1, 1), (1, 0, 1), (1, 1, 0)])
def test_empty_axis(dims):
    with pytest.raises(EmptyAxisError):
        enumerate_matrix(tiny_matrix(*dims))


def test_sampling():
    combos = enumerate_matrix(ScenarioMatrix.load())
    s = sample_combinations(combos, 5181, rng_seed=0)
    assert len(s) == len(set(s)) == 5181
    assert s == sample_combinations(combos, 5181, rng_seed=0)
    assert s != sample_combinations(combos, 5181, rng_seed=1)
    small = enumerate_matrix(tiny_matrix(2, 3, 5))
    assert sorted(sample_combinations(small, 30, 7), key=lambda c: (c.scenario_id, c.template_id, c.category_id)) == small
    with pytest.raises(NTooLargeError):
        sample_combinations(small, 31, 0)


def test_teacher_request_contents():
    m = ScenarioMatrix.load()
    fewshot = load_fewshot()
    assert len(fewshot) == 3
    cat_id = [c.name for c in m.rejection_categories].index(NO_TAG_CATEGORY)
    msgs = build_teacher_request(m, Combo(0, 0, cat_id), fewshot)
    system, user = msgs[0]["content"], msgs[1]["content"]
    assert system.count("### Worked example") == 3
    for tag in ("<TEMP_LOW>", "<TEMP_MID>", "<TEMP_HIGH>"):
        assert tag in system
    assert "no control tags" in user
    assert m.scenarios[0].topic in user
    with pytest.raises(NoExemplarsError):
        build_teacher_request(m, Combo(0, 0, 0), [])


def test_packaged_fewshot_examples_validate():
    for ex in load_fewshot():
        res = validate_sample(ex, ex["rejection_category"])
        assert isinstance(res, PreferencePair), res


def codes(res):
    return {v.code for v in res}


def test_validation_failures():
    assert codes(validate_sample({k: v for k, v in GOOD.items() if k != "reasoning"})) == {"MISSING_FIELD"}
    assert codes(validate_sample({**GOOD, "reasoning": 3})) == {"WRONG_TYPE"}
    assert codes(validate_sample({**GOOD, "reasoning": "  "})) == {"EMPTY_FIELD"}
    assert codes(validate_sample({**GOOD, "chosen_response": "no tags"})) == {"NO_CHOSEN_TAG"}
    assert codes(validate_sample({**GOOD, "thought_chosen": "just think"})) == {"PLAN_NAMES_NO_TAG"}
    assert codes(validate_sample({**GOOD, "thought_rejected": "a </think> b"})) == {"THINK_DELIMITER"}
    tagged_rej = {**GOOD, "rejected_response": "<TEMP_HIGH> wild"}
    assert codes(validate_sample(tagged_rej, NO_TAG_CATEGORY)) == {"CATEGORY_CONTRACT"}
    assert isinstance(validate_sample(tagged_rej, "Premature Creativity"), PreferencePair)
    assert codes(validate_sample([1])) == {"PARSE_ERROR"}


def test_validation_idempotent():
    pair = validate_sample(GOOD, "Premature Creativity")
    again = validate_sample(json.loads(pair.to_json()))
    assert again == pair


def test_pack_example():
    pair = validate_sample({**GOOD, "thought_chosen": "plan LOW", "chosen_response": "<TEMP_LOW> ans"})
    rec = pack(pair)
    assert rec.chosen == "<think>plan LOW</think>\n<TEMP_LOW> ans"
    assert rec.prompt == GOOD["user_prompt"]
    assert GOOD["reasoning"] not in (rec.prompt + rec.chosen + rec.rejected)


field_text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1).filter(
    lambda s: s.strip() and "<think>" not in s and "</think>" not in s)


@settings(max_examples=200)
@given(field_text, field_text, field_text, field_text, field_text)
def test_pack_roundtrip(p, tc, cr, tr, rr):
    pair = PreferencePair(p, tc, cr, tr, rr, "r")
    assert unpack(pack(pair)) == {"user_prompt": p, "thought_chosen": tc, "chosen_response": cr,
                                  "thought_rejected": tr, "rejected_response": rr}


def test_parse_teacher_output():
    assert parse_teacher_output('noise ```json\n{"a": 1}\n``` tail') == {"a": 1}
    assert parse_teacher_output('{"a": {"b": 2}}') == {"a": {"b": 2}}
    with pytest.raises(TeacherParseError):
        parse_teacher_output("I cannot do that")


def test_generate_samples_with_repair(tmp_path):
    m = tiny_matrix(2, 1, 2)
    calls = {}

    def responder(messages, seed):
        user = messages[1]["content"]
        key = next(k for k in ("s0", "s1") if f"Scenario: {k}" in user) + user.split("Rejection category: ")[1][:2]
        calls[key] = calls.get(key, 0) + 1
        if key == "s0c0":
            # first reply is prose, the repair retry succeeds
            return "sorry, prose only" if calls[key] == 1 else json.dumps(GOOD)
        if key == "s1c1":
            return "still not json"
        return "```json\n" + json.dumps(GOOD) + "\n```"

    ep = ScriptedEndpoint(responder, chunk_chars=64)
    out = tmp_path / "pairs.jsonl"
    res = generate_samples(m, enumerate_matrix(m), load_fewshot(), ep, out,
                           rejects_path=tmp_path / "rejects.jsonl", max_concurrency=1)
    assert res.accepted == 3 and len(res.dropped) == 1
    pairs = read_pairs(out)
    assert len(pairs) == 3
    assert {p.meta.rejection_category for p in pairs} == {"c0", "c1"}
    assert "PARSE_ERROR" in (tmp_path / "rejects.jsonl").read_text()
    assert calls == {"s0c0": 2, "s0c1": 1, "s1c0": 1, "s1c1": 2}
    n = write_packed(map(pack, pairs), tmp_path / "packed.jsonl")
    assert n == 3
    rec = PackedOrpoRecord(**json.loads((tmp_path / "packed.jsonl").read_text().splitlines()[0]))
    assert rec.chosen.startswith("<think>")
