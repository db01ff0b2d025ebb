import csv
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcot.decode import DecodeTranscript, FinishReason, SamplingMode, SamplingPolicy
from dcot.endpoints import MultipleChoiceStub, ScriptedEndpoint
from dcot.errors import ConfigError, DomainError, EmptyRunError, MixedConditionsError
from dcot.evalharness import (
    BenchmarkItem,
    Condition,
    EvalRecord,
    RunMetrics,
    aggregate_seeds,
    build_prompt,
    extract_answer,
    load_benchmark,
    metrics_row,
    null_corrected,
    pareto_front,
    read_metrics_csv,
    run_eval,
    score_run,
    synthetic_benchmark,
    comparison_rows,
    token_reduction,
    write_benchmark_jsonl,
    write_metrics_csv,
)
from oracles import brute_force_front

# (method, temp, prompt, mmlu acc, mmlu tokens) for the six published conditions
MMLU_POINTS = [
    ("Base Locked/Base", 55.66, 1742),
    ("Base Locked/Custom", 58.24, 1595),
    ("Base Dynamic/Custom", 57.64, 1600),
    ("D-CoT Locked/Base", 64.73, 1496),
    ("D-CoT Locked/Custom", 62.92, 1199),
    ("D-CoT Dynamic/Custom", 63.43, 1202),
]


@pytest.mark.parametrize("text, n, expected", [
    ("so the answer is (C).", 4, "C"),
    ("The answer is (J)", 10, "J"),
    ("The answer is (K)", 10, None),
    ("The answer is (K)", 4, None),
    ("<think>The answer is (B)</think> The answer is (D)", 4, "D"),
    ("<think>The answer is (B)</think> no conclusion", 4, None),
    ("Answer: B ... actually the answer is C", 4, "C"),
    (r"\boxed{A}", 4, "A"),
    ("The answer is (A). Option B looks tempting.", 4, "A"),
    ("I think B", 4, "B"),
    ("Wait, but let me recompute that once more.", 10, None),
    ("", 4, None),
])
def test_extract_answer(text, n, expected):
    assert extract_answer(text, n) == expected


def test_extract_answer_rejects_tiny_option_count():
    with pytest.raises(DomainError):
        extract_answer("A", 1)


def test_item_validation():
    with pytest.raises(ConfigError):
        BenchmarkItem("x", "q", ["a"], "A")
    with pytest.raises(ConfigError):
        BenchmarkItem("x", "q", ["a", "b"], "C")


def rec(correct, null, tokens=10):
    return EvalRecord("i", None, None if null else "A", "A", correct and not null, null, tokens, 0)


def records_for(acc_pct, null_pct, n=10000):
    n_correct, n_null = round(acc_pct * n / 100), round(null_pct * n / 100)
    return ([rec(True, False)] * n_correct + [rec(False, True)] * n_null
            + [rec(False, False)] * (n - n_correct - n_null))


@pytest.mark.parametrize("acc, null, expected", [
    (43.03, 30.91, 50.76), (45.05, 24.44, 51.16), (52.82, 4.24, 53.88)])
def test_null_corrected_matches_published_rows(acc, null, expected):
    assert round(100 * null_corrected(acc / 100, null / 100, 4), 2) == expected
    m = score_run(records_for(acc, null), num_options=4)
    assert round(100 * m.null_corrected, 2) == expected


def test_score_run_empty():
    with pytest.raises(EmptyRunError):
        score_run([], 4)


@pytest.mark.parametrize("base, new, pct", [(1742, 1199, 31.2), (5875, 2073, 64.7)])
def test_token_reduction(base, new, pct):
    assert abs(100 * token_reduction(base, new) - pct) <= 0.1
    with pytest.raises(DomainError):
        token_reduction(0, 1)


def test_published_pareto_front():
    front = {p.condition_name for p in pareto_front(MMLU_POINTS) if p.on_front}
    assert front == {"D-CoT Locked/Custom", "D-CoT Dynamic/Custom", "D-CoT Locked/Base"}
    assert brute_force_front([(a, t) for _, a, t in MMLU_POINTS]) == [p.on_front for p in pareto_front(MMLU_POINTS)]


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(0, 10), st.integers(0, 10)), min_size=1, max_size=12))
def test_pareto_matches_bruteforce(points):
    assert [p.on_front for p in pareto_front(points)] == brute_force_front(points)


def test_aggregate_seeds_averages_corrected_scores():
    a = RunMetrics("c", 0.4, 0.4, null_corrected(0.4, 0.4, 4), 100, 10)
    b = RunMetrics("c", 0.6, 0.0, null_corrected(0.6, 0.0, 4), 200, 10)
    agg = aggregate_seeds([a, b])
    assert agg.accuracy == pytest.approx(0.5) and agg.null_rate == pytest.approx(0.2)
    assert agg.null_corrected == pytest.approx((0.5 + 0.6) / 2)
    assert agg.mean_tokens == 150 and agg.n_seeds == 2
    with pytest.raises(MixedConditionsError):
        aggregate_seeds([a, RunMetrics("d", 0, 0, 0, 0, 1)])
    with pytest.raises(EmptyRunError):
        aggregate_seeds([])


@settings(max_examples=200)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(2, 10))
def test_corrected_score_bounds(n_correct, n_null, n_wrong, k):
    recs = [rec(True, False)] * n_correct + [rec(False, True)] * n_null + [rec(False, False)] * n_wrong
    if not recs:
        return
    m = score_run(recs, k)
    assert m.accuracy <= m.null_corrected <= m.accuracy + m.null_rate + 1e-12
    assert m.null_corrected <= 1.0
    # converting a wrong answer into a Null never lowers the corrected score
    if n_wrong:
        more_null = [rec(True, False)] * n_correct + [rec(False, True)] * (n_null + 1) + [rec(False, False)] * (n_wrong - 1)
        assert score_run(more_null, k).null_corrected >= m.null_corrected


def test_prompts():
    item = BenchmarkItem("x", "What?", ["one", "two", "three"], "B")
    base = build_prompt(item)
    assert len(base) == 1 and "B. two" in base[0]["content"] and "The answer is (X)" in base[0]["content"]
    custom = build_prompt(item, "custom", custom_system="SYS")
    assert custom[0] == {"role": "system", "content": "SYS"}
    with pytest.raises(ConfigError):
        build_prompt(item, "other")


def test_loaders(tmp_path):
    p = tmp_path / "mmlu.jsonl"
    p.write_text(json.dumps({"question_id": 7, "question": "q", "options": ["a", "b", "N/A", "c"],
                             "answer_index": 2, "category": "law"}) + "\n")
    [it] = load_benchmark(p)
    assert (it.id, it.options, it.correct_label, it.subject) == ("7", ["a", "b", "c"], "C", "law")

    g = tmp_path / "gpqa.csv"
    with open(g, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["Record ID", "Question", "Correct Answer", "Incorrect Answer 1",
                                          "Incorrect Answer 2", "Incorrect Answer 3"])
        w.writeheader()
        for i in range(20):
            w.writerow({"Record ID": f"r{i}", "Question": f"q{i}", "Correct Answer": "right",
                        "Incorrect Answer 1": "w1", "Incorrect Answer 2": "w2", "Incorrect Answer 3": "w3"})
    items = load_benchmark(g, shuffle_seed=3)
    assert all(it.options[ord(it.correct_label) - 65] == "right" for it in items)
    assert len({it.correct_label for it in items}) > 1
    assert [it.options for it in items] == [it.options for it in load_benchmark(g, shuffle_seed=3)]

    items = synthetic_benchmark(5, 10, seed=1)
    write_benchmark_jsonl(items, tmp_path / "s.jsonl")
    assert load_benchmark(tmp_path / "s.jsonl") == items


def test_run_eval_against_stub():
    items = synthetic_benchmark(200, 10, seed=0)
    key = {build_prompt(it)[-1]["content"]: it.correct_label for it in items}
    stub = MultipleChoiceStub(accuracy=0.7, null_rate=0.1, answer_key=key, loop_words=3000)
    run = run_eval(items, Condition("c"), ScriptedEndpoint(stub, chunk_chars=4000),
                   SamplingPolicy(max_output_tokens=2048), seeds=[0, 1], benchmark="mmlu-pro")
    assert len(run.per_seed) == 2 and run.aggregate.n_seeds == 2
    m = run.aggregate
    assert 0.03 < m.null_rate < 0.2
    assert 0.6 < m.accuracy + m.null_rate < 1.0
    nulls = [r for r in run.records if r.is_null]
    assert nulls and all(r.transcript.truncated and r.output_tokens == 2048 for r in nulls)
    assert all(not r.correct for r in nulls)


def test_dynamic_eval_issues_more_requests():
    items = synthetic_benchmark(5, 4, seed=0)
    stub = MultipleChoiceStub(null_rate=0.0)
    ep = ScriptedEndpoint(stub)
    run = run_eval(items, Condition("d"), ep, SamplingPolicy(mode=SamplingMode.DYNAMIC))
    assert all(r.transcript.temperatures == [0.6, 0.3, 0.8, 0.6] for r in run.records)


def test_metrics_csv_and_table(tmp_path):
    cond = Condition("D-CoT Locked/Base", model="D-CoT", prompt_variant="base")
    rows = [
        metrics_row(RunMetrics("D-CoT Locked/Base", 0.6473, 0.0, 0.6473, 1496, 12032, benchmark="mmlu-pro"),
                    cond, "locked"),
        metrics_row(RunMetrics("D-CoT Locked/Base", 0.5282, 0.0424, null_corrected(0.5282, 0.0424, 4),
                               2772, 198, 5, 4, "gpqa"), cond, "locked"),
    ]
    write_metrics_csv(rows, tmp_path / "m.csv")
    back = read_metrics_csv(tmp_path / "m.csv")
    [row] = comparison_rows(back)
    assert row["Method"] == "D-CoT" and row["Temp."] == "Locked" and row["Prompt"] == "Base"
    assert row["MMLU-Pro Acc."] == "64.73" and row["GPQA Null-Corr."] == "53.88"
    assert row["GPQA Tokens"] == "2772.0"


def test_transcript_record_dict():
    t = DecodeTranscript("The answer is (A)", [], [], 4, False, FinishReason.STOP)
    item = BenchmarkItem("x", "q", ["a", "b"], "A")
    from dcot.evalharness import make_record
    r = make_record(item, t, seed=3)
    d = r.to_dict(include_text=False)
    assert d["correct"] and not d["is_null"] and "text" not in d and d["finish_reason"] == "STOP"
