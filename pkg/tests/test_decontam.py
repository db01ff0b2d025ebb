import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcot.decontam import (
    COSINE_THRESHOLD,
    BenchmarkSet,
    Sample,
    ShingleIndex,
    filter_corpus,
    l2_normalize,
    load_embedding_sidecar,
    max_cosine,
    ngram_overlap,
    normalize,
    pair_text,
    similarity_histogram,
    write_histograms,
    write_verdicts_csv,
)
from dcot.errors import DimensionMismatchError, MissingEmbeddingError

BENCH_TEXT = ("Which of the following best describes the primary function of the mitochondria "
              "in eukaryotic cells under normal aerobic conditions and why")


def words(rng, k, vocab=200):
    return " ".join(f"w{rng.integers(vocab)}" for _ in range(k))


def test_normalize():
    assert normalize("Hello, World!") == ["hello", "world"]
    assert normalize("ＦＵＬＬ－width") == ["full", "width"]
    assert normalize("a\u2014b  c") == ["a", "b", "c"]
    assert normalize("") == []


def test_spliced_13gram_hits():
    idx = ShingleIndex.build([("q1", BENCH_TEXT)])
    tail = " ".join(BENCH_TEXT.split()[3:16])
    hit = ngram_overlap("Unrelated preamble... " + tail.upper() + "; trailing words", idx)
    assert hit is not None and hit.benchmark_id == "q1"
    assert len(hit.shingle.split()) == 13


def test_twelve_shared_tokens_never_hit():
    idx = ShingleIndex.build([("q1", BENCH_TEXT)])
    tail = " ".join(BENCH_TEXT.split()[:12])
    assert ngram_overlap("zzz " + tail + " qqq", idx) is None


def test_hash_collisions_do_not_surface(monkeypatch):
    import dcot.decontam as dc
    monkeypatch.setattr(dc, "_fingerprint", lambda shingle: 42)  # every shingle collides
    idx = ShingleIndex.build([("q1", BENCH_TEXT)])
    assert idx.hashes == {42}
    assert idx.lookup("a b c d e f g h i j k l m") is None
    assert idx.lookup(" ".join(normalize(BENCH_TEXT)[:13])) == "q1"


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_no_false_positive_on_disjoint_vocab(seed):
    rng = np.random.default_rng(seed)
    idx = ShingleIndex.build([("b", words(rng, 40))])
    sample = " ".join(f"v{rng.integers(200)}" for _ in range(40))
    assert ngram_overlap(sample, idx) is None


def test_max_cosine():
    rng = np.random.default_rng(0)
    m = l2_normalize(rng.normal(size=(20, 8)))
    c, j = max_cosine(m[5], m)
    assert c == pytest.approx(1.0) and j == 5
    c, _ = max_cosine(np.array([1.0, 0.0]), np.array([[0.0, 1.0]]))
    assert c == 0.0
    # hand-built: 60 degrees and 30 degrees
    b = np.array([[np.cos(np.pi / 3), np.sin(np.pi / 3)], [np.cos(np.pi / 6), np.sin(np.pi / 6)]])
    c, bid = max_cosine(np.array([1.0, 0.0]), b, ids=["a", "b"])
    assert c == pytest.approx(np.sqrt(3) / 2) and bid == "b"
    with pytest.raises(DimensionMismatchError):
        max_cosine(np.ones(3) / np.sqrt(3), m)
    with pytest.raises(ValueError):
        max_cosine(np.ones(8), m)


def unit(*xs):
    v = np.asarray(xs, dtype=float)
    return (v / np.linalg.norm(v)).tolist()


def toy_corpus():
    bench = BenchmarkSet("MMLU", ["b0"], [BENCH_TEXT], {"b0": unit(1, 0, 0)})
    samples = [
        Sample("near", "nothing shared"),                          # cosine 0.8
        Sample("ngram", "so " + " ".join(BENCH_TEXT.split()[:13])),  # orthogonal, but shares 13 words
        Sample("far", "also nothing shared"),                      # orthogonal
    ]
    emb = {"near": unit(0.8, 0.6, 0), "ngram": unit(0, 1, 0), "far": unit(0, 0, 1)}
    return samples, emb, bench


def test_filter_corpus_or_semantics():
    samples, emb, bench = toy_corpus()
    r = filter_corpus(samples, emb, [bench])
    assert [s.id for s in r.clean] == ["far"]
    v = {x.sample_id: x for x in r.verdicts}
    assert v["near"].removed and v["near"].ngram_hit is None
    assert v["ngram"].removed and v["ngram"].max_cosine < COSINE_THRESHOLD
    assert v["near"].max_cosine == pytest.approx(0.8)
    assert r.removed_count + len(r.clean) == len(samples)
    assert [s.id for s in filter_corpus(samples, emb, [bench], use_ngram=False).clean] == ["ngram", "far"]
    assert [s.id for s in filter_corpus(samples, emb, [bench], use_cosine=False).clean] == ["near", "far"]


def test_threshold_is_strict():
    samples = [Sample("s", "x")]
    bench = BenchmarkSet("B", ["b"], ["y"], {"b": unit(1, 0)})
    emb = {"s": unit(1, 0)}
    assert filter_corpus(samples, emb, [bench], threshold=1.0).clean
    assert not filter_corpus(samples, emb, [bench], threshold=0.999).clean


def test_missing_embedding():
    samples, emb, bench = toy_corpus()
    del emb["far"]
    with pytest.raises(MissingEmbeddingError):
        filter_corpus(samples, emb, [bench])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0, 1), min_size=2, max_size=5))
def test_threshold_monotone_and_conservation(seed, thresholds):
    rng = np.random.default_rng(seed)
    samples = [Sample(f"s{i}", words(rng, 15)) for i in range(30)]
    emb = {s.id: rng.normal(size=4).tolist() for s in samples}
    bench = BenchmarkSet("B", [f"b{i}" for i in range(10)], [words(rng, 15) for _ in range(10)],
                         {f"b{i}": rng.normal(size=4).tolist() for i in range(10)})
    prev = None
    for t in sorted(thresholds):
        r = filter_corpus(samples, emb, [bench], threshold=t)
        kept = {s.id for s in r.clean}
        assert len(kept) + r.removed_count == len(samples)
        assert sum(r.histograms["B"].counts) == len(samples)
        if prev is not None:
            assert prev <= kept
        prev = kept


def test_histogram():
    h = similarity_histogram("B", [-0.2, 0.0, 0.5, 0.56, 1.0], 0.55)
    assert len(h.counts) == 50 and sum(h.counts) == 5
    assert h.counts[0] == 2 and h.counts[-1] == 1
    assert h.removed_count == 2


def test_io_helpers(tmp_path):
    samples, emb, bench = toy_corpus()
    side = tmp_path / "emb.jsonl"
    side.write_text("".join(json.dumps({"id": k, "embedding": v}) + "\n" for k, v in emb.items()))
    assert load_embedding_sidecar(side) == emb
    r = filter_corpus(samples, emb, [bench])
    write_verdicts_csv(r.verdicts, tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0].startswith("sample_id,removed")
    write_histograms(r.histograms, tmp_path / "h.csv", tmp_path / "h.vl.json")
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 51
    assert json.loads((tmp_path / "h.vl.json").read_text())["removed"] == {"MMLU": 1}
    assert pair_text({"user_prompt": "a", "chosen_response": "b", "reasoning": "c"}) == "a\nb"
