"""Benchmark decontamination by embedding similarity OR shared word 13-grams."""

from __future__ import annotations

import csv
import hashlib
import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from dcot.errors import DimensionMismatchError, MissingEmbeddingError

COSINE_THRESHOLD = 0.55
NGRAM_N = 13
EMBEDDING_MODEL = "all-mpnet-base-v2"
HIST_BINS = 50


def normalize(text: str) -> list[str]:
    """NFKC, casefold, punctuation to spaces, whitespace split."""
    text = unicodedata.normalize("NFKC", text).lower()
    chars = [" " if unicodedata.category(ch).startswith("P") else ch for ch in text]
    return "".join(chars).split()


def _fingerprint(shingle: str) -> int:
    return int.from_bytes(hashlib.blake2b(shingle.encode("utf-8"), digest_size=8).digest(), "big")


@dataclass
class NgramHit:
    shingle: str
    benchmark_id: str


@dataclass
class ShingleIndex:
    """64-bit fingerprints of benchmark n-grams with an exact-text store.

    A fingerprint match is only reported after the shingle text itself is
    compared, so hash collisions never surface as hits.
    """

    n: int = NGRAM_N
    normalized: bool = True
    store: dict[int, list[tuple[str, str]]] = field(default_factory=dict)

    @property
    def hashes(self) -> set[int]:
        return set(self.store)

    def _tokens(self, text: str) -> list[str]:
        return normalize(text) if self.normalized else text.split()

    def shingles(self, text: str) -> Iterable[str]:
        toks = self._tokens(text)
        for i in range(len(toks) - self.n + 1):
            yield " ".join(toks[i:i + self.n])

    def add(self, benchmark_id: str, text: str) -> None:
        for sh in self.shingles(text):
            bucket = self.store.setdefault(_fingerprint(sh), [])
            if not any(s == sh for s, _ in bucket):
                bucket.append((sh, benchmark_id))

    @classmethod
    def build(cls, items: Iterable[tuple[str, str]], n: int = NGRAM_N, normalized: bool = True) -> "ShingleIndex":
        idx = cls(n=n, normalized=normalized)
        for bid, text in items:
            idx.add(bid, text)
        return idx

    def lookup(self, shingle: str) -> str | None:
        for s, bid in self.store.get(_fingerprint(shingle), ()):
            if s == shingle:
                return bid
        return None


def ngram_overlap(sample: str, index: ShingleIndex) -> NgramHit | None:
    """First shared n-gram in sample order, or None."""
    for sh in index.shingles(sample):
        bid = index.lookup(sh)
        if bid is not None:
            return NgramHit(sh, bid)
    return None


def l2_normalize(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    return mat / norms


def max_cosine(sample_vec, benchmark_vecs, ids: Sequence[str] | None = None, tol: float = 1e-6):
    """Exact max dot product of a unit vector against unit rows.

    Returns ``(max_cosine, id)``; ``id`` is the row index when ``ids`` is None.
    """
    v = np.asarray(sample_vec, dtype=np.float64)
    m = np.atleast_2d(np.asarray(benchmark_vecs, dtype=np.float64))
    if v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionMismatchError(f"sample dim {v.shape} vs benchmark dim {m.shape}")
    if abs(np.linalg.norm(v) - 1) > tol or np.any(np.abs(np.linalg.norm(m, axis=1) - 1) > tol):
        raise ValueError("max_cosine expects L2-normalised vectors")
    sims = m @ v
    j = int(np.argmax(sims))
    return float(sims[j]), (ids[j] if ids is not None else j)


@dataclass
class BenchmarkSet:
    name: str
    ids: list[str]
    texts: list[str]
    embeddings: Mapping[str, Sequence[float]]


@dataclass
class Sample:
    id: str
    text: str


@dataclass
class ContaminationVerdict:
    sample_id: str
    removed: bool
    max_cosine: float
    nearest_benchmark_id: str
    nearest_benchmark: str
    ngram_hit: NgramHit | None = None
    per_benchmark: dict = field(default_factory=dict)


@dataclass
class SimilarityHistogram:
    benchmark: str
    bin_edges: list[float]
    counts: list[int]
    threshold: float
    removed_count: int

    def to_rows(self) -> list[dict]:
        return [
            {"benchmark": self.benchmark, "bin_lo": round(lo, 6), "bin_hi": round(hi, 6), "count": c}
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts)
        ]


def similarity_histogram(name: str, values: Sequence[float], threshold: float,
                         bins: int = HIST_BINS) -> SimilarityHistogram:
    vals = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)  # negatives land in the first bin
    counts, edges = np.histogram(vals, bins=bins, range=(0.0, 1.0))
    removed = int(np.sum(np.asarray(values) > threshold))
    return SimilarityHistogram(name, edges.tolist(), counts.astype(int).tolist(), threshold, removed)


@dataclass
class FilterResult:
    clean: list
    verdicts: list[ContaminationVerdict]
    histograms: dict[str, SimilarityHistogram]

    @property
    def removed_count(self) -> int:
        return sum(v.removed for v in self.verdicts)


def _matrix(ids, embeddings, what):
    missing = [i for i in ids if i not in embeddings]
    if missing:
        raise MissingEmbeddingError(f"{len(missing)} {what} lack embeddings", ids=missing[:50])
    return l2_normalize(np.asarray([embeddings[i] for i in ids], dtype=np.float64))


def filter_corpus(
    samples: Sequence[Sample],
    sample_embeddings: Mapping[str, Sequence[float]],
    benchmark_sets: Sequence[BenchmarkSet],
    threshold: float = COSINE_THRESHOLD,
    n: int = NGRAM_N,
    use_cosine: bool = True,
    use_ngram: bool = True,
    bins: int = HIST_BINS,
) -> FilterResult:
    """Remove a sample when either criterion fires against any benchmark set.

    Embeddings are re-normalised here, so raw vectors from sidecar files are fine.
    """
    sample_ids = [s.id for s in samples]
    S = _matrix(sample_ids, sample_embeddings, "samples") if samples else np.zeros((0, 1))
    per_set = []
    for b in benchmark_sets:
        B = _matrix(b.ids, b.embeddings, f"{b.name} items")
        if len(samples) and B.shape[1] != S.shape[1]:
            raise DimensionMismatchError(f"{b.name}: dim {B.shape[1]} vs samples {S.shape[1]}")
        sims = S @ B.T if len(samples) else np.zeros((0, len(b.ids)))
        arg = sims.argmax(axis=1) if len(b.ids) else np.zeros(len(samples), dtype=int)
        best = sims[np.arange(len(samples)), arg] if len(b.ids) else np.full(len(samples), -1.0)
        index = ShingleIndex.build(zip(b.ids, b.texts), n=n) if use_ngram else None
        per_set.append((b, best, arg, index))

    verdicts, clean = [], []
    for i, s in enumerate(samples):
        top_cos, top_id, top_set = -1.0, "", ""
        hit = None
        scores = {}
        for b, best, arg, index in per_set:
            c = float(best[i])
            bid = b.ids[int(arg[i])] if b.ids else ""
            scores[b.name] = {"max_cosine": c, "nearest_id": bid}
            if c > top_cos:
                top_cos, top_id, top_set = c, bid, b.name
            if hit is None and index is not None:
                hit = ngram_overlap(s.text, index)
                if hit is not None:
                    scores[b.name]["ngram_hit"] = hit.shingle
        removed = (use_cosine and top_cos > threshold) or hit is not None
        verdicts.append(ContaminationVerdict(s.id, removed, top_cos, top_id, top_set, hit, scores))
        if not removed:
            clean.append(s)

    histograms = {
        b.name: similarity_histogram(b.name, best.tolist(), threshold, bins)
        for b, best, _, _ in per_set
    }
    return FilterResult(clean, verdicts, histograms)


# -- IO -----------------------------------------------------------------------------

def pair_text(record: dict, fields: Sequence[str] = ("user_prompt", "chosen_response")) -> str:
    return "\n".join(record.get(f, "") for f in fields)


def load_embedding_sidecar(path: str | Path) -> dict[str, list[float]]:
    """JSONL sidecar: one ``{"id": ..., "embedding": [...]}`` object per line."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                out[str(d["id"])] = d.get("embedding", d.get("vector"))
    return out


def embed_missing(ids: Sequence[str], texts: Sequence[str], known: dict,
                  embed: Callable[[Sequence[str]], np.ndarray]) -> dict:
    todo = [(i, t) for i, t in zip(ids, texts) if i not in known]
    if todo:
        vecs = embed([t for _, t in todo])
        for (i, _), v in zip(todo, vecs):
            known[i] = list(map(float, v))
    return known


def write_verdicts_csv(verdicts: Sequence[ContaminationVerdict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "removed", "max_cosine", "nearest_benchmark", "nearest_benchmark_id",
                    "ngram_hit_benchmark_id", "ngram_hit"])
        for v in verdicts:
            w.writerow([v.sample_id, int(v.removed), f"{v.max_cosine:.6f}", v.nearest_benchmark,
                        v.nearest_benchmark_id, v.ngram_hit.benchmark_id if v.ngram_hit else "",
                        v.ngram_hit.shingle if v.ngram_hit else ""])


def write_histograms(histograms: Mapping[str, SimilarityHistogram], csv_path: str | Path,
                     spec_path: str | Path | None = None) -> None:
    rows = [r for h in histograms.values() for r in h.to_rows()]
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=["benchmark", "bin_lo", "bin_hi", "count"])
        w.writeheader()
        w.writerows(rows)
    if spec_path is not None:
        spec = {
            "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
            "description": "Max cosine similarity of training samples to each benchmark",
            "data": {"values": rows},
            "facet": {"column": {"field": "benchmark"}},
            "spec": {
                "layer": [
                    {"mark": "bar", "encoding": {
                        "x": {"field": "bin_lo", "type": "quantitative", "bin": {"binned": True},
                              "title": "cosine similarity"},
                        "x2": {"field": "bin_hi"},
                        "y": {"field": "count", "type": "quantitative"}}},
                    {"mark": {"type": "rule", "color": "red"},
                     "encoding": {"x": {"datum": next(iter(histograms.values())).threshold
                                        if histograms else COSINE_THRESHOLD}}},
                ]
            },
            "removed": {k: h.removed_count for k, h in histograms.items()},
        }
        Path(spec_path).write_text(json.dumps(spec, indent=2), encoding="utf-8")
