"""Run the decontamination filter on a synthetic corpus with known overlap.

Builds 3-D embeddings where a chosen number of samples sit above the cosine
threshold against one benchmark, and every sample sits at a fixed low cosine
against a second one. Also splices a few verbatim 13-word benchmark runs into
sample texts so the n-gram criterion fires independently of the embeddings.

    python scripts/decontam_synthetic.py --out-dir runs/decontam-synthetic
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from dcot.decontam import (
    COSINE_THRESHOLD,
    BenchmarkSet,
    Sample,
    filter_corpus,
    write_histograms,
    write_verdicts_csv,
)


def build(n_samples: int, n_hits: int, n_spliced: int, far_cos: float, seed: int):
    rng = np.random.default_rng(seed)
    vocab = [f"tok{i}" for i in range(5000)]
    bench_words = [f"bench{i}" for i in range(60)]
    radial = math.sqrt(1 - far_cos ** 2)
    order = rng.permutation(n_samples)
    hits = set(order[:n_hits].tolist())
    spliced = set(order[n_hits:n_hits + n_spliced].tolist())
    samples, emb = [], {}
    for i in range(n_samples):
        a = rng.uniform(0.6, 0.95) if i in hits else rng.uniform(-0.2, 0.5)
        emb[f"s{i}"] = [a, math.sqrt(radial ** 2 - a ** 2), far_cos]
        words = rng.choice(vocab, 40).tolist()
        if i in spliced:
            start = int(rng.integers(0, len(bench_words) - 13))
            words[10:10] = bench_words[start:start + 13]
        samples.append(Sample(f"s{i}", " ".join(words)))
    sets = [
        BenchmarkSet("MMLU-Pro", ["m0"], [" ".join(bench_words)], {"m0": [1.0, 0.0, 0.0]}),
        BenchmarkSet("GPQA", ["g0"], ["unrelated benchmark text " * 5], {"g0": [0.0, 0.0, 1.0]}),
    ]
    return samples, emb, sets


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=5181)
    ap.add_argument("--hits", type=int, default=102)
    ap.add_argument("--spliced", type=int, default=0)
    ap.add_argument("--far-cos", type=float, default=0.15)
    ap.add_argument("--threshold", type=float, default=COSINE_THRESHOLD)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", type=Path)
    args = ap.parse_args()

    samples, emb, sets = build(args.samples, args.hits, args.spliced, args.far_cos, args.seed)
    res = filter_corpus(samples, emb, sets, threshold=args.threshold)
    by_ngram = sum(1 for v in res.verdicts if v.ngram_hit is not None)
    print(f"input {len(samples)}  removed {res.removed_count}  clean {len(res.clean)}")
    for name, h in res.histograms.items():
        print(f"  {name:<9} removed by cosine: {h.removed_count}")
    print(f"  flagged by shared 13-grams: {by_ngram}")
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        write_verdicts_csv(res.verdicts, args.out_dir / "verdicts.csv")
        write_histograms(res.histograms, args.out_dir / "histogram.csv", args.out_dir / "histogram.vl.json")
        print(f"wrote {args.out_dir}")


if __name__ == "__main__":
    main()
