"""Independent reference implementations used by the tests.

Nothing here imports from ``dcot``; each oracle is the obvious brute-force
version of what the package computes incrementally.
"""

import random
import re

TAG_RE = re.compile(r"<TEMP_(LOW|MID|HIGH)>")

FRAGMENTS = [
    "<TEMP_LOW>", "<TEMP_MID>", "<TEMP_HIGH>", "<think>", "</think>",
    "<TEMP_", "<TEM", "<", "</", "<thi", ">", "LOW>", "P_HIGH>", "<TEMP_XL>",
    "a", "bc ", " ", "\n", "é", "x<y", "<<", "TEMP",
]


def regex_segments(s):
    """Single-pass regex split: [(mode, text, start_offset), ...]."""
    parts = TAG_RE.split(s)
    out = []
    if parts[0]:
        out.append(("DEFAULT", parts[0], 0))
    off = len(parts[0])
    for mode, text in zip(parts[1::2], parts[2::2]):
        out.append((mode, text, off))
        off += len(f"<TEMP_{mode}>") + len(text)
    return out


def random_tagged_string(rng: random.Random, max_fragments=30):
    return "".join(rng.choice(FRAGMENTS) for _ in range(rng.randint(0, max_fragments)))


def random_chunking(rng: random.Random, s: str):
    if not s:
        return [""]
    k = rng.randint(0, min(len(s), 12))
    cuts = sorted(rng.sample(range(1, len(s)), min(k, max(len(s) - 1, 0)))) if len(s) > 1 else []
    bounds = [0, *cuts, len(s)]
    return [s[a:b] for a, b in zip(bounds, bounds[1:])]


def dominated(p, others):
    acc, tok = p
    return any(oa >= acc and ot <= tok and (oa > acc or ot < tok) for oa, ot in others)


def brute_force_front(points):
    return [not dominated(p, points[:i] + points[i + 1:]) for i, p in enumerate(points)]
