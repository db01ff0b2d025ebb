"""Odds-ratio preference objective on per-token log-probabilities.

Sequence likelihood is length-normalised: p = exp(mean log-prob). The loss is

    L = -mean(chosen) + lam * -log sigmoid(log odds(p_c) - log odds(p_r)),

with odds(p) = p / (1 - p). No reference model is involved.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from dcot.errors import DomainError, EmptySequenceError, NonFiniteError

DEFAULT_LAMBDA = 0.1
_MAX_AVG_LOGPROB = -1e-12


def odds(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"odds undefined for p={p}")
    return p / (1.0 - p)


def log1mexp(x: float) -> float:
    """log(1 - exp(x)) for x < 0 without cancellation."""
    if x > -math.log(2.0):
        return math.log(-math.expm1(x))
    return math.log1p(-math.exp(x))


def log_odds_from_avg(avg: float) -> float:
    return avg - log1mexp(avg)


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class SequenceLikelihood:
    token_logprobs: tuple[float, ...]
    length: int
    avg_logprob: float
    seq_prob: float

    @classmethod
    def from_logprobs(cls, logprobs: Sequence[float]) -> "SequenceLikelihood":
        lp = np.asarray(logprobs, dtype=np.float64).ravel()
        if lp.size == 0:
            raise EmptySequenceError("sequence has no tokens")
        if not np.all(np.isfinite(lp)):
            raise NonFiniteError("non-finite log-probability")
        if np.any(lp > 0):
            raise DomainError("log-probabilities must be <= 0")
        avg = float(lp.mean())
        if avg > _MAX_AVG_LOGPROB:
            # p == 1 makes the odds infinite
            raise NonFiniteError(f"average log-prob {avg} too close to 0")
        return cls(tuple(lp.tolist()), int(lp.size), avg, math.exp(avg))

    @property
    def log_odds(self) -> float:
        return log_odds_from_avg(self.avg_logprob)


@dataclass(frozen=True)
class OrpoBatch:
    chosen: SequenceLikelihood
    rejected: SequenceLikelihood
    lam: float
    loss_sft: float
    loss_or: float
    loss_total: float

    @property
    def log_odds_ratio(self) -> float:
        return self.chosen.log_odds - self.rejected.log_odds


def orpo_loss(chosen_logprobs, rejected_logprobs, lam: float = DEFAULT_LAMBDA) -> OrpoBatch:
    if not math.isfinite(lam):
        raise NonFiniteError("lambda must be finite")
    c = SequenceLikelihood.from_logprobs(chosen_logprobs)
    r = SequenceLikelihood.from_logprobs(rejected_logprobs)
    z = c.log_odds - r.log_odds
    loss_or = _softplus(-z)  # -log sigmoid(z)
    loss_sft = -c.avg_logprob
    return OrpoBatch(c, r, lam, loss_sft, loss_or, loss_sft + lam * loss_or)


def orpo_gradients(chosen_logprobs, rejected_logprobs, lam: float = DEFAULT_LAMBDA):
    """d loss_total / d token log-prob, as ``(chosen_grads, rejected_grads)`` arrays.

    d log_odds / d avg = 1 / (1 - p), and d avg / d token = 1 / length.
    """
    b = orpo_loss(chosen_logprobs, rejected_logprobs, lam)
    c, r = b.chosen, b.rejected
    s = _sigmoid(-b.log_odds_ratio)  # = -d loss_or / dz
    dlo_c = 1.0 / -math.expm1(c.avg_logprob)
    dlo_r = 1.0 / -math.expm1(r.avg_logprob)
    g_c = (-1.0 - lam * s * dlo_c) / c.length
    g_r = lam * s * dlo_r / r.length
    return np.full(c.length, g_c), np.full(r.length, g_r)


# -- training manifest --------------------------------------------------------------

@dataclass
class TrainingConfig:
    """Hyperparameters handed to an external ORPO/LoRA trainer."""

    base_model: str = "Qwen/Qwen3-8B"
    dataset: str = "packed_orpo.jsonl"
    method: str = "orpo"
    adapter: str = "lora"
    trainer_library: str = "unsloth"
    optimizer: str = "lion_8bit"
    learning_rate: float = 4e-6
    orpo_beta: float = DEFAULT_LAMBDA
    per_device_train_batch_size: int = 1
    gradient_accumulation_steps: int = 8
    warmup_ratio: float = 0.1
    lr_scheduler_type: str = "cosine"
    precision: str = "bf16"
    num_train_epochs: int = 2

    def with_overrides(self, **overrides) -> "TrainingConfig":
        known = {f.name: f.type for f in fields(self)}
        bad = set(overrides) - set(known)
        if bad:
            raise KeyError(f"unknown training keys: {sorted(bad)}")
        cur = asdict(self)
        for k, v in overrides.items():
            kind = type(cur[k])
            cur[k] = kind(v) if not isinstance(v, kind) else v
        return TrainingConfig(**cur)


def emit_training_manifest(config: TrainingConfig, path: str | Path) -> Path:
    """Write a flat ``key: value`` YAML manifest."""
    path = Path(path)
    path.write_text(yaml.safe_dump(asdict(config), sort_keys=False), encoding="utf-8")
    return path


def read_training_manifest(path: str | Path) -> TrainingConfig:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    return TrainingConfig().with_overrides(**raw)
