"""Pipeline configuration: one YAML file, ``${VAR}`` interpolation, flag overrides."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from dcot.decode import GPQA_MAX_TOKENS, MMLU_PRO_MAX_TOKENS, SamplingMode, SamplingPolicy
from dcot.errors import ConfigError

_ENV = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


def interpolate_env(value):
    if isinstance(value, str):
        def sub(m):
            if m.group(1) in os.environ:
                return os.environ[m.group(1)]
            if m.group(2) is not None:
                return m.group(2)
            raise ConfigError(f"environment variable {m.group(1)} is not set")
        return _ENV.sub(sub, value)
    if isinstance(value, dict):
        return {k: interpolate_env(v) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate_env(v) for v in value]
    return value


@dataclass
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 600.0
    extra_body: dict = field(default_factory=dict)


@dataclass
class PipelineConfig:
    eval_endpoint: EndpointConfig = field(default_factory=lambda: EndpointConfig(model="Qwen/Qwen3-8B"))
    teacher_endpoint: EndpointConfig = field(default_factory=lambda: EndpointConfig(
        base_url="https://openrouter.ai/api/v1", model="qwen/qwen3-235b-a22b-2507",
        api_key_env="OPENROUTER_API_KEY"))
    embedder_endpoint: EndpointConfig = field(default_factory=lambda: EndpointConfig(model="all-mpnet-base-v2"))
    locked_temperature: float = 0.6
    temp_map: dict = field(default_factory=lambda: {"DEFAULT": 0.6, "LOW": 0.3, "MID": 0.6, "HIGH": 0.8})
    top_p: float = 0.95
    top_k: int = 20
    budgets: dict = field(default_factory=lambda: {"mmlu-pro": MMLU_PRO_MAX_TOKENS, "gpqa": GPQA_MAX_TOKENS})
    teacher_sampling: dict = field(default_factory=lambda: {"temperature": 0.7, "top_p": 0.95, "top_k": 20,
                                                            "max_tokens": 4096})
    custom_system_prompt: str | None = None
    out_root: str = "runs"
    eval_concurrency: int = 8
    generate_concurrency: int = 4
    retry_attempts: int = 3
    retry_base_delay: float = 1.0

    def __post_init__(self):
        temps = [self.locked_temperature, *self.temp_map.values()]
        if any(not float(t) > 0 for t in temps):
            raise ConfigError("temperatures must be positive")

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        raw = interpolate_env(copy.deepcopy(raw or {}))
        known = set(cls.__dataclass_fields__)
        bad = set(raw) - known
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        for k in ("eval_endpoint", "teacher_endpoint", "embedder_endpoint"):
            if k in raw:
                base = asdict(getattr(cls(), k))
                base.update(raw[k] or {})
                try:
                    raw[k] = EndpointConfig(**base)
                except TypeError as e:
                    raise ConfigError(f"{k}: {e}") from e
        for k in ("temp_map", "budgets", "teacher_sampling"):
            if k in raw:
                merged = getattr(cls(), k)
                merged.update(raw[k] or {})
                raw[k] = merged
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        return cls.from_dict(raw or {})

    def policy(self, mode: str, benchmark: str, max_tokens: int | None = None) -> SamplingPolicy:
        budget = max_tokens or self.budgets.get(benchmark.lower()) or MMLU_PRO_MAX_TOKENS
        return SamplingPolicy(mode=SamplingMode(mode), locked_temperature=self.locked_temperature,
                              temp_map=dict(self.temp_map), top_p=self.top_p, top_k=self.top_k,
                              max_output_tokens=int(budget))

    def hash(self, extra: dict | None = None) -> str:
        payload = {"config": asdict(self), "args": extra or {}}
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()
