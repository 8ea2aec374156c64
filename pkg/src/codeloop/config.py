"""Run configuration: one JSON document, every field defaulted, unknown
fields rejected so typos fail fast in long batch runs."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .records import canonical_hash

BASE_URL_ENV = "CODELOOP_BASE_URL"
API_KEY_ENV = "CODELOOP_API_KEY"

STAGE_DECODING_DEFAULTS: dict[str, dict[str, Any]] = {
    "problem": {"temperature": 0.8, "top_p": 0.95, "max_tokens": 512},
    "signature": {"temperature": 0.0, "top_p": 1.0, "max_tokens": 64},
    "solution": {"temperature": 0.6, "top_p": 0.9, "max_tokens": 512},
    "test_input": {"temperature": 0.6, "top_p": 0.9, "max_tokens": 256},
    "test_output": {"temperature": 0.6, "top_p": 0.9, "max_tokens": 512},
}


@dataclass
class DecodingConfig:
    temperature: float
    top_p: float
    max_tokens: int


@dataclass
class SamplesConfig:
    solutions: int = 10
    inputs_per_problem: int = 4
    outputs_per_input: int = 5


@dataclass
class BackendConfig:
    kind: str = "mock"
    model: str = "mock-model"
    base_url: str = ""
    max_concurrency: int = 4
    max_attempts: int = 3
    script: str = ""
    fallback: str | None = None


@dataclass
class LimitsConfig:
    time_ms: int = 5000
    memory_mb: int = 512


@dataclass
class RunConfig:
    iteration_count: int = 2
    problem_count: int = 5
    samples: SamplesConfig = field(default_factory=SamplesConfig)
    suite_size: int = 3
    decoding: dict[str, DecodingConfig] = field(default_factory=dict)
    epsilon: str = "strict"
    reject_pick: str = "random"
    max_verifier_pairs_per_problem: int = 4
    strategies: list[str] = field(default_factory=lambda: ["diversify", "coverage"])
    ensemble_for_iter3: bool = False
    pause_for_training: bool = False
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    seed: int = 0
    backend: BackendConfig = field(default_factory=BackendConfig)
    run_dir: str = "runs/dev"
    snippet_corpus: str = ""
    template_corpus: str = ""
    template_dir: str = ""
    shim_command: list[str] = field(default_factory=lambda: ["python3", "runner/py_runner.py"])
    workers: int = 4
    synthesis_retries: int = 0

    def __post_init__(self):
        for stage, values in STAGE_DECODING_DEFAULTS.items():
            self.decoding.setdefault(stage, DecodingConfig(**values))
        counts = {
            "iteration_count": self.iteration_count,
            "problem_count": self.problem_count,
            "suite_size": self.suite_size,
            "samples.solutions": self.samples.solutions,
            "samples.inputs_per_problem": self.samples.inputs_per_problem,
            "samples.outputs_per_input": self.samples.outputs_per_input,
            "max_verifier_pairs_per_problem": self.max_verifier_pairs_per_problem,
            "workers": self.workers,
            "backend.max_concurrency": self.backend.max_concurrency,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.epsilon not in ("strict", "gt0", "gt0_5", "gt0_75"):
            raise ConfigError(f"unknown epsilon policy {self.epsilon!r}")
        if self.reject_pick not in ("random", "lowest", "median"):
            raise ConfigError(f"unknown reject_pick policy {self.reject_pick!r}")
        unknown = set(self.strategies) - {"diversify", "coverage"}
        if unknown:
            raise ConfigError(f"unknown strategies: {sorted(unknown)}")
        if self.backend.kind not in ("mock", "http"):
            raise ConfigError(f"unknown backend kind {self.backend.kind!r}")

    def resolved_base_url(self) -> str:
        return os.environ.get(BASE_URL_ENV, "") or self.backend.base_url

    def api_key(self) -> str | None:
        return os.environ.get(API_KEY_ENV) or None

    def to_dict(self) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        data["decoding"] = {stage: dataclasses.asdict(d)
                            for stage, d in self.decoding.items()}
        return data

    def config_hash(self) -> str:
        return canonical_hash(self.to_dict())


def _build(cls, data: Mapping[str, Any], context: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{context}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{context}: unknown fields {sorted(unknown)}")
    return data


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    data = dict(_build(RunConfig, data, "config"))
    if "samples" in data:
        data["samples"] = SamplesConfig(**_build(SamplesConfig, data["samples"],
                                                 "config.samples"))
    if "backend" in data:
        data["backend"] = BackendConfig(**_build(BackendConfig, data["backend"],
                                                 "config.backend"))
    if "limits" in data:
        data["limits"] = LimitsConfig(**_build(LimitsConfig, data["limits"],
                                               "config.limits"))
    if "decoding" in data:
        decoding = {}
        for stage, values in dict(data["decoding"]).items():
            if stage not in STAGE_DECODING_DEFAULTS:
                raise ConfigError(f"config.decoding: unknown stage {stage!r}")
            merged = dict(STAGE_DECODING_DEFAULTS[stage])
            merged.update(_build(DecodingConfig, values, f"config.decoding.{stage}"))
            decoding[stage] = DecodingConfig(**merged)
        data["decoding"] = decoding
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return config_from_dict(data)
