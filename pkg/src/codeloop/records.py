"""Domain record types, canonical text normalization, and content hashing.

Every type serializes to a plain dict (``to_dict``/``from_dict``) whose field
names are the wire schema for the engine's JSONL files. Hashes are computed
over a canonical form (sorted keys, normalized whitespace in text fields) so
that formatting noise never defeats deduplication or caching.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .errors import SchemaError

HASH_LENGTH = 16

CASE_LABELS = ("general", "corner", "difficult")
EXECUTION_STATUSES = ("pass", "assertion_fail", "runtime_error", "timeout", "setup_error")
ROLES = ("solver", "verifier")

_WS_RUN = re.compile(r"[ \t]+")
_SIGNATURE = re.compile(r"^([A-Za-z_]\w*)\s*\((.*)\)\s*(->\s*\S.*)?$")


def normalize_text(text: str) -> str:
    """Normalize text for hashing: LF line endings, single spaces, trimmed."""
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = [_WS_RUN.sub(" ", line).strip() for line in text.split("\n")]
    return "\n".join(lines).strip()


def _canonicalize(value: Any) -> Any:
    if isinstance(value, str):
        return normalize_text(value)
    if isinstance(value, Mapping):
        return {str(k): _canonicalize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonicalize(v) for v in value]
    return value


def canonical_hash(record: Any) -> str:
    """Stable content hash of a record (dataclass with to_dict, or plain data).

    Equal records hash equally regardless of key order or whitespace noise in
    text fields; the digest is platform-independent.
    """
    if hasattr(record, "to_dict"):
        record = record.to_dict()
    canonical = _canonicalize(record)
    payload = json.dumps(canonical, sort_keys=True, separators=(",", ":"),
                         ensure_ascii=True, allow_nan=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:HASH_LENGTH]


def problem_id_for(description: str, signature: str) -> str:
    return canonical_hash({"description": description, "signature": signature})


def parse_signature_text(signature: str) -> str:
    """Return the function name declared by a ``name(params) -> ret`` signature."""
    match = _SIGNATURE.match(signature.strip())
    if not match:
        raise SchemaError(f"signature does not name a function: {signature!r}")
    return match.group(1)


def _require(data: Mapping[str, Any], key: str, kind: type | tuple) -> Any:
    if key not in data:
        raise SchemaError(f"missing field {key!r}")
    value = data[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or (kind in (int, float) and isinstance(value, bool)):
        raise SchemaError(f"field {key!r} has wrong type {type(value).__name__}")
    return value


@dataclass(frozen=True)
class ProblemSpec:
    """One self-contained coding problem: description plus function signature.

    ``problem_id`` is the canonical hash of (description, signature); a spec
    with an empty signature is a pending draft that only exists between the
    description and signature synthesis stages.
    """

    problem_id: str
    description: str
    function_name: str
    signature: str
    origin: dict[str, str]
    language_tag: str = "python"

    def __post_init__(self):
        if not self.description.strip():
            raise SchemaError("problem description is empty")
        if self.signature:
            name = parse_signature_text(self.signature)
            if name != self.function_name:
                raise SchemaError(
                    f"function_name {self.function_name!r} does not match signature {self.signature!r}")
        expected = problem_id_for(self.description, self.signature)
        if self.problem_id != expected:
            raise SchemaError(f"field 'problem_id' is stale (expected {expected})")

    @classmethod
    def create(cls, description: str, signature: str = "", *,
               snippet_id: str = "", template_id: str = "",
               language_tag: str = "python") -> "ProblemSpec":
        function_name = parse_signature_text(signature) if signature else ""
        return cls(
            problem_id=problem_id_for(description, signature),
            description=description,
            function_name=function_name,
            signature=signature,
            origin={"snippet_id": snippet_id, "template_id": template_id},
            language_tag=language_tag,
        )

    def with_signature(self, signature: str) -> "ProblemSpec":
        return ProblemSpec.create(
            self.description, signature,
            snippet_id=self.origin.get("snippet_id", ""),
            template_id=self.origin.get("template_id", ""),
            language_tag=self.language_tag,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "description": self.description,
            "function_name": self.function_name,
            "signature": self.signature,
            "origin": dict(self.origin),
            "language_tag": self.language_tag,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProblemSpec":
        origin = _require(data, "origin", dict)
        return cls(
            problem_id=_require(data, "problem_id", str),
            description=_require(data, "description", str),
            function_name=_require(data, "function_name", str),
            signature=_require(data, "signature", str),
            origin={"snippet_id": str(origin.get("snippet_id", "")),
                    "template_id": str(origin.get("template_id", ""))},
            language_tag=str(data.get("language_tag", "python")),
        )


@dataclass(frozen=True)
class Decoding:
    temperature: float
    top_p: float
    greedy: bool

    def __post_init__(self):
        if self.temperature < 0:
            raise SchemaError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise SchemaError("top_p must be in (0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {"temperature": self.temperature, "top_p": self.top_p, "greedy": self.greedy}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Decoding":
        return cls(
            temperature=_require(data, "temperature", float),
            top_p=_require(data, "top_p", float),
            greedy=_require(data, "greedy", bool),
        )


@dataclass(frozen=True)
class CodeCandidate:
    """One sampled solution with decoding provenance."""

    problem_id: str
    source: str
    sample_index: int
    decoding: Decoding

    def __post_init__(self):
        if not self.source.strip():
            raise SchemaError("candidate source is empty")
        if self.sample_index < 0:
            raise SchemaError("sample_index must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "source": self.source,
            "sample_index": self.sample_index,
            "decoding": self.decoding.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CodeCandidate":
        return cls(
            problem_id=_require(data, "problem_id", str),
            source=_require(data, "source", str),
            sample_index=_require(data, "sample_index", int),
            decoding=Decoding.from_dict(_require(data, "decoding", dict)),
        )


@dataclass(frozen=True)
class TestInput:
    """A concrete call of the target function, labeled by the case it probes."""

    call_expression: str
    case_label: str = "general"

    def __post_init__(self):
        if self.case_label not in CASE_LABELS:
            raise SchemaError(f"unknown case_label {self.case_label!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"call_expression": self.call_expression, "case_label": self.case_label}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TestInput":
        return cls(
            call_expression=_require(data, "call_expression", str),
            case_label=_require(data, "case_label", str),
        )


@dataclass(frozen=True)
class TestCandidate:
    """One sampled expected-output prediction for a test input."""

    input: TestInput
    expected_literal: str
    rationale: str
    sample_index: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "input": self.input.to_dict(),
            "expected_literal": self.expected_literal,
            "rationale": self.rationale,
            "sample_index": self.sample_index,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TestCandidate":
        return cls(
            input=TestInput.from_dict(_require(data, "input", dict)),
            expected_literal=_require(data, "expected_literal", str),
            rationale=_require(data, "rationale", str),
            sample_index=_require(data, "sample_index", int),
        )


@dataclass(frozen=True)
class TestCase:
    """A voted test: input, agreed expected literal, and voting provenance."""

    input: TestInput
    expected_literal: str
    vote_margin: float
    rationale: str

    def __post_init__(self):
        if not (0 < self.vote_margin <= 1):
            raise SchemaError("vote_margin must be in (0, 1]")

    @property
    def assertion(self) -> str:
        return f"assert {self.input.call_expression} == {self.expected_literal}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "input": self.input.to_dict(),
            "expected_literal": self.expected_literal,
            "vote_margin": self.vote_margin,
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TestCase":
        return cls(
            input=TestInput.from_dict(_require(data, "input", dict)),
            expected_literal=_require(data, "expected_literal", str),
            vote_margin=_require(data, "vote_margin", float),
            rationale=_require(data, "rationale", str),
        )


@dataclass(frozen=True)
class TestSuite:
    problem_id: str
    cases: tuple[TestCase, ...]
    selection_trace: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.cases:
            raise SchemaError("test suite has no cases")
        seen = set()
        for case in self.cases:
            key = (case.input.call_expression, case.expected_literal)
            if key in seen:
                raise SchemaError(f"duplicate case {key!r} in suite")
            seen.add(key)

    def rendered(self) -> str:
        return "\n".join(case.assertion for case in self.cases)

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "cases": [case.to_dict() for case in self.cases],
            "selection_trace": dict(self.selection_trace),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TestSuite":
        cases = _require(data, "cases", list)
        return cls(
            problem_id=_require(data, "problem_id", str),
            cases=tuple(TestCase.from_dict(c) for c in cases),
            selection_trace=dict(data.get("selection_trace", {})),
        )


@dataclass(frozen=True)
class ExecutionOutcome:
    status: str
    error_kind: str
    duration_ms: int
    covered_lines: tuple[int, ...]

    def __post_init__(self):
        if self.status not in EXECUTION_STATUSES:
            raise SchemaError(f"unknown execution status {self.status!r}")
        if self.status == "pass" and self.error_kind:
            raise SchemaError("passing outcome must carry no error_kind")

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "error_kind": self.error_kind,
            "duration_ms": self.duration_ms,
            "covered_lines": list(self.covered_lines),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExecutionOutcome":
        covered = _require(data, "covered_lines", list)
        return cls(
            status=_require(data, "status", str),
            error_kind=_require(data, "error_kind", str),
            duration_ms=_require(data, "duration_ms", int),
            covered_lines=tuple(int(x) for x in covered),
        )


@dataclass(frozen=True)
class ScoreReport:
    """Per-suite verdict for one candidate: fraction of tests passed."""

    problem_id: str
    candidate_ref: str
    suite_ref: str
    per_case: tuple[ExecutionOutcome, ...]
    score: float
    label_y: int

    def __post_init__(self):
        if not self.per_case:
            raise SchemaError("score report has no cases")
        passed = sum(1 for o in self.per_case if o.status == "pass")
        if self.score != passed / len(self.per_case):
            raise SchemaError("score does not equal pass fraction")
        if self.label_y != (1 if self.score == 1.0 else 0):
            raise SchemaError("label_y must be 1 exactly when score is 1")

    @classmethod
    def build(cls, problem_id: str, candidate_ref: str, suite_ref: str,
              per_case: Iterable[ExecutionOutcome]) -> "ScoreReport":
        outcomes = tuple(per_case)
        passed = sum(1 for o in outcomes if o.status == "pass")
        score = passed / len(outcomes)
        return cls(problem_id, candidate_ref, suite_ref, outcomes,
                   score, 1 if score == 1.0 else 0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "candidate_ref": self.candidate_ref,
            "suite_ref": self.suite_ref,
            "per_case": [o.to_dict() for o in self.per_case],
            "score": self.score,
            "label_y": self.label_y,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScoreReport":
        per_case = _require(data, "per_case", list)
        return cls(
            problem_id=_require(data, "problem_id", str),
            candidate_ref=_require(data, "candidate_ref", str),
            suite_ref=_require(data, "suite_ref", str),
            per_case=tuple(ExecutionOutcome.from_dict(o) for o in per_case),
            score=_require(data, "score", float),
            label_y=_require(data, "label_y", int),
        )


@dataclass(frozen=True)
class SftExample:
    role: str
    prompt: str
    target: str
    provenance: dict[str, Any]

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"unknown role {self.role!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "prompt": self.prompt,
            "target": self.target,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SftExample":
        return cls(
            role=_require(data, "role", str),
            prompt=_require(data, "prompt", str),
            target=_require(data, "target", str),
            provenance=dict(_require(data, "provenance", dict)),
        )


@dataclass(frozen=True)
class DpoExample:
    role: str
    prompt: str
    chosen: str
    rejected: str
    provenance: dict[str, Any]

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"unknown role {self.role!r}")
        if self.chosen == self.rejected:
            raise SchemaError("chosen and rejected must differ")

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "prompt": self.prompt,
            "chosen": self.chosen,
            "rejected": self.rejected,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DpoExample":
        return cls(
            role=_require(data, "role", str),
            prompt=_require(data, "prompt", str),
            chosen=_require(data, "chosen", str),
            rejected=_require(data, "rejected", str),
            provenance=dict(_require(data, "provenance", dict)),
        )
