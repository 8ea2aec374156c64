"""Prompt construction, reply parsing, and problem deduplication.

Five prompt families drive synthesis: problem descriptions, function
signatures, solutions, test inputs, and test outputs. The few-shot templates
use tag markers (``<Q1>``, ``<ANALYSIS1>``, ``<INPUTS1>``, ``<OUTPUT1>``)
that double as parse anchors for the model's replies. Every parser is total:
a reply either yields a record or a typed rejection; nothing aborts a run.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .backend import Backend, GenRequest
from .errors import SchemaError, SynthesisRejection
from .records import (CodeCandidate, Decoding, ProblemSpec, TestCandidate,
                      TestInput, canonical_hash, normalize_text)
from .shim import LiteralOps

log = logging.getLogger(__name__)

STAGES = ("problem", "signature", "test_input", "test_output", "solution")

STAGE_PLACEHOLDERS: dict[str, tuple[str, ...]] = {
    "problem": ("snippet", "template"),
    "signature": ("problem",),
    "test_input": ("problem", "signature"),
    "test_output": ("problem", "signature", "input"),
    "solution": ("problem", "signature"),
}

STAGE_STOPS: dict[str, tuple[str, ...]] = {
    "problem": (),
    "signature": ("</Signature2>", "<Problem3>"),
    "test_input": ("</INPUTS2>", "<Q3>"),
    "test_output": ("</OUTPUT4>", "<Q5>"),
    "solution": ("</SOLUTION4>", "<Q5>"),
}

_TAG_LINE = re.compile(r"^\s*</?[A-Za-z]+\d*>\s*$")
_TAG = re.compile(r"</?[A-Za-z]+\d*>")
_SIGNATURE_SHAPE = re.compile(r"^([A-Za-z_]\w*)\s*\((.*)\)\s*(->\s*\S.*)?$")
_ASSERT_LINE = re.compile(r"^\s*assert\s+(.+?)\s*==\s*(.+?)\s*$")
_FENCE = re.compile(r"```(?:[A-Za-z0-9_+-]*\n)?(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    stage: str

    def __post_init__(self):
        if self.stage not in STAGE_PLACEHOLDERS:
            raise SchemaError(f"unknown template stage {self.stage!r}")
        for name in STAGE_PLACEHOLDERS[self.stage]:
            if "{" + name + "}" not in self.body:
                raise SchemaError(f"template {self.template_id} lacks placeholder {{{name}}}")

    def render(self, **values: str) -> str:
        # Straight replacement, not str.format: template bodies and values
        # routinely contain literal braces (regexes, dict displays).
        text = self.body
        for name in STAGE_PLACEHOLDERS[self.stage]:
            if name not in values:
                raise ValueError(f"missing value for placeholder {{{name}}}")
            text = text.replace("{" + name + "}", values[name])
        return text


class PromptLibrary:
    """Loads the five stage templates from a directory or packaged assets."""

    def __init__(self, templates: Mapping[str, PromptTemplate]):
        missing = [s for s in STAGES if s not in templates]
        if missing:
            raise SchemaError(f"missing templates for stages: {missing}")
        self._templates = dict(templates)

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptLibrary":
        templates = {}
        for stage in STAGES:
            if directory is not None:
                body = Path(directory, f"{stage}.txt").read_text(encoding="utf-8")
            else:
                body = (resources.files("codeloop") / "templates" / f"{stage}.txt"
                        ).read_text(encoding="utf-8")
            templates[stage] = PromptTemplate(template_id=f"{stage}.txt",
                                              body=body, stage=stage)
        return cls(templates)

    def template(self, stage: str) -> PromptTemplate:
        return self._templates[stage]

    def render(self, stage: str, **values: str) -> str:
        return self._templates[stage].render(**values)

    def problem_prompt(self, snippet: str, template: str) -> str:
        return self.render("problem", snippet=snippet, template=template)

    def signature_prompt(self, problem: ProblemSpec) -> str:
        return self.render("signature", problem=problem.description)

    def solution_prompt(self, problem: ProblemSpec) -> str:
        return self.render("solution", problem=problem.description,
                           signature=problem.signature)

    def test_input_prompt(self, problem: ProblemSpec) -> str:
        return self.render("test_input", problem=problem.description,
                           signature=problem.signature)

    def test_output_prompt(self, problem: ProblemSpec, call_expression: str) -> str:
        return self.render("test_output", problem=problem.description,
                           signature=problem.signature, input=call_expression)


def request_for(stage: str, prompt: str, *, temperature: float, top_p: float,
                max_tokens: int, n_samples: int = 1) -> GenRequest:
    """The one place that builds stage requests, so fingerprints are stable."""
    return GenRequest(prompt=prompt, temperature=temperature, top_p=top_p,
                      max_tokens=max_tokens, n_samples=n_samples,
                      stop_sequences=STAGE_STOPS[stage])


def decoding_of(request: GenRequest) -> Decoding:
    return Decoding(temperature=request.temperature, top_p=request.top_p,
                    greedy=request.greedy)


# --- reply parsers -----------------------------------------------------------

def strip_tags(text: str) -> str:
    lines = [line for line in text.splitlines() if not _TAG_LINE.match(line)]
    return "\n".join(lines)


def parse_problem_reply(reply: str) -> str:
    text = reply.strip()
    if not text:
        raise SynthesisRejection("empty problem reply")
    if "```" in text:
        raise SynthesisRejection("problem reply contains a fenced code block")
    if "code snippet" in text.lower():
        raise SynthesisRejection("problem reply mentions the code snippet")
    return text


def parse_signature_reply(reply: str) -> str:
    cleaned = _TAG.sub("", reply)
    for line in cleaned.splitlines():
        line = line.strip()
        if not line:
            continue
        if _SIGNATURE_SHAPE.match(line):
            return line
        raise SynthesisRejection(f"unparseable signature reply: {line!r}")
    raise SynthesisRejection("empty signature reply")


def parse_solution_reply(reply: str) -> str:
    match = _FENCE.search(reply)
    if match:
        return match.group(1).strip("\n")
    return strip_tags(reply).strip("\n")


def _section(reply: str, open_tag: str) -> str:
    """Text after the last <TAGn> marker, up to its closing tag if present."""
    opens = list(re.finditer(rf"<{open_tag}\d*>", reply))
    if not opens:
        return reply
    tail = reply[opens[-1].end():]
    close = re.search(rf"</{open_tag}\d*>", tail)
    return tail[:close.start()] if close else tail


def parse_input_reply(reply: str, function_name: str) -> list[TestInput]:
    section = _section(reply, "INPUTS")
    inputs: list[TestInput] = []
    seen: set[str] = set()
    for line in section.splitlines():
        line = line.strip()
        if not line.startswith(function_name + "("):
            continue
        call, _, comment = line.partition("#")
        call = call.strip()
        if not call or call in seen:
            continue
        seen.add(call)
        comment = comment.lower()
        if any(word in comment for word in ("corner", "empty", "edge")):
            label = "corner"
        elif "difficult" in comment:
            label = "difficult"
        else:
            label = "general"
        inputs.append(TestInput(call_expression=call, case_label=label))
    if not inputs:
        raise SynthesisRejection("no parseable test inputs in reply")
    return inputs


def parse_output_reply(reply: str) -> tuple[str, str, str]:
    """Extract (rationale, call_expression, expected_literal) from one sample."""
    assert_match = None
    assert_line_index = -1
    lines = reply.splitlines()
    for index, line in enumerate(lines):
        match = _ASSERT_LINE.match(line)
        if match:
            assert_match = match
            assert_line_index = index
    if assert_match is None:
        raise SynthesisRejection("no assert line in output reply")
    analysis = _section("\n".join(lines[:assert_line_index]), "ANALYSIS")
    rationale = strip_tags(analysis).strip()
    return rationale, assert_match.group(1), assert_match.group(2)


# --- generation operations ---------------------------------------------------

@dataclass(frozen=True)
class CorpusRecord:
    """A snippet or description-template row from the user-provided corpora."""

    record_id: str
    text: str

    def to_dict(self) -> dict[str, Any]:
        return {"record_id": self.record_id, "text": self.text}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CorpusRecord":
        if "record_id" not in data or "text" not in data:
            raise SchemaError("corpus record needs 'record_id' and 'text'")
        return cls(record_id=str(data["record_id"]), text=str(data["text"]))


def gen_problem(backend: Backend, prompts: PromptLibrary, snippet: CorpusRecord,
                template: CorpusRecord, request: GenRequest) -> ProblemSpec:
    """Generate a problem description; the signature is filled in later."""
    reply = backend.complete(request).samples[0]
    description = parse_problem_reply(reply)
    return ProblemSpec.create(description, snippet_id=snippet.record_id,
                              template_id=template.record_id)


def gen_signature(backend: Backend, prompts: PromptLibrary,
                  problem: ProblemSpec, request: GenRequest) -> ProblemSpec:
    reply = backend.complete(request).samples[0]
    signature = parse_signature_reply(reply)
    return problem.with_signature(signature)


def dedup(problems: list[ProblemSpec]) -> list[ProblemSpec]:
    """Keep the first problem per normalized-description hash; order preserved."""
    seen: set[str] = set()
    unique: list[ProblemSpec] = []
    for problem in problems:
        key = canonical_hash({"description": normalize_text(problem.description)})
        if key in seen:
            continue
        seen.add(key)
        unique.append(problem)
    return unique


def gen_solutions(backend: Backend, prompts: PromptLibrary, problem: ProblemSpec,
                  request: GenRequest) -> list[CodeCandidate]:
    """Sample candidate solutions; unparseable code is kept, not judged here.

    A candidate that fails to compile or defines the wrong function still
    ships downstream: the sandbox classifies it as setup_error on execution.
    """
    response = backend.complete(request)
    decoding = decoding_of(request)
    candidates = []
    for index, reply in enumerate(response.samples):
        source = parse_solution_reply(reply)
        if not source.strip():
            log.info("problem %s sample %d: empty solution reply, skipped",
                     problem.problem_id, index)
            continue
        if f"def {problem.function_name}" not in source:
            log.info("problem %s sample %d: reply does not define %s",
                     problem.problem_id, index, problem.function_name)
        candidates.append(CodeCandidate(problem_id=problem.problem_id,
                                        source=source, sample_index=index,
                                        decoding=decoding))
    return candidates


def gen_test_inputs(backend: Backend, prompts: PromptLibrary,
                    problem: ProblemSpec, request: GenRequest) -> list[TestInput]:
    reply = backend.complete(request).samples[0]
    return parse_input_reply(reply, problem.function_name)


def gen_test_outputs(backend: Backend, prompts: PromptLibrary, problem: ProblemSpec,
                     test_input: TestInput, request: GenRequest,
                     literals: LiteralOps) -> list[TestCandidate]:
    """Sample expected outputs with chain-of-thought; keep parseable literals.

    Samples without an assert line, with a mismatched call, or with a
    non-literal right-hand side are dropped; dropping shrinks the voting pool
    but never aborts the stage.
    """
    response = backend.complete(request)
    candidates = []
    for index, reply in enumerate(response.samples):
        try:
            rationale, call, literal = parse_output_reply(reply)
        except SynthesisRejection as exc:
            log.info("problem %s input %r sample %d: %s", problem.problem_id,
                     test_input.call_expression, index, exc)
            continue
        if call != test_input.call_expression:
            log.info("problem %s sample %d: assert call %r differs from input %r",
                     problem.problem_id, index, call, test_input.call_expression)
        if not literals.is_literal(literal):
            log.info("problem %s input %r sample %d: %r is not a literal",
                     problem.problem_id, test_input.call_expression, index, literal)
            continue
        candidates.append(TestCandidate(input=test_input, expected_literal=literal,
                                        rationale=rationale, sample_index=index))
    return candidates
