"""Benchmark metrics: pass@1, case pass rate, output accuracy, false positive
rate with negative mining, test-based reranking, inter-iteration agreement,
and baseline-relative change.

Benchmarks load from a neutral JSONL form (description, signature, gold
solution, gold assert statements). All percentages are reported to two
decimals.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .backend import Backend
from .errors import SchemaError, SynthesisRejection
from .jsonl import iter_jsonl
from .records import (CodeCandidate, Decoding, ProblemSpec, ScoreReport,
                      TestCandidate, TestCase, TestInput, TestSuite)
from .sandbox import Sandbox
from .selection import majority_vote
from .shim import LiteralOps
from .synthesis import (PromptLibrary, decoding_of, parse_output_reply,
                        parse_solution_reply, request_for)

log = logging.getLogger(__name__)

_GREEDY = Decoding(temperature=0.0, top_p=1.0, greedy=True)


def _gold_candidate(item: "BenchmarkItem") -> CodeCandidate:
    return CodeCandidate(problem_id=item.problem.problem_id,
                         source=item.gold_solution, sample_index=0,
                         decoding=_GREEDY)

_ASSERT_LINE = re.compile(r"^\s*assert\s+(.+?)\s*==\s*(.+?)\s*$")

NEGATIVE_SAMPLES = 20
NEGATIVE_TEMPERATURE = 0.6
NEGATIVE_TOP_P = 0.9


def _pct(value: float) -> float:
    return round(value * 100.0, 2)


@dataclass(frozen=True)
class BenchmarkItem:
    problem: ProblemSpec
    gold_solution: str
    gold_tests: tuple[TestCase, ...]

    @property
    def gold_suite(self) -> TestSuite:
        return TestSuite(problem_id=self.problem.problem_id,
                         cases=self.gold_tests,
                         selection_trace={"benchmark_gold": True})

    def to_dict(self) -> dict[str, Any]:
        return {
            "description": self.problem.description,
            "signature": self.problem.signature,
            "gold_solution": self.gold_solution,
            "gold_tests": [case.assertion for case in self.gold_tests],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BenchmarkItem":
        for key in ("description", "signature", "gold_solution", "gold_tests"):
            if key not in data:
                raise SchemaError(f"missing field {key!r}")
        problem = ProblemSpec.create(str(data["description"]), str(data["signature"]))
        cases = []
        for statement in data["gold_tests"]:
            match = _ASSERT_LINE.match(str(statement))
            if not match:
                raise SchemaError(f"field 'gold_tests' has unparseable assert: {statement!r}")
            cases.append(TestCase(input=TestInput(call_expression=match.group(1)),
                                  expected_literal=match.group(2),
                                  vote_margin=1.0, rationale=""))
        if not cases:
            raise SchemaError("field 'gold_tests' is empty")
        return cls(problem=problem, gold_solution=str(data["gold_solution"]),
                   gold_tests=tuple(cases))


def load_benchmark(path: str | Path, sandbox: Sandbox | None = None) -> list[BenchmarkItem]:
    """Load benchmark items; with a sandbox, verify gold solutions pass gold tests."""
    items = []
    for lineno, data in iter_jsonl(path):
        try:
            item = BenchmarkItem.from_dict(data)
        except SchemaError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        if sandbox is not None:
            report = sandbox.score(_gold_candidate(item), item.gold_suite)
            if report.score != 1.0:
                raise SchemaError(
                    f"{path}:{lineno}: gold solution scores {report.score:.2f} "
                    f"on its own gold tests")
        items.append(item)
    return items


def _score_on_gold(item: BenchmarkItem, candidate: CodeCandidate | None,
                   sandbox: Sandbox) -> ScoreReport | None:
    if candidate is None:
        return None
    return sandbox.score(candidate, item.gold_suite)


def pass_at_1(items: Sequence[BenchmarkItem],
              outputs: Mapping[str, CodeCandidate],
              sandbox: Sandbox) -> float:
    """Percentage of items whose greedy candidate passes every gold test."""
    if not items:
        raise ValueError("pass_at_1 over zero items is undefined")
    passed = 0
    for item in items:
        report = _score_on_gold(item, outputs.get(item.problem.problem_id), sandbox)
        if report is None:
            log.warning("item %s has no candidate, counted as fail",
                        item.problem.problem_id)
        elif report.label_y == 1:
            passed += 1
    return _pct(passed / len(items))


def case_pass_rate(items: Sequence[BenchmarkItem],
                   outputs: Mapping[str, CodeCandidate],
                   sandbox: Sandbox) -> float:
    """Mean over items of the fraction of gold cases passed."""
    if not items:
        raise ValueError("case_pass_rate over zero items is undefined")
    total = 0.0
    for item in items:
        report = _score_on_gold(item, outputs.get(item.problem.problem_id), sandbox)
        if report is None:
            log.warning("item %s has no candidate, counted as zero",
                        item.problem.problem_id)
        else:
            total += report.score
    return _pct(total / len(items))


def test_accuracy(items: Sequence[BenchmarkItem],
                  predictions: Mapping[str, Sequence[str | None]],
                  literals: LiteralOps) -> float:
    """Percentage of gold test inputs whose predicted literal matches gold.

    Predictions align positionally with each item's gold tests; a missing or
    unparseable prediction counts as incorrect.
    """
    total = 0
    correct = 0
    for item in items:
        predicted = predictions.get(item.problem.problem_id, ())
        for index, case in enumerate(item.gold_tests):
            total += 1
            literal = predicted[index] if index < len(predicted) else None
            if literal is None or not literals.is_literal(literal):
                continue
            if literals.same_value(literal, case.expected_literal):
                correct += 1
    if total == 0:
        raise ValueError("test_accuracy needs at least one gold test")
    return _pct(correct / total)


def mine_negatives(items: Sequence[BenchmarkItem], backend: Backend,
                   prompts: PromptLibrary, sandbox: Sandbox,
                   n_samples: int = NEGATIVE_SAMPLES,
                   max_tokens: int = 512) -> dict[str, list[CodeCandidate]]:
    """Sample solutions per item and keep those failing the gold tests.

    Items where every sample passes gold contribute no negatives and are
    excluded from the false-positive denominator.
    """
    negatives: dict[str, list[CodeCandidate]] = {}
    for item in items:
        request = request_for("solution", prompts.solution_prompt(item.problem),
                              temperature=NEGATIVE_TEMPERATURE,
                              top_p=NEGATIVE_TOP_P, max_tokens=max_tokens,
                              n_samples=n_samples)
        response = backend.complete(request)
        decoding = decoding_of(request)
        flawed = []
        for index, reply in enumerate(response.samples):
            source = parse_solution_reply(reply)
            if not source.strip():
                continue
            candidate = CodeCandidate(problem_id=item.problem.problem_id,
                                      source=source, sample_index=index,
                                      decoding=decoding)
            if sandbox.score(candidate, item.gold_suite).score < 1.0:
                flawed.append(candidate)
        if flawed:
            negatives[item.problem.problem_id] = flawed
        else:
            log.info("item %s: all %d samples pass gold, excluded from FP%%",
                     item.problem.problem_id, n_samples)
    return negatives


def false_positive_rate(suites: Mapping[str, TestSuite],
                        negatives: Mapping[str, Sequence[CodeCandidate]],
                        sandbox: Sandbox) -> float:
    """Percentage of known-flawed solutions that fully pass a generated suite."""
    total = 0
    fooled = 0
    for problem_id, pool in negatives.items():
        suite = suites.get(problem_id)
        if suite is None:
            log.warning("no generated suite for problem %s, negatives skipped",
                        problem_id)
            continue
        for candidate in pool:
            total += 1
            if sandbox.score(candidate, suite).score == 1.0:
                fooled += 1
    if total == 0:
        raise ValueError("false_positive_rate needs a non-empty negative corpus")
    return _pct(fooled / total)


def rerank_by_tests(candidates: Mapping[str, Sequence[CodeCandidate]],
                    suites: Mapping[str, TestSuite],
                    sandbox: Sandbox) -> dict[str, CodeCandidate]:
    """Per problem, the candidate scoring highest on the generated suite.

    Ties resolve to the lowest sample_index, so an all-zero scoreboard keeps
    the first sample.
    """
    selected: dict[str, CodeCandidate] = {}
    for problem_id, pool in candidates.items():
        if not pool:
            continue
        suite = suites.get(problem_id)
        if suite is None:
            selected[problem_id] = min(pool, key=lambda c: c.sample_index)
            continue
        scored = [(sandbox.score(c, suite).score, -c.sample_index, c) for c in pool]
        scored.sort(key=lambda t: (t[0], t[1]), reverse=True)
        selected[problem_id] = scored[0][2]
    return selected


def agreement(suites_a: Mapping[str, TestSuite], suites_b: Mapping[str, TestSuite],
              items: Sequence[BenchmarkItem], sandbox: Sandbox) -> dict[str, float]:
    """Do two suite sets give the same pass/fail verdict on gold solutions?

    The verdict is per-problem binary: the gold solution fully passes the
    suite or it does not. Accuracy of each side is the percentage of items
    whose verdict is a pass.
    """
    missing = [item.problem.problem_id for item in items
               if item.problem.problem_id not in suites_a
               or item.problem.problem_id not in suites_b]
    if missing:
        raise ValueError(f"suite sets do not cover problems: {missing}")
    if not items:
        raise ValueError("agreement over zero items is undefined")
    agree = 0
    pass_a = 0
    pass_b = 0
    for item in items:
        gold = _gold_candidate(item)
        verdict_a = sandbox.score(gold, suites_a[item.problem.problem_id]).label_y == 1
        verdict_b = sandbox.score(gold, suites_b[item.problem.problem_id]).label_y == 1
        agree += verdict_a == verdict_b
        pass_a += verdict_a
        pass_b += verdict_b
    n = len(items)
    return {
        "agreement_pct": _pct(agree / n),
        "acc_a_pct": _pct(pass_a / n),
        "acc_b_pct": _pct(pass_b / n),
    }


def relative_change(baseline: float, final: float, direction: str) -> float:
    """Baseline-relative percentage change, positive when it is an improvement."""
    if direction not in ("higher_better", "lower_better"):
        raise ValueError(f"unknown direction {direction!r}")
    if baseline == 0:
        raise ValueError("relative_change undefined for baseline 0")
    raw = (final - baseline) / baseline * 100.0
    return round(-raw if direction == "lower_better" else raw, 2)


# --- benchmark prediction flows ---------------------------------------------

def greedy_solutions(items: Sequence[BenchmarkItem], backend: Backend,
                     prompts: PromptLibrary,
                     max_tokens: int = 512) -> dict[str, CodeCandidate]:
    """One greedy-decoded candidate per item."""
    outputs: dict[str, CodeCandidate] = {}
    for item in items:
        request = request_for("solution", prompts.solution_prompt(item.problem),
                              temperature=0.0, top_p=1.0, max_tokens=max_tokens)
        reply = backend.complete(request).samples[0]
        source = parse_solution_reply(reply)
        if not source.strip():
            log.warning("item %s: empty greedy solution", item.problem.problem_id)
            continue
        outputs[item.problem.problem_id] = CodeCandidate(
            problem_id=item.problem.problem_id, source=source, sample_index=0,
            decoding=decoding_of(request))
    return outputs


def _strip_cot_blocks(body: str) -> str:
    """Derive the direct-output prompt from the chain-of-thought template."""
    without = re.sub(r"<ANALYSIS\d+>.*?</ANALYSIS\d+>\n?", "", body, flags=re.DOTALL)
    return without.replace("<ANALYSIS4>", "<OUTPUT4>")


def predict_test_outputs(items: Sequence[BenchmarkItem], backend: Backend,
                         prompts: PromptLibrary, literals: LiteralOps,
                         with_cot: bool = True, with_mv: bool = True,
                         n_votes: int = 5, temperature: float = 0.6,
                         top_p: float = 0.9, max_tokens: int = 512,
                         ) -> dict[str, list[str | None]]:
    """Predict an expected-output literal for every gold test input.

    with_cot prompts for reasoning before the assert; with_mv samples several
    completions and majority-votes the literal, otherwise a single greedy
    sample is used.
    """
    template = prompts.template("test_output")
    predictions: dict[str, list[str | None]] = {}
    for item in items:
        row: list[str | None] = []
        for case in item.gold_tests:
            prompt = template.render(problem=item.problem.description,
                                     signature=item.problem.signature,
                                     input=case.input.call_expression)
            if not with_cot:
                prompt = _strip_cot_blocks(prompt)
            if with_mv:
                request = request_for("test_output", prompt, temperature=temperature,
                                      top_p=top_p, max_tokens=max_tokens,
                                      n_samples=n_votes)
            else:
                request = request_for("test_output", prompt, temperature=0.0,
                                      top_p=1.0, max_tokens=max_tokens)
            response = backend.complete(request)
            pool = []
            for index, reply in enumerate(response.samples):
                try:
                    rationale, _, literal = parse_output_reply(reply)
                except SynthesisRejection:
                    continue
                if not literals.is_literal(literal):
                    continue
                pool.append(TestCandidate(input=case.input, expected_literal=literal,
                                          rationale=rationale, sample_index=index))
            row.append(majority_vote(pool, literals).expected_literal if pool else None)
        predictions[item.problem.problem_id] = row
    return predictions


def suites_from_predictions(items: Sequence[BenchmarkItem],
                            predictions: Mapping[str, Sequence[str | None]],
                            ) -> dict[str, TestSuite]:
    """Build per-item suites from predicted literals over the gold inputs.

    Inputs with no parseable prediction are omitted; an item with none is
    skipped entirely (it cannot produce a non-empty suite).
    """
    suites: dict[str, TestSuite] = {}
    for item in items:
        predicted = predictions.get(item.problem.problem_id, ())
        cases = []
        seen: set[tuple[str, str]] = set()
        for index, case in enumerate(item.gold_tests):
            literal = predicted[index] if index < len(predicted) else None
            if literal is None:
                continue
            key = (case.input.call_expression, literal)
            if key in seen:
                continue
            seen.add(key)
            cases.append(TestCase(input=case.input, expected_literal=literal,
                                  vote_margin=1.0, rationale=""))
        if cases:
            suites[item.problem.problem_id] = TestSuite(
                problem_id=item.problem.problem_id, cases=tuple(cases),
                selection_trace={"predicted": True})
    return suites


def suite_pass_rates(items: Sequence[BenchmarkItem],
                     suites: Mapping[str, TestSuite],
                     sandbox: Sandbox) -> tuple[float, float]:
    """(full-pass %, mean per-suite case pass %) of suites on gold solutions.

    Items with no generated suite count as zero on both metrics.
    """
    if not items:
        raise ValueError("suite_pass_rates over zero items is undefined")
    full = 0
    total = 0.0
    for item in items:
        suite = suites.get(item.problem.problem_id)
        if suite is None:
            continue
        report = sandbox.score(_gold_candidate(item), suite)
        full += report.label_y
        total += report.score
    return _pct(full / len(items)), _pct(total / len(items))


# --- report ------------------------------------------------------------------

@dataclass
class MetricsReport:
    pass_pct: float | None = None
    case_pass_pct: float | None = None
    acc_pct: float | None = None
    fp_pct: float | None = None
    agreement_pct: float | None = None
    deltas: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "pass_pct": self.pass_pct,
            "case_pass_pct": self.case_pass_pct,
            "acc_pct": self.acc_pct,
            "fp_pct": self.fp_pct,
            "agreement_pct": self.agreement_pct,
            "deltas": dict(self.deltas),
        }

    def write(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")


def render_metrics_table(rows: Mapping[str, Mapping[str, float | None]]) -> str:
    """Plain-text table: one row per metric, one column per run stage."""
    if not rows:
        return "(no metrics)"
    columns: list[str] = []
    for row in rows.values():
        for column in row:
            if column not in columns:
                columns.append(column)
    name_width = max(len(name) for name in rows) + 2
    col_width = max([len(c) for c in columns] + [8]) + 2
    lines = ["".ljust(name_width) + "".join(c.rjust(col_width) for c in columns)]
    for name, row in rows.items():
        cells = []
        for column in columns:
            value = row.get(column)
            cells.append(("-" if value is None else f"{value:.2f}").rjust(col_width))
        lines.append(name.ljust(name_width) + "".join(cells))
    return "\n".join(lines)
