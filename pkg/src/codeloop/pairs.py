"""Cross-validation labeling: anchors, SFT examples, and preference pairs.

A problem contributes training data only when some candidate solution is
certified against the generated suite (the anchor). Solver preference pairs
oppose the anchor to a lower-scoring candidate chosen by policy; verifier
pairs oppose the voted expected output of a case to a dissenting sampled
output, reusing the chain-of-thought rationales from the voting pool.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .records import (CodeCandidate, DpoExample, ProblemSpec, ScoreReport,
                      SftExample, TestCandidate, TestSuite)
from .shim import LiteralOps
from .synthesis import PromptLibrary

log = logging.getLogger(__name__)

EPSILON_POLICIES = ("strict", "gt0", "gt0_5", "gt0_75")
REJECT_PICKS = ("random", "lowest", "median")

_EPSILON_THRESHOLDS = {"gt0": 0.0, "gt0_5": 0.5, "gt0_75": 0.75}

_ASSERT_LINE = re.compile(r"^\s*assert\s+(.+?)\s*==\s*(.+?)\s*$")


@dataclass(frozen=True)
class PairPolicy:
    epsilon: str = "strict"
    reject_pick: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.epsilon not in EPSILON_POLICIES:
            raise ValueError(f"unknown epsilon policy {self.epsilon!r}")
        if self.reject_pick not in REJECT_PICKS:
            raise ValueError(f"unknown reject_pick policy {self.reject_pick!r}")

    def admits(self, score: float) -> bool:
        if self.epsilon == "strict":
            return score == 1.0
        return score > _EPSILON_THRESHOLDS[self.epsilon]

    def describe(self) -> str:
        return f"epsilon={self.epsilon};reject={self.reject_pick};seed={self.seed}"


def find_anchor(reports: Sequence[ScoreReport],
                candidates_by_ref: Mapping[str, CodeCandidate],
                policy: PairPolicy) -> ScoreReport | None:
    """Highest-scoring candidate, if its score satisfies the policy threshold.

    Score ties resolve to the lowest sample_index. Returns None when no
    candidate qualifies; the problem then contributes no chosen data this
    iteration.
    """
    if not reports:
        return None
    best = max(reports, key=lambda r: (r.score,
                                       -candidates_by_ref[r.candidate_ref].sample_index))
    return best if policy.admits(best.score) else None


def solver_pairs(problem: ProblemSpec, anchor: ScoreReport,
                 reports: Sequence[ScoreReport],
                 candidates_by_ref: Mapping[str, CodeCandidate],
                 policy: PairPolicy, prompts: PromptLibrary,
                 iteration: int) -> list[DpoExample]:
    """At most one preference pair: anchor source vs a policy-picked failure.

    The rejected pool is every candidate scoring strictly below the anchor.
    random draws uniformly from a generator seeded per problem; lowest takes
    the minimal score; median takes the middle of the below-anchor scores.
    """
    pool = [r for r in reports if r.score < anchor.score]
    if not pool:
        log.info("problem %s: no candidate scores below the anchor, no solver pair",
                 problem.problem_id)
        return []
    pool.sort(key=lambda r: (r.score, candidates_by_ref[r.candidate_ref].sample_index))
    if policy.reject_pick == "lowest":
        picked = pool[0]
    elif policy.reject_pick == "median":
        picked = pool[len(pool) // 2]
    else:
        rng = random.Random(f"{policy.seed}:{problem.problem_id}")
        picked = pool[rng.randrange(len(pool))]
    chosen = candidates_by_ref[anchor.candidate_ref].source
    rejected = candidates_by_ref[picked.candidate_ref].source
    if chosen == rejected:
        log.info("problem %s: rejected candidate has identical source, no solver pair",
                 problem.problem_id)
        return []
    return [DpoExample(
        role="solver",
        prompt=prompts.solution_prompt(problem),
        chosen=chosen,
        rejected=rejected,
        provenance={"problem_id": problem.problem_id, "iteration": iteration,
                    "policy": policy.describe()},
    )]


def render_output_block(rationale: str, assertion: str) -> str:
    """Per-case verifier target: analysis block then the assert line."""
    return (f"<ANALYSIS>\n{rationale}\n</ANALYSIS>\n"
            f"<OUTPUT>\n{assertion}\n</OUTPUT>")


def verifier_pairs(problem: ProblemSpec, suite: TestSuite,
                   pools: Mapping[str, Sequence[TestCandidate]],
                   literals: LiteralOps, prompts: PromptLibrary,
                   policy: PairPolicy, iteration: int,
                   max_pairs: int = 4) -> list[DpoExample]:
    """One pair per dissenting output value, capped by sample frequency.

    For every suite case with voted output y, each distinct sampled value
    y' != y yields (case with y) vs (case with y'), reusing each side's
    chain-of-thought rationale. The cap keeps the most frequent dissents.
    """
    proposals: list[tuple[int, int, int, DpoExample]] = []
    for case_index, case in enumerate(suite.cases):
        pool = pools.get(case.input.call_expression, ())
        dissent_groups: list[list[TestCandidate]] = []
        for candidate in sorted(pool, key=lambda c: c.sample_index):
            if literals.same_value(candidate.expected_literal, case.expected_literal):
                continue
            for group in dissent_groups:
                if literals.same_value(group[0].expected_literal,
                                       candidate.expected_literal):
                    group.append(candidate)
                    break
            else:
                dissent_groups.append([candidate])
        for group in dissent_groups:
            dissenter = group[0]
            rejected_assertion = (f"assert {case.input.call_expression} == "
                                  f"{dissenter.expected_literal}")
            example = DpoExample(
                role="verifier",
                prompt=prompts.test_output_prompt(problem, case.input.call_expression),
                chosen=render_output_block(case.rationale, case.assertion),
                rejected=render_output_block(dissenter.rationale, rejected_assertion),
                provenance={"problem_id": problem.problem_id, "iteration": iteration,
                            "policy": policy.describe()},
            )
            proposals.append((len(group), case_index, dissenter.sample_index, example))
    proposals.sort(key=lambda p: (-p[0], p[1], p[2]))
    return [example for _, _, _, example in proposals[:max_pairs]]


def sft_examples(anchored: Sequence[tuple[ProblemSpec, CodeCandidate, TestSuite]],
                 prompts: PromptLibrary, iteration: int) -> list[SftExample]:
    """Two records per anchor (solver then verifier), in problem order."""
    examples: list[SftExample] = []
    for problem, candidate, suite in anchored:
        provenance = {"problem_id": problem.problem_id, "iteration": iteration}
        examples.append(SftExample(role="solver",
                                   prompt=prompts.solution_prompt(problem),
                                   target=candidate.source,
                                   provenance=dict(provenance)))
        examples.append(SftExample(role="verifier",
                                   prompt=prompts.test_input_prompt(problem),
                                   target=suite.rendered(),
                                   provenance=dict(provenance)))
    return examples


def ensemble_filter(suites_a: Mapping[str, TestSuite],
                    suites_b: Mapping[str, TestSuite],
                    candidates: Mapping[str, Sequence[CodeCandidate]],
                    score_fn: Callable[[CodeCandidate, TestSuite], ScoreReport],
                    ) -> dict[str, list[CodeCandidate]]:
    """Keep candidates that fully pass the suites of both iterations.

    Problems missing from either suite set are excluded (and logged); their
    candidates cannot be certified by the ensemble.
    """
    survivors: dict[str, list[CodeCandidate]] = {}
    for problem_id, pool in candidates.items():
        suite_a = suites_a.get(problem_id)
        suite_b = suites_b.get(problem_id)
        if suite_a is None or suite_b is None:
            log.info("problem %s missing from one suite set, excluded from ensemble",
                     problem_id)
            continue
        kept = [c for c in pool
                if score_fn(c, suite_a).score == 1.0
                and score_fn(c, suite_b).score == 1.0]
        survivors[problem_id] = kept
    return survivors


def extract_assertions(text: str) -> list[tuple[str, str]]:
    """(call_expression, expected_literal) for every assert line in a rendering."""
    pairs = []
    for line in text.splitlines():
        match = _ASSERT_LINE.match(line)
        if match:
            pairs.append((match.group(1), match.group(2)))
    return pairs


def differs_only_in_expected_output(chosen: str, rejected: str) -> bool:
    """Structural check for verifier pairs: same calls, >= 1 literal changed."""
    chosen_asserts = extract_assertions(chosen)
    rejected_asserts = extract_assertions(rejected)
    if len(chosen_asserts) != len(rejected_asserts) or not chosen_asserts:
        return False
    calls_match = all(a[0] == b[0] for a, b in zip(chosen_asserts, rejected_asserts))
    literals_differ = any(a[1] != b[1] for a, b in zip(chosen_asserts, rejected_asserts))
    return calls_match and literals_differ
