"""Turning sampled test candidates into a final suite.

Majority voting picks the modal expected output per input (value equality,
so "(4,5)" and "(4, 5)" agree). Output diversification then guards against
constant-output suites a solution could game, and greedy maximum coverage
orders the survivors by how many new source lines of the anchor solution
each test exercises.
"""

from __future__ import annotations

from typing import Any, Collection, Sequence

from .errors import AssemblyError
from .records import TestCase, TestCandidate, TestSuite
from .shim import LiteralOps

STRATEGY_DIVERSIFY = "diversify"
STRATEGY_COVERAGE = "coverage"


def _value_classes(literals_ops: LiteralOps, spellings: Sequence[str]) -> list[int]:
    """Assign each spelling a class id; same id means same value and type."""
    representatives: list[str] = []
    classes: list[int] = []
    for text in spellings:
        for class_id, rep in enumerate(representatives):
            if literals_ops.same_value(rep, text):
                classes.append(class_id)
                break
        else:
            classes.append(len(representatives))
            representatives.append(text)
    return classes


def majority_vote(candidates: Sequence[TestCandidate], literals: LiteralOps) -> TestCase:
    """Select the most common expected output among samples for one input.

    Groups compare by evaluated value (and top-level type), so spelling
    variants of one value vote together. Ties go to the group whose earliest
    member has the lowest sample_index; the winning spelling and rationale
    are the first-sampled ones of that group.
    """
    if not candidates:
        raise ValueError("majority_vote needs at least one candidate")
    ordered = sorted(candidates, key=lambda c: c.sample_index)
    classes = _value_classes(literals, [c.expected_literal for c in ordered])
    groups: dict[int, list[TestCandidate]] = {}
    for class_id, candidate in zip(classes, ordered):
        groups.setdefault(class_id, []).append(candidate)
    modal = max(groups.values(), key=lambda g: (len(g), -g[0].sample_index))
    winner = modal[0]
    return TestCase(
        input=winner.input,
        expected_literal=winner.expected_literal,
        vote_margin=len(modal) / len(ordered),
        rationale=winner.rationale,
    )


def select_coverage(pool: Sequence[TestCase], covers: Sequence[Collection[int]],
                    k: int) -> list[TestCase]:
    """Greedy maximum coverage over the anchor candidate's executed lines.

    Repeatedly picks the test adding the most uncovered lines; ties break by
    larger vote_margin, then lower pool position. When no remaining test adds
    coverage, remaining slots fill by vote_margin.
    """
    if not pool:
        raise ValueError("select_coverage needs a non-empty pool")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(covers) != len(pool):
        raise ValueError("covers must align with pool")
    cover_sets = [frozenset(c) for c in covers]
    remaining = list(range(len(pool)))
    chosen: list[int] = []
    covered: set[int] = set()
    while remaining and len(chosen) < k:
        best = max(remaining,
                   key=lambda i: (len(cover_sets[i] - covered),
                                  pool[i].vote_margin, -i))
        if not (cover_sets[best] - covered):
            break
        chosen.append(best)
        covered |= cover_sets[best]
        remaining.remove(best)
    if len(chosen) < k:
        filler = sorted(remaining, key=lambda i: (-pool[i].vote_margin, i))
        chosen.extend(filler[: k - len(chosen)])
    return [pool[i] for i in chosen]


def diversify_outputs(pool: Sequence[TestCase], k: int,
                      literals: LiteralOps) -> list[TestCase]:
    """Greedy selection maximizing distinct expected-output value classes.

    Whenever the pool holds two or more value classes and k >= 2, the result
    holds at least two. Among tests adding no new class, higher vote_margin
    wins, then lower pool position.
    """
    if not pool:
        raise ValueError("diversify_outputs needs a non-empty pool")
    if k < 1:
        raise ValueError("k must be >= 1")
    classes = _value_classes(literals, [case.expected_literal for case in pool])
    remaining = list(range(len(pool)))
    chosen: list[int] = []
    seen_classes: set[int] = set()
    while remaining and len(chosen) < k:
        fresh = [i for i in remaining if classes[i] not in seen_classes]
        pick_from = fresh if fresh else remaining
        best = max(pick_from, key=lambda i: (pool[i].vote_margin, -i))
        chosen.append(best)
        seen_classes.add(classes[best])
        remaining.remove(best)
    return [pool[i] for i in chosen]


def distinct_output_classes(pool: Sequence[TestCase], literals: LiteralOps) -> int:
    if not pool:
        return 0
    return len(set(_value_classes(literals, [c.expected_literal for c in pool])))


def assemble_suite(problem_id: str, voted: Sequence[TestCase],
                   covers: Sequence[Collection[int]] | None, k: int,
                   strategies: Collection[str], literals: LiteralOps) -> TestSuite:
    """Compose the final suite: diversify first, then order by coverage.

    Diversification fixes the selected set (it is the hard guard against
    degenerate constant-output suites); coverage then greedily orders that
    set, or does the selection alone when diversification is off. With both
    strategies off, the top-k by vote_margin survive.
    """
    if not voted:
        raise AssemblyError(f"problem {problem_id}: no voted cases to assemble")
    pool: list[TestCase] = []
    pool_covers: list[frozenset[int]] = []
    seen: set[tuple[str, str]] = set()
    for index, case in enumerate(voted):
        key = (case.input.call_expression, case.expected_literal)
        if key in seen:
            continue
        seen.add(key)
        pool.append(case)
        pool_covers.append(frozenset(covers[index]) if covers is not None else frozenset())
    if not pool:
        raise AssemblyError(f"problem {problem_id}: every case eliminated")

    trace: dict[str, Any] = {
        "strategies": sorted(strategies),
        "pool_size": len(pool),
    }
    cover_by_index = dict(enumerate(pool_covers))
    index_of = {id(case): index for index, case in enumerate(pool)}

    diversify_on = STRATEGY_DIVERSIFY in strategies
    coverage_on = STRATEGY_COVERAGE in strategies and covers is not None
    selected = pool
    if diversify_on:
        selected = diversify_outputs(selected, k, literals)
    if coverage_on:
        selected_covers = [cover_by_index[index_of[id(c)]] for c in selected]
        selected = select_coverage(selected, selected_covers, k)
    if not diversify_on and not coverage_on:
        ranked = sorted(range(len(pool)), key=lambda i: (-pool[i].vote_margin, i))
        selected = [pool[i] for i in ranked]
    selected = selected[:k]

    class_count = distinct_output_classes(selected, literals)
    trace["distinct_output_classes"] = class_count
    trace["non_diverse"] = class_count < 2
    if covers is not None:
        chosen_cover: set[int] = set()
        for case in selected:
            chosen_cover |= cover_by_index[index_of[id(case)]]
        trace["covered_lines"] = len(chosen_cover)
    return TestSuite(problem_id=problem_id, cases=tuple(selected),
                     selection_trace=trace)
