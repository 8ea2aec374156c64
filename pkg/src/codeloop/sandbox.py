"""Sandboxed execution of candidate solutions against test assertions.

Each (candidate, test) execution happens in a fresh shim invocation. Results
are cached by (source hash, test hash, limits) so repeated pairings across
suites, iterations, and resumed runs never re-execute; the cache guarantees
insert-once semantics under concurrency, which also makes reports independent
of worker-pool size.
"""

from __future__ import annotations

import logging
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .errors import ShimProtocolError
from .jsonl import iter_jsonl, write_jsonl
from .records import (CodeCandidate, ExecutionOutcome, ScoreReport, TestCase,
                      TestSuite, canonical_hash)
from .shim import ShimClient

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Limits:
    time_ms: int = 5000
    memory_mb: int = 512

    def __post_init__(self):
        if self.time_ms <= 0 or self.memory_mb <= 0:
            raise ValueError("limits must be positive")


class ExecutionCache:
    """Insert-once concurrent cache of per-test outcomes, persistable as JSONL."""

    def __init__(self):
        self._lock = threading.Lock()
        self._futures: dict[tuple[str, str, int, int], Future] = {}

    @staticmethod
    def key_for(source: str, test_statement: str, limits: Limits) -> tuple[str, str, int, int]:
        return (canonical_hash({"source": source}),
                canonical_hash({"test": test_statement}),
                limits.time_ms, limits.memory_mb)

    def get_or_run(self, key: tuple[str, str, int, int],
                   thunk: Callable[[], ExecutionOutcome]) -> ExecutionOutcome:
        with self._lock:
            future = self._futures.get(key)
            if future is None:
                future = Future()
                self._futures[key] = future
                owner = True
            else:
                owner = False
        if owner:
            try:
                future.set_result(thunk())
            except BaseException as exc:
                with self._lock:
                    del self._futures[key]
                future.set_exception(exc)
        return future.result()

    def put(self, key: tuple[str, str, int, int], outcome: ExecutionOutcome) -> None:
        with self._lock:
            if key not in self._futures:
                future = Future()
                future.set_result(outcome)
                self._futures[key] = future

    def __len__(self) -> int:
        with self._lock:
            return len(self._futures)

    def save(self, path: str | Path) -> int:
        entries = []
        with self._lock:
            items = list(self._futures.items())
        for key, future in items:
            if future.done() and future.exception() is None:
                source_hash, test_hash, time_ms, memory_mb = key
                entries.append({
                    "source_hash": source_hash,
                    "test_hash": test_hash,
                    "time_ms": time_ms,
                    "memory_mb": memory_mb,
                    "outcome": future.result().to_dict(),
                })
        return write_jsonl(entries, path)

    def load(self, path: str | Path) -> int:
        count = 0
        for _, data in iter_jsonl(path):
            key = (data["source_hash"], data["test_hash"],
                   int(data["time_ms"]), int(data["memory_mb"]))
            self.put(key, ExecutionOutcome.from_dict(data["outcome"]))
            count += 1
        return count


_REPLY_FIELDS = ("status", "error_kind", "duration_ms", "covered_lines")


class Sandbox:
    def __init__(self, shim: ShimClient, limits: Limits = Limits(),
                 cache: ExecutionCache | None = None, workers: int = 1):
        self.shim = shim
        self.limits = limits
        self.cache = cache if cache is not None else ExecutionCache()
        self.workers = max(1, workers)

    def run_test(self, candidate: CodeCandidate, test: TestCase,
                 limits: Limits | None = None) -> ExecutionOutcome:
        """Execute one assertion against one candidate in a fresh interpreter."""
        return self._run_statement(candidate.source, test.assertion,
                                   limits or self.limits)

    def _run_statement(self, source: str, statement: str, limits: Limits) -> ExecutionOutcome:
        reply = self.shim.request({
            "mode": "run",
            "solution_source": source,
            "test_statement": statement,
            "time_limit_ms": limits.time_ms,
            "memory_limit_mb": limits.memory_mb,
        })
        for field_name in _REPLY_FIELDS:
            if field_name not in reply:
                raise ShimProtocolError(f"run reply missing {field_name!r}")
        covered = reply["covered_lines"]
        if not isinstance(covered, list) or not all(isinstance(x, int) for x in covered):
            raise ShimProtocolError("covered_lines must be a list of integers")
        line_count = source.count("\n") + 1
        if any(x < 1 or x > line_count for x in covered):
            raise ShimProtocolError("covered_lines outside the candidate source")
        try:
            return ExecutionOutcome(
                status=str(reply["status"]),
                error_kind="" if reply["status"] == "pass" else str(reply["error_kind"]),
                duration_ms=int(reply["duration_ms"]),
                covered_lines=tuple(sorted(set(covered))),
            )
        except Exception as exc:
            raise ShimProtocolError(f"invalid run reply: {exc}") from exc

    def _cached_run(self, source: str, statement: str, limits: Limits) -> ExecutionOutcome:
        key = ExecutionCache.key_for(source, statement, limits)
        return self.cache.get_or_run(
            key, lambda: self._run_statement(source, statement, limits))

    def score(self, candidate: CodeCandidate, suite: TestSuite,
              limits: Limits | None = None) -> ScoreReport:
        """Score = fraction of suite tests passed; label 1 iff all pass.

        A setup_error short-circuits the rest of the suite: the candidate
        cannot pass any later case, so they are recorded without execution.
        Short-circuited outcomes are synthesized (duration 0) and bypass the
        cache entirely, keeping reports independent of scheduling order.
        """
        if not suite.cases:
            raise ValueError("cannot score an empty suite")
        limits = limits or self.limits
        outcomes: list[ExecutionOutcome] = []
        failed_setup: ExecutionOutcome | None = None
        for case in suite.cases:
            if failed_setup is not None:
                outcome = ExecutionOutcome("setup_error", failed_setup.error_kind, 0, ())
            else:
                outcome = self._cached_run(candidate.source, case.assertion, limits)
                if outcome.status == "setup_error":
                    failed_setup = outcome
            outcomes.append(outcome)
        return ScoreReport.build(
            problem_id=suite.problem_id,
            candidate_ref=canonical_hash(candidate),
            suite_ref=canonical_hash(suite),
            per_case=outcomes,
        )

    def run_matrix(self, candidates: Sequence[CodeCandidate],
                   suites: Sequence[TestSuite],
                   limits: Limits | None = None,
                   workers: int | None = None) -> list[ScoreReport]:
        """Score every (candidate, suite) pairing sharing a problem_id.

        Report order follows (suite order, candidate order) and is identical
        for any worker count; the shared cache ensures each unique
        (source, test) pair executes at most once.
        """
        limits = limits or self.limits
        by_problem: dict[str, list[CodeCandidate]] = {}
        for candidate in candidates:
            by_problem.setdefault(candidate.problem_id, []).append(candidate)
        tasks = [(candidate, suite)
                 for suite in suites
                 for candidate in by_problem.get(suite.problem_id, [])]
        workers = workers or self.workers
        if workers <= 1 or len(tasks) <= 1:
            return [self.score(c, s, limits) for c, s in tasks]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(self.score, c, s, limits) for c, s in tasks]
            return [f.result() for f in futures]
