"""Iteration driver: synthesis -> execution -> selection -> pair building.

Each iteration owns a directory of stage files (JSONL, written atomically).
A stage whose output file already exists is loaded instead of recomputed, so
an interrupted run resumes without re-executing earlier stages; per-test
execution results are additionally cached on disk across stages and resumes.

Problem descriptions are generated once, in iteration 1, and reused by every
later iteration; model retraining between iterations happens out of process
(set pause_for_training and rerun with a new backend descriptor).
"""

from __future__ import annotations

import datetime
import json
import logging
import os
from pathlib import Path
from typing import Any, Mapping, Sequence

from .backend import Backend, HttpBackend, MockBackend, run_bounded
from .config import RunConfig
from .errors import AssemblyError, CodeloopError, ConfigError, SynthesisRejection
from .jsonl import read_jsonl, write_jsonl
from .pairs import (PairPolicy, ensemble_filter, find_anchor, sft_examples,
                    solver_pairs, verifier_pairs)
from .records import (CodeCandidate, DpoExample, ProblemSpec, ScoreReport,
                      SftExample, TestCandidate, TestSuite, canonical_hash)
from .sandbox import ExecutionCache, Limits, Sandbox
from .selection import assemble_suite, majority_vote
from .shim import LiteralOps, ShimClient, SubprocessShim
from .synthesis import (CorpusRecord, PromptLibrary, dedup, gen_problem,
                        gen_signature, gen_solutions, gen_test_inputs,
                        gen_test_outputs, request_for)

log = logging.getLogger(__name__)

STAGE_FILES = ("problems.jsonl", "solutions.jsonl", "test_candidates.jsonl",
               "suites.jsonl", "scores.jsonl", "sft.jsonl", "dpo.jsonl")


class RunPaths:
    def __init__(self, run_dir: str | Path):
        self.root = Path(run_dir)
        self.cache_file = self.root / "cache" / "exec_cache.jsonl"
        self.lock_file = self.root / ".lock"

    def iter_dir(self, iteration: int) -> Path:
        return self.root / f"iter_{iteration}"

    def stage(self, iteration: int, name: str) -> Path:
        return self.iter_dir(iteration) / name

    def problems_file(self) -> Path:
        return self.stage(1, "problems.jsonl")


def make_backend(cfg: RunConfig) -> Backend:
    if cfg.backend.kind == "mock":
        if cfg.backend.script:
            return MockBackend.from_file(cfg.backend.script)
        return MockBackend(fallback=cfg.backend.fallback)
    base_url = cfg.resolved_base_url()
    if not base_url:
        raise ConfigError("http backend needs backend.base_url or the base URL env var")
    return HttpBackend(base_url=base_url, model=cfg.backend.model,
                       api_key=cfg.api_key(), max_attempts=cfg.backend.max_attempts)


def make_shim(cfg: RunConfig) -> ShimClient:
    return SubprocessShim(cfg.shim_command)


def _decoding_kwargs(cfg: RunConfig, stage: str) -> dict[str, Any]:
    d = cfg.decoding[stage]
    return {"temperature": d.temperature, "top_p": d.top_p, "max_tokens": d.max_tokens}


def _with_retries(operation, retries: int, label: str):
    for attempt in range(retries + 1):
        try:
            return operation()
        except SynthesisRejection as exc:
            log.info("%s rejected (attempt %d): %s", label, attempt + 1, exc)
    return None


# --- stage computations ------------------------------------------------------

def generate_problems(cfg: RunConfig, backend: Backend,
                      prompts: PromptLibrary) -> list[ProblemSpec]:
    """Descriptions from (snippet, template) pairs, dedup, then signatures.

    Pairs cycle round-robin through both corpora. Generation is sequential so
    that scripted-mock call ordinals are reproducible even when two pairs
    coincide.
    """
    snippets = read_jsonl(cfg.snippet_corpus, CorpusRecord)
    templates = read_jsonl(cfg.template_corpus, CorpusRecord)
    if not snippets or not templates:
        raise ConfigError("snippet and template corpora must be non-empty")

    drafts: list[ProblemSpec] = []
    for index in range(cfg.problem_count):
        snippet = snippets[index % len(snippets)]
        template = templates[index % len(templates)]
        prompt = prompts.problem_prompt(snippet.text, template.text)
        request = request_for("problem", prompt, **_decoding_kwargs(cfg, "problem"))
        draft = _with_retries(
            lambda: gen_problem(backend, prompts, snippet, template, request),
            cfg.synthesis_retries, f"problem {index}")
        if draft is not None:
            drafts.append(draft)

    problems: list[ProblemSpec] = []
    for draft in dedup(drafts):
        request = request_for("signature", prompts.signature_prompt(draft),
                              **_decoding_kwargs(cfg, "signature"))
        complete = _with_retries(
            lambda: gen_signature(backend, prompts, draft, request),
            cfg.synthesis_retries, f"signature for {draft.problem_id}")
        if complete is not None:
            problems.append(complete)
    return problems


def generate_solutions(cfg: RunConfig, backend: Backend, prompts: PromptLibrary,
                       problems: Sequence[ProblemSpec]) -> list[CodeCandidate]:
    def for_problem(problem: ProblemSpec) -> list[CodeCandidate]:
        request = request_for("solution", prompts.solution_prompt(problem),
                              n_samples=cfg.samples.solutions,
                              **_decoding_kwargs(cfg, "solution"))
        return gen_solutions(backend, prompts, problem, request)

    batches = run_bounded(for_problem, list(problems), cfg.backend.max_concurrency)
    return [candidate for batch in batches for candidate in batch]


def generate_test_candidates(cfg: RunConfig, backend: Backend,
                             prompts: PromptLibrary, literals: LiteralOps,
                             problems: Sequence[ProblemSpec],
                             ) -> list[tuple[str, TestCandidate]]:
    """Flattened (problem_id, candidate) rows, input order preserved."""

    def for_problem(problem: ProblemSpec) -> list[tuple[str, TestCandidate]]:
        request = request_for("test_input", prompts.test_input_prompt(problem),
                              **_decoding_kwargs(cfg, "test_input"))
        try:
            inputs = gen_test_inputs(backend, prompts, problem, request)
        except SynthesisRejection as exc:
            log.info("problem %s: %s", problem.problem_id, exc)
            return []
        rows: list[tuple[str, TestCandidate]] = []
        for test_input in inputs[: cfg.samples.inputs_per_problem]:
            output_request = request_for(
                "test_output",
                prompts.test_output_prompt(problem, test_input.call_expression),
                n_samples=cfg.samples.outputs_per_input,
                **_decoding_kwargs(cfg, "test_output"))
            for candidate in gen_test_outputs(backend, prompts, problem,
                                              test_input, output_request, literals):
                rows.append((problem.problem_id, candidate))
        return rows

    batches = run_bounded(for_problem, list(problems), cfg.backend.max_concurrency)
    return [row for batch in batches for row in batch]


def pools_by_problem(rows: Sequence[tuple[str, TestCandidate]],
                     ) -> dict[str, dict[str, list[TestCandidate]]]:
    pools: dict[str, dict[str, list[TestCandidate]]] = {}
    for problem_id, candidate in rows:
        pools.setdefault(problem_id, {}).setdefault(
            candidate.input.call_expression, []).append(candidate)
    return pools


def build_suites(cfg: RunConfig, sandbox: Sandbox, literals: LiteralOps,
                 problems: Sequence[ProblemSpec],
                 candidates: Sequence[CodeCandidate],
                 rows: Sequence[tuple[str, TestCandidate]]) -> list[TestSuite]:
    """Vote per input, pick the consensus solution, measure coverage, assemble.

    The consensus solution is the candidate passing the most voted cases
    (ties to the lowest sample_index); its executed lines are the coverage
    universe for greedy selection.
    """
    pools = pools_by_problem(rows)
    by_problem: dict[str, list[CodeCandidate]] = {}
    for candidate in candidates:
        by_problem.setdefault(candidate.problem_id, []).append(candidate)

    suites: list[TestSuite] = []
    for problem in problems:
        problem_pools = pools.get(problem.problem_id)
        if not problem_pools:
            log.info("problem %s: no test candidates, excluded this iteration",
                     problem.problem_id)
            continue
        voted = [majority_vote(pool, literals)
                 for pool in problem_pools.values() if pool]
        if not voted:
            continue
        covers = None
        if "coverage" in cfg.strategies:
            covers = _anchor_coverage(problem.problem_id, voted,
                                      by_problem.get(problem.problem_id, []),
                                      sandbox)
        try:
            suites.append(assemble_suite(problem.problem_id, voted, covers,
                                         cfg.suite_size, set(cfg.strategies),
                                         literals))
        except AssemblyError as exc:
            log.info("%s", exc)
    return suites


def _anchor_coverage(problem_id: str, voted: Sequence, candidates: Sequence[CodeCandidate],
                     sandbox: Sandbox) -> list[frozenset[int]] | None:
    if not candidates:
        return None
    provisional = TestSuite(problem_id=problem_id, cases=tuple(voted),
                            selection_trace={"provisional": True})
    reports = sandbox.run_matrix(candidates, [provisional])
    refs = {canonical_hash(c): c for c in candidates}
    best = max(reports, key=lambda r: (r.score, -refs[r.candidate_ref].sample_index))
    return [frozenset(outcome.covered_lines) for outcome in best.per_case]


def score_candidates(cfg: RunConfig, sandbox: Sandbox,
                     candidates: Sequence[CodeCandidate],
                     suites: Sequence[TestSuite]) -> list[ScoreReport]:
    return sandbox.run_matrix(candidates, suites, workers=cfg.workers)


def build_pairs(cfg: RunConfig, prompts: PromptLibrary, literals: LiteralOps,
                problems: Sequence[ProblemSpec],
                candidates: Sequence[CodeCandidate],
                suites: Sequence[TestSuite],
                reports: Sequence[ScoreReport],
                rows: Sequence[tuple[str, TestCandidate]],
                iteration: int,
                survivors: Mapping[str, set[str]] | None = None,
                ) -> tuple[list[SftExample], list[DpoExample]]:
    """Anchors plus SFT/DPO datasets for one iteration.

    ``survivors`` (problem_id -> candidate_ref set) restricts anchor search
    to ensemble-certified candidates when building iteration-3 data.
    """
    policy = PairPolicy(epsilon=cfg.epsilon, reject_pick=cfg.reject_pick,
                        seed=cfg.seed)
    suites_by_problem = {suite.problem_id: suite for suite in suites}
    pools = pools_by_problem(rows)
    candidates_by_ref = {canonical_hash(c): c for c in candidates}
    reports_by_problem: dict[str, list[ScoreReport]] = {}
    for report in reports:
        reports_by_problem.setdefault(report.problem_id, []).append(report)

    anchored: list[tuple[ProblemSpec, CodeCandidate, TestSuite]] = []
    dpo: list[DpoExample] = []
    for problem in problems:
        suite = suites_by_problem.get(problem.problem_id)
        problem_reports = reports_by_problem.get(problem.problem_id, [])
        if suite is None or not problem_reports:
            continue
        eligible = problem_reports
        if survivors is not None:
            allowed = survivors.get(problem.problem_id, set())
            eligible = [r for r in problem_reports if r.candidate_ref in allowed]
            if not eligible:
                log.info("problem %s: no ensemble survivor, no anchor",
                         problem.problem_id)
                continue
        anchor = find_anchor(eligible, candidates_by_ref, policy)
        if anchor is None:
            continue
        anchored.append((problem, candidates_by_ref[anchor.candidate_ref], suite))
        dpo.extend(solver_pairs(problem, anchor, problem_reports,
                                candidates_by_ref, policy, prompts, iteration))
        dpo.extend(verifier_pairs(problem, suite,
                                  pools.get(problem.problem_id, {}), literals,
                                  prompts, policy, iteration,
                                  cfg.max_verifier_pairs_per_problem))
    sft = sft_examples(anchored, prompts, iteration)
    return sft, dpo


# --- the driver --------------------------------------------------------------

def _load_or_write(path: Path, compute, record_type=None, from_dict=None,
                   to_rows=None, from_rows=None):
    """Stage gate: load the file when it exists, else compute and persist."""
    if path.exists():
        records = read_jsonl(path, record_type, from_dict)
        return from_rows(records) if from_rows else records
    value = compute()
    write_jsonl(to_rows(value) if to_rows else value, path)
    return value


def _candidate_row(problem_id: str, candidate: TestCandidate) -> dict[str, Any]:
    row = {"problem_id": problem_id}
    row.update(candidate.to_dict())
    return row


def _row_to_candidate(data: Mapping[str, Any]) -> tuple[str, TestCandidate]:
    payload = {k: v for k, v in data.items() if k != "problem_id"}
    return str(data["problem_id"]), TestCandidate.from_dict(payload)


class IterationLock:
    """At most one driver per run directory."""

    def __init__(self, path: Path):
        self.path = path

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CodeloopError(
                f"run directory is locked by another driver ({self.path}); "
                f"remove the lock file if that run is dead") from None
        with os.fdopen(fd, "w") as handle:
            handle.write(str(os.getpid()))
        return self

    def __exit__(self, *exc_info):
        try:
            self.path.unlink()
        except OSError:
            pass


def iterate(cfg: RunConfig, backend: Backend | None = None,
            shim: ShimClient | None = None) -> dict[str, Any]:
    """Run iterations 1..N, resuming from whatever stage files already exist."""
    backend = backend if backend is not None else make_backend(cfg)
    shim = shim if shim is not None else make_shim(cfg)
    prompts = PromptLibrary.load(cfg.template_dir or None)
    literals = LiteralOps(shim)
    cache = ExecutionCache()
    paths = RunPaths(cfg.run_dir)
    if paths.cache_file.exists():
        cache.load(paths.cache_file)
    sandbox = Sandbox(shim, Limits(cfg.limits.time_ms, cfg.limits.memory_mb),
                      cache=cache, workers=cfg.workers)

    summary: dict[str, Any] = {"iterations": []}
    with IterationLock(paths.lock_file):
        for iteration in range(1, cfg.iteration_count + 1):
            info = _run_iteration(cfg, iteration, backend, shim, prompts,
                                  literals, sandbox, cache, paths)
            summary["iterations"].append(info)
            if cfg.pause_for_training and iteration < cfg.iteration_count:
                log.info("pausing after iteration %d for external training; "
                         "rerun to resume with the new backend", iteration)
                summary["paused_after"] = iteration
                break
    return summary


def _run_iteration(cfg: RunConfig, iteration: int, backend: Backend,
                   shim: ShimClient, prompts: PromptLibrary,
                   literals: LiteralOps, sandbox: Sandbox,
                   cache: ExecutionCache, paths: RunPaths) -> dict[str, Any]:
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    iter_dir = paths.iter_dir(iteration)
    iter_dir.mkdir(parents=True, exist_ok=True)

    problems = _load_or_write(
        paths.problems_file(),
        lambda: generate_problems(cfg, backend, prompts),
        record_type=ProblemSpec)

    solutions = _load_or_write(
        paths.stage(iteration, "solutions.jsonl"),
        lambda: generate_solutions(cfg, backend, prompts, problems),
        record_type=CodeCandidate)

    rows = _load_or_write(
        paths.stage(iteration, "test_candidates.jsonl"),
        lambda: generate_test_candidates(cfg, backend, prompts, literals, problems),
        from_dict=_row_to_candidate,
        to_rows=lambda value: [_candidate_row(pid, cand) for pid, cand in value])

    suites = _load_or_write(
        paths.stage(iteration, "suites.jsonl"),
        lambda: build_suites(cfg, sandbox, literals, problems, solutions, rows),
        record_type=TestSuite)
    cache.save(paths.cache_file)

    scores = _load_or_write(
        paths.stage(iteration, "scores.jsonl"),
        lambda: score_candidates(cfg, sandbox, solutions, suites),
        record_type=ScoreReport)
    cache.save(paths.cache_file)

    survivors = None
    if iteration == 3 and cfg.ensemble_for_iter3:
        survivors = _ensemble_survivors(paths, solutions, sandbox)

    sft_path = paths.stage(iteration, "sft.jsonl")
    dpo_path = paths.stage(iteration, "dpo.jsonl")
    if sft_path.exists() and dpo_path.exists():
        sft = read_jsonl(sft_path, SftExample)
        dpo = read_jsonl(dpo_path, DpoExample)
    else:
        sft, dpo = build_pairs(cfg, prompts, literals, problems, solutions,
                               suites, scores, rows, iteration, survivors)
        write_jsonl(sft, sft_path)
        write_jsonl(dpo, dpo_path)
    cache.save(paths.cache_file)

    counts = {
        "problems": len(problems),
        "solutions": len(solutions),
        "test_candidates": len(rows),
        "suites": len(suites),
        "scores": len(scores),
        "sft": len(sft),
        "dpo": len(dpo),
    }
    manifest = {
        "iteration": iteration,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "backend_id": getattr(backend, "backend_id", "unknown"),
        "shim": shim.describe() if hasattr(shim, "describe") else "injected",
        "counts": counts,
        "started_at": started,
        "finished_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(paths.stage(iteration, "manifest.json"), "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return {"iteration": iteration, "counts": counts}


def _ensemble_survivors(paths: RunPaths, solutions: Sequence[CodeCandidate],
                        sandbox: Sandbox) -> dict[str, set[str]]:
    """Candidate refs passing both iteration-1 and iteration-2 suites."""
    suites_a = {s.problem_id: s for s in read_jsonl(paths.stage(1, "suites.jsonl"),
                                                    TestSuite)}
    suites_b = {s.problem_id: s for s in read_jsonl(paths.stage(2, "suites.jsonl"),
                                                    TestSuite)}
    by_problem: dict[str, list[CodeCandidate]] = {}
    for candidate in solutions:
        by_problem.setdefault(candidate.problem_id, []).append(candidate)
    kept = ensemble_filter(suites_a, suites_b, by_problem, sandbox.score)
    return {problem_id: {canonical_hash(c) for c in pool}
            for problem_id, pool in kept.items()}
