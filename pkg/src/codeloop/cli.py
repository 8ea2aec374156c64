"""Command-line front end.

Subcommands mirror the pipeline stages plus the evaluation surface. Every
command accepts --config and --seed. Exit codes: 0 success, 1 usage error,
2 infrastructure failure (backend, shim, filesystem).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import evaluation, pipeline
from .config import RunConfig, load_config
from .errors import (BackendError, CodeloopError, ConfigError, SchemaError,
                     ScriptError, ShimProtocolError)
from .jsonl import read_jsonl, write_jsonl
from .pairs import PairPolicy
from .records import CodeCandidate, ProblemSpec, ScoreReport, TestSuite
from .sandbox import ExecutionCache, Limits, Sandbox
from .shim import LiteralOps
from .synthesis import PromptLibrary

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFRA = 2


class UsageError(CodeloopError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="codeloop", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to a JSON run config")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("gen-problems", help="generate problem descriptions + signatures")
    common(p)
    p.add_argument("--snippets", help="snippet corpus JSONL")
    p.add_argument("--templates", help="description-template corpus JSONL")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-solutions", help="sample candidate solutions")
    common(p)
    p.add_argument("--problems", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-tests", help="generate test candidates and suites")
    common(p)
    p.add_argument("--problems", required=True)
    p.add_argument("--solutions", required=True)
    p.add_argument("--candidates-out", required=True)
    p.add_argument("--suites-out", required=True)

    p = sub.add_parser("execute", help="score solutions against suites")
    common(p)
    p.add_argument("--solutions", required=True)
    p.add_argument("--suites", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-pairs", help="emit SFT and DPO datasets")
    common(p)
    p.add_argument("--problems", required=True)
    p.add_argument("--solutions", required=True)
    p.add_argument("--suites", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--test-candidates", required=True)
    p.add_argument("--iteration", type=int, default=1)
    p.add_argument("--out-sft", required=True)
    p.add_argument("--out-dpo", required=True)

    p = sub.add_parser("evaluate", help="benchmark the backend as solver or verifier")
    common(p)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--task", choices=["code", "test"], required=True)
    p.add_argument("--with-cot", action="store_true")
    p.add_argument("--with-mv", action="store_true")
    p.add_argument("--out", help="write metrics.json here")

    p = sub.add_parser("agreement", help="verdict agreement of two suite sets on gold")
    common(p)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--suites-a", required=True)
    p.add_argument("--suites-b", required=True)
    p.add_argument("--out", help="write metrics.json here")

    p = sub.add_parser("iterate", help="run the full self-play loop")
    common(p)
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _require_files(*paths: str) -> None:
    missing = [p for p in paths if p and not Path(p).exists()]
    if missing:
        raise UsageError(f"missing input files: {', '.join(missing)}")


def _sandbox(cfg: RunConfig) -> tuple[Sandbox, LiteralOps]:
    shim = pipeline.make_shim(cfg)
    cache = ExecutionCache()
    sandbox = Sandbox(shim, Limits(cfg.limits.time_ms, cfg.limits.memory_mb),
                      cache=cache, workers=cfg.workers)
    return sandbox, LiteralOps(shim)


def _cmd_gen_problems(args) -> int:
    cfg = _load(args)
    if args.snippets:
        cfg.snippet_corpus = args.snippets
    if args.templates:
        cfg.template_corpus = args.templates
    _require_files(cfg.snippet_corpus, cfg.template_corpus)
    backend = pipeline.make_backend(cfg)
    prompts = PromptLibrary.load(cfg.template_dir or None)
    problems = pipeline.generate_problems(cfg, backend, prompts)
    count = write_jsonl(problems, args.out)
    print(f"wrote {count} problems to {args.out}")
    return EXIT_OK


def _cmd_gen_solutions(args) -> int:
    cfg = _load(args)
    _require_files(args.problems)
    backend = pipeline.make_backend(cfg)
    prompts = PromptLibrary.load(cfg.template_dir or None)
    problems = read_jsonl(args.problems, ProblemSpec)
    solutions = pipeline.generate_solutions(cfg, backend, prompts, problems)
    count = write_jsonl(solutions, args.out)
    print(f"wrote {count} solutions to {args.out}")
    return EXIT_OK


def _cmd_gen_tests(args) -> int:
    cfg = _load(args)
    _require_files(args.problems, args.solutions)
    backend = pipeline.make_backend(cfg)
    prompts = PromptLibrary.load(cfg.template_dir or None)
    sandbox, literals = _sandbox(cfg)
    problems = read_jsonl(args.problems, ProblemSpec)
    solutions = read_jsonl(args.solutions, CodeCandidate)
    rows = pipeline.generate_test_candidates(cfg, backend, prompts, literals, problems)
    write_jsonl([pipeline._candidate_row(pid, cand) for pid, cand in rows],
                args.candidates_out)
    suites = pipeline.build_suites(cfg, sandbox, literals, problems, solutions, rows)
    count = write_jsonl(suites, args.suites_out)
    print(f"wrote {len(rows)} test candidates and {count} suites")
    return EXIT_OK


def _cmd_execute(args) -> int:
    cfg = _load(args)
    _require_files(args.solutions, args.suites)
    sandbox, _ = _sandbox(cfg)
    solutions = read_jsonl(args.solutions, CodeCandidate)
    suites = read_jsonl(args.suites, TestSuite)
    reports = pipeline.score_candidates(cfg, sandbox, solutions, suites)
    count = write_jsonl(reports, args.out)
    print(f"wrote {count} score reports to {args.out}")
    return EXIT_OK


def _cmd_build_pairs(args) -> int:
    cfg = _load(args)
    _require_files(args.problems, args.solutions, args.suites, args.scores,
                   args.test_candidates)
    prompts = PromptLibrary.load(cfg.template_dir or None)
    _, literals = _sandbox(cfg)
    problems = read_jsonl(args.problems, ProblemSpec)
    solutions = read_jsonl(args.solutions, CodeCandidate)
    suites = read_jsonl(args.suites, TestSuite)
    scores = read_jsonl(args.scores, ScoreReport)
    rows = read_jsonl(args.test_candidates, from_dict=pipeline._row_to_candidate)
    sft, dpo = pipeline.build_pairs(cfg, prompts, literals, problems, solutions,
                                    suites, scores, rows, args.iteration)
    write_jsonl(sft, args.out_sft)
    write_jsonl(dpo, args.out_dpo)
    print(f"wrote {len(sft)} SFT examples and {len(dpo)} DPO pairs")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = _load(args)
    _require_files(args.benchmark)
    backend = pipeline.make_backend(cfg)
    prompts = PromptLibrary.load(cfg.template_dir or None)
    sandbox, literals = _sandbox(cfg)
    items = evaluation.load_benchmark(args.benchmark, sandbox)
    report = evaluation.MetricsReport()
    if args.task == "code":
        outputs = evaluation.greedy_solutions(items, backend, prompts)
        report.pass_pct = evaluation.pass_at_1(items, outputs, sandbox)
        report.case_pass_pct = evaluation.case_pass_rate(items, outputs, sandbox)
        print(f"pass@1 {report.pass_pct:.2f}  case rate {report.case_pass_pct:.2f}")
    else:
        predictions = evaluation.predict_test_outputs(
            items, backend, prompts, literals,
            with_cot=args.with_cot, with_mv=args.with_mv,
            n_votes=cfg.samples.outputs_per_input,
            temperature=cfg.decoding["test_output"].temperature,
            top_p=cfg.decoding["test_output"].top_p)
        report.acc_pct = evaluation.test_accuracy(items, predictions, literals)
        suites = evaluation.suites_from_predictions(items, predictions)
        report.pass_pct, report.case_pass_pct = evaluation.suite_pass_rates(
            items, suites, sandbox)
        print(f"acc {report.acc_pct:.2f}  suite pass {report.pass_pct:.2f}  "
              f"case rate {report.case_pass_pct:.2f}")
    if args.out:
        report.write(args.out)
    return EXIT_OK


def _cmd_agreement(args) -> int:
    cfg = _load(args)
    _require_files(args.benchmark, args.suites_a, args.suites_b)
    sandbox, _ = _sandbox(cfg)
    items = evaluation.load_benchmark(args.benchmark, sandbox)
    suites_a = {s.problem_id: s for s in read_jsonl(args.suites_a, TestSuite)}
    suites_b = {s.problem_id: s for s in read_jsonl(args.suites_b, TestSuite)}
    result = evaluation.agreement(suites_a, suites_b, items, sandbox)
    print(f"agreement {result['agreement_pct']:.2f}  "
          f"acc_a {result['acc_a_pct']:.2f}  acc_b {result['acc_b_pct']:.2f}")
    if args.out:
        report = evaluation.MetricsReport(agreement_pct=result["agreement_pct"])
        report.deltas = {}
        report.write(args.out)
    return EXIT_OK


def _cmd_iterate(args) -> int:
    cfg = _load(args)
    summary = pipeline.iterate(cfg)
    for info in summary["iterations"]:
        counts = " ".join(f"{k}={v}" for k, v in info["counts"].items())
        print(f"iteration {info['iteration']}: {counts}")
    return EXIT_OK


_COMMANDS = {
    "gen-problems": _cmd_gen_problems,
    "gen-solutions": _cmd_gen_solutions,
    "gen-tests": _cmd_gen_tests,
    "execute": _cmd_execute,
    "build-pairs": _cmd_build_pairs,
    "evaluate": _cmd_evaluate,
    "agreement": _cmd_agreement,
    "iterate": _cmd_iterate,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError, SchemaError, ScriptError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BackendError, ShimProtocolError, CodeloopError, OSError) as exc:
        print(f"infrastructure error: {exc}", file=sys.stderr)
        return EXIT_INFRA


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
