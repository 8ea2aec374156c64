"""codeloop: an execution-grounded self-play data engine for code and tests.

The pipeline generates coding problems, candidate solutions, and candidate
unit tests from a pluggable text-generation backend, executes every
solution/test pairing in a sandboxed interpreter shim, and turns the
execution verdicts into SFT and preference-pair training datasets plus
evaluation metrics. Gradient training itself happens in external trainers
consuming the emitted JSONL files.
"""

from .records import (CodeCandidate, Decoding, DpoExample, ExecutionOutcome,
                      ProblemSpec, ScoreReport, SftExample, TestCandidate,
                      TestCase, TestInput, TestSuite, canonical_hash)

__version__ = "0.1.0"

__all__ = [
    "CodeCandidate",
    "Decoding",
    "DpoExample",
    "ExecutionOutcome",
    "ProblemSpec",
    "ScoreReport",
    "SftExample",
    "TestCandidate",
    "TestCase",
    "TestInput",
    "TestSuite",
    "canonical_hash",
    "__version__",
]
