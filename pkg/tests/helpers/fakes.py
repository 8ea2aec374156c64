"""Scripted stand-ins for the runner shim and the generation backend.

FakeShim honors the shim wire protocol (payload dict in, reply dict out) but
its run-mode verdicts are scripted: directives embedded in the candidate
source or test statement control the outcome, and anything undirected gets a
deterministic pseudo-random verdict derived from content hashes. Literal and
compile modes implement the real semantics, which are pure and cheap.

Directives (anywhere in the relevant text):
  source "#@ syntax_error"        -> compile fails / run reports setup_error
  source "#@ setup_error"         -> run reports setup_error
  source "#@ nodef"               -> compile reports defines_function False
  source "#@ passes-all"          -> every test passes
  source "#@ fails-all"           -> every test fails the assertion
  source "#@ passes: A | B"       -> tests containing A or B pass, others fail
  test   "#@ timeout"             -> run reports timeout
  test   "cov:1,2,5"              -> covered_lines for this test
"""

from __future__ import annotations

import ast
import hashlib
import re
import threading
from typing import Any

from codeloop.errors import ShimProtocolError

_COV = re.compile(r"cov:([0-9,]+)")
_PASSES = re.compile(r"#@ passes:([^\n]*)")


def _digest(*parts: str) -> int:
    joined = "\x00".join(parts)
    return int.from_bytes(hashlib.sha256(joined.encode("utf-8")).digest()[:8], "big")


def literal_value(text: str):
    return ast.literal_eval(text.strip())


def run_verdict(source: str, test_statement: str) -> dict[str, Any]:
    """The scripted run-mode reply for one (source, test) pairing."""
    line_count = source.count("\n") + 1

    def reply(status: str, error_kind: str, covered: list[int]) -> dict[str, Any]:
        return {"status": status, "error_kind": error_kind, "message": "",
                "duration_ms": 1, "covered_lines": covered}

    def coverage(default_seed: str) -> list[int]:
        match = _COV.search(test_statement)
        if match:
            return sorted({int(x) for x in match.group(1).split(",") if x})
        seed = _digest(default_seed, source, test_statement)
        return sorted({1 + (seed >> shift) % line_count for shift in (0, 8, 16)})

    if "#@ syntax_error" in source:
        return reply("setup_error", "SyntaxError", [])
    if "#@ setup_error" in source:
        return reply("setup_error", "NameError", [])
    if "#@ timeout" in test_statement:
        return reply("timeout", "Timeout", [])

    directive = _PASSES.search(source)
    if directive:
        markers = [m.strip() for m in directive.group(1).split("|") if m.strip()]
        if any(marker in test_statement for marker in markers):
            return reply("pass", "", coverage("directed"))
        return reply("assertion_fail", "AssertionError", coverage("directed"))
    if "#@ passes-all" in source:
        return reply("pass", "", coverage("directed"))
    if "#@ fails-all" in source:
        return reply("assertion_fail", "AssertionError", coverage("directed"))

    if _digest("setup", source) % 100 < 8:
        return reply("setup_error", "NameError", [])
    roll = _digest("verdict", source, test_statement) % 100
    if roll < 55:
        return reply("pass", "", coverage("random"))
    if roll < 85:
        return reply("assertion_fail", "AssertionError", coverage("random"))
    if roll < 95:
        return reply("runtime_error", "ValueError", coverage("random"))
    return reply("timeout", "Timeout", [])


def handle_payload(payload: dict[str, Any]) -> dict[str, Any]:
    mode = payload.get("mode")
    if mode == "run":
        return run_verdict(payload["solution_source"], payload["test_statement"])
    if mode == "compile":
        source = payload["solution_source"]
        ok = "#@ syntax_error" not in source
        defines = (ok and "#@ nodef" not in source
                   and f"def {payload['function_name']}" in source)
        return {"ok": ok, "defines_function": defines,
                "error_kind": "" if ok else "SyntaxError"}
    if mode == "literal_check":
        try:
            literal_value(payload["a"])
            return {"is_literal": True}
        except (ValueError, TypeError, SyntaxError, MemoryError, RecursionError):
            return {"is_literal": False}
    if mode == "literal_compare":
        try:
            a = literal_value(payload["a"])
            b = literal_value(payload["b"])
        except (ValueError, TypeError, SyntaxError) as exc:
            raise ShimProtocolError(f"literal_compare on non-literal: {exc}") from exc
        return {"equal": bool(a == b), "type_equal": type(a) is type(b)}
    raise ShimProtocolError(f"unknown payload mode {mode!r}")


class FakeShim:
    """In-process scripted shim honoring the wire protocol."""

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def describe(self) -> str:
        return "fake-shim"

    def request(self, payload: dict[str, Any]) -> dict[str, Any]:
        with self._lock:
            self.calls += 1
        return handle_payload(payload)


class CountingShim:
    """Wraps a shim and counts requests per mode."""

    def __init__(self, inner):
        self.inner = inner
        self.counts: dict[str, int] = {}
        self._lock = threading.Lock()

    def describe(self) -> str:
        return f"counting({self.inner.describe()})"

    def request(self, payload: dict[str, Any]) -> dict[str, Any]:
        with self._lock:
            self.counts[payload.get("mode", "?")] = \
                self.counts.get(payload.get("mode", "?"), 0) + 1
        return self.inner.request(payload)


class ProbeBackend:
    """Wraps a backend and records the maximum concurrent complete() calls."""

    def __init__(self, inner, hold_s: float = 0.01):
        self.inner = inner
        self.backend_id = f"probe({inner.backend_id})"
        self.hold_s = hold_s
        self.max_concurrent = 0
        self._current = 0
        self._lock = threading.Lock()

    def complete(self, request):
        import time

        with self._lock:
            self._current += 1
            self.max_concurrent = max(self.max_concurrent, self._current)
        try:
            time.sleep(self.hold_s)
            return self.inner.complete(request)
        finally:
            with self._lock:
                self._current -= 1
