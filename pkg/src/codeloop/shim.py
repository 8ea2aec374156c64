"""Client side of the runner-shim wire protocol.

The shim is an external single-file interpreter harness invoked as
``<command...> <payload.json>``; it prints exactly one JSON line on stdout and
exits 0 when it delivered a verdict, 2 on a protocol error. Payload modes:

- ``run``: {mode, solution_source, test_statement, time_limit_ms, memory_limit_mb}
  -> {status, error_kind, message, duration_ms, covered_lines}
- ``compile``: {mode, solution_source, function_name}
  -> {ok, defines_function, error_kind}
- ``literal_check``: {mode, a} -> {is_literal}
- ``literal_compare``: {mode, a, b} -> {equal, type_equal}

Wall-clock enforcement is this side's responsibility: a run-mode invocation
that outlives its limit plus grace is killed and reported as a timeout.
"""

from __future__ import annotations

import json
import os
import subprocess
import tempfile
from typing import Any, Protocol, Sequence

from .errors import ShimProtocolError

TIMEOUT_GRACE_MS = 500


class ShimClient(Protocol):
    def request(self, payload: dict[str, Any]) -> dict[str, Any]: ...

    def describe(self) -> str: ...


class SubprocessShim:
    """Invokes the shim executable once per payload."""

    def __init__(self, command: Sequence[str], default_timeout_s: float = 30.0):
        if not command:
            raise ValueError("shim command is empty")
        self._command = list(command)
        self._default_timeout_s = default_timeout_s

    def describe(self) -> str:
        return " ".join(self._command)

    def request(self, payload: dict[str, Any]) -> dict[str, Any]:
        mode = payload.get("mode")
        if mode == "run":
            timeout_s = (payload["time_limit_ms"] + TIMEOUT_GRACE_MS) / 1000.0
        else:
            timeout_s = self._default_timeout_s

        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False,
                                         encoding="utf-8") as handle:
            json.dump(payload, handle)
            payload_path = handle.name
        try:
            try:
                proc = subprocess.run(
                    self._command + [payload_path],
                    capture_output=True, text=True, timeout=timeout_s,
                    stdin=subprocess.DEVNULL)
            except subprocess.TimeoutExpired:
                if mode == "run":
                    return {
                        "status": "timeout",
                        "error_kind": "Timeout",
                        "message": "killed by parent after wall-clock limit",
                        "duration_ms": int(payload["time_limit_ms"]),
                        "covered_lines": [],
                    }
                raise ShimProtocolError(
                    f"shim exceeded {timeout_s:.1f}s on mode {mode!r}") from None
            except OSError as exc:
                raise ShimProtocolError(f"cannot invoke shim: {exc}") from exc
        finally:
            try:
                os.unlink(payload_path)
            except OSError:
                pass

        if proc.returncode != 0:
            raise ShimProtocolError(
                f"shim exited {proc.returncode} on mode {mode!r}: "
                f"{proc.stderr.strip()[:500]}")
        line = proc.stdout.strip().splitlines()
        if len(line) != 1:
            raise ShimProtocolError(
                f"shim printed {len(line)} lines, expected exactly 1")
        try:
            reply = json.loads(line[0])
        except json.JSONDecodeError as exc:
            raise ShimProtocolError(f"malformed shim reply line: {line[0][:200]!r}") from exc
        if not isinstance(reply, dict):
            raise ShimProtocolError("shim reply is not a JSON object")
        return reply


class LiteralOps:
    """Literal semantics of the evaluation language, via the shim.

    Results are memoized: literal checks and comparisons are pure, and the
    voting/diff paths ask about the same spellings repeatedly.
    """

    def __init__(self, shim: ShimClient):
        self._shim = shim
        self._check_cache: dict[str, bool] = {}
        self._compare_cache: dict[tuple[str, str], tuple[bool, bool]] = {}

    def is_literal(self, text: str) -> bool:
        if text not in self._check_cache:
            reply = self._shim.request({"mode": "literal_check", "a": text})
            if "is_literal" not in reply:
                raise ShimProtocolError("literal_check reply missing 'is_literal'")
            self._check_cache[text] = bool(reply["is_literal"])
        return self._check_cache[text]

    def compare(self, a: str, b: str) -> tuple[bool, bool]:
        key = (a, b)
        if key not in self._compare_cache:
            reply = self._shim.request({"mode": "literal_compare", "a": a, "b": b})
            if "equal" not in reply or "type_equal" not in reply:
                raise ShimProtocolError("literal_compare reply missing fields")
            result = (bool(reply["equal"]), bool(reply["type_equal"]))
            self._compare_cache[key] = result
            self._compare_cache[(b, a)] = result
        return self._compare_cache[key]

    def same_value(self, a: str, b: str) -> bool:
        """Value-equality used for voting and accuracy: equal value and type."""
        if a == b:
            return True
        equal, type_equal = self.compare(a, b)
        return equal and type_equal
