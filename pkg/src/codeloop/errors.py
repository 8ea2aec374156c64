"""Exception types shared across the engine."""

from __future__ import annotations


class CodeloopError(Exception):
    """Base class for every engine-raised error."""


class SchemaError(CodeloopError):
    """A persisted record violates its schema (carries file/line context)."""


class ConfigError(CodeloopError):
    """Invalid or unknown configuration content."""


class BackendError(CodeloopError):
    """Transport-level backend failure after retries were exhausted."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class ProtocolError(CodeloopError):
    """The backend replied, but the reply does not match the wire format."""


class ScriptError(CodeloopError):
    """A scripted mock backend received a request it has no entry for."""


class SynthesisRejection(CodeloopError):
    """A model reply failed the stage's parse rules; the item is skipped."""


class ShimProtocolError(CodeloopError):
    """The runner shim broke its wire protocol; execution data is unusable."""


class AssemblyError(CodeloopError):
    """Suite assembly eliminated every case for a problem."""
