"""JSONL persistence: one UTF-8 record per line, round-trip exact.

Readers validate each line against the target type and report the offending
line number and field on failure. Writers are atomic (write to a sibling temp
file, then rename) so a stage file either exists complete or not at all.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Type, TypeVar

from .errors import SchemaError

T = TypeVar("T")


def dumps_record(data: dict[str, Any]) -> str:
    return json.dumps(data, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def write_jsonl(records: Iterable[Any], path: str | Path) -> int:
    """Write records (objects with to_dict, or plain dicts) atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    count = 0
    with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            data = record.to_dict() if hasattr(record, "to_dict") else record
            handle.write(dumps_record(data))
            handle.write("\n")
            count += 1
    os.replace(tmp, path)
    return count


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(data, dict):
                raise SchemaError(f"{path}:{lineno}: record is not an object")
            yield lineno, data


def read_jsonl(path: str | Path, record_type: Type[T] | None = None,
               from_dict: Callable[[dict[str, Any]], T] | None = None) -> list[T]:
    """Read records from a JSONL file, validating against the given type."""
    loader = from_dict or (record_type.from_dict if record_type else None)
    records: list[Any] = []
    for lineno, data in iter_jsonl(path):
        if loader is None:
            records.append(data)
            continue
        try:
            records.append(loader(data))
        except SchemaError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return records
