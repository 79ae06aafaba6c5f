"""Append-only line-delimited JSON records.

Training logs, latency datasets, runtime event logs and the CLI activity log
are all one JSON object per line. This module is intentionally tiny and has
no heavy imports to avoid import cycles.
"""
from __future__ import annotations

import datetime
import json
import pathlib
from typing import Any, Dict, Iterable, Iterator, List, Optional, TextIO, Union

PathLike = Union[str, pathlib.Path]


def dumps_record(record: Dict[str, Any]) -> str:
    """Serialize one record as a single compact JSON line (no trailing newline)."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def append_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> int:
    """Append records to a JSONL file, creating parent directories. Returns count written."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "a", encoding="utf-8") as f:
        for record in records:
            f.write(dumps_record(record) + "\n")
            count += 1
    return count


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> int:
    """Write records to a fresh JSONL file (truncating). Returns count written."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8"):
        pass
    return append_jsonl(path, records)


def iter_jsonl(path: PathLike) -> Iterator[Dict[str, Any]]:
    """Yield records from a JSONL file; blank lines are skipped."""
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    return list(iter_jsonl(path))


def emit_record(stream: TextIO, record: Dict[str, Any]) -> None:
    """Write one record to an open stream and flush (used for live event logs)."""
    stream.write(dumps_record(record) + "\n")
    stream.flush()


def log_action(action: str, details: Optional[Dict[str, Any]] = None,
               log_file: Optional[PathLike] = None) -> None:
    """Append an action entry to the activity log (default: ./activity.jsonl).

    Arguments:
        action: short action name, e.g. the CLI subcommand
        details: optional JSON-serializable details
        log_file: optional override of the log location
    """
    target = pathlib.Path(log_file) if log_file else pathlib.Path.cwd() / "activity.jsonl"
    entry = {
        "ts": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "action": action,
    }
    if details:
        entry["details"] = details
    try:
        append_jsonl(target, [entry])
    except (OSError, TypeError, ValueError):
        # Activity logging must not break a pipeline run
        return
