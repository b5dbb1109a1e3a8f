"""Atomic output writers.

Every file a command produces goes through these helpers: the payload is
written to a temporary file in the destination directory and moved into place
with `os.replace`, so a failed run never leaves a half-written file behind.
"""

import csv
import io
import json
import os
import tempfile
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

from pydantic import BaseModel


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write bytes to `path` atomically, creating parent directories.

    Args:
        path: Destination file.
        payload: File contents.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    """Write UTF-8 text to `path` atomically."""
    atomic_write_bytes(path, text.encode("utf-8"))


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    return obj


def dumps_json(obj: Any) -> str:
    """Serialize to deterministic JSON (sorted keys, indent 2, newline)."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: Path, obj: Any) -> None:
    """Write a JSON document (dict or pydantic model) atomically."""
    atomic_write_text(path, dumps_json(obj))


def config_path_for(out: Path) -> Path:
    """Sibling file for the resolved config of a single-file output.

    Example:
        >>> config_path_for(Path("runs/eval.json"))
        PosixPath('runs/eval.config.json')
    """
    return out.with_name(f"{out.stem}.config.json")


def write_jsonl(path: Path, records: Iterable[Any]) -> None:
    """Write one compact JSON object per line atomically."""
    lines = [json.dumps(_jsonable(r), sort_keys=True) for r in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV file with a header row atomically.

    Floats are written with `repr` precision so the file round-trips exactly.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    atomic_write_text(path, buffer.getvalue())
