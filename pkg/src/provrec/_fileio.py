"""Shared text-file plumbing: atomic writes, float formatting, comment headers."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterator


class FormatError(ValueError):
    """An input file does not conform to its documented schema."""


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write `text` to `path` via a temp file + rename, so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def format_float(x: float) -> str:
    # 17 significant digits round-trip any IEEE-754 double exactly.
    return format(float(x), ".17g")


def meta_comment(meta: dict | None) -> str:
    """Render run metadata as a single '#' comment line ('' when absent)."""
    if not meta:
        return ""
    return "# " + json.dumps(meta, separators=(", ", ": ")) + "\n"


def data_lines(text: str) -> Iterator[str]:
    """Yield non-comment, non-blank lines of a delimited-text payload."""
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield line
