"""Plain-text report output: ``key=value`` records and tab-separated tables."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence


def format_records(records: Iterable[tuple[str, object]]) -> str:
    return "".join(f"{k}={v}\n" for k, v in records)


def write_records(records, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_records(records))
    return path


def parse_records(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key] = value
    return out


def write_table(header: Sequence[str], rows: Iterable[Sequence], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(header)] + ["\t".join(str(x) for x in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path
