"""NDJSON episode corpora.

A corpus file is UTF-8 NDJSON: one header line, then one episode per line.
The header pins the format so partially written or foreign files fail fast:

    {"format":"trajsim-episode","version":1}

Lines are written in canonical JSON (sorted keys, compact separators), so a
corpus written from the same episodes is byte-identical regardless of the
in-memory ordering they were built with.
"""

from __future__ import annotations

import io
import json
import os
from typing import IO, Iterable, Iterator

from .domain import Episode, episode_from_dict, episode_to_json
from .errors import CorpusFormatError

FORMAT_NAME = "trajsim-episode"
FORMAT_VERSION = 1

HEADER_LINE = '{"format":"trajsim-episode","version":1}'


def write_corpus(path: str | os.PathLike, episodes: Iterable[Episode]) -> int:
    """Write header plus one canonical line per episode; returns episode count."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(HEADER_LINE + "\n")
        for episode in episodes:
            fh.write(episode_to_json(episode) + "\n")
            count += 1
    return count


def read_corpus(path: str | os.PathLike) -> list[Episode]:
    with open(path, "r", encoding="utf-8") as fh:
        return list(iter_corpus(fh, name=str(path)))


def iter_corpus(fh: IO[str], name: str = "<stream>") -> Iterator[Episode]:
    """Stream episodes from an open corpus; raises on bad header or bad lines.

    Error messages carry the 1-based line number so a broken corpus can be
    repaired by hand.
    """
    header = fh.readline()
    if not header:
        raise CorpusFormatError(f"{name}: empty file, expected header line")
    _check_header(header, name)
    for lineno, line in enumerate(fh, start=2):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            payload = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{name}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise CorpusFormatError(f"{name}:{lineno}: expected an object")
        try:
            yield episode_from_dict(payload)
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusFormatError(f"{name}:{lineno}: bad episode: {exc}") from exc


def _check_header(line: str, name: str) -> None:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{name}:1: header is not JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise CorpusFormatError(
            f"{name}:1: not a {FORMAT_NAME} corpus (header {line.strip()!r})"
        )
    if header.get("version") != FORMAT_VERSION:
        raise CorpusFormatError(
            f"{name}:1: unsupported version {header.get('version')!r}, "
            f"expected {FORMAT_VERSION}"
        )


def corpus_to_string(episodes: Iterable[Episode]) -> str:
    buf = io.StringIO()
    buf.write(HEADER_LINE + "\n")
    for episode in episodes:
        buf.write(episode_to_json(episode) + "\n")
    return buf.getvalue()


def corpus_from_string(text: str) -> list[Episode]:
    return list(iter_corpus(io.StringIO(text), name="<string>"))
