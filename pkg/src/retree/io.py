"""File formats shared by the CLI: manifests, provenance headers, atomic writes."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Iterator, Optional

from retree import __version__
from retree.tree import ReasoningTree, TreeError, dumps, from_dict

PROVENANCE_KEY = "__provenance__"


class InputError(ValueError):
    """Malformed user input; the CLI maps it to exit code 2."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def provenance(config: dict, seed: Optional[int]) -> dict:
    return {"tool": "retree", "version": __version__, "config_hash": config_hash(config), "seed": seed}


@contextmanager
def atomic_open(path: str | Path, newline: Optional[str] = None) -> Iterator[io.TextIOBase]:
    """Write to a sibling temp file and rename over ``path`` only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline=newline) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_jsonl(path: str | Path, rows: Iterable[str | dict], header: Optional[dict] = None) -> None:
    with atomic_open(path) as fh:
        if header is not None:
            fh.write(canonical_json({PROVENANCE_KEY: header}) + "\n")
        for row in rows:
            fh.write((row if isinstance(row, str) else canonical_json(row)) + "\n")


def read_jsonl(path: str | Path) -> list[tuple[int, dict]]:
    """(line number, object) pairs; provenance headers and blank lines are skipped."""
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if isinstance(doc, dict) and PROVENANCE_KEY in doc:
                continue
            out.append((lineno, doc))
    return out


def write_csv(path: str | Path, columns: list[str], rows: Iterable[dict], header: Optional[dict] = None) -> None:
    with atomic_open(path, newline="") as fh:
        if header is not None:
            fh.write("# " + canonical_json(header) + "\n")
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def read_trees(path: str | Path) -> list[ReasoningTree]:
    trees = []
    for lineno, doc in read_jsonl(path):
        try:
            trees.append(from_dict(doc))
        except TreeError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    return trees


def write_trees(path: str | Path, trees: Iterable[ReasoningTree], header: Optional[dict] = None) -> None:
    write_jsonl(path, (dumps(t) for t in trees), header)
