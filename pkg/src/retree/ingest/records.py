from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from retree.tree import ReasoningTree, TreeError, from_paths, leaf_records


class IngestError(TreeError):
    pass


class EmptyRecords(IngestError):
    pass


class PathConflict(IngestError):
    pass


class IndexOutOfRange(IngestError):
    pass


class RecordError(IngestError):
    """A malformed line in a trajectory file."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class TrajectoryRecord:
    query_id: str
    path: tuple[int, ...]
    correct: bool
    token_count: Optional[int] = None
    text: Optional[str] = None
    # set only when the verifier raised; the record is then graded incorrect
    error: Optional[str] = None

    def to_dict(self) -> dict:
        d = {
            "query_id": self.query_id,
            "path": list(self.path),
            "correct": self.correct,
            "token_count": self.token_count,
            "text": self.text,
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryRecord":
        if not isinstance(d, dict):
            raise RecordError("record must be a JSON object")
        missing = [f for f in ("query_id", "path", "correct") if f not in d]
        if missing:
            raise RecordError(f"missing field(s): {', '.join(missing)}")
        path = d["path"]
        if not isinstance(path, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in path):
            raise RecordError("path must be a list of integers")
        if any(i < 0 for i in path):
            raise RecordError("path indices must be non-negative")
        if not isinstance(d["correct"], bool):
            raise RecordError("correct must be a boolean")
        tc = d.get("token_count")
        if tc is not None and (not isinstance(tc, int) or isinstance(tc, bool) or tc < 0):
            raise RecordError("token_count must be a non-negative integer")
        text = d.get("text")
        if text is not None and not isinstance(text, str):
            raise RecordError("text must be a string")
        return cls(str(d["query_id"]), tuple(path), d["correct"], tc, text, d.get("error"))


def read_records(path: str | Path) -> list[TrajectoryRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"invalid JSON ({exc.msg})", lineno) from None
            if isinstance(doc, dict) and "__provenance__" in doc:
                continue
            try:
                out.append(TrajectoryRecord.from_dict(doc))
            except RecordError as exc:
                raise RecordError(str(exc), lineno) from None
    return out


def write_records(records: Iterable[TrajectoryRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def group_by_query(records: Iterable[TrajectoryRecord]) -> dict[str, list[TrajectoryRecord]]:
    groups: dict[str, list[TrajectoryRecord]] = {}
    for r in records:
        groups.setdefault(r.query_id, []).append(r)
    return groups


def assemble_tree(query_id: str, records: Sequence[TrajectoryRecord], k: int, d: int) -> ReasoningTree:
    """Tree whose leaves are exactly the record paths."""
    if not records:
        raise EmptyRecords(f"no records for query {query_id!r}")
    paths = set()
    for r in records:
        if r.query_id != query_id:
            raise IngestError(f"record for {r.query_id!r} passed to {query_id!r}")
        if len(r.path) > d:
            raise IndexOutOfRange(f"{query_id}: path {list(r.path)} longer than depth {d}")
        if any(i >= k for i in r.path):
            raise IndexOutOfRange(f"{query_id}: path {list(r.path)} has a branch index >= {k}")
        if r.path in paths:
            raise PathConflict(f"{query_id}: duplicate path {list(r.path)}")
        paths.add(r.path)
    for p in paths:
        for i in range(len(p)):
            if p[:i] in paths:
                raise PathConflict(f"{query_id}: path {list(p[:i])} is a prefix of {list(p)}")
    return from_paths(query_id, [(r.path, r.correct) for r in records], k, d)


def tree_to_records(tree: ReasoningTree) -> list[TrajectoryRecord]:
    return [TrajectoryRecord(tree.query_id, p, c) for p, c in leaf_records(tree)]


def sort_records(records: Iterable[TrajectoryRecord]) -> list[TrajectoryRecord]:
    return sorted(records, key=lambda r: (r.query_id, r.path))


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                yield lineno, json.loads(line)
