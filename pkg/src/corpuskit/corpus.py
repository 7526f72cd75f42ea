"""Corpus records, JSONL shard I/O and per-dataset bookkeeping."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from corpuskit.hashing import MASK64, hash_text

DROP_REASONS = ("language", "short", "javascript", "quality", "duplicate", "contamination")


class CorpusFormatError(ValueError):
    """A corpus file could not be parsed. Carries the location of the fault."""

    def __init__(self, path, message, line=None, offset=None):
        self.path = str(path)
        self.line = line
        self.offset = offset
        where = self.path
        if line is not None:
            where += f": line {line}"
        if offset is not None:
            where += f" (byte offset {offset})"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class Document:
    doc_id: int
    dataset: str
    text: str
    url: Optional[str] = None
    score: Optional[float] = None

    @property
    def char_count(self) -> int:
        # str length in Python is the code point count
        return len(self.text)

    def with_text(self, text: str) -> "Document":
        return replace(self, text=text)

    def with_score(self, score: float) -> "Document":
        return replace(self, score=score)

    def to_json(self) -> str:
        obj = {"doc_id": self.doc_id, "dataset": self.dataset}
        if self.url is not None:
            obj["url"] = self.url
        obj["text"] = self.text
        if self.score is not None:
            obj["score"] = self.score
        return json.dumps(obj, ensure_ascii=False)


@dataclass(frozen=True)
class CorpusShard:
    path: str
    records: tuple = ()

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def default_doc_id(shard_index: int, line_number: int) -> int:
    """Pack (shard index, 1-based line number) into one 64-bit id."""
    return ((shard_index & 0xFFFFFFFF) << 32) | (line_number & 0xFFFFFFFF)


def _coerce_doc_id(raw, path, line, offset) -> int:
    if isinstance(raw, bool):
        raise CorpusFormatError(path, "doc_id must be a string or integer", line, offset)
    if isinstance(raw, int):
        if not 0 <= raw <= MASK64:
            raise CorpusFormatError(path, f"doc_id {raw} outside unsigned 64-bit range", line, offset)
        return raw
    if isinstance(raw, str):
        if raw.isdigit() and int(raw) <= MASK64:
            return int(raw)
        return hash_text(raw)
    raise CorpusFormatError(path, "doc_id must be a string or integer", line, offset)


def _parse_record(obj, path, line, offset, shard_index) -> Document:
    if not isinstance(obj, dict):
        raise CorpusFormatError(path, "record is not a JSON object", line, offset)
    text = obj.get("text")
    dataset = obj.get("dataset")
    if not isinstance(text, str):
        raise CorpusFormatError(path, "missing or non-string 'text'", line, offset)
    if not isinstance(dataset, str):
        raise CorpusFormatError(path, "missing or non-string 'dataset'", line, offset)
    if "doc_id" in obj and obj["doc_id"] is not None:
        doc_id = _coerce_doc_id(obj["doc_id"], path, line, offset)
    else:
        doc_id = default_doc_id(shard_index, line)
    url = obj.get("url")
    if url is not None and not isinstance(url, str):
        raise CorpusFormatError(path, "'url' must be a string", line, offset)
    score = obj.get("score")
    if score is not None:
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise CorpusFormatError(path, "'score' must be a number", line, offset)
        score = float(score)
    return Document(doc_id=doc_id, dataset=dataset, text=text, url=url, score=score)


def ingest_shard(path, shard_index: int = 0) -> CorpusShard:
    """Read one JSONL corpus file, preserving record order.

    Raises CorpusFormatError for undecodable or malformed lines and for
    doc_ids that repeat within the file.
    """
    path = Path(path)
    records = []
    first_seen = {}
    offset = 0
    with open(path, "rb") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line_offset = offset
            offset += len(raw)
            stripped = raw.strip()
            if not stripped:
                continue
            try:
                obj = json.loads(stripped.decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise CorpusFormatError(path, f"invalid UTF-8 ({exc.reason})", line_no, line_offset + exc.start) from None
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(path, f"malformed JSON ({exc.msg})", line_no, line_offset + exc.pos) from None
            doc = _parse_record(obj, path, line_no, line_offset, shard_index)
            if doc.doc_id in first_seen:
                raise CorpusFormatError(
                    path,
                    f"duplicate doc_id {doc.doc_id} (first at line {first_seen[doc.doc_id]}, again at line {line_no})",
                    line_no,
                    line_offset,
                )
            first_seen[doc.doc_id] = line_no
            records.append(doc)
    return CorpusShard(path=str(path), records=tuple(records))


def emit_shard(shard: CorpusShard, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            for doc in shard.records:
                fh.write(doc.to_json())
                fh.write("\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write shard {path}: {exc}") from exc


def write_documents(docs: Iterable[Document], path) -> None:
    emit_shard(CorpusShard(path=str(path), records=tuple(docs)), path)


def read_corpus(paths: Sequence) -> list:
    """Ingest several shards, checking doc_id uniqueness across all of them."""
    shards = [ingest_shard(p, shard_index=i) for i, p in enumerate(paths)]
    seen = {}
    for shard in shards:
        for doc in shard.records:
            if doc.doc_id in seen:
                raise CorpusFormatError(
                    shard.path, f"duplicate doc_id {doc.doc_id} (also in {seen[doc.doc_id]})"
                )
            seen[doc.doc_id] = shard.path
    return shards


@dataclass
class DatasetStats:
    input_docs: int = 0
    kept_docs: int = 0
    input_chars: int = 0
    kept_chars: int = 0
    dropped: dict = field(default_factory=lambda: {r: 0 for r in DROP_REASONS})

    def to_dict(self):
        return {
            "input_docs": self.input_docs,
            "kept_docs": self.kept_docs,
            "input_chars": self.input_chars,
            "kept_chars": self.kept_chars,
            "dropped": dict(self.dropped),
        }


@dataclass
class CorpusStats:
    datasets: dict = field(default_factory=dict)

    def _entry(self, dataset: str) -> DatasetStats:
        if dataset not in self.datasets:
            self.datasets[dataset] = DatasetStats()
        return self.datasets[dataset]

    def add_input(self, doc: Document) -> None:
        entry = self._entry(doc.dataset)
        entry.input_docs += 1
        entry.kept_docs += 1
        entry.input_chars += doc.char_count
        entry.kept_chars += doc.char_count

    def drop(self, doc: Document, reason: str) -> None:
        if reason not in DROP_REASONS:
            raise ValueError(f"unknown drop reason {reason!r}")
        entry = self._entry(doc.dataset)
        entry.kept_docs -= 1
        entry.kept_chars -= doc.char_count
        entry.dropped[reason] += 1

    def drop_count(self, dataset: str, reason: str, n: int) -> None:
        """Record ``n`` drops when only counts (not documents) are at hand."""
        if reason not in DROP_REASONS:
            raise ValueError(f"unknown drop reason {reason!r}")
        entry = self._entry(dataset)
        entry.kept_docs -= n
        entry.dropped[reason] += n

    def adjust_chars(self, dataset: str, delta: int) -> None:
        self._entry(dataset).kept_chars += delta

    def is_conserved(self) -> bool:
        return all(
            e.input_docs == e.kept_docs + sum(e.dropped.values()) for e in self.datasets.values()
        )

    @property
    def total_input(self) -> int:
        return sum(e.input_docs for e in self.datasets.values())

    @property
    def total_kept(self) -> int:
        return sum(e.kept_docs for e in self.datasets.values())

    def to_dict(self):
        return {
            "datasets": {name: self.datasets[name].to_dict() for name in sorted(self.datasets)},
            "total_input_docs": self.total_input,
            "total_kept_docs": self.total_kept,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def corpus_stats(shards: Iterable[CorpusShard]) -> CorpusStats:
    stats = CorpusStats()
    for shard in shards:
        for doc in shard.records:
            stats.add_input(doc)
    return stats
