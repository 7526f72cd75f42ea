"""Downstream-task n-gram removal.

A training document that shares a token n-gram with any task document is cut
at the match, together with 200 characters on each side. Pieces shorter than
200 characters are dropped, and a document split more than 10 times is
removed outright.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from corpuskit.hashing import GRAM_SEED, hash_text
from corpuskit.tokens import word_spans, words

DEFAULT_N = 13
CONTEXT_CHARS = 200
MIN_FRAGMENT_CHARS = 200
MAX_SPLITS = 10


def gram_hash(tokens: Sequence[str]) -> int:
    return hash_text(" ".join(tokens), GRAM_SEED)


@dataclass(frozen=True)
class TaskNgramIndex:
    n: int
    grams: frozenset
    task_name: str = ""

    def __len__(self):
        return len(self.grams)


def build_task_ngram_index(task_docs: Iterable[str], n: int = DEFAULT_N, task_name: str = "") -> TaskNgramIndex:
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    grams = set()
    for doc in task_docs:
        toks = words(doc)
        for i in range(len(toks) - n + 1):
            grams.add(gram_hash(toks[i : i + n]))
    return TaskNgramIndex(n=n, grams=frozenset(grams), task_name=task_name)


def load_task_file(path, n: int = DEFAULT_N, task_name: str = "") -> TaskNgramIndex:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    return build_task_ngram_index((ln for ln in lines if ln.strip()), n, task_name or path.stem)


def match_regions(text: str, indexes: Sequence[TaskNgramIndex]) -> List[Tuple[int, int]]:
    """Character spans of matched n-grams, overlapping matches merged."""
    spans = word_spans(text)
    toks = [t for t, _, _ in spans]
    windows = []
    for index in indexes:
        n = index.n
        for i in range(len(toks) - n + 1):
            if gram_hash(toks[i : i + n]) in index.grams:
                windows.append((i, i + n - 1))
    windows.sort()
    regions: List[List[int]] = []
    for first, last in windows:
        if regions and first <= regions[-1][1]:
            regions[-1][1] = max(regions[-1][1], last)
        else:
            regions.append([first, last])
    return [(spans[a][1], spans[b][2]) for a, b in regions]


@dataclass
class SplitOutcome:
    fragments: List[str] = field(default_factory=list)
    spans: List[Tuple[int, int]] = field(default_factory=list)
    splits: int = 0
    removed: bool = False
    trim_events: int = 0


def split_document(doc, index) -> SplitOutcome:
    """Cut matched n-grams (plus context) out of ``doc``.

    ``doc`` may be a Document or a plain string; ``index`` one TaskNgramIndex
    or a sequence of them. Returned ``spans`` are code-point offsets into the
    original text, in document order.
    """
    text = doc if isinstance(doc, str) else doc.text
    indexes = [index] if isinstance(index, TaskNgramIndex) else list(index)
    length = len(text)
    pending = [(0, length)]
    kept: List[Tuple[int, int]] = []
    splits = trims = 0
    # a cut can land inside a word, so pieces are rescanned until clean
    while pending:
        lo, hi = pending.pop(0)
        regions = match_regions(text[lo:hi], indexes)
        if not regions:
            kept.append((lo, hi))
            continue
        splits += len(regions)
        cursor = lo
        pieces = []
        for start, end in regions:
            cut_lo = lo + start - CONTEXT_CHARS
            cut_hi = lo + end + CONTEXT_CHARS
            if cut_lo <= 0 or cut_hi >= length:
                trims += 1
            cut_lo, cut_hi = max(cut_lo, lo), min(cut_hi, hi)
            if cut_lo > cursor:
                pieces.append((cursor, cut_lo))
            cursor = max(cursor, cut_hi)
        if cursor < hi:
            pieces.append((cursor, hi))
        pending = [p for p in pieces if p[1] - p[0] >= MIN_FRAGMENT_CHARS] + pending
    kept.sort()
    if splits == 0:
        return SplitOutcome(fragments=[text], spans=[(0, length)])
    if splits > MAX_SPLITS:
        return SplitOutcome(splits=splits, removed=True, trim_events=trims)
    kept = [s for s in kept if s[1] - s[0] >= MIN_FRAGMENT_CHARS]
    if splits and not kept:
        return SplitOutcome(splits=splits, removed=True, trim_events=trims)
    return SplitOutcome(
        fragments=[text[a:b] for a, b in kept],
        spans=kept,
        splits=splits,
        removed=False,
        trim_events=trims,
    )


@dataclass
class DecontamReport:
    documents: int = 0
    split: int = 0
    removed: int = 0
    split_more_than_10: int = 0
    trimmed: int = 0

    def add(self, outcome: SplitOutcome) -> None:
        self.documents += 1
        if outcome.splits:
            self.split += 1
        if outcome.removed:
            self.removed += 1
        if outcome.splits > MAX_SPLITS:
            self.split_more_than_10 += 1
        if outcome.trim_events:
            self.trimmed += 1

    def to_dict(self) -> Dict[str, int]:
        return {
            "documents": self.documents,
            "split": self.split,
            "removed": self.removed,
            "split_more_than_10": self.split_more_than_10,
            "trimmed": self.trimmed,
        }
