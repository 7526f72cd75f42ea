"""Deterministic dataset blending with bounded cumulative deviation.

Every step apportions ``batch_size`` samples by largest remainder over each
dataset's carried credit plus its share of the batch. Credit is the ideal
cumulative draw count minus the actual one, so it stays in (-1, 1) and the
running mixture never drifts a whole sample from the target weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

WEIGHT_TOLERANCE = 1e-9

# name, tokens (billions), weight (%), epochs
DEFAULT_MIX = (
    ("Books3", 25.7, 14.3, 1.5),
    ("OpenWebText2", 14.8, 19.3, 3.6),
    ("Stack Exchange", 11.6, 5.7, 1.4),
    ("PubMed Abstracts", 4.4, 2.9, 1.8),
    ("Wikipedia", 4.2, 4.8, 3.2),
    ("Gutenberg (PG-19)", 2.7, 0.9, 0.9),
    ("BookCorpus2", 1.5, 1.0, 1.8),
    ("NIH ExPorter", 0.3, 0.2, 1.8),
    ("ArXiv", 20.8, 1.4, 0.2),
    ("GitHub", 24.3, 1.6, 0.2),
    ("Pile-CC", 49.8, 9.4, 0.5),
    ("CC-2020-50", 68.7, 13.0, 0.5),
    ("CC-2021-04", 82.6, 15.7, 0.5),
    ("Realnews", 21.9, 9.0, 1.1),
    ("CC-Stories", 5.3, 0.9, 0.5),
)


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    weight: float
    tokens_available: int = 0
    epochs: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"{self.name}: weight must lie in (0, 1], got {self.weight}")
        if self.tokens_available < 0:
            raise ValueError(f"{self.name}: tokens_available must be non-negative")


def normalize_weights(pairs: Sequence[Tuple[str, float]]) -> List[Tuple[str, float]]:
    total = math.fsum(w for _, w in pairs)
    if total <= 0:
        raise ValueError("weights must have a positive sum")
    return [(name, w / total) for name, w in pairs]


def default_mix_specs() -> List[DatasetSpec]:
    """Default mix with weights rescaled to sum to one (the percentages sum to 100.1)."""
    normalized = normalize_weights([(name, pct) for name, _, pct, _ in DEFAULT_MIX])
    return [
        DatasetSpec(name=name, weight=w, tokens_available=int(round(tok * 1e9)), epochs=ep)
        for (name, w), (_, tok, _, ep) in zip(normalized, DEFAULT_MIX)
    ]


def check_specs(specs: Sequence[DatasetSpec]) -> None:
    if not specs:
        raise ValueError("no datasets to blend")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("dataset names must be unique")
    total = math.fsum(s.weight for s in specs)
    if abs(total - 1.0) > WEIGHT_TOLERANCE:
        raise ValueError(f"weights sum to {total!r}, expected 1")


@dataclass
class BlendState:
    drawn: List[int]
    credit: List[float]
    step: int = 0

    @classmethod
    def initial(cls, n: int) -> "BlendState":
        return cls(drawn=[0] * n, credit=[0.0] * n, step=0)

    @property
    def total(self) -> int:
        return sum(self.drawn)


def next_batch_composition(state: BlendState, specs: Sequence[DatasetSpec], batch_size: int):
    """Counts for the next batch and the advanced state (``state`` is not mutated)."""
    check_specs(specs)
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if len(state.drawn) != len(specs):
        raise ValueError("state does not match the number of datasets")
    total_after = state.total + batch_size
    # quotas from exact ideals avoid accumulating float error in the credit
    quota = [s.weight * total_after - d for s, d in zip(specs, state.drawn)]
    counts = [max(int(math.floor(q)), 0) for q in quota]
    extra = batch_size - sum(counts)
    if extra < 0:
        # clamped-negative quotas cannot arise for normalized weights; guard anyway
        order = sorted(range(len(specs)), key=lambda i: (quota[i] - counts[i], i))
        for i in order:
            while extra < 0 and counts[i] > 0:
                counts[i] -= 1
                extra += 1
    order = sorted(range(len(specs)), key=lambda i: (-(quota[i] - counts[i]), i))
    for i in order[:extra]:
        counts[i] += 1
    drawn = [d + c for d, c in zip(state.drawn, counts)]
    credit = [s.weight * total_after - d for s, d in zip(specs, drawn)]
    return counts, BlendState(drawn=drawn, credit=credit, step=state.step + 1)


def blend_stream(specs: Sequence[DatasetSpec], batch_size: int, steps: int) -> Iterator[List[int]]:
    state = BlendState.initial(len(specs))
    for _ in range(steps):
        counts, state = next_batch_composition(state, specs, batch_size)
        yield counts


def implied_epochs(drawn: Sequence[int], available: Sequence[int]) -> List[float]:
    return [d / a if a else float("inf") for d, a in zip(drawn, available)]


@dataclass
class DatasetCursor:
    """Sequential document order within one dataset, wrapping at epoch end."""

    doc_ids: List[int]
    position: int = 0
    epochs_started: int = field(default=0)

    def take(self, k: int) -> List[int]:
        if k and not self.doc_ids:
            raise ValueError("cannot draw from an empty dataset")
        out = []
        for _ in range(k):
            if self.position == 0:
                self.epochs_started += 1
            out.append(self.doc_ids[self.position])
            self.position = (self.position + 1) % len(self.doc_ids)
        return out
