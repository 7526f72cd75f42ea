"""Fuzzy document deduplication.

Pipeline: word-presence feature sets hashed into 2**20 ids, 260-slot MinHash
signatures, LSH with 20 bands of 13 rows, then per-bucket verification by
sampling up to 11 anchors and computing exact Jaccard against the rest of the
bucket. Verified pairs become edges of a sparse graph; each connected
component keeps one document, chosen by dataset priority.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numba
import numpy as np

from corpuskit.hashing import (
    BAND_SEED,
    MASK64,
    NUM_FEATURES,
    derive_seed,
    hash64,
    hash_text,
    pack_u64s,
    splitmix64_array,
    uniform01,
)
from corpuskit.tokens import words
from corpuskit.unionfind import UnionFind

SIGNATURE_LENGTH = 260


class EmptyFeatureSetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureSet:
    ids: np.ndarray  # sorted, unique, int64 in [0, NUM_FEATURES)

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        return isinstance(other, FeatureSet) and np.array_equal(self.ids, other.ids)

    def __hash__(self):
        return hash(self.ids.tobytes())

    @classmethod
    def from_ids(cls, ids: Iterable[int]) -> "FeatureSet":
        arr = np.unique(np.fromiter(ids, dtype=np.int64))
        if arr.size and (arr[0] < 0 or arr[-1] >= NUM_FEATURES):
            raise ValueError("feature id out of range")
        return cls(arr)


def vectorize(text: str) -> FeatureSet:
    ids = {hash_text(tok) & (NUM_FEATURES - 1) for tok in words(text)}
    return FeatureSet(np.fromiter(sorted(ids), dtype=np.int64, count=len(ids)))


def jaccard(a: FeatureSet, b: FeatureSet) -> float:
    if len(a) == 0 and len(b) == 0:
        return 1.0
    inter = np.intersect1d(a.ids, b.ids, assume_unique=True).size
    return inter / (len(a) + len(b) - inter)


@dataclass(frozen=True)
class LshParams:
    bands: int = 20
    rows: int = 13
    jaccard_threshold: float = 0.8
    sample_iterations: int = 11
    rng_seed: int = 0
    similarity: str = "exact"  # or "minhash": estimate from signatures

    def __post_init__(self):
        if self.bands < 1 or self.rows < 1:
            raise ValueError("bands and rows must be positive")
        if not 0.0 < self.jaccard_threshold <= 1.0:
            raise ValueError(f"jaccard_threshold must lie in (0, 1], got {self.jaccard_threshold}")
        if self.sample_iterations < 1:
            raise ValueError("sample_iterations must be at least 1")
        if self.similarity not in ("exact", "minhash"):
            raise ValueError(f"unknown similarity mode {self.similarity!r}")

    @property
    def num_perm(self) -> int:
        return self.bands * self.rows


def _slot_keys(params: LshParams) -> np.ndarray:
    return np.array(
        [derive_seed(params.rng_seed, "minhash", k) for k in range(params.num_perm)], dtype=np.uint64
    )


_key_cache: Dict[LshParams, np.ndarray] = {}


def slot_keys(params: LshParams) -> np.ndarray:
    keys = _key_cache.get(params)
    if keys is None:
        keys = _key_cache[params] = _slot_keys(params)
    return keys


def minhash_signature(features: FeatureSet, params: LshParams = LshParams()) -> np.ndarray:
    """Slot k holds min over ids of splitmix64(id XOR key_k)."""
    if len(features) == 0:
        raise EmptyFeatureSetError("cannot sign an empty feature set")
    keys = slot_keys(params)
    ids = features.ids.astype(np.uint64)
    return splitmix64_array(ids[None, :] ^ keys[:, None]).min(axis=1)


@numba.njit(cache=True)
def _signature_kernel(ids, offsets, keys, out):
    for d in range(offsets.shape[0] - 1):
        for k in range(keys.shape[0]):
            best = np.uint64(0xFFFFFFFFFFFFFFFF)
            key = keys[k]
            for j in range(offsets[d], offsets[d + 1]):
                # inlined splitmix64(id ^ key), must match hashing.splitmix64_array
                x = (ids[j] ^ key) + np.uint64(0x9E3779B97F4A7C15)
                x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
                x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
                x = x ^ (x >> np.uint64(31))
                if x < best:
                    best = x
            out[d, k] = best


def minhash_signatures(feature_sets: Sequence[FeatureSet], params: LshParams = LshParams()) -> np.ndarray:
    """Batched ``minhash_signature``; returns an (n_docs, num_perm) array."""
    for pos, fs in enumerate(feature_sets):
        if len(fs) == 0:
            raise EmptyFeatureSetError(f"cannot sign an empty feature set (position {pos})")
    out = np.empty((len(feature_sets), params.num_perm), dtype=np.uint64)
    if not feature_sets:
        return out
    ids = np.concatenate([fs.ids for fs in feature_sets]).astype(np.uint64)
    offsets = np.zeros(len(feature_sets) + 1, dtype=np.int64)
    np.cumsum([len(fs) for fs in feature_sets], out=offsets[1:])
    _signature_kernel(ids, offsets, slot_keys(params), out)
    return out


def estimate_jaccard(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) != len(b):
        raise ValueError(f"signature length mismatch: {len(a)} vs {len(b)}")
    return float(np.count_nonzero(a == b)) / len(a)


def collision_probability(s: float, params: LshParams = LshParams()) -> float:
    return 1.0 - (1.0 - s**params.rows) ** params.bands


def band_keys(signature: np.ndarray, params: LshParams) -> List[int]:
    if len(signature) != params.num_perm:
        raise ValueError(f"signature length {len(signature)} != {params.num_perm}")
    r = params.rows
    return [
        hash64(pack_u64s([b, *signature[b * r : (b + 1) * r].tolist()]), BAND_SEED)
        for b in range(params.bands)
    ]


def lsh_group(signatures: Mapping[int, np.ndarray], params: LshParams = LshParams()) -> Dict[tuple, set]:
    """Bucket documents by (band index, band key)."""
    buckets: Dict[tuple, set] = {}
    for doc_id in sorted(signatures):
        for b, key in enumerate(band_keys(signatures[doc_id], params)):
            buckets.setdefault((b, key), set()).add(doc_id)
    return buckets


def _bucket_seed(members: Sequence[int], params: LshParams) -> int:
    digest = hash64(pack_u64s(m & MASK64 for m in members), params.rng_seed)
    return derive_seed(params.rng_seed, "bucket", digest)


def dedup_bucket(
    bucket: Iterable[int],
    features: Mapping[int, FeatureSet],
    params: LshParams = LshParams(),
    signatures: Optional[Mapping[int, np.ndarray]] = None,
) -> List[tuple]:
    """Sampled approximation of all-pairs verification inside one bucket.

    Returns ``(duplicate_id, anchor_id, similarity)`` triples.
    """
    remaining = sorted(set(bucket))
    if len(remaining) < 2:
        return []
    if params.similarity == "minhash" and signatures is None:
        raise ValueError("minhash similarity needs signatures")
    seed = _bucket_seed(remaining, params)
    marks = []
    for i in range(params.sample_iterations):
        if len(remaining) <= 1:
            break
        pick = min(int(uniform01(seed, i) * len(remaining)), len(remaining) - 1)
        anchor = remaining[pick]
        survivors = []
        for other in remaining:
            if other == anchor:
                continue
            if params.similarity == "exact":
                sim = jaccard(features[anchor], features[other])
            else:
                sim = estimate_jaccard(signatures[anchor], signatures[other])
            if sim >= params.jaccard_threshold:
                marks.append((other, anchor, sim))
            else:
                survivors.append(other)
        remaining = survivors
    return marks


@dataclass
class DuplicateGraph:
    edges: List[tuple] = field(default_factory=list)
    components: List[List[int]] = field(default_factory=list)
    representatives: List[int] = field(default_factory=list)

    @property
    def discarded(self) -> set:
        keep = set(self.representatives)
        return {d for comp in self.components for d in comp if d not in keep}

    def component_of(self) -> Dict[int, int]:
        return {d: i for i, comp in enumerate(self.components) for d in comp}

    def edge_records(self, band_seed: int = 0):
        return [
            {"duplicate": d, "anchor": a, "similarity": s, "band_seed": band_seed} for d, a, s in self.edges
        ]

    def component_records(self, doc_meta: Mapping[int, str]):
        return [
            {"representative": rep, "members": comp, "dataset": doc_meta[rep]}
            for rep, comp in zip(self.representatives, self.components)
            if len(comp) > 1
        ]


def resolve_components(
    pairs: Iterable[tuple],
    priority: Sequence[str],
    doc_meta: Mapping[int, str],
) -> DuplicateGraph:
    """Union verified pairs and keep one document per component.

    The kept document comes from the highest-priority dataset in the
    component; ties go to the smallest doc_id.
    """
    rank = {name: i for i, name in enumerate(priority)}
    missing = sorted({ds for ds in doc_meta.values() if ds not in rank})
    if missing:
        raise ValueError(f"datasets missing from priority order: {missing}")
    edges = sorted(set(pairs), key=lambda e: (min(e[0], e[1]), max(e[0], e[1]), e[0], e[1]))
    uf = UnionFind(sorted(doc_meta))
    for dup, anchor, _sim in edges:
        for d in (dup, anchor):
            if d not in doc_meta:
                raise ValueError(f"edge references unknown doc_id {d}")
        uf.union(dup, anchor)
    components = uf.groups()
    reps = [min(comp, key=lambda d: (rank[doc_meta[d]], d)) for comp in components]
    return DuplicateGraph(edges=edges, components=components, representatives=reps)


def find_duplicates(
    texts: Mapping[int, str],
    doc_meta: Mapping[int, str],
    priority: Sequence[str],
    params: LshParams = LshParams(),
) -> DuplicateGraph:
    """Run the full fuzzy dedup over ``texts`` keyed by doc_id."""
    features = {d: vectorize(t) for d, t in texts.items()}
    signable = [d for d in sorted(features) if len(features[d])]
    matrix = minhash_signatures([features[d] for d in signable], params)
    signatures = dict(zip(signable, matrix))
    buckets = lsh_group(signatures, params)
    seen = set()
    pairs = []
    for key in sorted(buckets):
        members = buckets[key]
        if len(members) < 2:
            continue
        frozen = frozenset(members)
        # identical bucket contents give identical marks
        if frozen in seen:
            continue
        seen.add(frozen)
        pairs.extend(dedup_bucket(members, features, params, signatures))
    return resolve_components(pairs, priority, doc_meta)
