"""Hashed bag-of-ngrams quality classifier and Pareto-threshold filtering.

The classifier is logistic regression over hashed unigram and bigram
presence features (2**20 buckets), fitted by averaged SGD. Its positive-class
probability is the document's quality score. ``pareto_keep`` then admits a
document when a Lomax(alpha) draw, keyed by (seed, doc_id), exceeds
``1 - score``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from corpuskit.corpus import Document
from corpuskit.hashing import MASK64, NUM_FEATURES, derive_seed, hash_text, uniform01
from corpuskit.tokens import words

MODEL_MAGIC = b"CKQM"
MODEL_VERSION = 1
DEFAULT_FEATURE_SEED = 0x9A11_7E57


def feature_indices(text: str, seed: int = DEFAULT_FEATURE_SEED) -> np.ndarray:
    """Sorted unique feature ids for the unigrams and bigrams of ``text``."""
    toks = words(text)
    grams = set(toks)
    grams.update(f"{a} {b}" for a, b in zip(toks, toks[1:]))
    if not grams:
        return np.empty(0, dtype=np.int64)
    ids = {hash_text(g, seed) & (NUM_FEATURES - 1) for g in grams}
    return np.fromiter(sorted(ids), dtype=np.int64, count=len(ids))


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass
class QualityModel:
    weights: np.ndarray
    bias: float
    feature_hash_seed: int = DEFAULT_FEATURE_SEED

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        if self.weights.shape != (NUM_FEATURES,):
            raise ValueError(f"weight vector must have length {NUM_FEATURES}, got {self.weights.shape}")
        self.bias = float(self.bias)

    def decision(self, idx: np.ndarray) -> float:
        if len(idx) == 0:
            return self.bias
        # presence features scaled to unit L2 norm
        return float(self.weights[idx].astype(np.float64).sum()) / math.sqrt(len(idx)) + self.bias

    def score_text(self, text: str) -> float:
        return _sigmoid(self.decision(feature_indices(text, self.feature_hash_seed)))

    def to_bytes(self) -> bytes:
        header = MODEL_MAGIC + struct.pack("<HQd", MODEL_VERSION, self.feature_hash_seed & MASK64, self.bias)
        return header + self.weights.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "QualityModel":
        if data[:4] != MODEL_MAGIC:
            raise ValueError("not a quality model file (bad magic)")
        version, seed, bias = struct.unpack_from("<HQd", data, 4)
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported quality model version {version}")
        offset = 4 + struct.calcsize("<HQd")
        weights = np.frombuffer(data, dtype="<f4", offset=offset)
        if weights.size != NUM_FEATURES:
            raise ValueError(f"quality model truncated: {weights.size} of {NUM_FEATURES} weights")
        return cls(weights=weights.astype(np.float32), bias=bias, feature_hash_seed=seed)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "QualityModel":
        return cls.from_bytes(Path(path).read_bytes())


def score_document(model: QualityModel, doc: Document) -> float:
    return model.score_text(doc.text)


def _stratified_split(n: int, holdout_fraction: float, seed: int):
    # same seed for both classes: equal-size classes hold out the same positions
    perm = np.random.default_rng(seed).permutation(n)
    n_hold = int(round(holdout_fraction * n))
    if n >= 2:
        n_hold = min(max(n_hold, 1), n - 1)
    else:
        n_hold = 0
    return perm[n_hold:], perm[:n_hold]


def holdout_accuracy(model: QualityModel, docs: Sequence[Document], labels: Sequence[int]) -> float:
    if not docs:
        return float("nan")
    correct = sum(int(score_document(model, d) >= 0.5) == y for d, y in zip(docs, labels))
    return correct / len(docs)


def train_quality_classifier(
    positives: Sequence[Document],
    negatives: Sequence[Document],
    holdout_fraction: float = 0.1,
    *,
    seed: int = 0,
    epochs: int = 5,
    learning_rate: float = 0.5,
    feature_hash_seed: int = DEFAULT_FEATURE_SEED,
):
    """Fit the classifier and report accuracy on a seeded stratified holdout.

    Returns ``(model, holdout_accuracy)``; the accuracy is computed with the
    returned (float32) model, so re-scoring the holdout reproduces it.
    """
    if not positives:
        raise ValueError("positive class is empty")
    if not negatives:
        raise ValueError("negative class is empty")
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction must lie in (0, 1), got {holdout_fraction}")

    split_seed = derive_seed(seed, "holdout")
    pos_train, pos_hold = _stratified_split(len(positives), holdout_fraction, split_seed)
    neg_train, neg_hold = _stratified_split(len(negatives), holdout_fraction, split_seed)

    train = [(positives[i], 1) for i in pos_train] + [(negatives[i], 0) for i in neg_train]
    held = [(positives[i], 1) for i in pos_hold] + [(negatives[i], 0) for i in neg_hold]
    feats = [feature_indices(d.text, feature_hash_seed) for d, _ in train]
    ys = [y for _, y in train]

    # averaged SGD with the lazy-averaging trick: avg = w - u / c
    w = np.zeros(NUM_FEATURES, dtype=np.float64)
    u = np.zeros(NUM_FEATURES, dtype=np.float64)
    b = ub = 0.0
    c = 1.0
    rng = np.random.default_rng(derive_seed(seed, "shuffle"))
    for _ in range(epochs):
        for j in rng.permutation(len(train)):
            idx = feats[j]
            scale = 1.0 / math.sqrt(len(idx)) if len(idx) else 0.0
            z = w[idx].sum() * scale + b
            g = learning_rate * (_sigmoid(z) - ys[j])
            if len(idx):
                w[idx] -= g * scale
                u[idx] -= c * g * scale
            b -= g
            ub -= c * g
            c += 1.0

    model = QualityModel(weights=w - u / c, bias=b - ub / c, feature_hash_seed=feature_hash_seed)
    acc = holdout_accuracy(model, [d for d, _ in held], [y for _, y in held])
    return model, acc


@dataclass(frozen=True)
class ParetoFilterParams:
    alpha: float = 3.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def lomax_draw(alpha: float, rng_seed: int, doc_id: int) -> float:
    """Inverse-CDF Lomax(alpha, scale 1) draw keyed by (seed, doc_id).

    Survival is P(X > x) = (1 + x) ** -alpha.
    """
    u = uniform01(derive_seed(rng_seed, "pareto"), doc_id)
    # expm1/log1p keep draws next to 0 strictly positive
    return math.expm1(-math.log1p(-u) / alpha)


def pareto_keep(score: float, params: ParetoFilterParams, doc_id: int) -> bool:
    if not 0.0 <= score <= 1.0 or math.isnan(score):
        raise ValueError(f"score {score} outside [0, 1]")
    return lomax_draw(params.alpha, params.rng_seed, doc_id) > 1.0 - score
