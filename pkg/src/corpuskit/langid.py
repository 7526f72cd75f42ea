"""Character-trigram language identification.

The default detector is a multinomial naive Bayes model over character
trigrams, trained on the small seed corpus bundled in ``data/langid_seed``.
Any object with a ``detect(text) -> LanguageVerdict`` method can be plugged
into the cleanup stage instead.

Model file layout (all integers little-endian)::

    magic      4 bytes   b"CKLI"
    version    u16       currently 1
    n_langs    u16
    per language:
        code       2 bytes ASCII (ISO-639-1)
        total      u64     sum of trigram counts
        n_grams    u32
        per trigram:
            length  u8      UTF-8 byte length of the trigram
            bytes   length
            count   u32
"""

from __future__ import annotations

import math
import re
import struct
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, Mapping

MAGIC = b"CKLI"
VERSION = 1
MIN_DETECT_CHARS = 20

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_MODEL_PATH = DATA_DIR / "langid.bin"
SEED_DIR = DATA_DIR / "langid_seed"

_NON_LETTER = re.compile(r"[\W\d_]+")


@dataclass(frozen=True)
class LanguageVerdict:
    language: str
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


UNKNOWN = LanguageVerdict("und", 0.0)


def trigrams(text: str) -> Counter:
    words = _NON_LETTER.sub(" ", text.lower()).split()
    grams = Counter()
    for w in words:
        padded = f" {w} "
        for i in range(len(padded) - 2):
            grams[padded[i : i + 3]] += 1
    return grams


class TrigramModel:
    def __init__(self, counts: Mapping[str, Mapping[str, int]]):
        self.counts: Dict[str, Dict[str, int]] = {lang: dict(c) for lang, c in sorted(counts.items())}
        self.totals = {lang: sum(c.values()) for lang, c in self.counts.items()}
        vocab = set()
        for c in self.counts.values():
            vocab.update(c)
        self.vocab_size = len(vocab) + 1

    @property
    def languages(self):
        return list(self.counts)

    @classmethod
    def train(cls, samples: Mapping[str, Iterable[str]]) -> "TrigramModel":
        counts = {}
        for lang, texts in samples.items():
            c = Counter()
            for t in texts:
                c.update(trigrams(t))
            counts[lang] = c
        return cls(counts)

    def log_likelihoods(self, text: str) -> Dict[str, float]:
        grams = trigrams(text)
        out = {}
        for lang, table in self.counts.items():
            denom = math.log(self.totals[lang] + self.vocab_size)
            ll = 0.0
            for g, n in grams.items():
                ll += n * (math.log(table.get(g, 0) + 1) - denom)
            out[lang] = ll
        return out

    def detect(self, text: str) -> LanguageVerdict:
        if len(text) < MIN_DETECT_CHARS or not self.counts:
            return UNKNOWN
        lls = self.log_likelihoods(text)
        if not any(lls.values()):
            return UNKNOWN
        # ties resolve to the alphabetically first language code
        best = max(sorted(lls), key=lambda lang: lls[lang])
        top = lls[best]
        z = sum(math.exp(v - top) for v in lls.values())
        return LanguageVerdict(best, min(1.0, max(0.0, 1.0 / z)))

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<HH", VERSION, len(self.counts))]
        for lang, table in self.counts.items():
            code = lang.encode("ascii")
            if len(code) != 2:
                raise ValueError(f"language code {lang!r} is not two ASCII letters")
            parts.append(code)
            parts.append(struct.pack("<QI", self.totals[lang], len(table)))
            for gram in sorted(table):
                raw = gram.encode("utf-8")
                parts.append(struct.pack("<B", len(raw)) + raw + struct.pack("<I", table[gram]))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "TrigramModel":
        if data[:4] != MAGIC:
            raise ValueError("not a language model file (bad magic)")
        version, n_langs = struct.unpack_from("<HH", data, 4)
        if version != VERSION:
            raise ValueError(f"unsupported language model version {version}")
        pos = 8
        counts = {}
        for _ in range(n_langs):
            lang = data[pos : pos + 2].decode("ascii")
            total, n_grams = struct.unpack_from("<QI", data, pos + 2)
            pos += 14
            table = {}
            for _ in range(n_grams):
                (length,) = struct.unpack_from("<B", data, pos)
                gram = data[pos + 1 : pos + 1 + length].decode("utf-8")
                (count,) = struct.unpack_from("<I", data, pos + 1 + length)
                pos += 1 + length + 4
                table[gram] = count
            if sum(table.values()) != total:
                raise ValueError(f"corrupt language model: totals mismatch for {lang}")
            counts[lang] = table
        return cls(counts)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TrigramModel":
        return cls.from_bytes(Path(path).read_bytes())


def read_seed_corpus(seed_dir=SEED_DIR) -> Dict[str, list]:
    out = {}
    for path in sorted(Path(seed_dir).glob("*.txt")):
        lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
        out[path.stem] = [ln for ln in lines if ln]
    return out


def split_seed(corpus: Mapping[str, list], holdout_every: int = 5):
    """Deterministic split: every ``holdout_every``-th line is held out."""
    train, held = {}, {}
    for lang, lines in corpus.items():
        train[lang] = [ln for i, ln in enumerate(lines) if i % holdout_every != holdout_every - 1]
        held[lang] = [ln for i, ln in enumerate(lines) if i % holdout_every == holdout_every - 1]
    return train, held


def build_default_model(seed_dir=SEED_DIR) -> TrigramModel:
    """The shipped model is trained on the training split only."""
    train, _ = split_seed(read_seed_corpus(seed_dir))
    return TrigramModel.train(train)


@lru_cache(maxsize=1)
def default_model() -> TrigramModel:
    if DEFAULT_MODEL_PATH.exists():
        return TrigramModel.load(DEFAULT_MODEL_PATH)
    return build_default_model()


def detect_language(text: str, model=None) -> LanguageVerdict:
    return (model or default_model()).detect(text)
