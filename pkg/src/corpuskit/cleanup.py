"""Unicode repair and the rule-based document drops.

``fix_text`` applies a small, ordered rule table and iterates it to a fixed
point, which makes it idempotent by construction:

1. mojibake repair: text that was UTF-8 encoded, then decoded as cp1252 or
   latin-1, is re-encoded and decoded as UTF-8 when that strictly reduces
   the number of tell-tale characters;
2. control characters (Unicode category Cc, plus U+FEFF) are removed, except
   ``\\n`` and ``\\t``;
3. NFC normalisation.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from typing import Optional

from corpuskit.corpus import Document

RULES_VERSION = 1

MIN_CHARS = 512
JAVASCRIPT_MAX_CHARS = 256
JAVASCRIPT_WORD = "javascript"

_MAX_PASSES = 8

# cp1252 maps 0x80-0x9F to these code points; the five undefined bytes fall
# back to their latin-1 C1 control code points.
_CP1252_REVERSE = {}
for _b in range(0x80, 0xA0):
    try:
        _CP1252_REVERSE[bytes([_b]).decode("cp1252")] = _b
    except UnicodeDecodeError:
        _CP1252_REVERSE[chr(_b)] = _b

# A UTF-8 lead byte (0xC2-0xF4) rendered as a single-byte character, followed
# by one or more continuation bytes (0x80-0xBF) rendered the same way.
_CONT_CHARS = "".join(sorted(_CP1252_REVERSE)) + "".join(chr(c) for c in range(0xA0, 0xC0))
_MOJIBAKE_RE = re.compile("[Â-ô][" + re.escape(_CONT_CHARS) + "]+")


def _single_byte(ch: str) -> Optional[int]:
    code = ord(ch)
    if code < 0x80 or 0xA0 <= code <= 0xFF:
        return code
    return _CP1252_REVERSE.get(ch)


def _suspicion(text: str) -> int:
    return sum(len(m.group()) for m in _MOJIBAKE_RE.finditer(text))


def _repair_mojibake(text: str) -> str:
    if not _MOJIBAKE_RE.search(text):
        return text
    out = bytearray()
    for ch in text:
        b = _single_byte(ch)
        if b is None:
            return text
        out.append(b)
    try:
        candidate = out.decode("utf-8")
    except UnicodeDecodeError:
        return _repair_segments(text)
    if _suspicion(candidate) < _suspicion(text):
        return candidate
    return text


def _repair_segments(text: str) -> str:
    """Fallback when the whole string does not round-trip: fix each run."""

    def fix(match):
        seg = match.group()
        try:
            raw = bytes(_single_byte(c) for c in seg)
            return raw.decode("utf-8")
        except (UnicodeDecodeError, TypeError):
            return seg

    return _MOJIBAKE_RE.sub(fix, text)


def _strip_controls(text: str) -> str:
    return "".join(
        ch
        for ch in text
        if ch in "\n\t" or (unicodedata.category(ch) != "Cc" and ch != "﻿")
    )


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


RULES = (
    ("mojibake", _repair_mojibake),
    ("control_chars", _strip_controls),
    ("nfc", _nfc),
)


def fix_text(text: str) -> str:
    for _ in range(_MAX_PASSES):
        before = text
        for _name, rule in RULES:
            text = rule(text)
        if text == before:
            break
    return text


@dataclass(frozen=True)
class Decision:
    keep: bool
    reason: Optional[str] = None

    def __bool__(self):
        return self.keep


KEEP = Decision(True)


def apply_rules(doc: Document, verdict, language: str = "en") -> Decision:
    """Keep/drop by precedence: language, then length, then the javascript rule.

    The javascript rule (< 256 chars) is subsumed by the 512-char rule; both
    are checked so the reason reported follows the precedence.
    """
    if verdict.language != language:
        return Decision(False, "language")
    if doc.char_count < MIN_CHARS:
        return Decision(False, "short")
    if doc.char_count < JAVASCRIPT_MAX_CHARS and JAVASCRIPT_WORD in doc.text.lower():
        return Decision(False, "javascript")
    return KEEP
