"""Transcript preprocessing and tokenized views for formatted-text scoring.

Formatted transcripts keep periods, commas and question marks as standalone
tokens and drop every other punctuation character. Scoring happens on three
token views of the normalized text: PLAIN (lowercased words), CASED (words
with casing intact) and CASED_PUNCT (words plus punctuation tokens).
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

RETAINED_MARKS = (".", ",", "?")

# ASCII symbols that attach to words but are not Unicode category P.
_SYMBOL_CHARS = frozenset("$+<=>^`|~")

_MARK_SET = frozenset(RETAINED_MARKS)


class View(Enum):
    """Token views derived from a normalized transcript."""

    PLAIN = "plain"
    CASED = "cased"
    CASED_PUNCT = "cased_punct"


@dataclass(frozen=True)
class Transcript:
    raw: str
    normalized: str


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    view: View

    def __len__(self) -> int:
        return len(self.tokens)


def _is_word_char(ch: str) -> bool:
    return ch.isalnum()


def _is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P") or ch in _SYMBOL_CHARS


def preprocess(raw: str) -> Transcript:
    """Normalize a raw transcript for formatted scoring.

    Keeps only the retained marks among punctuation, sets them off with
    spaces, and collapses whitespace. Apostrophes and hyphens flanked by
    word characters count as word characters so contractions and compounds
    survive. Runs of one identical mark collapse to a single token, which
    turns ellipses into one period.
    """
    kept: list[str] = []
    last = len(raw) - 1
    for i, ch in enumerate(raw):
        if ch in _MARK_SET:
            kept.append(f" {ch} ")
        elif (
            ch in "'-"
            and 0 < i < last
            and _is_word_char(raw[i - 1])
            and _is_word_char(raw[i + 1])
        ):
            kept.append(ch)
        elif not _is_punctuation(ch):
            kept.append(ch)
    tokens = "".join(kept).split()
    deduped: list[str] = []
    for tok in tokens:
        if tok in _MARK_SET and deduped and deduped[-1] == tok:
            continue
        deduped.append(tok)
    return Transcript(raw=raw, normalized=" ".join(deduped))


def ensure_transcript(text: "Transcript | str") -> Transcript:
    """Preprocess raw strings; pass Transcript instances through."""
    if isinstance(text, Transcript):
        return text
    return preprocess(text)


def tokenize(transcript: "Transcript | str", view: View) -> TokenSequence:
    """Project a normalized transcript onto one of the three token views.

    Accepts a Transcript or an already-normalized string.
    """
    text = transcript.normalized if isinstance(transcript, Transcript) else transcript
    tokens = text.split()
    if view is View.CASED_PUNCT:
        out = tokens
    elif view is View.CASED:
        out = [t for t in tokens if t not in _MARK_SET]
    elif view is View.PLAIN:
        out = [t.lower() for t in tokens if t not in _MARK_SET]
    else:
        raise ValueError(f"unknown view: {view!r}")
    return TokenSequence(tokens=tuple(out), view=view)


def read_transcripts(path: "str | Path", fmt: str = "text") -> list[tuple[str, str]]:
    """Read (id, text) pairs from a transcript file.

    "text" files hold one utterance per line and get line numbers as ids;
    "jsonl" files hold one {"id": ..., "text": ...} object per line.
    """
    content = Path(path).read_text(encoding="utf-8")
    if fmt == "text":
        return [(str(i), line) for i, line in enumerate(content.splitlines())]
    if fmt == "jsonl":
        pairs = []
        for i, line in enumerate(content.splitlines()):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "id" not in obj or "text" not in obj:
                raise ValueError(f"line {i}: jsonl records need 'id' and 'text' fields")
            pairs.append((str(obj["id"]), str(obj["text"])))
        return pairs
    raise ValueError(f"unknown transcript format: {fmt!r}")
