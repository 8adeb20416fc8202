"""Corpus metrics for formatted transcripts.

Word error rates are computed per view (PLAIN, CASED, CASED_PUNCT), the
punctuation error rate over the punctuation-only subsequence, and the
punctuation / capitalization F1 protocol over the subset of utterance pairs
whose PLAIN views match exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .textnorm import (
    RETAINED_MARKS,
    TokenSequence,
    Transcript,
    View,
    ensure_transcript,
    tokenize,
)

_MARK_SET = frozenset(RETAINED_MARKS)

MATCH = "match"
SUB = "sub"
DEL = "del"
INS = "ins"


@dataclass(frozen=True)
class EditStep:
    op: str
    ref_index: "int | None"
    hyp_index: "int | None"


@dataclass(frozen=True)
class EditAlignment:
    ops: tuple[EditStep, ...]
    substitutions: int
    insertions: int
    deletions: int

    @property
    def cost(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def _tokens(seq) -> tuple[str, ...]:
    if isinstance(seq, TokenSequence):
        return seq.tokens
    return tuple(seq)


def align(ref, hyp) -> EditAlignment:
    """Levenshtein-align two token sequences with unit costs.

    When several backtraces tie, matches win over substitutions, which win
    over deletions, which win over insertions, so alignments are stable.
    """
    r, h = _tokens(ref), _tokens(hyp)
    n, m = len(r), len(h)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = i
    for j in range(1, m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        ri = r[i - 1]
        for j in range(1, m + 1):
            row[j] = min(
                prev[j - 1] + (ri != h[j - 1]),
                prev[j] + 1,
                row[j - 1] + 1,
            )
    ops: list[EditStep] = []
    subs = dels = inss = 0
    i, j = n, m
    while i > 0 or j > 0:
        cost = dp[i][j]
        if i > 0 and j > 0 and r[i - 1] == h[j - 1] and dp[i - 1][j - 1] == cost:
            ops.append(EditStep(MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i - 1][j - 1] + 1 == cost:
            ops.append(EditStep(SUB, i - 1, j - 1))
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dp[i - 1][j] + 1 == cost:
            ops.append(EditStep(DEL, i - 1, None))
            dels += 1
            i -= 1
        else:
            ops.append(EditStep(INS, None, j - 1))
            inss += 1
            j -= 1
    ops.reverse()
    return EditAlignment(tuple(ops), substitutions=subs, insertions=inss, deletions=dels)


def _pairs(refs, hyps) -> list[tuple[Transcript, Transcript]]:
    refs, hyps = list(refs), list(hyps)
    if not refs:
        raise ValueError("empty corpus")
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    return [(ensure_transcript(r), ensure_transcript(h)) for r, h in zip(refs, hyps)]


def _rate(total_cost: int, total_ref: int) -> float:
    if total_ref == 0:
        if total_cost == 0:
            return 0.0
        raise ValueError("rate undefined: zero reference tokens with nonzero edits")
    return 100.0 * total_cost / total_ref


def word_error_rate(refs: Iterable, hyps: Iterable, view: View = View.PLAIN) -> float:
    """Corpus-level WER in percent: 100 * (S + I + D) / reference tokens."""
    total_cost = total_ref = 0
    for ref, hyp in _pairs(refs, hyps):
        rt = tokenize(ref, view)
        total_cost += align(rt, tokenize(hyp, view)).cost
        total_ref += len(rt)
    return _rate(total_cost, total_ref)


def _punct_subsequence(transcript: Transcript) -> tuple[str, ...]:
    return tuple(t for t in tokenize(transcript, View.CASED_PUNCT).tokens if t in _MARK_SET)


def punctuation_error_rate(refs: Iterable, hyps: Iterable) -> float:
    """Edit-distance rate over the punctuation-only subsequences, in percent."""
    total_cost = total_ref = 0
    for ref, hyp in _pairs(refs, hyps):
        rp = _punct_subsequence(ref)
        total_cost += align(rp, _punct_subsequence(hyp)).cost
        total_ref += len(rp)
    if total_ref == 0:
        raise ValueError("punctuation error rate undefined: no reference punctuation")
    return _rate(total_cost, total_ref)


@dataclass(frozen=True)
class F1Score:
    precision: float
    recall: float
    f1: float


def _f1_from_counts(tp: int, fp: int, fn: int) -> F1Score:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return F1Score(precision, recall, f1)


def _punct_slots(tokens: Sequence[str]) -> list[list[str]]:
    # slot i holds the marks between word i-1 and word i; slot 0 leads.
    slots: list[list[str]] = [[]]
    for tok in tokens:
        if tok in _MARK_SET:
            slots[-1].append(tok)
        else:
            slots.append([])
    return slots


def zero_wer_f1(refs: Iterable, hyps: Iterable) -> tuple[int, "F1Score | None", "F1Score | None"]:
    """Punctuation and capitalization F1 over pairs whose PLAIN views match.

    Word errors would confound both scores, so only utterance pairs with a
    PLAIN word error of zero qualify. Punctuation is scored per inter-word
    slot: a hypothesis mark equal to the reference mark in the same slot is
    a true positive, any other hypothesis mark a false positive, and any
    unmatched reference mark a false negative, micro-averaged over the three
    marks. Capitalization scores word positions whose reference form differs
    from its lowercase; a true positive requires the exact reference form.

    Returns (qualifying pair count, punctuation F1, capitalization F1);
    the scores are None when no pair qualifies.
    """
    tp_p = fp_p = fn_p = 0
    tp_c = fp_c = fn_c = 0
    qualifying = 0
    for ref, hyp in _pairs(refs, hyps):
        if tokenize(ref, View.PLAIN).tokens != tokenize(hyp, View.PLAIN).tokens:
            continue
        qualifying += 1
        ref_pc = tokenize(ref, View.CASED_PUNCT).tokens
        hyp_pc = tokenize(hyp, View.CASED_PUNCT).tokens
        for ref_slot, hyp_slot in zip(_punct_slots(ref_pc), _punct_slots(hyp_pc)):
            for k in range(max(len(ref_slot), len(hyp_slot))):
                r = ref_slot[k] if k < len(ref_slot) else None
                h = hyp_slot[k] if k < len(hyp_slot) else None
                if h is not None and h == r:
                    tp_p += 1
                else:
                    if h is not None:
                        fp_p += 1
                    if r is not None:
                        fn_p += 1
        for rw, hw in zip(tokenize(ref, View.CASED).tokens, tokenize(hyp, View.CASED).tokens):
            if rw != rw.lower() and hw == rw:
                tp_c += 1
            else:
                if hw != hw.lower():
                    fp_c += 1
                if rw != rw.lower():
                    fn_c += 1
    if qualifying == 0:
        return 0, None, None
    return qualifying, _f1_from_counts(tp_p, fp_p, fn_p), _f1_from_counts(tp_c, fp_c, fn_c)


@dataclass(frozen=True)
class MetricsReport:
    """Full corpus report: the three WER variants, PER and the F1 protocol."""

    wer: float
    wer_c: float
    wer_pc: float
    per: float
    zero_wer_count: int
    total_count: int
    punct_f1: "F1Score | None"
    capit_f1: "F1Score | None"

    @property
    def zero_wer_fraction(self) -> float:
        return self.zero_wer_count / self.total_count

    def to_dict(self) -> dict:
        def triple(score: "F1Score | None"):
            if score is None:
                return None
            return {"p": score.precision, "r": score.recall, "f1": score.f1}

        return {
            "wer": self.wer,
            "wer_c": self.wer_c,
            "wer_pc": self.wer_pc,
            "per": self.per,
            "zero_wer_fraction": self.zero_wer_fraction,
            "punct": triple(self.punct_f1),
            "capit": triple(self.capit_f1),
        }

    def to_table(self) -> str:
        def triple(name: str, score: "F1Score | None") -> list[str]:
            if score is None:
                return [f"{name:<18}n/a"]
            return [
                f"{name:<18}P {score.precision:.4f}  R {score.recall:.4f}  F1 {score.f1:.4f}"
            ]

        lines = [
            f"{'WER':<18}{self.wer:.2f}",
            f"{'WER C':<18}{self.wer_c:.2f}",
            f"{'WER PC':<18}{self.wer_pc:.2f}",
            f"{'PER':<18}{self.per:.2f}",
            f"{'zero-WER pairs':<18}{self.zero_wer_count}/{self.total_count}",
        ]
        lines += triple("punct F1", self.punct_f1)
        lines += triple("capit F1", self.capit_f1)
        return "\n".join(lines)


def evaluate_corpus(refs: Iterable, hyps: Iterable) -> MetricsReport:
    """Compute every corpus metric in one pass over (ref, hyp) pairs."""
    pairs = _pairs(refs, hyps)
    refs_t = [r for r, _ in pairs]
    hyps_t = [h for _, h in pairs]
    count, punct, capit = zero_wer_f1(refs_t, hyps_t)
    return MetricsReport(
        wer=word_error_rate(refs_t, hyps_t, View.PLAIN),
        wer_c=word_error_rate(refs_t, hyps_t, View.CASED),
        wer_pc=word_error_rate(refs_t, hyps_t, View.CASED_PUNCT),
        per=punctuation_error_rate(refs_t, hyps_t),
        zero_wer_count=count,
        total_count=len(pairs),
        punct_f1=punct,
        capit_f1=capit,
    )
