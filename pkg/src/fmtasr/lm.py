"""Toy n-gram language model over label ids, for shallow fusion."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError


class NGramLM(BaseEstimator):
    """Add-k smoothed n-gram over label-id sequences.

    A fitted instance is callable: ``lm(prefix)`` returns normalized
    log-probabilities of the next label, one entry per label id 1..n_labels,
    conditioned on the last ``order - 1`` ids of the prefix. That matches
    the LM scorer interface of ``transducer.beam_search``.
    """

    def __init__(self, order: int = 2, smoothing: float = 0.5, n_labels: "int | None" = None):
        self.order = order
        self.smoothing = smoothing
        self.n_labels = n_labels

    def fit(self, sequences: Iterable[Sequence[int]]) -> "NGramLM":
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.smoothing <= 0:
            raise ValueError("smoothing must be > 0")
        seqs = [tuple(int(v) for v in seq) for seq in sequences]
        if not seqs:
            raise ValueError("no training sequences")
        highest = max((max(s) for s in seqs if s), default=0)
        n_labels = self.n_labels if self.n_labels is not None else highest
        if n_labels < 1 or highest > n_labels or any(min(s, default=1) < 1 for s in seqs):
            raise ValueError("label ids must lie in 1..n_labels")
        counts: dict[tuple[int, ...], np.ndarray] = {}
        for seq in seqs:
            for i, label in enumerate(seq):
                ctx = seq[max(0, i - (self.order - 1)) : i]
                bucket = counts.get(ctx)
                if bucket is None:
                    bucket = np.zeros(n_labels)
                    counts[ctx] = bucket
                bucket[label - 1] += 1.0
        self.n_labels_ = n_labels
        self.counts_ = counts
        return self

    def log_probs(self, prefix: Sequence[int]) -> np.ndarray:
        if not hasattr(self, "counts_"):
            raise NotFittedError("NGramLM is not fitted")
        ctx = tuple(int(v) for v in prefix)
        if self.order > 1:
            ctx = ctx[-(self.order - 1) :]
        else:
            ctx = ()
        bucket = self.counts_.get(ctx)
        if bucket is None:
            bucket = np.zeros(self.n_labels_)
        smoothed = bucket + self.smoothing
        return np.log(smoothed) - np.log(smoothed.sum())

    __call__ = log_probs

    def save(self, path: "str | Path") -> None:
        if not hasattr(self, "counts_"):
            raise NotFittedError("NGramLM is not fitted")
        payload = {
            "order": self.order,
            "smoothing": self.smoothing,
            "n_labels": self.n_labels_,
            "counts": [
                [list(ctx), bucket.tolist()] for ctx, bucket in sorted(self.counts_.items())
            ],
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: "str | Path") -> "NGramLM":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        lm = cls(
            order=int(payload["order"]),
            smoothing=float(payload["smoothing"]),
            n_labels=int(payload["n_labels"]),
        )
        lm.n_labels_ = int(payload["n_labels"])
        lm.counts_ = {
            tuple(int(v) for v in ctx): np.asarray(bucket, dtype=np.float64)
            for ctx, bucket in payload["counts"]
        }
        return lm
