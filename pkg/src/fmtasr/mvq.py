"""Multi-codebook residual vector quantization and its file formats.

Embeddings compress to one 8-bit index per codebook: stage n stores the
index of the nearest entry of codebook n and hands the residual to stage
n + 1. Reconstruction sums the indexed entries. Sixteen codebooks over
512-dim float32 embeddings pack each frame into 16 bytes, a 128x reduction;
see ``compression_rate``.
"""

from __future__ import annotations

import warnings
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.cluster import kmeans_plusplus
from sklearn.utils import check_array, check_random_state
from sklearn.utils.validation import check_is_fitted

from ._binio import (
    BadMagicError,
    FileFormatError,
    HeaderMismatchError,
    TruncatedPayloadError,
    expect_eof,
    expect_magic,
    read_exact,
    read_u8,
    read_u32,
    write_u8,
    write_u32,
)

__all__ = [
    "CODEBOOK_SIZE",
    "MultiCodebookQuantizer",
    "compression_rate",
    "write_indexes",
    "read_indexes",
    "write_codebooks",
    "read_codebooks",
    "write_embeddings",
    "read_embeddings",
    "FileFormatError",
    "BadMagicError",
    "TruncatedPayloadError",
    "HeaderMismatchError",
]

CODEBOOK_SIZE = 256

INDEX_MAGIC = b"MVQ1"
CODEBOOK_MAGIC = b"MVQC"
EMBEDDING_MAGIC = b"MVQE"


def _nearest(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin breaks exact ties toward the lowest entry index
    return cdist(points, centers, "sqeuclidean").argmin(axis=1)


def _lloyd(points: np.ndarray, n_iters: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """k-means++ seeded Lloyd iterations; returns centers and the per-iteration
    MSE trace measured at each assignment step."""
    centers, _ = kmeans_plusplus(points, CODEBOOK_SIZE, random_state=rng)
    centers = centers.astype(np.float64)
    trace = np.empty(n_iters)
    for it in range(n_iters):
        d2 = cdist(points, centers, "sqeuclidean")
        assign = d2.argmin(axis=1)
        min_d2 = d2[np.arange(len(points)), assign]
        trace[it] = float(min_d2.mean())
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, points)
        counts = np.bincount(assign, minlength=CODEBOOK_SIZE)
        nonempty = counts > 0
        new = centers.copy()
        new[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            # reseed each empty cluster from the worst-quantized points,
            # largest error first; deterministic given the assignment
            worst = np.argsort(-min_d2, kind="stable")[: empty.size]
            new[empty] = points[worst]
        centers = new
    return centers, trace


class MultiCodebookQuantizer(BaseEstimator, TransformerMixin):
    """Sequential residual k-means quantizer with 8-bit codebooks.

    Parameters
    ----------
    n_codebooks : int, default=16
        Number of quantization stages; each frame encodes to this many bytes.
    n_iters : int, default=20
        Lloyd iterations per stage.
    random_state : int, RandomState instance or None, default=None
        Seeds k-means++ and empty-cluster reseeding; fits are reproducible
        for a fixed integer seed.

    Attributes
    ----------
    codebooks_ : ndarray of shape (n_codebooks, 256, n_features)
        Learned codebook entries.
    mse_traces_ : list of ndarray
        Mean squared quantization error at each Lloyd assignment step, one
        array per stage; non-increasing within a stage.
    padded_stages_ : list of int
        Stages that saw fewer than 256 distinct points and were padded with
        zero vectors instead of running Lloyd iterations.
    n_features_in_ : int
    """

    def __init__(self, n_codebooks: int = 16, n_iters: int = 20, random_state=None):
        self.n_codebooks = n_codebooks
        self.n_iters = n_iters
        self.random_state = random_state

    def fit(self, X, y=None) -> "MultiCodebookQuantizer":
        if self.n_codebooks < 1:
            raise ValueError("n_codebooks must be >= 1")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        X = check_array(X, dtype=np.float64)
        if X.shape[0] < CODEBOOK_SIZE:
            raise ValueError(
                f"need at least {CODEBOOK_SIZE} points to fit, got {X.shape[0]}"
            )
        rng = check_random_state(self.random_state)
        residuals = X.copy()
        codebooks = np.empty((self.n_codebooks, CODEBOOK_SIZE, X.shape[1]))
        traces: list[np.ndarray] = []
        padded: list[int] = []
        for stage in range(self.n_codebooks):
            distinct = np.unique(residuals, axis=0)
            if distinct.shape[0] < CODEBOOK_SIZE:
                warnings.warn(
                    f"stage {stage}: only {distinct.shape[0]} distinct points; "
                    "padding codebook with zero vectors",
                    RuntimeWarning,
                    stacklevel=2,
                )
                centers = np.zeros((CODEBOOK_SIZE, X.shape[1]))
                centers[: distinct.shape[0]] = distinct
                assign = _nearest(residuals, centers)
                trace = np.array(
                    [float(((residuals - centers[assign]) ** 2).sum(axis=1).mean())]
                )
                padded.append(stage)
            else:
                centers, trace = _lloyd(residuals, self.n_iters, rng)
                assign = _nearest(residuals, centers)
            codebooks[stage] = centers
            traces.append(trace)
            residuals -= centers[assign]
        self.codebooks_ = codebooks
        self.mse_traces_ = traces
        self.padded_stages_ = padded
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        """Greedy residual encode: per stage, the index of the nearest entry.

        Returns one uint8 row of ``n_codebooks`` indexes per input frame.
        """
        check_is_fitted(self, "codebooks_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        residual = X.copy()
        codes = np.empty((X.shape[0], self.codebooks_.shape[0]), dtype=np.uint8)
        for stage, entries in enumerate(self.codebooks_):
            idx = _nearest(residual, entries)
            codes[:, stage] = idx
            residual -= entries[idx]
        return codes

    def inverse_transform(self, codes) -> np.ndarray:
        """Reconstruct embeddings as the sum of the indexed entries."""
        check_is_fitted(self, "codebooks_")
        codes = np.asarray(codes)
        if not np.issubdtype(codes.dtype, np.integer):
            raise ValueError("codebook indexes must be integers")
        n_codebooks = self.codebooks_.shape[0]
        if codes.ndim != 2 or codes.shape[1] != n_codebooks:
            raise ValueError(f"codes must be (n, {n_codebooks}), got {codes.shape}")
        idx = codes.astype(np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= CODEBOOK_SIZE):
            raise ValueError(f"codebook indexes outside 0..{CODEBOOK_SIZE - 1}")
        out = np.zeros((codes.shape[0], self.n_features_in_))
        for stage, entries in enumerate(self.codebooks_):
            out += entries[idx[:, stage]]
        return out

    @classmethod
    def from_codebooks(cls, codebooks) -> "MultiCodebookQuantizer":
        """Wrap pretrained codebooks, e.g. loaded from a codebook file."""
        cb = np.asarray(codebooks, dtype=np.float64)
        if cb.ndim != 3 or cb.shape[1] != CODEBOOK_SIZE:
            raise ValueError(f"codebooks must be (N, {CODEBOOK_SIZE}, D), got {cb.shape}")
        quantizer = cls(n_codebooks=cb.shape[0])
        quantizer.codebooks_ = cb.copy()
        quantizer.mse_traces_ = []
        quantizer.padded_stages_ = []
        quantizer.n_features_in_ = cb.shape[2]
        return quantizer


def compression_rate(dim: int, bytes_per_scalar: int, n_codebooks: int) -> float:
    """Storage ratio of raw embeddings to one-byte-per-codebook indexes.

    compression_rate(512, 4, 16) == 128.0.
    """
    if dim < 1 or bytes_per_scalar < 1 or n_codebooks < 1:
        raise ValueError("all arguments must be positive")
    return (dim * bytes_per_scalar) / n_codebooks


def write_indexes(
    path: "str | Path",
    utterances: Sequence[np.ndarray],
    *,
    n_codebooks: "int | None" = None,
) -> None:
    """Write per-utterance codebook indexes.

    Layout, little-endian: magic "MVQ1", u8 codebook count N, u32 utterance
    count, then per utterance a u32 frame count T followed by T*N index
    bytes in row-major order. ``n_codebooks`` is only required for an empty
    dataset, where the header count cannot be inferred.
    """
    arrays = []
    for i, arr in enumerate(utterances):
        a = np.asarray(arr)
        if a.ndim != 2:
            raise ValueError(f"utterance {i}: indexes must be 2-D, got shape {a.shape}")
        if not np.issubdtype(a.dtype, np.integer):
            raise ValueError(f"utterance {i}: indexes must be integers")
        if a.size and (a.min() < 0 or a.max() >= CODEBOOK_SIZE):
            raise ValueError(f"utterance {i}: indexes outside 0..{CODEBOOK_SIZE - 1}")
        arrays.append(np.ascontiguousarray(a, dtype=np.uint8))
    if arrays:
        n = arrays[0].shape[1]
    elif n_codebooks is not None:
        n = n_codebooks
    else:
        raise ValueError("n_codebooks is required when writing zero utterances")
    if not 1 <= n <= 255:
        raise ValueError(f"codebook count must be in 1..255, got {n}")
    if n_codebooks is not None and n != n_codebooks:
        raise ValueError(f"utterances have {n} codebooks, expected {n_codebooks}")
    if any(a.shape[1] != n for a in arrays):
        raise ValueError("utterances disagree on codebook count")
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        write_u8(f, n)
        write_u32(f, len(arrays))
        for a in arrays:
            write_u32(f, a.shape[0])
            f.write(a.tobytes())


def read_indexes(path: "str | Path", expected_n: "int | None" = None) -> list[np.ndarray]:
    """Read per-utterance codebook indexes written by ``write_indexes``."""
    with open(path, "rb") as f:
        expect_magic(f, INDEX_MAGIC)
        n = read_u8(f, "codebook count")
        if n < 1:
            raise HeaderMismatchError("header declares zero codebooks")
        if expected_n is not None and n != expected_n:
            raise HeaderMismatchError(f"expected {expected_n} codebooks, header says {n}")
        count = read_u32(f, "utterance count")
        utterances = []
        for i in range(count):
            frames = read_u32(f, f"frame count of utterance {i}")
            payload = read_exact(f, frames * n, f"indexes of utterance {i}")
            utterances.append(
                np.frombuffer(payload, dtype=np.uint8).reshape(frames, n).copy()
            )
        expect_eof(f)
    return utterances


def write_codebooks(path: "str | Path", codebooks) -> None:
    """Write a codebook set.

    Layout, little-endian: magic "MVQC", u8 codebook count N, u32 dim D,
    then N*256*D float64 values in row-major order.
    """
    cb = np.ascontiguousarray(codebooks, dtype=np.float64)
    if cb.ndim != 3 or cb.shape[1] != CODEBOOK_SIZE:
        raise ValueError(f"codebooks must be (N, {CODEBOOK_SIZE}, D), got {cb.shape}")
    if not 1 <= cb.shape[0] <= 255:
        raise ValueError(f"codebook count must be in 1..255, got {cb.shape[0]}")
    with open(path, "wb") as f:
        f.write(CODEBOOK_MAGIC)
        write_u8(f, cb.shape[0])
        write_u32(f, cb.shape[2])
        f.write(cb.astype("<f8").tobytes())


def read_codebooks(path: "str | Path") -> np.ndarray:
    """Read a codebook set written by ``write_codebooks``."""
    with open(path, "rb") as f:
        expect_magic(f, CODEBOOK_MAGIC)
        n = read_u8(f, "codebook count")
        if n < 1:
            raise HeaderMismatchError("header declares zero codebooks")
        dim = read_u32(f, "embedding dim")
        if dim < 1:
            raise HeaderMismatchError("header declares zero dim")
        payload = read_exact(f, n * CODEBOOK_SIZE * dim * 8, "codebook entries")
        expect_eof(f)
    return (
        np.frombuffer(payload, dtype="<f8")
        .reshape(n, CODEBOOK_SIZE, dim)
        .astype(np.float64)
    )


def write_embeddings(path: "str | Path", utterances: Sequence[np.ndarray]) -> None:
    """Write per-utterance embedding matrices.

    Layout, little-endian: magic "MVQE", u32 dim D, u32 utterance count,
    then per utterance a u32 frame count T followed by T*D float64 values.
    """
    arrays = [np.ascontiguousarray(a, dtype=np.float64) for a in utterances]
    if not arrays:
        raise ValueError("no utterances to write")
    if any(a.ndim != 2 for a in arrays):
        raise ValueError("embeddings must be 2-D per utterance")
    dim = arrays[0].shape[1]
    if any(a.shape[1] != dim for a in arrays):
        raise ValueError("utterances disagree on embedding dim")
    with open(path, "wb") as f:
        f.write(EMBEDDING_MAGIC)
        write_u32(f, dim)
        write_u32(f, len(arrays))
        for a in arrays:
            write_u32(f, a.shape[0])
            f.write(a.astype("<f8").tobytes())


def read_embeddings(path: "str | Path") -> list[np.ndarray]:
    """Read per-utterance embedding matrices written by ``write_embeddings``."""
    with open(path, "rb") as f:
        expect_magic(f, EMBEDDING_MAGIC)
        dim = read_u32(f, "embedding dim")
        if dim < 1:
            raise HeaderMismatchError("header declares zero dim")
        count = read_u32(f, "utterance count")
        utterances = []
        for i in range(count):
            frames = read_u32(f, f"frame count of utterance {i}")
            payload = read_exact(f, frames * dim * 8, f"embeddings of utterance {i}")
            utterances.append(
                np.frombuffer(payload, dtype="<f8").reshape(frames, dim).astype(np.float64)
            )
        expect_eof(f)
    return utterances
