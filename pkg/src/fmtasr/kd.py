"""Codebook-index distillation loss.

Per-codebook linear classification heads map a student embedding to one
256-way distribution per codebook; the distillation loss is the summed
cross-entropy of those heads against precomputed teacher codebook indexes.
The fused training objective adds the weighted distillation term to the
transducer loss. Gradients are closed-form softmax cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from .mvq import CODEBOOK_SIZE


@dataclass
class CodebookHeads:
    """Weights (N, 256, D) and biases (N, 256) of the classification heads."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 3 or self.weights.shape[1] != CODEBOOK_SIZE:
            raise ValueError(f"weights must be (N, {CODEBOOK_SIZE}, D), got {self.weights.shape}")
        if self.biases.shape != self.weights.shape[:2]:
            raise ValueError(f"biases {self.biases.shape} do not match weights {self.weights.shape}")

    @property
    def n_codebooks(self) -> int:
        return self.weights.shape[0]

    @property
    def student_dim(self) -> int:
        return self.weights.shape[2]

    @classmethod
    def zeros(cls, n_codebooks: int, student_dim: int) -> "CodebookHeads":
        return cls(
            np.zeros((n_codebooks, CODEBOOK_SIZE, student_dim)),
            np.zeros((n_codebooks, CODEBOOK_SIZE)),
        )

    def copy(self) -> "CodebookHeads":
        return CodebookHeads(self.weights.copy(), self.biases.copy())


def _as_frames(embeddings, student_dim: int) -> tuple[np.ndarray, bool]:
    s = np.asarray(embeddings, dtype=np.float64)
    single = s.ndim == 1
    if single:
        s = s[None, :]
    if s.ndim != 2 or s.shape[1] != student_dim:
        raise ValueError(f"embeddings must be (T, {student_dim}), got {s.shape}")
    return s, single


def head_log_probs(heads: CodebookHeads, embeddings) -> np.ndarray:
    """Log-probabilities of every head: (T, N, 256), or (N, 256) for one frame.

    Softmax uses max subtraction, so large logits stay finite.
    """
    s, single = _as_frames(embeddings, heads.student_dim)
    # One flat (T, N*256) matmul, reshaped per head afterwards.
    flat = s @ heads.weights.reshape(-1, heads.student_dim).T + heads.biases.ravel()
    logp = log_softmax(flat.reshape(s.shape[0], heads.n_codebooks, CODEBOOK_SIZE), axis=2)
    return logp[0] if single else logp


def head_probabilities(heads: CodebookHeads, embeddings) -> np.ndarray:
    """Probabilities of every head; rows sum to one."""
    return np.exp(head_log_probs(heads, embeddings))


def _check_targets(targets, n_frames: int, n_codebooks: int) -> np.ndarray:
    idx = np.asarray(targets)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("codebook targets must be integers")
    if idx.shape != (n_frames, n_codebooks):
        raise ValueError(
            f"targets must be ({n_frames}, {n_codebooks}), got {idx.shape}"
        )
    idx = idx.astype(np.int64)
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= CODEBOOK_SIZE:
        raise ValueError(f"codebook indexes outside 0..{CODEBOOK_SIZE - 1}")
    return idx


def kd_loss_and_grad(
    heads: CodebookHeads,
    embeddings,
    targets,
    *,
    normalize: bool = False,
) -> tuple[float, CodebookHeads, np.ndarray]:
    """Cross-entropy of every head at every frame against teacher indexes.

    Returns (loss, head gradients, embedding gradients). The loss sums over
    frames and codebooks; ``normalize=True`` divides loss and gradients by
    the frame count.
    """
    s, _ = _as_frames(embeddings, heads.student_dim)
    n_frames = s.shape[0]
    idx = _check_targets(targets, n_frames, heads.n_codebooks)
    w_flat = heads.weights.reshape(-1, heads.student_dim)
    flat = s @ w_flat.T + heads.biases.ravel()
    cube = flat.reshape(n_frames, heads.n_codebooks, CODEBOOK_SIZE)
    # Fused softmax cross-entropy, minimizing full-tensor passes: shift by
    # the max, pick the target logits, then exponentiate in place.
    cube -= cube.max(axis=2, keepdims=True)
    rows = np.arange(n_frames)[:, None]
    cols = np.arange(heads.n_codebooks)[None, :]
    picked = cube[rows, cols, idx]
    np.exp(cube, out=cube)
    denom = cube.sum(axis=2, keepdims=True)
    loss = float(np.log(denom).sum() - picked.sum())
    dlogits = cube
    dlogits /= denom
    dlogits[rows, cols, idx] -= 1.0
    if normalize:
        loss /= n_frames
        dlogits /= n_frames
    dflat = dlogits.reshape(n_frames, -1)
    grad_w = (dflat.T @ s).reshape(heads.weights.shape)
    grad_b = dlogits.sum(axis=0)
    grad_s = dflat @ w_flat
    return loss, CodebookHeads(grad_w, grad_b), grad_s


def fused_loss(transducer_loss: float, distill_loss: float, weight: float) -> float:
    """Fused objective: transducer loss plus ``weight`` times the distillation loss."""
    if weight < 0:
        raise ValueError(f"distillation weight must be >= 0, got {weight}")
    return transducer_loss + weight * distill_loss
