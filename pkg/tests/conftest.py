"""Shared fixtures and oracles for the test suite.

The helpers here deliberately recompute results through routes different
from the library code (path enumeration, slice-based posteriors, central
differences) so the tests act as independent checks rather than mirrors.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import log_softmax

from fmtasr import log_posterior


def random_lattice(rng: np.random.Generator, T: int, U: int, V: int) -> np.ndarray:
    """A normalized random lattice of shape (T, U+1, V)."""
    return log_softmax(rng.normal(size=(T, U + 1, V)), axis=2)


def rel_err(a: float, b: float) -> float:
    """Relative error with a unit floor, |a-b| / max(1, |a|, |b|)."""
    return abs(a - b) / max(1.0, abs(a), abs(b))


def fd_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        hi = f(x)
        xf[i] = orig - h
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def lattice_scorer(lat: np.ndarray):
    """Step scorer backed by a lattice: column u serves every prefix of
    length u, so decode results are comparable against ``log_posterior``."""

    def scorer(t: int, prefix: tuple[int, ...]) -> np.ndarray:
        return lat[t, len(prefix)]

    return scorer


def exhaustive_best(lat: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Posterior argmax over every label sequence the lattice can host.

    Scores each candidate through ``log_posterior`` on the sliced lattice;
    ties break toward the lexicographically smaller sequence, matching the
    decoder's contract.
    """
    T, U1, V = lat.shape
    best_key = None
    best = None
    for length in range(U1):
        for y in itertools.product(range(1, V), repeat=length):
            score = log_posterior(lat[:, : length + 1, :], y)
            key = (-score, y)
            if best_key is None or key < best_key:
                best_key = key
                best = (y, score)
    assert best is not None
    return best


def total_sequences(V: int, max_len: int) -> int:
    """Number of label sequences of length <= max_len over V-1 labels."""
    return sum((V - 1) ** k for k in range(max_len + 1))


def assert_params_equal(a, b) -> None:
    """Bitwise equality across every named tensor of two parameter sets."""
    named_a = dict(a.named_arrays())
    named_b = dict(b.named_arrays())
    assert named_a.keys() == named_b.keys()
    for name, arr in named_a.items():
        assert np.array_equal(arr, named_b[name]), f"tensor {name} differs"
