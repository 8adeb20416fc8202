"""Transducer posterior, loss and decoding over output lattices.

A lattice is a float64 array of shape (T, U + 1, V): cell (t, u) holds the
model's log-probabilities over the blank-augmented vocabulary at frame t
after u emitted labels. Index 0 of the vocabulary axis is blank; label ids
occupy 1..V-1. A well-formed lattice has logsumexp == 0 along the
vocabulary axis, see ``validate_lattice``.

The posterior of a label sequence marginalizes over every monotone
alignment: an interleaving of T blank steps and U label emissions whose
final step is the blank emitted at the last frame after the last label.
All dynamic programs run in log space at double precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import log_softmax, logsumexp

BLANK_ID = 0

# Path enumeration is exponential; keep the exact oracle at desk scale.
MAX_BRUTE_FRAMES = 6
MAX_BRUTE_LABELS = 4


def _as_lattice(log_probs) -> np.ndarray:
    lat = np.asarray(log_probs, dtype=np.float64)
    if lat.ndim != 3:
        raise ValueError(f"lattice must have shape (T, U+1, V), got {lat.shape}")
    if lat.shape[0] < 1 or lat.shape[1] < 1 or lat.shape[2] < 2:
        raise ValueError(f"degenerate lattice shape {lat.shape}")
    if np.isnan(lat).any():
        raise ValueError("lattice contains NaN")
    return lat


def _check_labels(labels, lattice: np.ndarray) -> tuple[int, ...]:
    y = tuple(int(v) for v in labels)
    if len(y) != lattice.shape[1] - 1:
        raise ValueError(
            f"label count {len(y)} does not match lattice rows {lattice.shape[1]}"
        )
    vocab = lattice.shape[2]
    for v in y:
        if not 1 <= v < vocab:
            raise ValueError(f"label id {v} outside 1..{vocab - 1}")
    return y


def validate_lattice(log_probs, *, atol: float = 1e-9) -> np.ndarray:
    """Check the normalization invariant and return the float64 lattice."""
    lat = _as_lattice(log_probs)
    worst = float(np.max(np.abs(logsumexp(lat, axis=2))))
    if worst > atol:
        raise ValueError(f"lattice rows not normalized: |logsumexp| up to {worst:.3g}")
    return lat


def log_posterior(log_probs, labels) -> float:
    """Exact log posterior of a label sequence under a normalized lattice.

    Forward recursion over alignment prefixes: alpha(t, u) accumulates every
    way of consuming t frames and u labels, and the result adds the final
    blank at (T-1, U).
    """
    lat = _as_lattice(log_probs)
    y = _check_labels(labels, lat)
    T, U = lat.shape[0], len(y)
    alpha = np.full((T, U + 1), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            via_blank = alpha[t - 1, u] + lat[t - 1, u, BLANK_ID] if t > 0 else -np.inf
            via_label = alpha[t, u - 1] + lat[t, u - 1, y[u - 1]] if u > 0 else -np.inf
            alpha[t, u] = np.logaddexp(via_blank, via_label)
    return float(alpha[T - 1, U] + lat[T - 1, U, BLANK_ID])


def alignment_log_probs(log_probs, labels) -> np.ndarray:
    """Log-probability of every individual alignment, by brute enumeration.

    Guarded to T <= 6 and U <= 4; the path count is the binomial
    C(T + U - 1, U).
    """
    lat = _as_lattice(log_probs)
    y = _check_labels(labels, lat)
    T, U = lat.shape[0], len(y)
    if T > MAX_BRUTE_FRAMES or U > MAX_BRUTE_LABELS:
        raise ValueError(
            f"enumeration guarded to T<={MAX_BRUTE_FRAMES}, U<={MAX_BRUTE_LABELS}"
        )
    paths: list[float] = []

    def walk(t: int, u: int, acc: float) -> None:
        if u < U:
            walk(t, u + 1, acc + lat[t, u, y[u]])
        acc += lat[t, u, BLANK_ID]
        if t + 1 == T:
            if u == U:
                paths.append(acc)
        else:
            walk(t + 1, u, acc)

    walk(0, 0, 0.0)
    return np.array(paths)


def brute_force_log_posterior(log_probs, labels) -> float:
    """Sum of all alignment probabilities; exact oracle for log_posterior."""
    return float(logsumexp(alignment_log_probs(log_probs, labels)))


def loss_and_grad(log_probs, labels) -> tuple[float, np.ndarray]:
    """Negative log posterior and its gradient w.r.t. the lattice entries.

    Each cell is renormalized (log-softmax over the vocabulary axis) before
    the dynamic program, so the input may be raw joiner logits; on an
    already-normalized lattice the loss equals -log_posterior. The gradient
    is taken through that renormalization: with gamma the posterior arc
    occupancies, grad = softmax(cell) * sum_k gamma_k - gamma, which
    vanishes at cells that put probability one on the observed arc.
    """
    raw = _as_lattice(log_probs)
    y = _check_labels(labels, raw)
    lat = log_softmax(raw, axis=2)
    T, U = lat.shape[0], len(y)

    alpha = np.full((T, U + 1), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            via_blank = alpha[t - 1, u] + lat[t - 1, u, BLANK_ID] if t > 0 else -np.inf
            via_label = alpha[t, u - 1] + lat[t, u - 1, y[u - 1]] if u > 0 else -np.inf
            alpha[t, u] = np.logaddexp(via_blank, via_label)

    beta = np.full((T, U + 1), -np.inf)
    beta[T - 1, U] = lat[T - 1, U, BLANK_ID]
    for t in reversed(range(T)):
        for u in reversed(range(U + 1)):
            if t == T - 1 and u == U:
                continue
            via_blank = lat[t, u, BLANK_ID] + beta[t + 1, u] if t + 1 < T else -np.inf
            via_label = lat[t, u, y[u]] + beta[t, u + 1] if u < U else -np.inf
            beta[t, u] = np.logaddexp(via_blank, via_label)

    total = beta[0, 0]
    occupancy = np.zeros_like(lat)
    for t in range(T):
        for u in range(U + 1):
            if t + 1 < T:
                blank_cont = beta[t + 1, u]
            else:
                blank_cont = 0.0 if u == U else -np.inf
            occupancy[t, u, BLANK_ID] = np.exp(
                alpha[t, u] + lat[t, u, BLANK_ID] + blank_cont - total
            )
            if u < U:
                occupancy[t, u, y[u]] += np.exp(
                    alpha[t, u] + lat[t, u, y[u]] + beta[t, u + 1] - total
                )
    cell_mass = occupancy.sum(axis=2, keepdims=True)
    grad = np.exp(lat) * cell_mass - occupancy
    return float(-total), grad


@dataclass(frozen=True)
class Hypothesis:
    """A decode result: label ids, fused score, accumulated LM log-prob."""

    tokens: tuple[int, ...]
    score: float
    lm_score: float


StepScorer = Callable[[int, tuple[int, ...]], np.ndarray]
LMScorer = Callable[[tuple[int, ...]], np.ndarray]


def _symbol_cap(max_symbols: "int | None", n_frames: int) -> int:
    if max_symbols is not None:
        if max_symbols < 0:
            raise ValueError("max_symbols must be >= 0")
        return max_symbols
    return 4 * n_frames


def greedy_search(
    scorer: StepScorer,
    n_frames: int,
    *,
    lm: "LMScorer | None" = None,
    lm_weight: float = 0.3,
    max_symbols: "int | None" = None,
) -> Hypothesis:
    """Argmax decoding: at each step take the best fused symbol, blank moves
    to the next frame. The LM is consulted only when fusion is active, so a
    zero weight is bitwise independent of it."""
    cap = _symbol_cap(max_symbols, n_frames)
    fuse = lm is not None and lm_weight != 0.0
    tokens: list[int] = []
    acoustic = 0.0
    lm_total = 0.0
    for t in range(n_frames):
        while True:
            dist = np.asarray(scorer(t, tuple(tokens)), dtype=np.float64)
            if len(tokens) >= cap:
                choice = BLANK_ID
            else:
                step = dist.copy()
                lm_dist = None
                if fuse:
                    lm_dist = np.asarray(lm(tuple(tokens)), dtype=np.float64)
                    step[1:] += lm_weight * lm_dist
                choice = int(np.argmax(step))
            if choice == BLANK_ID:
                acoustic += float(dist[BLANK_ID])
                break
            acoustic += float(dist[choice])
            if fuse:
                lm_total += float(lm_dist[choice - 1])
            tokens.append(choice)
    return Hypothesis(tuple(tokens), acoustic + lm_weight * lm_total, lm_total)


def _fused(entry: tuple[float, float], lm_weight: float, fuse: bool) -> float:
    acoustic, lm_total = entry
    return acoustic + lm_weight * lm_total if fuse else acoustic


def _merge(store: dict, prefix: tuple[int, ...], acoustic: float, lm_total: float) -> None:
    prev = store.get(prefix)
    if prev is None:
        store[prefix] = (acoustic, lm_total)
    else:
        # Alignments of one prefix share its LM score; pool acoustic mass.
        store[prefix] = (float(np.logaddexp(prev[0], acoustic)), prev[1])


def beam_search(
    scorer: StepScorer,
    n_frames: int,
    *,
    beam: int = 4,
    lm: "LMScorer | None" = None,
    lm_weight: float = 0.3,
    max_symbols: "int | None" = None,
) -> Hypothesis:
    """Frame-synchronous beam search with prefix merging.

    Within each frame, hypotheses expand one label at a time; alignment
    paths that reach the same prefix pool their acoustic mass with
    logaddexp, every survivor also advances past the frame via blank, and
    the frame ends with the best ``beam`` prefixes by fused score. With a
    beam at least as large as the number of reachable prefixes nothing is
    pruned and the result is the exact posterior argmax. Ties break toward
    the lexicographically smaller label sequence. ``beam == 1`` is greedy
    decoding by definition.

    ``scorer(t, prefix)`` returns normalized log-probabilities over the
    blank-augmented vocabulary; ``lm(prefix)``, when fused, returns
    normalized log-probabilities over the labels alone.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if beam == 1:
        return greedy_search(
            scorer, n_frames, lm=lm, lm_weight=lm_weight, max_symbols=max_symbols
        )
    cap = _symbol_cap(max_symbols, n_frames)
    fuse = lm is not None and lm_weight != 0.0
    lm_cache: dict[tuple[int, ...], np.ndarray] = {}

    def lm_dist(prefix: tuple[int, ...]) -> np.ndarray:
        cached = lm_cache.get(prefix)
        if cached is None:
            cached = np.asarray(lm(prefix), dtype=np.float64)
            lm_cache[prefix] = cached
        return cached

    def ranked(store: dict) -> list:
        return sorted(
            store.items(), key=lambda kv: (-_fused(kv[1], lm_weight, fuse), kv[0])
        )

    current: dict[tuple[int, ...], tuple[float, float]] = {(): (0.0, 0.0)}
    for t in range(n_frames):
        advanced: dict[tuple[int, ...], tuple[float, float]] = {}
        level = current
        while level:
            dists = {
                prefix: np.asarray(scorer(t, prefix), dtype=np.float64)
                for prefix in level
            }
            for prefix, (acoustic, lm_total) in level.items():
                _merge(
                    advanced,
                    prefix,
                    acoustic + float(dists[prefix][BLANK_ID]),
                    lm_total,
                )
            expandable = [p for p in level if len(p) < cap]
            expandable.sort(key=lambda p: (-_fused(level[p], lm_weight, fuse), p))
            nxt: dict[tuple[int, ...], tuple[float, float]] = {}
            for prefix in expandable[:beam]:
                acoustic, lm_total = level[prefix]
                dist = dists[prefix]
                lmd = lm_dist(prefix) if fuse else None
                for k in range(1, dist.shape[0]):
                    _merge(
                        nxt,
                        prefix + (k,),
                        acoustic + float(dist[k]),
                        lm_total + float(lmd[k - 1]) if fuse else 0.0,
                    )
            level = nxt
            if level and len(advanced) >= beam:
                # Pending prefixes keep pouring acoustic mass into kept ones
                # through later merges, so the frame may only end once the
                # whole pending pool is too small to move any kept score:
                # 64 nats under the cutoff is beyond double resolution.
                pending = logsumexp([v[0] for v in level.values()])
                kept = sorted(
                    (_fused(v, lm_weight, fuse) for v in advanced.values()),
                    reverse=True,
                )
                if pending <= kept[beam - 1] - 64.0:
                    break
        current = dict(ranked(advanced)[:beam])
    tokens, (acoustic, lm_total) = ranked(current)[0]
    return Hypothesis(tokens, _fused((acoustic, lm_total), lm_weight, True), lm_total)


class TokenInventory:
    """Immutable token list with blank reserved at index 0.

    Label ids are 1-based and contiguous: token i of ``tokens`` has id
    i + 1, matching the lattice vocabulary axis.
    """

    def __init__(self, tokens: Sequence[str], blank_symbol: str = "<blk>"):
        tokens = tuple(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in inventory")
        if blank_symbol in tokens:
            raise ValueError("blank symbol collides with a token")
        self.tokens = tokens
        self.blank_symbol = blank_symbol
        self._ids = {tok: i + 1 for i, tok in enumerate(tokens)}

    @property
    def size(self) -> int:
        """Vocabulary size including blank."""
        return len(self.tokens) + 1

    def index(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise KeyError(f"token not in inventory: {token!r}") from None

    def symbol(self, index: int) -> str:
        if index == BLANK_ID:
            return self.blank_symbol
        if not 1 <= index < self.size:
            raise IndexError(f"label id {index} outside 1..{self.size - 1}")
        return self.tokens[index - 1]

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index(t) for t in tokens)

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.symbol(i) for i in ids)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TokenInventory)
            and self.tokens == other.tokens
            and self.blank_symbol == other.blank_symbol
        )

    def __repr__(self) -> str:
        return f"TokenInventory({len(self.tokens)} tokens)"
