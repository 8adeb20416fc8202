"""Desk-scale training harness for the distillation ablation.

Synthetic punctuated utterances, a small transducer (tanh encoder stack,
single-token-context predictor, additive joiner) trained with hand-written
gradients and plain fixed-rate gradient descent, plus the with/without
distillation comparison loop. Everything is bitwise deterministic for a
fixed seed.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import log_softmax
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import kd, transducer
from ._binio import (
    BadMagicError,
    expect_eof,
    expect_magic,
    read_exact,
    read_u8,
    read_u32,
    write_u8,
    write_u32,
)
from .kd import CodebookHeads
from .metrics import MetricsReport, evaluate_corpus
from .mvq import MultiCodebookQuantizer, read_indexes, write_indexes
from .transducer import TokenInventory, beam_search

MODEL_MAGIC = b"TOYM"
MODEL_VERSION = 1
FEATURES_MAGIC = b"TOYF"

_WORDS = ("the", "mice", "who", "is", "humpty", "dumpty", "asked", "say", "yes", "no")
_CASED = {
    "the": "The",
    "mice": "Mice",
    "who": "Who",
    "humpty": "Humpty",
    "dumpty": "Dumpty",
    "yes": "Yes",
    "no": "No",
}
_MARKS = (".", ",", "?")

# terminal prosody: rising for questions, falling for statements, a bump
# for phrase-internal commas
_PROSODY = {"?": 2.0, ".": -2.0, ",": 1.0}


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, step: int):
        super().__init__(f"loss diverged (non-finite) at step {step}")
        self.step = step


def toy_inventory() -> TokenInventory:
    """The fixed toy token inventory: words, cased variants and the marks."""
    tokens = list(_MARKS)
    for word in _WORDS:
        tokens.append(word)
        if word in _CASED:
            tokens.append(_CASED[word])
    return TokenInventory(tuple(tokens))


@dataclass(frozen=True)
class ToyUtterance:
    uid: str
    frames: np.ndarray  # (T, n_channels), noisy input features
    target: tuple[int, ...]  # label ids into the toy inventory
    teacher_embeddings: np.ndarray  # (T, teacher_dim), context-aware view of frames


def _sample_target(rng: np.random.Generator) -> tuple[str, ...]:
    question = rng.random() < 0.5
    n_words = int(rng.integers(2, 6))
    words = [str(rng.choice(_WORDS)) for _ in range(n_words)]
    words[0] = _CASED.get(words[0], words[0])
    tokens: list[str] = []
    comma_after = -1
    if n_words >= 4 and rng.random() < 0.35:
        comma_after = int(rng.integers(1, n_words - 1))
    for i, word in enumerate(words):
        tokens.append(word)
        if i == comma_after:
            tokens.append(",")
    tokens.append("?" if question else ".")
    return tuple(tokens)


def generate_dataset(
    n_utterances: int,
    seed: int,
    *,
    world_seed: int = 0,
    noise_std: float = 0.25,
    n_channels: int = 10,
    teacher_dim: int = 24,
    frames_per_word: int = 2,
) -> list[ToyUtterance]:
    """Sample a deterministic corpus of punctuated toy utterances.

    ``world_seed`` fixes the rendering itself (token signatures, boundary
    frame, teacher network), ``seed`` only the sampled texts and noise, so
    corpora drawn with different seeds stay mutually decodable. Word tokens
    render to ``frames_per_word`` frames of a per-token signature; marks
    render to a single generic boundary frame distinguished only by the
    prosody channel (the last one). Teacher embeddings come from a fixed
    smooth network over the clean pre-noise frame, its predecessor and the
    relative position: context aware and noise free, the information
    advantage a distilled student can tap.
    """
    if n_utterances < 1:
        raise ValueError("need at least one utterance")
    inv = toy_inventory()
    rng_fixed = np.random.default_rng(np.random.SeedSequence(world_seed))
    rng_text, rng_noise = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)
    )
    signatures = rng_fixed.normal(size=(inv.size, n_channels - 1))
    boundary = rng_fixed.normal(size=n_channels - 1) * 0.5
    teacher_in = 2 * n_channels + 1
    teacher_w1 = rng_fixed.normal(size=(teacher_in, 32)) / np.sqrt(teacher_in)
    teacher_w2 = rng_fixed.normal(size=(32, teacher_dim)) / np.sqrt(32.0)

    def render_clean(ids: tuple[int, ...]) -> np.ndarray:
        rows = []
        for label in ids:
            token = inv.symbol(label)
            if token in _PROSODY:
                rows.append(np.concatenate([boundary, [_PROSODY[token]]]))
            else:
                row = np.concatenate([signatures[label], [0.0]])
                rows.extend([row] * frames_per_word)
        return np.array(rows)

    def teacher_of(clean: np.ndarray) -> np.ndarray:
        prev = np.vstack([np.zeros(n_channels), clean[:-1]])
        pos = (np.arange(clean.shape[0]) / clean.shape[0])[:, None]
        stacked = np.hstack([clean, prev, pos])
        return np.tanh(np.tanh(stacked @ teacher_w1) @ teacher_w2 * 2.0)

    utterances = []
    for i in range(n_utterances):
        target = inv.encode(_sample_target(rng_text))
        clean = render_clean(target)
        teacher = teacher_of(clean)
        frames = clean + noise_std * rng_noise.normal(size=clean.shape)
        utterances.append(
            ToyUtterance(
                uid=f"utt-{i:04d}",
                frames=frames,
                target=target,
                teacher_embeddings=teacher,
            )
        )
    return utterances


def dataset_inputs(data: Sequence[ToyUtterance]) -> tuple[list[np.ndarray], list[tuple[int, ...]]]:
    return [u.frames for u in data], [u.target for u in data]


def detokenize(ids: Sequence[int], inventory: TokenInventory) -> str:
    return " ".join(inventory.decode(ids))


@dataclass
class ToyParams:
    """Every trainable tensor of the toy transducer."""

    enc_w: list[np.ndarray]
    enc_b: list[np.ndarray]
    embed: np.ndarray  # (V, embed_dim); row 0 is the start-of-sequence context
    pred_w: np.ndarray
    pred_b: np.ndarray
    join_enc_w: np.ndarray
    join_pred_w: np.ndarray
    join_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    heads: "CodebookHeads | None" = None

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        items: list[tuple[str, np.ndarray]] = []
        for i, (w, b) in enumerate(zip(self.enc_w, self.enc_b)):
            items.append((f"enc_w.{i}", w))
            items.append((f"enc_b.{i}", b))
        items += [
            ("embed", self.embed),
            ("pred_w", self.pred_w),
            ("pred_b", self.pred_b),
            ("join_enc_w", self.join_enc_w),
            ("join_pred_w", self.join_pred_w),
            ("join_b", self.join_b),
            ("out_w", self.out_w),
            ("out_b", self.out_b),
        ]
        if self.heads is not None:
            items.append(("heads_w", self.heads.weights))
            items.append(("heads_b", self.heads.biases))
        return items

    def copy(self) -> "ToyParams":
        return ToyParams(
            enc_w=[w.copy() for w in self.enc_w],
            enc_b=[b.copy() for b in self.enc_b],
            embed=self.embed.copy(),
            pred_w=self.pred_w.copy(),
            pred_b=self.pred_b.copy(),
            join_enc_w=self.join_enc_w.copy(),
            join_pred_w=self.join_pred_w.copy(),
            join_b=self.join_b.copy(),
            out_w=self.out_w.copy(),
            out_b=self.out_b.copy(),
            heads=self.heads.copy() if self.heads is not None else None,
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named_arrays()])

    def from_vector(self, vec: np.ndarray) -> "ToyParams":
        out = self.copy()
        total = sum(a.size for _, a in out.named_arrays())
        if vec.size != total:
            raise ValueError(f"vector size {vec.size} does not match {total} parameters")
        offset = 0
        for _, a in out.named_arrays():
            a[...] = vec[offset : offset + a.size].reshape(a.shape)
            offset += a.size
        return out


def _zeros_like_params(params: ToyParams, *, with_heads: bool = True) -> ToyParams:
    grads = ToyParams(
        enc_w=[np.zeros_like(w) for w in params.enc_w],
        enc_b=[np.zeros_like(b) for b in params.enc_b],
        embed=np.zeros_like(params.embed),
        pred_w=np.zeros_like(params.pred_w),
        pred_b=np.zeros_like(params.pred_b),
        join_enc_w=np.zeros_like(params.join_enc_w),
        join_pred_w=np.zeros_like(params.join_pred_w),
        join_b=np.zeros_like(params.join_b),
        out_w=np.zeros_like(params.out_w),
        out_b=np.zeros_like(params.out_b),
        heads=None,
    )
    if with_heads and params.heads is not None:
        grads.heads = CodebookHeads.zeros(params.heads.n_codebooks, params.heads.student_dim)
    return grads


def init_params(
    n_channels: int,
    vocab_size: int,
    *,
    hidden_dims: Sequence[int] = (24, 16, 24),
    embed_dim: int = 12,
    pred_dim: int = 16,
    join_dim: int = 16,
    seed: int = 0,
    n_codebooks: "int | None" = None,
    tap_layer: int = 1,
) -> ToyParams:
    """Draw fresh parameters. Distillation heads start at zero (uniform
    predictions), so their presence never shifts the main init stream."""
    if not 0 <= tap_layer < len(hidden_dims):
        raise ValueError(f"tap_layer {tap_layer} outside encoder depth {len(hidden_dims)}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dims = [n_channels, *hidden_dims]
    enc_w = [
        rng.normal(size=(dims[i], dims[i + 1])) / np.sqrt(dims[i])
        for i in range(len(hidden_dims))
    ]
    enc_b = [np.zeros(d) for d in hidden_dims]
    params = ToyParams(
        enc_w=enc_w,
        enc_b=enc_b,
        embed=rng.normal(size=(vocab_size, embed_dim)) * 0.5,
        pred_w=rng.normal(size=(embed_dim, pred_dim)) / np.sqrt(embed_dim),
        pred_b=np.zeros(pred_dim),
        join_enc_w=rng.normal(size=(hidden_dims[-1], join_dim)) / np.sqrt(hidden_dims[-1]),
        join_pred_w=rng.normal(size=(pred_dim, join_dim)) / np.sqrt(pred_dim),
        join_b=np.zeros(join_dim),
        out_w=rng.normal(size=(join_dim, vocab_size)) / np.sqrt(join_dim),
        out_b=np.zeros(vocab_size),
        heads=None,
    )
    if n_codebooks is not None:
        params.heads = CodebookHeads.zeros(n_codebooks, hidden_dims[tap_layer])
    return params


def _encode_frames(params: ToyParams, frames: np.ndarray) -> list[np.ndarray]:
    states = [np.asarray(frames, dtype=np.float64)]
    for w, b in zip(params.enc_w, params.enc_b):
        states.append(np.tanh(states[-1] @ w + b))
    return states


def _pred_states(params: ToyParams, labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    prev_ids = np.array([0, *labels], dtype=np.int64)
    embedded = params.embed[prev_ids]
    states = np.tanh(embedded @ params.pred_w + params.pred_b)
    return states, embedded, prev_ids


def _joint_logits(params: ToyParams, enc: np.ndarray, pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mix = enc @ params.join_enc_w
    ctx = pred @ params.join_pred_w
    z = np.tanh(mix[:, None, :] + ctx[None, :, :] + params.join_b)
    return z @ params.out_w + params.out_b, z


def _transducer_grads(
    params: ToyParams,
    states: list[np.ndarray],
    labels: Sequence[int],
    *,
    tap_layer: int,
    tap_grad: "np.ndarray | None",
) -> tuple[float, ToyParams]:
    """Transducer loss and gradients given precomputed encoder activations.

    ``tap_grad``, when given, is an extra already-weighted gradient added to
    the tap layer's output during the encoder backward pass.
    """
    enc = states[-1]
    pred, embedded, prev_ids = _pred_states(params, labels)
    logits, z = _joint_logits(params, enc, pred)
    rnnt_loss, dlogits = transducer.loss_and_grad(logits, labels)

    grads = _zeros_like_params(params, with_heads=False)
    grads.out_w[...] = np.einsum("tuj,tuv->jv", z, dlogits)
    grads.out_b[...] = dlogits.sum(axis=(0, 1))
    dz = np.einsum("tuv,jv->tuj", dlogits, params.out_w)
    da = dz * (1.0 - z * z)
    grads.join_b[...] = da.sum(axis=(0, 1))
    da_frames = da.sum(axis=1)  # (T, J)
    da_labels = da.sum(axis=0)  # (U+1, J)
    grads.join_enc_w[...] = enc.T @ da_frames
    grads.join_pred_w[...] = pred.T @ da_labels
    denc = da_frames @ params.join_enc_w.T
    dpred = da_labels @ params.join_pred_w.T

    dpre = dpred * (1.0 - pred * pred)
    grads.pred_w[...] = embedded.T @ dpre
    grads.pred_b[...] = dpre.sum(axis=0)
    np.add.at(grads.embed, prev_ids, dpre @ params.pred_w.T)

    grad_flow = denc
    for layer in reversed(range(len(params.enc_w))):
        if tap_grad is not None and layer == tap_layer:
            grad_flow = grad_flow + tap_grad
        act = states[layer + 1]
        dact = grad_flow * (1.0 - act * act)
        grads.enc_w[layer][...] = states[layer].T @ dact
        grads.enc_b[layer][...] = dact.sum(axis=0)
        if layer > 0:
            grad_flow = dact @ params.enc_w[layer].T
    return rnnt_loss, grads


def utterance_loss_and_grads(
    params: ToyParams,
    frames: np.ndarray,
    labels: Sequence[int],
    *,
    tap_layer: int = 1,
    kd_targets: "np.ndarray | None" = None,
    alpha: float = 0.1,
) -> tuple[float, float, ToyParams]:
    """Losses and fused-objective gradients for one utterance.

    Returns (transducer loss, distillation loss, gradients). The gradient
    tensors already carry the alpha weighting of the distillation branch;
    with alpha == 0 the branch still reports its loss but leaves every
    gradient untouched, which keeps the trajectory bitwise equal to a run
    without distillation.
    """
    states = _encode_frames(params, frames)
    kd_loss = 0.0
    tap_grad = None
    head_grads = None
    if kd_targets is not None:
        if params.heads is None:
            raise ValueError("distillation targets given but params have no heads")
        kd_loss, head_grads, dtap = kd.kd_loss_and_grad(
            params.heads, states[tap_layer + 1], kd_targets
        )
        head_grads.weights *= alpha
        head_grads.biases *= alpha
        if alpha != 0.0:
            tap_grad = alpha * dtap
    rnnt_loss, grads = _transducer_grads(
        params, states, labels, tap_layer=tap_layer, tap_grad=tap_grad
    )
    if head_grads is not None:
        grads.heads = head_grads
    return rnnt_loss, kd_loss, grads


def make_scorer(params: ToyParams, frames: np.ndarray):
    """Bind the model to one utterance as a ``(t, prefix) -> log-probs`` scorer."""
    enc = _encode_frames(params, frames)[-1]
    mix = enc @ params.join_enc_w
    ctx_cache: dict[int, np.ndarray] = {}

    def scorer(t: int, prefix: tuple[int, ...]) -> np.ndarray:
        prev = prefix[-1] if prefix else 0
        ctx = ctx_cache.get(prev)
        if ctx is None:
            state = np.tanh(params.embed[prev] @ params.pred_w + params.pred_b)
            ctx = state @ params.join_pred_w
            ctx_cache[prev] = ctx
        z = np.tanh(mix[t] + ctx + params.join_b)
        return log_softmax(z @ params.out_w + params.out_b)

    return scorer


class ToyTransducer(BaseEstimator):
    """Small trainable transducer for the synthetic formatted-text task.

    ``fit`` consumes per-utterance frame matrices and label-id sequences;
    with ``use_kd=True`` it also needs per-utterance codebook-index targets
    (as produced by ``MultiCodebookQuantizer.transform`` on teacher
    embeddings), which supervise the tap layer through the distillation
    heads. Training is full-batch gradient descent with a fixed learning
    rate; gradients average over utterances.
    """

    def __init__(
        self,
        inventory: "TokenInventory | None" = None,
        hidden_dims: tuple[int, ...] = (24, 16, 24),
        tap_layer: int = 1,
        embed_dim: int = 12,
        pred_dim: int = 16,
        join_dim: int = 16,
        use_kd: bool = False,
        alpha: float = 0.1,
        steps: int = 150,
        lr: float = 0.2,
        seed: int = 0,
        beam: int = 4,
        max_symbols: "int | None" = None,
    ):
        self.inventory = inventory
        self.hidden_dims = hidden_dims
        self.tap_layer = tap_layer
        self.embed_dim = embed_dim
        self.pred_dim = pred_dim
        self.join_dim = join_dim
        self.use_kd = use_kd
        self.alpha = alpha
        self.steps = steps
        self.lr = lr
        self.seed = seed
        self.beam = beam
        self.max_symbols = max_symbols

    def fit(self, X, y, kd_targets=None) -> "ToyTransducer":
        inv = self.inventory if self.inventory is not None else toy_inventory()
        frames_list = [np.asarray(f, dtype=np.float64) for f in X]
        labels_list = [tuple(int(v) for v in labels) for labels in y]
        if not frames_list or len(frames_list) != len(labels_list):
            raise ValueError("X and y must be equally long and non-empty")
        for labels in labels_list:
            for v in labels:
                if not 1 <= v < inv.size:
                    raise ValueError(f"label id {v} outside inventory of size {inv.size}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        targets_list: "list[np.ndarray] | None" = None
        n_codebooks = None
        if self.use_kd:
            if kd_targets is None:
                raise ValueError("use_kd=True needs precomputed kd_targets")
            targets_list = [np.asarray(t) for t in kd_targets]
            if len(targets_list) != len(frames_list):
                raise ValueError("kd_targets must align with X")
            for f, t in zip(frames_list, targets_list):
                if t.shape[0] != f.shape[0]:
                    raise ValueError("kd_targets frame counts must match X")
            n_codebooks = targets_list[0].shape[1]

        params = init_params(
            frames_list[0].shape[1],
            inv.size,
            hidden_dims=tuple(self.hidden_dims),
            embed_dim=self.embed_dim,
            pred_dim=self.pred_dim,
            join_dim=self.join_dim,
            seed=self.seed,
            n_codebooks=n_codebooks,
            tap_layer=self.tap_layer,
        )
        n = len(frames_list)
        if targets_list is not None:
            targets_concat = np.vstack(targets_list)
            bounds = np.concatenate([[0], np.cumsum([f.shape[0] for f in frames_list])])
        trace = np.empty((self.steps, 4))
        for step in range(self.steps):
            # a blown-up weight turns the next forward pass into NaN soup;
            # catch it here so the error names the offending step
            if any(not np.isfinite(p).all() for _, p in params.named_arrays()):
                raise TrainingDivergedError(step)
            total = _zeros_like_params(params)
            rnnt_sum = 0.0
            kd_sum = 0.0
            states_list = [_encode_frames(params, f) for f in frames_list]
            tap_grads = None
            if targets_list is not None:
                # One fused pass over every frame: the distillation branch
                # costs one matmul+softmax per step, not one per utterance.
                tap_concat = np.vstack(
                    [st[self.tap_layer + 1] for st in states_list]
                )
                kd_sum, head_grads, dtap = kd.kd_loss_and_grad(
                    params.heads, tap_concat, targets_concat
                )
                head_grads.weights *= self.alpha
                head_grads.biases *= self.alpha
                total.heads = head_grads
                if self.alpha != 0.0:
                    tap_grads = self.alpha * dtap
            for i, labels in enumerate(labels_list):
                try:
                    rnnt_loss, grads = _transducer_grads(
                        params,
                        states_list[i],
                        labels,
                        tap_layer=self.tap_layer,
                        tap_grad=(
                            tap_grads[bounds[i] : bounds[i + 1]]
                            if tap_grads is not None
                            else None
                        ),
                    )
                except ValueError as err:
                    # labels were validated before the loop, so a NaN
                    # lattice here means the joiner logits overflowed
                    if "NaN" in str(err):
                        raise TrainingDivergedError(step) from err
                    raise
                rnnt_sum += rnnt_loss
                # named_arrays puts heads last; per-utterance grads carry
                # none, so the zip stops before the heads accumulator.
                for (_, acc), (_, g) in zip(total.named_arrays(), grads.named_arrays()):
                    acc += g
            rnnt_mean = rnnt_sum / n
            kd_mean = kd_sum / n
            fused = kd.fused_loss(rnnt_mean, kd_mean, self.alpha) if self.use_kd else rnnt_mean
            if not np.isfinite(fused):
                raise TrainingDivergedError(step)
            trace[step] = (step, rnnt_mean, kd_mean, fused)
            scale = self.lr / n
            for (_, p), (_, g) in zip(params.named_arrays(), total.named_arrays()):
                p -= scale * g
        self.params_ = params
        self.inventory_ = inv
        self.loss_trace_ = trace
        return self

    def predict(self, X) -> list[tuple[int, ...]]:
        """Beam-search decode each utterance to a label-id sequence."""
        check_is_fitted(self, "params_")
        out = []
        for frames in X:
            frames = np.asarray(frames, dtype=np.float64)
            hyp = beam_search(
                make_scorer(self.params_, frames),
                frames.shape[0],
                beam=self.beam,
                max_symbols=self.max_symbols,
            )
            out.append(hyp.tokens)
        return out

    def predict_text(self, X) -> list[str]:
        check_is_fitted(self, "params_")
        return [detokenize(ids, self.inventory_) for ids in self.predict(X)]


def evaluate_model(model: ToyTransducer, X, y) -> MetricsReport:
    """Decode ``X`` and score it against the reference label sequences."""
    check_is_fitted(model, "params_")
    refs = [detokenize(labels, model.inventory_) for labels in y]
    return evaluate_corpus(refs, model.predict_text(X))


def prepare_kd_targets(
    data: Sequence[ToyUtterance],
    *,
    n_codebooks: int = 2,
    n_iters: int = 4,
    seed: int = 0,
    ci_path: "str | Path | None" = None,
) -> tuple[MultiCodebookQuantizer, list[np.ndarray]]:
    """Train codebooks on the teacher embeddings and precompute index targets.

    The indexes take a round trip through an index file (a temporary one
    unless ``ci_path`` is given), mirroring a precompute-to-disk pipeline.
    """
    quantizer = MultiCodebookQuantizer(
        n_codebooks=n_codebooks, n_iters=n_iters, random_state=seed
    )
    quantizer.fit(np.vstack([u.teacher_embeddings for u in data]))
    targets = [quantizer.transform(u.teacher_embeddings) for u in data]
    if ci_path is None:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "targets.ci"
            write_indexes(path, targets)
            targets = read_indexes(path, expected_n=n_codebooks)
    else:
        write_indexes(ci_path, targets)
        targets = read_indexes(ci_path, expected_n=n_codebooks)
    return quantizer, targets


@dataclass(frozen=True)
class AblationRow:
    report: MetricsReport
    initial_loss: float
    final_loss: float
    seconds_per_step: float

    @property
    def loss_ratio(self) -> float:
        return self.final_loss / self.initial_loss


@dataclass(frozen=True)
class AblationResult:
    rows: dict[str, AblationRow] = field(default_factory=dict)

    def format_table(self) -> str:
        lines = [f"{'setup':<14}{'PER':>8}{'WER':>8}{'WER PC':>8}"]
        for name in ("without_kd", "with_kd"):
            row = self.rows[name]
            r = row.report
            lines.append(
                f"{name.replace('_', '-'):<14}{r.per:>8.2f}{r.wer:>8.2f}{r.wer_pc:>8.2f}"
            )
        return "\n".join(lines)


def run_ablation(
    *,
    n_train: int = 96,
    n_eval: int = 12,
    steps: int = 150,
    seed: int = 0,
    alpha: float = 0.1,
    n_codebooks: int = 2,
    quantizer_iters: int = 4,
    lr: float = 0.2,
    ci_path: "str | Path | None" = None,
) -> AblationResult:
    """Train the toy model with and without distillation and score both.

    Both runs share the training and held-out corpora and the seed; only
    the distillation branch differs.
    """
    train = generate_dataset(n_train, seed)
    heldout = generate_dataset(n_eval, seed + 1)
    train_X, train_y = dataset_inputs(train)
    eval_X, eval_y = dataset_inputs(heldout)
    rows: dict[str, AblationRow] = {}
    for name, use_kd in (("without_kd", False), ("with_kd", True)):
        targets = None
        if use_kd:
            _, targets = prepare_kd_targets(
                train,
                n_codebooks=n_codebooks,
                n_iters=quantizer_iters,
                seed=seed,
                ci_path=ci_path,
            )
        model = ToyTransducer(use_kd=use_kd, alpha=alpha, steps=steps, lr=lr, seed=seed)
        started = time.perf_counter()
        model.fit(train_X, train_y, kd_targets=targets)
        elapsed = time.perf_counter() - started
        rows[name] = AblationRow(
            report=evaluate_model(model, eval_X, eval_y),
            initial_loss=float(model.loss_trace_[0, 3]),
            final_loss=float(model.loss_trace_[-1, 3]),
            seconds_per_step=elapsed / steps,
        )
    return AblationResult(rows)


def write_trace(path: "str | Path", trace: np.ndarray) -> None:
    """Write a loss trace as CSV with columns step,rnnt_loss,kd_loss,fused_loss."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "rnnt_loss", "kd_loss", "fused_loss"])
        for row in np.asarray(trace):
            writer.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])


def save_model(
    path: "str | Path",
    params: ToyParams,
    inventory: TokenInventory,
    tap_layer: int,
) -> None:
    """Write a versioned binary of every parameter tensor with shape headers."""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        write_u32(f, MODEL_VERSION)
        write_u32(f, len(inventory.tokens))
        for token in inventory.tokens:
            raw = token.encode("utf-8")
            write_u32(f, len(raw))
            f.write(raw)
        write_u32(f, tap_layer)
        tensors = params.named_arrays()
        write_u32(f, len(tensors))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            write_u32(f, len(raw))
            f.write(raw)
            write_u8(f, arr.ndim)
            for dim in arr.shape:
                write_u32(f, dim)
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: "str | Path") -> tuple[ToyParams, TokenInventory, int]:
    """Read a model written by ``save_model``."""
    with open(path, "rb") as f:
        expect_magic(f, MODEL_MAGIC)
        version = read_u32(f, "model version")
        if version != MODEL_VERSION:
            raise BadMagicError(f"unsupported model version {version}")
        n_tokens = read_u32(f, "token count")
        tokens = []
        for i in range(n_tokens):
            length = read_u32(f, f"length of token {i}")
            tokens.append(read_exact(f, length, f"token {i}").decode("utf-8"))
        tap_layer = read_u32(f, "tap layer")
        n_tensors = read_u32(f, "tensor count")
        tensors: dict[str, np.ndarray] = {}
        for i in range(n_tensors):
            length = read_u32(f, f"name length of tensor {i}")
            name = read_exact(f, length, f"name of tensor {i}").decode("utf-8")
            ndim = read_u8(f, f"rank of tensor {name}")
            shape = tuple(read_u32(f, f"dim of tensor {name}") for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            payload = read_exact(f, count * 8, f"data of tensor {name}")
            tensors[name] = (
                np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
            )
        expect_eof(f)
    n_layers = sum(1 for name in tensors if name.startswith("enc_w."))
    heads = None
    if "heads_w" in tensors:
        heads = CodebookHeads(tensors["heads_w"], tensors["heads_b"])
    params = ToyParams(
        enc_w=[tensors[f"enc_w.{i}"] for i in range(n_layers)],
        enc_b=[tensors[f"enc_b.{i}"] for i in range(n_layers)],
        embed=tensors["embed"],
        pred_w=tensors["pred_w"],
        pred_b=tensors["pred_b"],
        join_enc_w=tensors["join_enc_w"],
        join_pred_w=tensors["join_pred_w"],
        join_b=tensors["join_b"],
        out_w=tensors["out_w"],
        out_b=tensors["out_b"],
        heads=heads,
    )
    return params, TokenInventory(tuple(tokens)), tap_layer


def write_features(path: "str | Path", frames_list: Sequence[np.ndarray]) -> None:
    """Write per-utterance frame matrices.

    Layout, little-endian: magic "TOYF", u32 channel count, u32 utterance
    count, then per utterance a u32 frame count followed by the float64 rows.
    """
    arrays = [np.ascontiguousarray(a, dtype=np.float64) for a in frames_list]
    if not arrays:
        raise ValueError("no utterances to write")
    if any(a.ndim != 2 for a in arrays):
        raise ValueError("frames must be 2-D per utterance")
    n_channels = arrays[0].shape[1]
    if any(a.shape[1] != n_channels for a in arrays):
        raise ValueError("utterances disagree on channel count")
    with open(path, "wb") as f:
        f.write(FEATURES_MAGIC)
        write_u32(f, n_channels)
        write_u32(f, len(arrays))
        for a in arrays:
            write_u32(f, a.shape[0])
            f.write(a.astype("<f8").tobytes())


def read_features(path: "str | Path") -> list[np.ndarray]:
    """Read per-utterance frame matrices written by ``write_features``."""
    with open(path, "rb") as f:
        expect_magic(f, FEATURES_MAGIC)
        n_channels = read_u32(f, "channel count")
        count = read_u32(f, "utterance count")
        out = []
        for i in range(count):
            frames = read_u32(f, f"frame count of utterance {i}")
            payload = read_exact(f, frames * n_channels * 8, f"frames of utterance {i}")
            out.append(
                np.frombuffer(payload, dtype="<f8")
                .reshape(frames, n_channels)
                .astype(np.float64)
            )
        expect_eof(f)
    return out
