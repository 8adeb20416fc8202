"""fmtasr: a desk-scale kit for fully formatted speech recognition.

Transducer loss and decoding, multi-codebook quantization of teacher
embeddings, codebook-index distillation, formatted-text metrics (WER
variants, PER, zero-WER F1) and a synthetic end-to-end training harness.
"""

from .kd import CodebookHeads, fused_loss, kd_loss_and_grad
from .lm import NGramLM
from .metrics import (
    EditAlignment,
    F1Score,
    MetricsReport,
    align,
    evaluate_corpus,
    punctuation_error_rate,
    word_error_rate,
    zero_wer_f1,
)
from .mvq import MultiCodebookQuantizer, compression_rate
from .textnorm import Transcript, View, preprocess, tokenize
from .toy import ToyTransducer, generate_dataset, run_ablation, toy_inventory
from .transducer import (
    Hypothesis,
    TokenInventory,
    beam_search,
    greedy_search,
    log_posterior,
    loss_and_grad,
)

__version__ = "0.1.0"

__all__ = [
    "CodebookHeads",
    "EditAlignment",
    "F1Score",
    "Hypothesis",
    "MetricsReport",
    "MultiCodebookQuantizer",
    "NGramLM",
    "TokenInventory",
    "ToyTransducer",
    "Transcript",
    "View",
    "align",
    "beam_search",
    "compression_rate",
    "evaluate_corpus",
    "fused_loss",
    "generate_dataset",
    "greedy_search",
    "kd_loss_and_grad",
    "log_posterior",
    "loss_and_grad",
    "preprocess",
    "punctuation_error_rate",
    "run_ablation",
    "tokenize",
    "toy_inventory",
    "word_error_rate",
    "zero_wer_f1",
    "__version__",
]
