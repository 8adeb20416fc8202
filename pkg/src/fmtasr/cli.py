"""Command line front end: ``fmtasr <subcommand>``.

Subcommands cover corpus scoring (eval), codebook training and encoding
(mvq-train, mvq-encode), model decoding (decode), the toy training loop
(train-toy), LM fitting for shallow fusion (lm-train) and the distillation
comparison (ablate). Data errors exit with status 1 and a message on
stderr; argument errors exit with argparse's usual status 2.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import mvq, toy
from .lm import NGramLM
from .metrics import evaluate_corpus
from .textnorm import read_transcripts
from .transducer import beam_search


def _cmd_eval(args: argparse.Namespace) -> int:
    refs = read_transcripts(args.ref, fmt=args.format)
    hyps = read_transcripts(args.hyp, fmt=args.format)
    if args.format == "jsonl":
        by_id = dict(hyps)
        if len(by_id) != len(hyps):
            raise ValueError("duplicate ids in hypothesis file")
        missing = [rid for rid, _ in refs if rid not in by_id]
        if missing:
            raise ValueError(f"hypothesis file lacks ids: {', '.join(missing[:5])}")
        pairs = [(text, by_id[rid]) for rid, text in refs]
    else:
        if len(refs) != len(hyps):
            raise ValueError(
                f"reference has {len(refs)} lines but hypothesis has {len(hyps)}"
            )
        pairs = [(r_text, h_text) for (_, r_text), (_, h_text) in zip(refs, hyps)]
    report = evaluate_corpus([r for r, _ in pairs], [h for _, h in pairs])
    if args.report == "table":
        print(report.to_table())
    elif args.report == "json":
        print(json.dumps(report.to_dict(), indent=2))
    else:
        flat: dict[str, object] = {}
        for key, value in report.to_dict().items():
            if isinstance(value, dict):
                flat.update({f"{key}_{k}": v for k, v in value.items()})
            elif value is None:
                flat.update({f"{key}_{k}": "" for k in ("p", "r", "f1")})
            else:
                flat[key] = value
        print(",".join(flat))
        print(",".join("" if v == "" else repr(v) for v in flat.values()))
    return 0


def _cmd_mvq_train(args: argparse.Namespace) -> int:
    utterances = mvq.read_embeddings(args.input)
    points = np.vstack(utterances)
    quantizer = mvq.MultiCodebookQuantizer(
        n_codebooks=args.n, n_iters=args.iters, random_state=args.seed
    )
    quantizer.fit(points)
    mvq.write_codebooks(args.out, quantizer.codebooks_)
    final_mse = float(quantizer.mse_traces_[-1][-1])
    print(
        f"trained {args.n} codebooks on {points.shape[0]} frames "
        f"(dim {points.shape[1]}), final stage MSE {final_mse:.6f}"
    )
    return 0


def _cmd_mvq_encode(args: argparse.Namespace) -> int:
    quantizer = mvq.MultiCodebookQuantizer.from_codebooks(
        mvq.read_codebooks(args.codebooks)
    )
    utterances = mvq.read_embeddings(args.input)
    indexes = [quantizer.transform(u) for u in utterances]
    mvq.write_indexes(args.out, indexes)
    total = sum(ix.shape[0] for ix in indexes)
    print(f"encoded {len(indexes)} utterances ({total} frames) to {args.out}")
    return 0


def _cmd_decode(args: argparse.Namespace) -> int:
    params, inventory, _ = toy.load_model(args.model)
    utterances = toy.read_features(args.input)
    lm = NGramLM.load(args.lm) if args.lm else None
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for i, frames in enumerate(utterances):
            hyp = beam_search(
                toy.make_scorer(params, frames),
                frames.shape[0],
                beam=args.beam,
                lm=lm,
                lm_weight=args.lm_weight,
            )
            record = {
                "id": f"utt-{i:04d}",
                "text": toy.detokenize(hyp.tokens, inventory),
                "score": hyp.score,
            }
            print(json.dumps(record), file=out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_train_toy(args: argparse.Namespace) -> int:
    train = toy.generate_dataset(args.n_train, args.seed)
    X, y = toy.dataset_inputs(train)
    targets = None
    use_kd = args.kd == "on"
    if use_kd:
        _, targets = toy.prepare_kd_targets(
            train, n_codebooks=args.codebooks, seed=args.seed
        )
    model = toy.ToyTransducer(
        use_kd=use_kd, alpha=args.alpha, steps=args.steps, lr=args.lr, seed=args.seed
    )
    model.fit(X, y, kd_targets=targets)
    toy.save_model(args.out, model.params_, model.inventory_, model.tap_layer)
    if args.trace:
        toy.write_trace(args.trace, model.loss_trace_)
    first, last = model.loss_trace_[0, 3], model.loss_trace_[-1, 3]
    print(
        f"trained {args.steps} steps on {args.n_train} utterances "
        f"(kd={args.kd}): fused loss {first:.4f} -> {last:.4f}"
    )
    if args.eval_features_out or args.eval_refs_out:
        heldout = toy.generate_dataset(args.eval_n, args.seed + 1)
        if args.eval_features_out:
            toy.write_features(args.eval_features_out, [u.frames for u in heldout])
        if args.eval_refs_out:
            with open(args.eval_refs_out, "w", encoding="utf-8") as f:
                for u in heldout:
                    print(toy.detokenize(u.target, model.inventory_), file=f)
    return 0


def _cmd_lm_train(args: argparse.Namespace) -> int:
    inventory = toy.toy_inventory()
    sequences = []
    for _, text in read_transcripts(args.input):
        sequences.append(inventory.encode(text.split()))
    lm = NGramLM(order=args.order, smoothing=args.smoothing, n_labels=inventory.size - 1)
    lm.fit(sequences)
    lm.save(args.out)
    print(f"fitted order-{args.order} LM on {len(sequences)} transcripts")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    result = toy.run_ablation(
        n_train=args.n_train,
        n_eval=args.n_eval,
        steps=args.steps,
        seed=args.seed,
        alpha=args.alpha,
        lr=args.lr,
    )
    print(result.format_table())
    for name in ("without_kd", "with_kd"):
        row = result.rows[name]
        print(
            f"{name.replace('_', '-')}: fused loss {row.initial_loss:.4f} -> "
            f"{row.final_loss:.4f}, {row.seconds_per_step * 1e3:.1f} ms/step"
        )
    if args.json:
        payload = {
            name: {
                "report": row.report.to_dict(),
                "initial_loss": row.initial_loss,
                "final_loss": row.final_loss,
                "seconds_per_step": row.seconds_per_step,
            }
            for name, row in result.rows.items()
        }
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmtasr", description="formatted-transcript recognition toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="score hypothesis transcripts against references")
    p.add_argument("--ref", required=True, help="reference transcript file")
    p.add_argument("--hyp", required=True, help="hypothesis transcript file")
    p.add_argument("--format", choices=("text", "jsonl"), default="text")
    p.add_argument("--report", choices=("table", "json", "csv"), default="table")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("mvq-train", help="fit codebooks on an embeddings file")
    p.add_argument("--input", required=True, help="embeddings file")
    p.add_argument("--n", type=int, default=16, help="number of codebooks")
    p.add_argument("--iters", type=int, default=20, help="refinement iterations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="codebook file to write")
    p.set_defaults(func=_cmd_mvq_train)

    p = sub.add_parser("mvq-encode", help="encode embeddings to codebook indexes")
    p.add_argument("--codebooks", required=True, help="codebook file")
    p.add_argument("--input", required=True, help="embeddings file")
    p.add_argument("--out", required=True, help="index file to write")
    p.set_defaults(func=_cmd_mvq_encode)

    p = sub.add_parser("decode", help="beam-search decode a features file")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--input", required=True, help="features file")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--lm", default=None, help="fitted LM file for shallow fusion")
    p.add_argument("--lm-weight", type=float, default=0.3)
    p.add_argument("--out", default=None, help="output JSONL path (default stdout)")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("train-toy", help="train the toy model on synthetic data")
    p.add_argument("--kd", choices=("on", "off"), default="off")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--trace", default=None, help="loss trace CSV to write")
    p.add_argument("--n-train", type=int, default=96)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--codebooks", type=int, default=2)
    p.add_argument("--eval-n", type=int, default=12)
    p.add_argument("--eval-features-out", default=None, help="held-out features file")
    p.add_argument("--eval-refs-out", default=None, help="held-out reference text file")
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("lm-train", help="fit the n-gram LM on transcripts")
    p.add_argument("--input", required=True, help="transcript text file")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--smoothing", type=float, default=0.5)
    p.add_argument("--out", required=True, help="LM file to write")
    p.set_defaults(func=_cmd_lm_train)

    p = sub.add_parser("ablate", help="run the with/without distillation comparison")
    p.add_argument("--n-train", type=int, default=96)
    p.add_argument("--n-eval", type=int, default=12)
    p.add_argument("--steps", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--json", default=None, help="also write results as JSON")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
