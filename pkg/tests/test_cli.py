"""End-to-end tests of the ``fmtasr`` command line front end."""

import json
import subprocess
import warnings

import numpy as np
import pytest

from fmtasr import cli, toy
from fmtasr.lm import NGramLM
from fmtasr.mvq import (
    MultiCodebookQuantizer,
    read_codebooks,
    read_embeddings,
    read_indexes,
    write_embeddings,
)


def run_cli(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def eval_files(tmp_path):
    ref = tmp_path / "ref.txt"
    hyp = tmp_path / "hyp.txt"
    ref.write_text("Who is Humpty Dumpty ?\nsay yes .\n", encoding="utf-8")
    hyp.write_text("Who is Humpty Dumpty ?\nsay no .\n", encoding="utf-8")
    return ref, hyp


class TestEval:
    def test_table_report(self, eval_files, capsys):
        ref, hyp = eval_files
        code, out, err = run_cli(
            ["eval", "--ref", str(ref), "--hyp", str(hyp)], capsys
        )
        assert code == 0 and err == ""
        lines = out.splitlines()
        assert lines[0].split() == ["WER", "16.67"]
        assert any(line.startswith("zero-WER pairs") and "1/2" in line for line in lines)
        assert any(line.startswith("punct F1") for line in lines)

    def test_json_report(self, eval_files, capsys):
        ref, hyp = eval_files
        code, out, _ = run_cli(
            ["eval", "--ref", str(ref), "--hyp", str(hyp), "--report", "json"], capsys
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["wer"] == 100.0 / 6.0
        assert payload["per"] == 0.0
        assert payload["punct"] == {"p": 1.0, "r": 1.0, "f1": 1.0}
        assert payload["zero_wer_fraction"] == 0.5

    def test_csv_report(self, eval_files, capsys):
        ref, hyp = eval_files
        code, out, _ = run_cli(
            ["eval", "--ref", str(ref), "--hyp", str(hyp), "--report", "csv"], capsys
        )
        assert code == 0
        header, row = out.splitlines()
        columns = dict(zip(header.split(","), row.split(",")))
        assert float(columns["wer"]) == 100.0 / 6.0
        assert float(columns["punct_f1"]) == 1.0
        assert float(columns["capit_p"]) == 1.0

    def test_csv_reports_missing_scores_as_empty(self, tmp_path, capsys):
        # a corpus with no correctly recognized pair has no F1 to report
        ref = tmp_path / "ref.txt"
        hyp = tmp_path / "hyp.txt"
        ref.write_text("say yes .\n", encoding="utf-8")
        hyp.write_text("say no .\n", encoding="utf-8")
        code, out, _ = run_cli(
            ["eval", "--ref", str(ref), "--hyp", str(hyp), "--report", "csv"], capsys
        )
        assert code == 0
        header, row = out.splitlines()
        columns = dict(zip(header.split(","), row.split(",")))
        assert columns["punct_p"] == ""
        assert columns["capit_f1"] == ""

    def test_jsonl_matches_by_id(self, tmp_path, capsys):
        ref = tmp_path / "ref.jsonl"
        hyp = tmp_path / "hyp.jsonl"
        ref.write_text(
            json.dumps({"id": "a", "text": "say yes ."})
            + "\n"
            + json.dumps({"id": "b", "text": "Who is ?"})
            + "\n",
            encoding="utf-8",
        )
        # hypothesis order is shuffled; pairing must go through the ids
        hyp.write_text(
            json.dumps({"id": "b", "text": "Who is ?"})
            + "\n"
            + json.dumps({"id": "a", "text": "say yes ."})
            + "\n",
            encoding="utf-8",
        )
        code, out, _ = run_cli(
            [
                "eval", "--ref", str(ref), "--hyp", str(hyp),
                "--format", "jsonl", "--report", "json",
            ],
            capsys,
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["wer_pc"] == 0.0
        assert payload["zero_wer_fraction"] == 1.0

    def test_jsonl_missing_id_fails(self, tmp_path, capsys):
        ref = tmp_path / "ref.jsonl"
        hyp = tmp_path / "hyp.jsonl"
        ref.write_text(json.dumps({"id": "a", "text": "say yes ."}) + "\n")
        hyp.write_text(json.dumps({"id": "zzz", "text": "say yes ."}) + "\n")
        code, out, err = run_cli(
            ["eval", "--ref", str(ref), "--hyp", str(hyp), "--format", "jsonl"],
            capsys,
        )
        assert code == 1
        assert err.startswith("error:") and "lacks ids: a" in err

    def test_jsonl_duplicate_id_fails(self, tmp_path, capsys):
        ref = tmp_path / "ref.jsonl"
        hyp = tmp_path / "hyp.jsonl"
        ref.write_text(json.dumps({"id": "a", "text": "say yes ."}) + "\n")
        hyp.write_text(
            json.dumps({"id": "a", "text": "x"}) + "\n"
            + json.dumps({"id": "a", "text": "y"}) + "\n"
        )
        code, _, err = run_cli(
            ["eval", "--ref", str(ref), "--hyp", str(hyp), "--format", "jsonl"],
            capsys,
        )
        assert code == 1 and "duplicate ids" in err

    def test_line_count_mismatch_fails(self, tmp_path, capsys):
        ref = tmp_path / "ref.txt"
        hyp = tmp_path / "hyp.txt"
        ref.write_text("say yes .\nsay no .\n")
        hyp.write_text("say yes .\n")
        code, _, err = run_cli(["eval", "--ref", str(ref), "--hyp", str(hyp)], capsys)
        assert code == 1
        assert err.startswith("error:") and "2 lines" in err

    def test_missing_file_fails(self, tmp_path, capsys):
        code, _, err = run_cli(
            ["eval", "--ref", str(tmp_path / "none.txt"), "--hyp", str(tmp_path / "none.txt")],
            capsys,
        )
        assert code == 1 and err.startswith("error:")

    def test_bad_choice_is_an_argparse_error(self, eval_files, capsys):
        ref, hyp = eval_files
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["eval", "--ref", str(ref), "--hyp", str(hyp), "--format", "xml"])
        assert excinfo.value.code == 2


class TestMvqCommands:
    def test_train_then_encode_round_trip(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        utterances = [rng.normal(size=(450, 5)), rng.normal(size=(450, 5))]
        emb = tmp_path / "frames.emb"
        write_embeddings(emb, utterances)

        books = tmp_path / "stages.cb"
        code, out, _ = run_cli(
            ["mvq-train", "--input", str(emb), "--n", "2", "--iters", "2",
             "--out", str(books)],
            capsys,
        )
        assert code == 0
        assert "trained 2 codebooks on 900 frames (dim 5)" in out

        indexes = tmp_path / "frames.ci"
        code, out, _ = run_cli(
            ["mvq-encode", "--codebooks", str(books), "--input", str(emb),
             "--out", str(indexes)],
            capsys,
        )
        assert code == 0
        assert "encoded 2 utterances (900 frames)" in out

        quantizer = MultiCodebookQuantizer.from_codebooks(read_codebooks(books))
        expected = [quantizer.transform(u) for u in read_embeddings(emb)]
        loaded = read_indexes(indexes, expected_n=2)
        assert all(np.array_equal(a, b) for a, b in zip(loaded, expected))

    def test_train_rejects_tiny_corpus(self, tmp_path, capsys):
        emb = tmp_path / "frames.emb"
        write_embeddings(emb, [np.zeros((10, 3))])
        code, _, err = run_cli(
            ["mvq-train", "--input", str(emb), "--out", str(tmp_path / "x.cb")],
            capsys,
        )
        assert code == 1 and err.startswith("error:")


class TestTrainDecodeEvalPipeline:
    def test_full_pipeline(self, tmp_path, capsys):
        model = tmp_path / "model.bin"
        trace = tmp_path / "trace.csv"
        feats = tmp_path / "heldout.feat"
        refs = tmp_path / "heldout.txt"
        code, out, _ = run_cli(
            [
                "train-toy", "--kd", "off", "--steps", "30", "--n-train", "8",
                "--eval-n", "3", "--out", str(model), "--trace", str(trace),
                "--eval-features-out", str(feats), "--eval-refs-out", str(refs),
            ],
            capsys,
        )
        assert code == 0
        assert "kd=off" in out and "fused loss" in out
        assert trace.exists()
        params, inventory, tap_layer = toy.load_model(model)
        assert params.heads is None
        assert inventory == toy.toy_inventory()
        assert len(toy.read_features(feats)) == 3
        ref_lines = refs.read_text(encoding="utf-8").splitlines()
        assert len(ref_lines) == 3

        hyps = tmp_path / "hyps.jsonl"
        code, _, _ = run_cli(
            ["decode", "--model", str(model), "--input", str(feats),
             "--beam", "2", "--out", str(hyps)],
            capsys,
        )
        assert code == 0
        records = [json.loads(line) for line in hyps.read_text().splitlines()]
        assert [r["id"] for r in records] == ["utt-0000", "utt-0001", "utt-0002"]
        assert all(isinstance(r["text"], str) for r in records)
        assert all(r["score"] <= 0.0 for r in records)

        hyp_txt = tmp_path / "hyps.txt"
        hyp_txt.write_text("".join(r["text"] + "\n" for r in records), encoding="utf-8")
        code, out, _ = run_cli(
            ["eval", "--ref", str(refs), "--hyp", str(hyp_txt), "--report", "json"],
            capsys,
        )
        assert code == 0
        payload = json.loads(out)
        assert np.isfinite(payload["wer_pc"])

    def test_train_with_kd_and_stdout_decode(self, tmp_path, capsys):
        model = tmp_path / "model.bin"
        feats = tmp_path / "heldout.feat"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            code, out, _ = run_cli(
                [
                    "train-toy", "--kd", "on", "--steps", "10", "--n-train", "40",
                    "--eval-n", "2", "--out", str(model),
                    "--eval-features-out", str(feats),
                ],
                capsys,
            )
        assert code == 0 and "kd=on" in out
        params, _, _ = toy.load_model(model)
        assert params.heads is not None

        code, out, _ = run_cli(
            ["decode", "--model", str(model), "--input", str(feats)], capsys
        )
        assert code == 0
        assert len(out.splitlines()) == 2
        assert json.loads(out.splitlines()[0])["id"] == "utt-0000"

    def test_kd_off_never_prepares_targets(self, tmp_path, capsys, monkeypatch):
        def boom(*args, **kwargs):
            raise AssertionError("distillation path touched with kd=off")

        monkeypatch.setattr(toy, "prepare_kd_targets", boom)
        code, _, _ = run_cli(
            ["train-toy", "--kd", "off", "--steps", "2", "--n-train", "2",
             "--out", str(tmp_path / "m.bin")],
            capsys,
        )
        assert code == 0

    def test_decode_missing_model_fails(self, tmp_path, capsys):
        code, _, err = run_cli(
            ["decode", "--model", str(tmp_path / "none.bin"),
             "--input", str(tmp_path / "none.feat")],
            capsys,
        )
        assert code == 1 and err.startswith("error:")


class TestLmCommands:
    def test_lm_train_and_fused_decode(self, tmp_path, capsys):
        transcripts = tmp_path / "text.txt"
        transcripts.write_text("Who is humpty ?\nsay yes .\n", encoding="utf-8")
        lm_path = tmp_path / "lm.json"
        code, out, _ = run_cli(
            ["lm-train", "--input", str(transcripts), "--order", "2",
             "--out", str(lm_path)],
            capsys,
        )
        assert code == 0
        assert "fitted order-2 LM on 2 transcripts" in out
        lm = NGramLM.load(lm_path)
        inv = toy.toy_inventory()
        assert lm.order == 2
        assert lm.n_labels == inv.size - 1

        model = tmp_path / "model.bin"
        feats = tmp_path / "heldout.feat"
        code, _, _ = run_cli(
            ["train-toy", "--kd", "off", "--steps", "5", "--n-train", "4",
             "--eval-n", "2", "--out", str(model),
             "--eval-features-out", str(feats)],
            capsys,
        )
        assert code == 0
        code, out, _ = run_cli(
            ["decode", "--model", str(model), "--input", str(feats),
             "--lm", str(lm_path), "--lm-weight", "0.5"],
            capsys,
        )
        assert code == 0
        assert all(json.loads(line)["score"] for line in out.splitlines())


class TestAblateCommand:
    def test_table_and_json_payload(self, tmp_path, capsys):
        out_json = tmp_path / "ablation.json"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            code, out, _ = run_cli(
                ["ablate", "--n-train", "40", "--n-eval", "4", "--steps", "8",
                 "--json", str(out_json)],
                capsys,
            )
        assert code == 0
        lines = out.splitlines()
        assert lines[0].split() == ["setup", "PER", "WER", "WER", "PC"]
        assert lines[1].startswith("without-kd")
        assert lines[2].startswith("with-kd")
        assert any("ms/step" in line for line in lines[3:])
        payload = json.loads(out_json.read_text(encoding="utf-8"))
        assert set(payload) == {"without_kd", "with_kd"}
        for row in payload.values():
            assert set(row) == {"report", "initial_loss", "final_loss", "seconds_per_step"}
            assert "wer_pc" in row["report"]


def test_console_script_help():
    result = subprocess.run(
        ["fmtasr", "--help"], capture_output=True, text=True, check=True
    )
    for name in ("eval", "mvq-train", "decode", "train-toy", "ablate"):
        assert name in result.stdout
