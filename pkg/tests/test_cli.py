import json

import numpy as np
import pytest

from pairsense.cli import main
from pairsense.datamodel import load_corpus


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "corpus.jsonl"
    code = main(["synth", "--out", str(path), "--seed", "3", "--pairs", "6",
                 "--utterances-per-pair", "10", "--separability", "5.0",
                 "--class-mix", "0.2,0.3,0.5"])
    assert code == 0
    return path


@pytest.fixture(scope="module")
def config_file(tmp_path_factory, corpus_file):
    enc = {"value_embed_dim": 8, "output_dim": 8, "n_layers": 1, "n_heads": 2,
           "window_size": 5, "max_sequence": 32}
    cfg = {
        "schema_version": 1,
        "name": "early-demo",
        "corpus": str(corpus_file),
        "seed": 0,
        "folds": 3,
        "regime": "fusion",
        "train": {"max_epochs": 4, "patience": 4},
        "model": {
            "method": "early",
            "hidden": 16,
            "channels": [
                {"modality": "language", "source": "sentence_vec"},
                {"modality": "audio", "source": "frames", "encoder": enc},
            ],
        },
    }
    path = tmp_path_factory.mktemp("cfg") / "experiment.json"
    path.write_text(json.dumps(cfg))
    return path


class TestSynth:
    def test_writes_corpus_and_manifest(self, corpus_file):
        assert corpus_file.exists()
        assert corpus_file.with_name(corpus_file.name + ".manifest.json").exists()
        corpus = load_corpus(corpus_file)
        assert len(corpus) == 60

    def test_seeded_runs_are_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for path in (a, b):
            code, _, _ = run(["synth", "--out", str(path), "--seed", "9", "--pairs", "2"], capsys)
            assert code == 0
        assert a.read_bytes() == b.read_bytes()

    def test_input_files_not_mutated_by_consumers(self, corpus_file, config_file, tmp_path, capsys):
        before = corpus_file.read_bytes()
        run(["crossval", "--config", str(config_file), "--folds", "2",
             "--out-dir", str(tmp_path / "o")], capsys)
        assert corpus_file.read_bytes() == before


class TestWerCommand:
    def test_identical_files_print_zero(self, tmp_path, capsys):
        ref = tmp_path / "ref.txt"
        hyp = tmp_path / "hyp.txt"
        ref.write_text("hello world\nthe cat sat\n")
        hyp.write_text("hello world\nthe cat sat\n")
        code, out, _ = run(["wer", "--ref", str(ref), "--hyp", str(hyp)], capsys)
        assert code == 0
        assert "WER=0.0000" in out

    def test_counts_and_rate(self, tmp_path, capsys):
        (tmp_path / "r.txt").write_text("the cat sat on mat\n")
        (tmp_path / "h.txt").write_text("the cat on mat\n")
        code, out, _ = run(["wer", "--ref", str(tmp_path / "r.txt"),
                            "--hyp", str(tmp_path / "h.txt")], capsys)
        assert code == 0
        assert "S=0 D=1 I=0 N=5" in out and "WER=0.2000" in out

    def test_missing_file_exits_3(self, tmp_path, capsys):
        code, _, err = run(["wer", "--ref", str(tmp_path / "nope.txt"),
                            "--hyp", str(tmp_path / "nope.txt")], capsys)
        assert code == 3
        assert "not found" in err


class TestKappaCommand:
    def test_identical_labels(self, tmp_path, capsys):
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        a.write_text("Confusion\nOther\nConflict\n")
        b.write_text("Confusion\nOther\nConflict\n")
        code, out, _ = run(["kappa", "--a", str(a), "--b", str(b)], capsys)
        assert code == 0 and "kappa=1.0000" in out

    def test_relative_paths_resolve_against_data_dir_env(self, tmp_path, capsys, monkeypatch):
        (tmp_path / "labels.txt").write_text("Other\nOther\n")
        monkeypatch.setenv("PAIRSENSE_DATA_DIR", str(tmp_path))
        monkeypatch.chdir(tmp_path.parent)
        code, out, _ = run(["kappa", "--a", "labels.txt", "--b", "labels.txt"], capsys)
        assert code == 0 and "kappa=1.0000" in out


class TestUsageErrors:
    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_no_command_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_bad_config_exits_3(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"schema_version": 99, "model": {}}))
        code, _, err = run(["crossval", "--config", str(bad), "--out-dir", str(tmp_path)], capsys)
        assert code == 3 and "schema_version" in err


class TestCrossvalCommand:
    def test_writes_reports(self, config_file, tmp_path, capsys):
        out_dir = tmp_path / "cv"
        code, out, _ = run(["crossval", "--config", str(config_file),
                            "--out-dir", str(out_dir)], capsys)
        assert code == 0
        assert (out_dir / "reports.csv").exists()
        assert (out_dir / "pooled_report.txt").exists()
        assert (out_dir / "pooled_confusion.csv").exists()
        summary = json.loads((out_dir / "summary.json").read_text())
        assert summary["name"] == "early-demo"
        assert "pooled" in summary["result"]
        assert "macro-F1" in out

    def test_report_command_renders_csv(self, config_file, tmp_path, capsys):
        out_dir = tmp_path / "cv2"
        run(["crossval", "--config", str(config_file), "--out-dir", str(out_dir)], capsys)
        code, out, _ = run(["report", str(out_dir)], capsys)
        assert code == 0
        lines = out.splitlines()
        assert lines[0].startswith("name,confusion_p")
        assert lines[1].startswith("early-demo,")

    def test_parallel_jobs_match_serial(self, config_file, tmp_path, capsys):
        serial, parallel = tmp_path / "serial", tmp_path / "parallel"
        run(["crossval", "--config", str(config_file), "--out-dir", str(serial)], capsys)
        run(["crossval", "--config", str(config_file), "--jobs", "2",
             "--out-dir", str(parallel)], capsys)
        for name in ("reports.csv", "summary.json"):
            assert (serial / name).read_bytes() == (parallel / name).read_bytes()

    def test_separable_corpus_reaches_high_macro_f1(self, tmp_path, capsys):
        corpus = tmp_path / "sep.jsonl"
        run(["synth", "--out", str(corpus), "--seed", "4", "--pairs", "10",
             "--utterances-per-pair", "30", "--class-mix", "0.2,0.3,0.5",
             "--separability", "6.0"], capsys)
        enc = {"value_embed_dim": 8, "output_dim": 8, "n_layers": 1, "n_heads": 2,
               "window_size": 5, "max_sequence": 32}
        cfg = {"schema_version": 1, "corpus": str(corpus), "seed": 0, "folds": 3,
               "regime": "fusion",
               "model": {"method": "early", "hidden": 64, "channels": [
                   {"modality": "language", "source": "sentence_vec"},
                   {"modality": "audio", "source": "frames", "encoder": enc}]}}
        cfg_path = tmp_path / "sep.json"
        cfg_path.write_text(json.dumps(cfg))
        out_dir = tmp_path / "sep_out"
        code, _, _ = run(["crossval", "--config", str(cfg_path), "--out-dir", str(out_dir)], capsys)
        assert code == 0
        summary = json.loads((out_dir / "summary.json").read_text())
        assert summary["result"]["pooled"]["macro_f1"] >= 0.90


class TestTrainEvaluate:
    def test_round_trip(self, config_file, corpus_file, tmp_path, capsys):
        prefix = tmp_path / "model"
        code, out, _ = run(["train", "--config", str(config_file), "--out", str(prefix)], capsys)
        assert code == 0
        assert prefix.with_suffix(".ckpt").exists()
        assert prefix.with_suffix(".pipeline.json").exists()
        histories = list(tmp_path.glob("model.*.history.csv"))
        assert histories, "training history CSVs should be emitted"

        out_dir = tmp_path / "eval"
        code, out, _ = run(["evaluate", "--model", str(prefix), "--corpus", str(corpus_file),
                            "--out-dir", str(out_dir)], capsys)
        assert code == 0
        assert (out_dir / "report.txt").exists()
        assert "macro_f1" in out
