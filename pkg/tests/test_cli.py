"""End-to-end tests for the command-line interface."""

import json
import subprocess
import sys

import numpy as np
import pytest

import strforge.cli as cli
from strforge.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from strforge.tps import DegenerateFiducialsError


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["describe", "--pipeline", "CRNN", "--bogus-flag"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_missing_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    capsys.readouterr()


def test_invalid_pipeline_token_exits_2(tmp_path, capsys):
    code = main(["describe", "--pipeline", "TPS-DenseNet-BiLSTM-Attn",
                 "--out", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "error:" in capsys.readouterr().err


def test_missing_file_exits_3(tmp_path, capsys):
    code = main(["eval", "--checkpoint", str(tmp_path / "nope.bin"),
                 "--out", str(tmp_path)])
    assert code == EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_numeric_failure_exits_4(tmp_path, capsys, monkeypatch):
    def boom(args):
        raise DegenerateFiducialsError("collinear fiducials")

    monkeypatch.setattr(cli, "cmd_frontier", boom)
    code = main(["frontier", "--out", str(tmp_path)])
    assert code == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


def test_numeric_beats_data_classification(tmp_path, capsys, monkeypatch):
    # DegenerateFiducialsError is a ValueError subclass; it must still map to
    # exit code 4, not the generic data-error code 3.
    assert issubclass(DegenerateFiducialsError, ValueError)
    monkeypatch.setattr(cli, "cmd_frontier",
                        lambda a: (_ for _ in ()).throw(
                            DegenerateFiducialsError("x")))
    assert main(["frontier", "--out", str(tmp_path)]) == EXIT_NUMERIC
    capsys.readouterr()


def test_thread_count_env(monkeypatch):
    monkeypatch.delenv("STRFORGE_THREADS", raising=False)
    assert cli.thread_count() == 1
    monkeypatch.setenv("STRFORGE_THREADS", "4")
    assert cli.thread_count() == 4
    monkeypatch.setenv("STRFORGE_THREADS", "junk")
    assert cli.thread_count() == 1


# ---------------------------------------------------------------------------
# describe / frontier
# ---------------------------------------------------------------------------


def test_describe_writes_report(tmp_path, capsys):
    code = main(["describe", "--pipeline", "CRNN", "--out", str(tmp_path)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "None-VGG-BiLSTM-CTC" in out
    assert "total pipeline params" in out
    assert (tmp_path / "describe.txt").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "describe"
    assert "wall_time_s" in manifest


def test_describe_tps_grid_export(tmp_path, capsys):
    code = main(["describe", "--pipeline", "TPS-VGG-None-CTC", "--scale",
                 "0.125", "--tps", "--out", str(tmp_path)])
    assert code == EXIT_OK
    grid = json.loads((tmp_path / "tps_grid.json").read_text())
    src = np.asarray(grid["source"], dtype=float)
    assert src.shape == (grid["height"] * grid["width"], 2)
    # identity transform: sampling points equal the target pixel grid
    tgt = np.asarray(grid["target"], dtype=float)
    assert np.allclose(src, tgt, atol=1e-5)
    capsys.readouterr()


def test_frontier_report(tmp_path, capsys):
    code = main(["frontier", "--out", str(tmp_path)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "time_ms frontier ids" in out
    report = json.loads((tmp_path / "report.json").read_text())
    assert {1, 9, 11, 23, 24} <= set(
        report["frontiers"]["time_ms"]["pareto_ids"])
    assert (tmp_path / "marginals.csv").exists()
    assert (tmp_path / "plot_data.json").exists()


def test_frontier_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["frontier", "--out", str(a)]) == EXIT_OK
    assert main(["frontier", "--out", str(b)]) == EXIT_OK
    assert (a / "report.json").read_text() == (b / "report.json").read_text()
    assert (a / "marginals.csv").read_text() == (b / "marginals.csv").read_text()
    capsys.readouterr()


# ---------------------------------------------------------------------------
# synthgen -> audit -> eval flow
# ---------------------------------------------------------------------------


def test_synthgen_outputs(tmp_path, capsys):
    code = main(["synthgen", "--n", "12", "--seed", "3", "--max-len", "3",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    images = np.load(tmp_path / "images.npy")
    assert images.shape == (12, 1, 32, 100)
    lines = (tmp_path / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 12
    entry = json.loads(lines[0])
    assert {"image", "label", "dataset", "scene", "digest"} <= set(entry)
    capsys.readouterr()


def test_synthgen_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["synthgen", "--n", "6", "--seed", "9", "--out", str(a)])
    main(["synthgen", "--n", "6", "--seed", "9", "--out", str(b)])
    assert np.array_equal(np.load(a / "images.npy"), np.load(b / "images.npy"))
    assert ((a / "manifest.jsonl").read_text()
            == (b / "manifest.jsonl").read_text())
    capsys.readouterr()


def test_audit_flags_overlap(tmp_path, capsys):
    tr, ev, out = tmp_path / "tr", tmp_path / "ev", tmp_path / "out"
    # same seed -> identical images -> every eval digest appears in training
    main(["synthgen", "--n", "8", "--seed", "5", "--out", str(tr)])
    main(["synthgen", "--n", "8", "--seed", "5", "--out", str(ev)])
    code = main(["audit", "--train-manifest", str(tr / "manifest.jsonl"),
                 "--eval-manifest", str(ev / "manifest.jsonl"),
                 "--emit-clean", "--out", str(out)])
    assert code == EXIT_OK
    audit = json.loads((out / "audit.json").read_text())
    assert audit["by_digest"] == 8
    clean = (out / "train_clean.jsonl").read_text().splitlines()
    assert len(clean) == 0  # everything overlapped
    capsys.readouterr()


def test_audit_disjoint_sets(tmp_path, capsys):
    tr, ev, out = tmp_path / "tr", tmp_path / "ev", tmp_path / "out"
    main(["synthgen", "--n", "6", "--seed", "1", "--out", str(tr)])
    main(["synthgen", "--n", "6", "--seed", "2", "--out", str(ev)])
    code = main(["audit", "--train-manifest", str(tr / "manifest.jsonl"),
                 "--eval-manifest", str(ev / "manifest.jsonl"),
                 "--out", str(out)])
    assert code == EXIT_OK
    audit = json.loads((out / "audit.json").read_text())
    assert audit["by_digest"] == 0
    capsys.readouterr()


def test_eval_manifest_mode(tmp_path, capsys):
    gt = tmp_path / "iiit.jsonl"
    entries = [{"image": f"img{i}.png", "label": lbl, "dataset": "IIIT",
                "scene": f"s{i}", "digest": f"d{i}"}
               for i, lbl in enumerate(["apple", "kiwi", "42"])]
    gt.write_text("\n".join(json.dumps(e) for e in entries) + "\n")
    preds = tmp_path / "preds.jsonl"
    preds.write_text("\n".join(json.dumps({"pred": e["label"]})
                               for e in entries) + "\n")
    out = tmp_path / "out"
    code = main(["eval", "--manifest", f"IIIT={gt}", "--preds",
                 f"IIIT={preds}", "--out", str(out)])
    assert code == EXIT_OK
    record = json.loads((out / "record.json").read_text())
    assert record["total"] == 100.0
    assert record["counts"]["IIIT"] == 3
    capsys.readouterr()


def test_eval_missing_preds_exits_2(tmp_path, capsys):
    gt = tmp_path / "iiit.jsonl"
    gt.write_text(json.dumps({"image": "i.png", "label": "a",
                              "dataset": "IIIT", "scene": "s",
                              "digest": "d"}) + "\n")
    code = main(["eval", "--manifest", f"IIIT={gt}", "--out",
                 str(tmp_path / "out")])
    assert code == EXIT_USAGE
    capsys.readouterr()


# ---------------------------------------------------------------------------
# train -> eval round trip (tiny budget)
# ---------------------------------------------------------------------------


def test_train_then_eval_checkpoint(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["train", "--pipeline", "None-VGG-None-CTC",
                 "--scale", "0.125", "--iters", "4", "--val-every", "2",
                 "--batch", "8", "--train-size", "24", "--val-size", "8",
                 "--max-len", "2", "--out", str(out)])
    assert code == EXIT_OK
    assert (out / "checkpoint.bin").exists()
    log = (out / "train_log.csv").read_text().splitlines()
    assert log[0] == "step,loss,val_accuracy"
    assert len(log) == 3  # validations at steps 2 and 4
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 0

    ev = tmp_path / "ev"
    code = main(["eval", "--checkpoint", str(out / "checkpoint.bin"),
                 "--pipeline", "None-VGG-None-CTC", "--scale", "0.125",
                 "--val-size", "8", "--max-len", "2", "--out", str(ev)])
    assert code == EXIT_OK
    record = json.loads((ev / "record.json").read_text())
    assert 0.0 <= record["total"] <= 100.0
    capsys.readouterr()


def test_train_fraction_sweep(tmp_path, capsys):
    out = tmp_path / "sweep"
    code = main(["train", "--pipeline", "None-VGG-None-CTC",
                 "--scale", "0.125", "--iters", "2", "--val-every", "2",
                 "--batch", "8", "--train-size", "16", "--val-size", "8",
                 "--max-len", "2", "--fractions", "0.5,1.0",
                 "--out", str(out)])
    assert code == EXIT_OK
    lines = (out / "fraction_sweep.csv").read_text().splitlines()
    assert lines[0] == "fraction,val_accuracy"
    assert len(lines) == 3
    capsys.readouterr()


# ---------------------------------------------------------------------------
# console script
# ---------------------------------------------------------------------------


def test_console_script_version():
    proc = subprocess.run([sys.executable, "-m", "strforge.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip()
