import json
import subprocess
import sys
import time

import pytest

from echeat.cli import main
from echeat.records import read_csv_file


def test_synth_writes_csv_and_truth(tmp_path, capsys):
    out = tmp_path / "cohort.csv"
    assert main(["synth", "--students", "94", "--seed", "42", "--out", str(out)]) == 0
    assert len(read_csv_file(out)) == 94
    truth = (tmp_path / "cohort.truth.csv").read_text().splitlines()
    assert len(truth) == 94 and sum(l.endswith(",Abnormal") for l in truth) == 14
    assert "14 abnormal" in capsys.readouterr().out


def test_encode(tmp_path, roster_path):
    out = tmp_path / "f.txt"
    assert main(["encode", "--data", str(roster_path), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 10 and lines[0].endswith("\t0")


def test_train_smoke_is_quick(tmp_path):
    t0 = time.perf_counter()
    assert main(["train", "--arch", "denselstm", "--epochs", "2", "--out", str(tmp_path / "m.echk")]) == 0
    assert time.perf_counter() - t0 < 60


def test_train_eval_with_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"epochs": 3, "learning_rate": 1e-3}, "synth": {"student_count": 120}}))
    model = tmp_path / "m.echk"
    assert main(["train", "--arch", "dnn", "--config", str(cfg), "--seed", "3", "--out", str(model)]) == 0
    # 120 students + 60 augmented = 180 rows; 144 train -> 5 batches x 3 epochs
    assert "15 steps" in capsys.readouterr().out
    roc = tmp_path / "roc.csv"
    assert main(["eval", "--model", str(model), "--config", str(cfg), "--roc", str(roc)]) == 0
    assert roc.read_text().startswith("threshold,fpr,tpr\n")


def test_benchmark_small(tmp_path, capsys):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({
        "benchmark": {"architectures": ["dnn", "rnn", "lstm", "denselstm"], "train_students": 40, "test_students": 20},
        "train": {"epochs": 1, "augment_count": 4},
    }))
    assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0].split()[0] == "Networks"
    assert [l.split()[0] for l in table[1:5]] == ["DNN", "RNN", "LSTM", "DenseLSTM"]
    assert (tmp_path / "out" / "report.json").exists()


def test_ip_log(tmp_path, roster_path):
    out = tmp_path / "ip.ndjson"
    assert main(["ip-log", "--data", str(roster_path), "--out", str(out), "--seed", "1"]) == 0
    kinds = [json.loads(l)["kind"] for l in out.read_text().splitlines()]
    assert kinds.count("SpecificAssignment") == 1 and kinds[7] == "SpecificAssignment"


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main([])


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["eval", "--model", str(tmp_path / "missing.echk")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"nonsense": {}}')
    assert main(["synth", "--out", str(tmp_path / "x.csv"), "--config", str(bad)]) == 1
    broken = tmp_path / "broken.csv"
    broken.write_text("ID,nope\n")
    assert main(["encode", "--data", str(broken)]) == 1
    assert "error" in capsys.readouterr().err


def test_console_script_installed(tmp_path):
    out = tmp_path / "c.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "echeat.cli", "synth", "--students", "5", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
