import json

import numpy as np
import pytest

from rfadv.cli import main
from rfadv.models import build, save_checkpoint

TINY = ["--set", "waveform.n_devices=3", "--set", "waveform.train_packets=8", "--set", "train.max_epochs=2",
        "--set", "train.lr_patience=1", "--set", "train.early_stop_patience=2"]


def _run(capsys, *argv):
    code = main([*TINY, *argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main([*TINY, "synth", "--days", "0", "--out", str(root / "raw")]) == 0
    assert main([*TINY, "preprocess", "--raw", str(root / "raw"), "--out", str(root / "ds")]) == 0
    assert main([*TINY, "train", "--dataset", str(root / "ds"), "--arch", "CNN1", "--out", str(root / "model")]) == 0
    return root


def test_pipeline_artifacts(pipeline, capsys):
    for sub in ("raw", "ds", "model"):
        assert (pipeline / sub).is_dir()
    assert (pipeline / "model" / "history.csv").read_text().startswith("epoch,lr,train_loss,val_loss,val_acc")
    code, out, _ = _run(capsys, "evaluate", "--model", str(pipeline / "model"), "--dataset", str(pipeline / "ds"))
    assert code == 0
    res = json.loads(out)
    assert 0.0 <= res["accuracy"] <= 1.0 and np.array(res["confusion"]).sum() == 24


def test_attack_and_verify(pipeline, capsys):
    out_dir = pipeline / "fgsm"
    code, out, _ = _run(capsys, "attack", "--model", str(pipeline / "model"), "--dataset", str(pipeline / "ds"),
                        "--method", "FGSM", "--psr", "-20", "--out", str(out_dir))
    assert code == 0
    assert json.loads(out)["psr_db"] == pytest.approx(-20.0, abs=0.01)
    code, out, _ = _run(capsys, "verify", str(pipeline))
    assert code == 0 and json.loads(out)["ok"] is True


def test_outputs_are_write_once(pipeline, capsys):
    code, _, err = _run(capsys, "synth", "--days", "0", "--out", str(pipeline / "raw"))
    assert code == 2 and "never overwritten" in err


def test_unknown_subcommand_and_bad_override(capsys):
    code, _, err = _run(capsys, "frobnicate")
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["exit_code"] == 2
    code = main(["--set", "train.nonsense=1", "verify", "."])
    assert code == 2
    assert "unknown config key" in capsys.readouterr().err


def test_missing_input_exits_3(tmp_path, capsys):
    code, _, err = _run(capsys, "evaluate", "--model", str(tmp_path / "nope"), "--dataset", str(tmp_path / "nada"))
    assert code == 3


def test_corrupted_weights_fail_verify(pipeline, tmp_path, capsys):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(pipeline / "model", bad / "model")
    w = bytearray((bad / "model" / "weights.f64").read_bytes())
    w[100] ^= 0xFF
    (bad / "model" / "weights.f64").write_bytes(bytes(w))
    code, _, err = _run(capsys, "verify", str(bad))
    assert code == 5
    assert json.loads(err.strip().splitlines()[-1])["type"] == "ChecksumMismatch"


def test_shape_mismatch(pipeline, tmp_path, capsys):
    m = build("CNN1", (16, 62), 3, 0)
    save_checkpoint(m, tmp_path / "m16")
    code, _, err = _run(capsys, "evaluate", "--model", str(tmp_path / "m16"), "--dataset", str(pipeline / "ds"))
    assert code == 4 and "ShapeMismatch" in err


def test_report_to_csv(tmp_path, capsys):
    rep = {"points": [{"psr_db": -20.0, "sr": 0.25, "sr_awgn": 0.0, "clean_acc": 1.0},
                      {"psr_db": -10.0, "sr": 0.75, "sr_awgn": 0.05, "clean_acc": 1.0}]}
    (tmp_path / "r.json").write_text(json.dumps(rep))
    code, out, _ = _run(capsys, "report", str(tmp_path / "r.json"))
    assert code == 0 and json.loads(out)["rows"] == 2
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines == ["psr_db,sr,sr_awgn,clean_acc", "-20.0,0.25,0.0,1.0", "-10.0,0.75,0.05,1.0"]
    code, _, _ = _run(capsys, "report", str(tmp_path / "r.json"))
    assert code == 2
