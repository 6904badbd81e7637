import json

import pytest

from kbcin.cli import build_parser, main, train_config

TINY = {"d_m": 16, "enc_layers": 1, "enc_heads": 2, "d_ff": 16, "d_h": 8, "mlp_hidden": [8],
        "epochs": 2, "seeds": [0], "eval_train": False}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-synth", "--out-dir", str(root / "data"), "--split", "8,4,4", "--seed", "2"]) == 0
    assert main(["gen-knowledge", "--corpus", str(root / "data"), "--out-dir", str(root / "know"),
                 "--dim", "6"]) == 0
    (root / "tiny.json").write_text(json.dumps(TINY))
    return root


def data_args(root):
    return ["--corpus", str(root / "data"), "--knowledge", str(root / "know")]


def test_generated_files(workspace):
    for s in ("train", "valid", "test"):
        assert (workspace / "data" / f"{s}.json").exists()
        assert (workspace / "know" / f"{s}.jsonl").exists()


def test_train_eval_dump(workspace, capsys):
    run = workspace / "run"
    assert main(["train", *data_args(workspace), "--config", str(workspace / "tiny.json"),
                 "--out-dir", str(run)]) == 0
    assert "mean test" in capsys.readouterr().out
    ck = run / "seed0" / "checkpoint.npz"
    assert main(["eval", *data_args(workspace), "--checkpoint", str(ck), "--split", "valid",
                 "--out-dir", str(workspace / "ev")]) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    saved = json.loads((workspace / "ev" / "metrics.json").read_text())
    assert printed["macro_f1"] == saved["macro_f1"]
    assert (workspace / "ev" / "predictions.jsonl").exists()
    assert main(["dump-attention", *data_args(workspace), "--checkpoint", str(ck),
                 "--out-dir", str(workspace / "att"), "--disable-s-bridge"]) == 0
    rows = [json.loads(x) for x in (workspace / "att" / "attention_test.jsonl").read_text().splitlines()]
    assert rows and all(len(r["heads"]) == 2 for r in rows)


def test_flags_override_config_file(workspace):
    args = build_parser().parse_args([
        "train", *data_args(workspace), "--config", str(workspace / "tiny.json"), "--out-dir", "x",
        "--epochs", "5", "--heads", "3", "--seed", "7", "--seed", "8", "--emotion-mode", "none",
        "--disable-a-bridge",
    ])
    cfg = train_config(args)
    assert (cfg.epochs, cfg.heads, cfg.seeds) == (5, 3, (7, 8))
    assert cfg.emotion_mode == "none" and not cfg.a_bridge and cfg.e_bridge
    assert cfg.d_h == 8


def test_missing_split_exits_with_error(tmp_path, capsys):
    assert main(["train", "--corpus", str(tmp_path), "--knowledge", str(tmp_path), "--out-dir",
                 str(tmp_path / "o")]) == 2
    assert "missing split" in capsys.readouterr().err


def test_bad_split_spec(tmp_path):
    assert main(["gen-synth", "--out-dir", str(tmp_path), "--split", "1,2"]) == 2
