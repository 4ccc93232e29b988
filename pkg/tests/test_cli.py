import re

import pytest

from dfdsed.cli import main

MICRO = """\
model.channels = 2,3,3,3,3,3,3
model.gru_hidden = 4
model.gru_layers = 1
model.dilations_f = best
train.batch_size = 4
"""


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("synth", "--clips", 4, "--seed", 7, "--out", tmp_path / name) == 0
    wavs = sorted(p.name for p in (tmp_path / "a" / "audio").iterdir())
    assert len(wavs) == 4
    for w in wavs:
        assert (tmp_path / "a" / "audio" / w).read_bytes() == (tmp_path / "b" / "audio" / w).read_bytes()
    assert (tmp_path / "a" / "references.tsv").read_bytes() == (tmp_path / "b" / "references.tsv").read_bytes()


def test_gradcheck_command(capsys):
    assert run("gradcheck", "--seed", 0) == 0
    err = float(re.search(r"max relative error (\S+)", capsys.readouterr().out).group(1))
    assert err < 1e-4


def test_train_eval_search_and_variance(tmp_path, capsys):
    cfg = tmp_path / "micro.cfg"
    cfg.write_text(MICRO)
    data, out = tmp_path / "data", tmp_path / "run"
    assert run("synth", "--clips", 4, "--seed", 1, "--out", data) == 0
    assert run("train", "--config", cfg, "--data", data, "--steps", 3, "--out", out) == 0
    log = (out / "loss.log").read_text().splitlines()
    assert log[0] == "step,loss" and len(log) == 4
    ckpt = out / "model.dfdc"
    assert run("mf-search", "--config", cfg, "--data", data, "--checkpoint", ckpt, "--out", out) == 0
    assert run("eval", "--config", cfg, "--data", data, "--checkpoint", ckpt, "--plan", out / "median_plan.txt",
               "--out", out) == 0
    metrics = (out / "metrics.tsv").read_text()
    assert "macro\t" in metrics and "psds_lite\t" in metrics
    assert len(list((out / "scores").glob("*.bin"))) == 4
    assert (out / "detections.tsv").read_text().startswith("filename\tonset\toffset\tevent_label")
    assert run("att-var", "--config", cfg, "--data", data, "--checkpoint", ckpt, "--out", out) == 0
    assert (out / "model_attention_variance.csv").read_text().startswith("layer,freq,variance\n")


def test_bad_config_exits_1(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("eval.median = 4\n")
    assert run("gradcheck", "--config", tmp_path / "bad.cfg") == 1
    assert "odd" in capsys.readouterr().err


def test_missing_inputs_exit_1(tmp_path):
    assert run("train", "--data", tmp_path, "--out", tmp_path / "o") == 1
    assert run("eval", "--data", tmp_path, "--checkpoint", tmp_path / "none.dfdc", "--out", tmp_path / "o") == 1
    assert not (tmp_path / "o").exists()


def test_corrupt_checkpoint_exits_1(tmp_path, capsys):
    assert run("synth", "--clips", 1, "--out", tmp_path / "d") == 0
    (tmp_path / "x.dfdc").write_bytes(b"DFDC\x01\x00")
    assert run("eval", "--data", tmp_path / "d", "--checkpoint", tmp_path / "x.dfdc", "--out", tmp_path / "o") == 1
    assert "corrupt" in capsys.readouterr().err


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        run("fly")
