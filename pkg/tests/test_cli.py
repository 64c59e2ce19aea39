import csv
import re

import numpy as np
import pytest

from pat.checkpoint import load_checkpoint
from pat.cli import main
from pat.data import load_csv
from pat.model import count_parameters

SHORT = ["--series-len", "1440", "--patch-size", "36"]
TINY = SHORT + ["--heads", "2", "--head-dim", "8"]


@pytest.fixture(scope="module")
def week_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "d.csv"
    assert main(["synth", "--n", "64", "--seed", "7", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def day_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "day.csv"
    assert main(["synth", "--n", "120", "--seed", "3", "--effect", "1.5",
                 "--series-len", "1440", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def classifier(day_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "clf.ckpt"
    argv = ["finetune", "--data", str(day_csv), *TINY, "--epochs", "3", "--lr", "3e-3",
            "--batch-size", "16", "--out", str(out)]
    assert main(argv) == 0
    return out


def test_synth_rows(week_csv):
    lines = week_csv.read_text().splitlines()
    assert len(lines) == 65
    assert len(lines[0].split(",")) == 10082
    assert len(load_csv(week_csv, series_len=10080)) == 64


def test_unknown_flag_exit_1(capsys):
    assert main(["synth", "--n", "4", "--out", "x.csv", "--bogus"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--bogus" in err


def test_no_subcommand_exit_1(capsys):
    assert main([]) == 1


def test_missing_file_exit_2(tmp_path, capsys):
    assert main(["pretrain", "--data", str(tmp_path / "none.csv"), "--out", "m.ckpt"]) == 2


def test_bad_data_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("participant_id,label,m0,m1\na,0,1\n")
    assert main(["pretrain", "--data", str(bad), "--series-len", "2", "--patch-size", "1",
                 "--out", str(tmp_path / "m.ckpt")]) == 2
    assert ":2:" in capsys.readouterr().err


def test_pretrain_m_and_inspect(week_csv, tmp_path, capsys):
    out = tmp_path / "m.ckpt"
    argv = ["pretrain", "--data", str(week_csv), "--mask-ratio", "0.9", "--loss", "all",
            "--size", "M", "--epochs", "1", "--batch-size", "64", "--out", str(out)]
    assert main(argv) == 0
    ckpt = load_checkpoint(out)
    assert ckpt.config["mae"]["mask_ratio"] == 0.9
    assert ckpt.config["mae"]["loss_mode"] == "all"
    assert ckpt.config["model"]["num_layers"] == 2
    capsys.readouterr()
    assert main(["inspect-ckpt", str(out)]) == 0
    text = capsys.readouterr().out
    assert "mae.mask_ratio: 0.9" in text
    assert "encoder.block1.attn.wq [96, 1152]" in text
    listed = int(re.search(r"embedder\+encoder parameters: (\d+)", text).group(1))
    assert listed == count_parameters(ckpt.model_config()) == 993_440


def test_pretrain_masked_loss_conv_smooth(day_csv, tmp_path):
    out = tmp_path / "c.ckpt"
    argv = ["pretrain", "--data", str(day_csv), *TINY, "--embed", "conv", "--loss", "masked",
            "--smooth", "on", "--epochs", "1", "--out", str(out)]
    assert main(argv) == 0
    cfg = load_checkpoint(out).config
    assert cfg["mae"]["loss_mode"] == "masked_only" and cfg["mae"]["smooth"] is True
    assert cfg["model"]["embed_mode"] == "conv"


def test_pretrain_rejects_unlabeled_without_flag(tmp_path):
    path = tmp_path / "u.csv"
    head = "participant_id,label," + ",".join(f"m{i}" for i in range(1440))
    rows = [f"p{i},," + ",".join(["0.5"] * 1440) for i in range(3)]
    path.write_text("\n".join([head] + rows) + "\n")
    base = ["pretrain", "--data", str(path), *TINY, "--epochs", "1", "--out", str(tmp_path / "u.ckpt")]
    assert main(base) == 2
    assert main(base + ["--labels-optional"]) == 0


def test_lp_finetune_freezes_encoder(day_csv, tmp_path):
    pre = tmp_path / "pre.ckpt"
    assert main(["pretrain", "--data", str(day_csv), *TINY, "--epochs", "1", "--out", str(pre)]) == 0
    lp = tmp_path / "lp.ckpt"
    assert main(["finetune", "--data", str(day_csv), "--ckpt", str(pre), "--mode", "LP",
                 "--epochs", "2", "--lr", "1e-2", "--out", str(lp)]) == 0
    a, b = load_checkpoint(pre).tensors, load_checkpoint(lp).tensors
    enc = [n for n in a if n.startswith(("embed.", "encoder."))]
    assert enc and all(a[n].tobytes() == b[n].tobytes() for n in enc)
    assert "head.weight" in b


def test_predict_and_explain(classifier, day_csv, tmp_path):
    preds = tmp_path / "p.csv"
    assert main(["predict", "--ckpt", str(classifier), "--data", str(day_csv), "--out", str(preds)]) == 0
    rows = list(csv.DictReader(preds.open()))
    assert len(rows) == 120 and all(0 <= float(r["probability"]) <= 1 for r in rows)
    out = tmp_path / "maps"
    assert main(["explain", "--ckpt", str(classifier), "--data", str(day_csv),
                 "--participant", "P000", "--participant", "P001", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["P000.csv", "P000.svg", "P001.csv", "P001.svg"]
    assert len((out / "P000.csv").read_text().splitlines()) == 1441


def test_explain_unknown_participant(classifier, day_csv, tmp_path):
    assert main(["explain", "--ckpt", str(classifier), "--data", str(day_csv),
                 "--participant", "nobody", "--out", str(tmp_path)]) == 2


def test_predict_needs_classifier(day_csv, tmp_path):
    pre = tmp_path / "pre.ckpt"
    assert main(["pretrain", "--data", str(day_csv), *TINY, "--epochs", "1", "--out", str(pre)]) == 0
    assert main(["predict", "--ckpt", str(pre), "--data", str(day_csv), "--out", str(tmp_path / "x")]) == 2


def test_benchmark_deterministic(day_csv, tmp_path, capsys):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.csv"
        argv = ["benchmark", "--data", str(day_csv), *TINY, "--sizes", "40,N", "--test-size", "40",
                "--epochs", "2", "--lr", "3e-3", "--seed", "2", "--name", "tiny", "--out", str(out),
                "--manifests", str(tmp_path / f"m{k}")]
        assert main(argv) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    table = capsys.readouterr().out
    assert table.splitlines()[0].split() == ["Model", "Avg", "AUC", "n=40", "n=N", "Params"]
    assert (tmp_path / "m0" / "train_N.txt").exists()


def test_config_file(day_csv, tmp_path):
    conf = tmp_path / "run.conf"
    out = tmp_path / "from_conf.ckpt"
    conf.write_text(f"# pretraining\ndata = {day_csv}\nseries-len = 1440\npatch_size = 36\n"
                    f"heads = 2\nhead-dim = 8\nepochs = 1\nmask-ratio = 0.5\nout = {out}\n")
    assert main(["pretrain", "--config", str(conf), "--mask-ratio", "0.75"]) == 0
    assert load_checkpoint(out).config["mae"]["mask_ratio"] == 0.75


def test_config_file_unknown_key(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("wibble = 3\n")
    assert main(["synth", "--config", str(conf), "--n", "4", "--out", "x"]) == 1


def test_config_file_missing(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "nope.conf"), "--n", "4", "--out", "x"]) == 2


def test_seeded_commands_are_byte_deterministic(day_csv, tmp_path):
    def run(tag):
        d = tmp_path / tag
        d.mkdir()
        assert main(["synth", "--n", "20", "--seed", "4", "--series-len", "1440",
                     "--out", str(d / "s.csv")]) == 0
        assert main(["pretrain", "--data", str(day_csv), *TINY, "--epochs", "2", "--seed", "4",
                     "--out", str(d / "m.ckpt")]) == 0
        assert main(["finetune", "--data", str(day_csv), "--ckpt", str(d / "m.ckpt"),
                     "--epochs", "2", "--seed", "4", "--out", str(d / "c.ckpt")]) == 0
        assert main(["predict", "--ckpt", str(d / "c.ckpt"), "--data", str(day_csv),
                     "--out", str(d / "p.csv")]) == 0
        assert main(["explain", "--ckpt", str(d / "c.ckpt"), "--data", str(day_csv),
                     "--participant", "P005", "--out", str(d / "maps")]) == 0
        return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}

    first, second = run("a"), run("b")
    assert first.keys() == second.keys() and len(first) == 6
    assert first == second


def test_benchmark_train_stats_flag(day_csv, tmp_path):
    out = tmp_path / "r.csv"
    assert main(["benchmark", "--data", str(day_csv), *TINY, "--sizes", "40", "--test-size", "40",
                 "--epochs", "1", "--train-stats", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "model,recipe,size,auc,avg_auc,params,seed,seconds"
