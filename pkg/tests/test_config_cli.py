import json
import os

import numpy as np
import pytest

from evidential_uq import cli
from evidential_uq.config import ConfigError, RunConfig, load_config, parse_config

SMALL = ["--set", "n_train=120", "--set", "n_test=120", "--set", "n_ood=30",
         "--set", "epochs=5", "--set", "n_heldout=60", "--seeds", "1"]


def run(*argv):
    return cli.main(list(argv))


def test_parse_config_comments_and_errors():
    vals = parse_config("# header\nsigma = 2.5  # inline\n\nseeds=0,1\n")
    assert vals == {"sigma": "2.5", "seeds": "0,1"}
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("sigma = 1\nnot a pair\n")
    with pytest.raises(ConfigError, match="empty key"):
        parse_config(" = 3\n")


def test_typed_values(tmp_path):
    cfg = load_config(None, {"hidden_dims": "32,32", "batch_size": "none", "train_ood": "true",
                             "objective": "reverse_kl", "tau": "11", "measures": "mcp,klos"})
    assert cfg.hidden_dims == (32, 32) and cfg.batch_size is None and cfg.train_ood
    assert cfg.resolved_tau() == 11.0 and cfg.measures == ("mcp", "klos")
    assert RunConfig().resolved_tau() == pytest.approx(21.0)
    assert load_config(None, {"hidden_dims": "none"}).hidden_dims == ()


@pytest.mark.parametrize("overrides,match", [
    ({"sigmaa": "1"}, "sigmaa"),
    ({"sigma": "abc"}, "sigma"),
    ({"sigma": "-1"}, "sigma"),
    ({"measures": "mcp,nope"}, "nope"),
    ({"tasks": "mis,other"}, "other"),
    ({"seeds": "none"}, "seeds"),
    ({"train_ood": "yes please"}, "train_ood"),
    ({"train_ood": "true"}, "reverse_kl"),
    ({"head_preset": "fast"}, "head_preset"),
    ({"lr": "0"}, "learning rate"),
])
def test_bad_config_names_the_problem(overrides, match):
    with pytest.raises(ConfigError, match=match):
        load_config(None, overrides)


def test_flags_win_over_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("sigma = 2\nepochs = 7\n")
    cfg = load_config(p, {"sigma": "3"})
    assert cfg.sigma == 3.0 and cfg.epochs == 7
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")


def test_to_text_round_trips_and_fingerprint():
    cfg = load_config(None, {"hidden_dims": "8", "tau": "5"})
    back = load_config(None, parse_config(cfg.to_text()))
    assert back == cfg
    assert back.fingerprint() == cfg.fingerprint()
    assert cfg.fingerprint() != RunConfig().fingerprint()
    assert len(cfg.fingerprint()) == 16


def test_head_schedule_overrides():
    assert RunConfig().head_schedule() == dict(epochs1=200, epochs2=50, lr1=1e-3, lr2=1e-5)
    s = load_config(None, {"head_preset": "appendix", "head_lr2": "0"}).head_schedule()
    assert s == dict(epochs1=100, epochs2=30, lr1=1e-4, lr2=0.0)


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run() == 1
    assert run("bogus") == 1
    assert run("train", "--seeds", "x") == 1
    assert run("train", "--out-dir", str(tmp_path), "--set", "nokey=1") == 1
    assert "nokey" in capsys.readouterr().err
    assert run("train", "--out-dir", str(tmp_path), "--set", "novalue") == 1
    assert run("train", "--out-dir", str(tmp_path), "--seeds", "0") == 1
    assert run("eval", "--out-dir", str(tmp_path / "empty"), *SMALL) == 1
    assert run("--help") == 0


def test_synth_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("synth-gen", "--out-dir", str(a), *SMALL) == 0
    assert run("synth-gen", "--out-dir", str(b), *SMALL) == 0
    names = sorted(os.listdir(a))
    assert "train_s0.csv" in names and "ood_s0.csv" in names and "manifest_synth-gen.txt" in names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_env_var_sets_default_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert run("synth-gen", *SMALL) == 0
    assert (tmp_path / "env" / "train_s0.csv").exists()


def test_pipeline_and_force(tmp_path, capsys):
    out = str(tmp_path)
    extra = ["--set", "measures=mcp,klos,confidnet", "--set", "head_hidden=8",
             "--set", "head_epochs1=2", "--set", "head_epochs2=1",
             "--set", "tasks=mis,ood,joint,selective"]
    assert run("synth-gen", "--out-dir", out, *SMALL) == 0
    assert run("train", "--out-dir", out, *SMALL) == 0
    model = tmp_path / "model_s0.txt"
    first = model.read_text()
    model.write_text(first + "\n")
    assert run("train", "--out-dir", out, *SMALL) == 0
    assert model.read_text() == first + "\n"  # skipped
    assert run("train", "--out-dir", out, "--force", *SMALL) == 0
    assert model.read_text() == first
    assert run("eval", "--out-dir", out, *SMALL, *extra) == 1  # no head yet
    assert run("train-aux", "--out-dir", out, *SMALL, *extra) == 0
    assert run("eval", "--out-dir", out, *SMALL, *extra) == 0
    header = (tmp_path / "report_s0.csv").read_text().splitlines()[0]
    assert header == "measure,task,auroc,aupr_error,aupr_success,fpr95,aurc,e_aurc"
    rep = json.loads((tmp_path / "report_s0.json").read_text())
    assert rep["meta"]["fingerprint"] == RunConfig().updated(
        {"n_train": "120", "n_test": "120", "n_ood": "30", "epochs": "5", "n_heldout": "60",
         "seeds": "0", "measures": "mcp,klos,confidnet", "head_hidden": "8",
         "head_epochs1": "2", "head_epochs2": "1",
         "tasks": "mis,ood,joint,selective"}).fingerprint()
    assert (tmp_path / "aggregate.csv").exists() and (tmp_path / "curve_klos_s0.csv").exists()
    assert "confidnet" in capsys.readouterr().out


def test_nan_training_exits_2(tmp_path):
    out = str(tmp_path)
    assert run("synth-gen", "--out-dir", out, *SMALL) == 0
    p = tmp_path / "train_s0.csv"
    lines = p.read_text().splitlines()
    lines[5] = "nan,0.0," + lines[5].split(",")[-1]
    p.write_text("\n".join(lines) + "\n")
    assert run("train", "--out-dir", out, *SMALL) == 2


def test_repro_out_of_tolerance_exits_3(tmp_path, capsys):
    code = run("repro-synthetic", "--out-dir", str(tmp_path), "--tolerance", "0", *SMALL)
    assert code == 3
    rows = (tmp_path / "comparison.csv").read_text().splitlines()
    assert rows[0] == "measure,task,paper,ours,delta"
    assert len(rows) == 1 + 18
    assert "out of tolerance" in capsys.readouterr().err


def test_bad_data_file_exits_1(tmp_path):
    out = str(tmp_path)
    assert run("synth-gen", "--out-dir", out, *SMALL) == 0
    (tmp_path / "train_s0.csv").write_text("f0,f1,label\n1.0,2.0,x\n")
    assert run("train", "--out-dir", out, *SMALL) == 1


def test_repro_outputs_are_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        run("repro-synthetic", "--out-dir", str(d), "--tolerance", "100", *SMALL)
    for name in ("comparison.csv", "report_s0.csv", "aggregate.csv", "model_s0.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert np.isfinite(np.loadtxt(a / "history_s0.csv", delimiter=",", skiprows=1)).all()
