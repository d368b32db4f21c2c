import subprocess
import sys

import numpy as np
import pytest

from uad.cli import build_parser, main
from uad.detector import DetectorModel, NormalCdf, load_model, save_model
from uad.uniformity import coincidence_pmf

SUBCOMMANDS = ["train", "detect", "pmf", "threshold", "scenario", "reproduce"]


def write_csv(path, rows, header="z0"):
    rows = np.atleast_2d(rows)
    text = (header + "\n" if header else "") + "".join(
        ",".join(repr(float(v)) for v in r) + "\n" for r in rows)
    path.write_text(text)
    return str(path)


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_documents_every_flag(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        main([cmd, "--help"])
    assert e.value.code == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in text
        if action.help is None:
            pytest.fail(f"{cmd}: {action.dest} has no help text")


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "uad.cli", "threshold", "--M", "3", "--N", "2",
                        "--alpha", "0.5"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "1"


@pytest.mark.parametrize("alpha,out", [("0.5", "1"), ("0.2", "-1")])
def test_threshold(alpha, out, capsys):
    assert main(["threshold", "--M", "3", "--N", "2", "--alpha", alpha]) == 0
    assert capsys.readouterr().out.strip() == out


@pytest.mark.parametrize("alpha", ["0", "1.5", "-0.1"])
def test_threshold_bad_alpha(alpha, capsys):
    assert main(["threshold", "--M", "3", "--N", "2", "--alpha", alpha]) == 2
    assert "(0, 1)" in capsys.readouterr().err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as e:
        main(["scenario", "case7", "--out", "x"])
    assert e.value.code == 2


def test_pmf_output(capsys):
    assert main(["pmf", "--M", "20", "--N", "10"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "k,probability" and len(lines) == 12
    exact = coincidence_pmf(20, 10).as_floats()
    got = np.array([float(ln.split(",")[1]) for ln in lines[1:]])
    np.testing.assert_array_equal(got, exact)


def test_train_data_errors(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["train", str(empty), "--out", str(tmp_path / "m.uadm")]) == 3
    assert "no rows" in capsys.readouterr().err
    const = write_csv(tmp_path / "c.csv", np.ones((500, 1)))
    assert main(["train", const, "--out", str(tmp_path / "m.uadm")]) == 3
    assert "degenerate" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("z0\n1.0\nfoo\n")
    assert main(["train", str(bad), "--out", str(tmp_path / "m.uadm")]) == 3
    assert not (tmp_path / "m.uadm").exists()


def test_train_config_errors(tmp_path, capsys):
    data = write_csv(tmp_path / "d.csv", np.random.default_rng(0).standard_normal((500, 1)))
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("learning_rate = fast\n")
    assert main(["train", data, "--config", str(cfg), "--out", str(tmp_path / "m")]) == 2
    assert "learning_rate" in capsys.readouterr().err
    cfg.write_text("colour = blue\n")
    assert main(["train", data, "--config", str(cfg), "--out", str(tmp_path / "m")]) == 2
    assert main(["train", data, "--alpha", "2", "--out", str(tmp_path / "m")]) == 2


def test_train_divergence_exit_code(tmp_path, capsys):
    data = write_csv(tmp_path / "d.csv", np.random.default_rng(0).standard_normal((2000, 1)))
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("learning_rate = 1e308\n")
    assert main(["train", data, "--config", str(cfg), "--iters", "30",
                 "--out", str(tmp_path / "m.uadm")]) == 4
    assert "iteration" in capsys.readouterr().err


def test_train_deterministic_and_detect(tmp_path, monkeypatch):
    rng = np.random.default_rng(1)
    data = write_csv(tmp_path / "d.csv", rng.standard_normal((3000, 1)))
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("# short run\ntotal_generator_iters = 60\nsample_N = 20\nalphabet_M = 50\n")
    a, b = tmp_path / "a.uadm", tmp_path / "b.uadm"
    monkeypatch.setenv("UAD_SEED", "11")
    assert main(["train", data, "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["train", data, "--config", str(cfg), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    model = load_model(a)
    assert (model.seed, model.sample_N, model.alphabet_M) == (11, 20, 50)
    assert (tmp_path / "a.trace.csv").read_text().startswith("iter,critic_loss,gen_loss,val_k1_mean\n")
    resolved = (tmp_path / "a.config").read_text()
    assert "total_generator_iters = 60" in resolved and "learning_rate = 0.001" in resolved

    batches = write_csv(tmp_path / "b.csv", np.vstack([np.full((20, 1), 0.2),
                                                       rng.standard_normal((20, 1))]))
    out = tmp_path / "v.csv"
    assert main(["detect", str(a), batches, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "batch_id,k1,threshold,decision"
    assert lines[1] == f"0,0,{model.threshold_T},anomaly"
    assert len(lines) == 3


def test_detect_oracle_rejection_rate(tmp_path, capsys):
    model = tmp_path / "o.uadm"
    save_model(DetectorModel(NormalCdf(), 200, 50, 0.05), model)
    z = np.random.default_rng(2).standard_normal((2000 * 50, 1))
    assert main(["detect", str(model), write_csv(tmp_path / "z.csv", z, header=None)]) == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    assert len(rows) == 2000
    rate = np.mean([r.endswith("anomaly") for r in rows])
    assert rate <= 0.05 + 3 * np.sqrt(0.05 * 0.95 / 2000)


def test_detect_errors(tmp_path, capsys):
    model = tmp_path / "o.uadm"
    save_model(DetectorModel(NormalCdf(), 200, 10, 0.05), model)
    two_col = write_csv(tmp_path / "w.csv", np.zeros((10, 2)), header="a,b")
    assert main(["detect", str(model), two_col]) == 3
    assert "column" in capsys.readouterr().err
    short = write_csv(tmp_path / "s.csv", np.zeros((15, 1)))
    assert main(["detect", str(model), short]) == 3
    bad = tmp_path / "bad.uadm"
    bad.write_text(model.read_text()[:40])
    assert main(["detect", str(bad), write_csv(tmp_path / "ok.csv", np.zeros((10, 1)))]) == 3


def test_scenario_case_files(tmp_path):
    out = tmp_path / "c1"
    assert main(["scenario", "case1", "--out", str(out), "--batches", "30", "--N", "5",
                 "--train-samples", "40", "--seed", "3"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.resolved", "h0.csv", "h1.csv", "h1_params.csv", "train.csv"]
    assert len((out / "h1.csv").read_text().splitlines()) == 1 + 150
    params = (out / "h1_params.csv").read_text().splitlines()
    assert params[0] == "batch_id,mu" and params[1].startswith("0,")
    assert "seed = 3" in (out / "config.resolved").read_text()


def test_scenario_grid_difference_is_attack(tmp_path):
    out = tmp_path / "g"
    assert main(["scenario", "grid", "--out", str(out), "--batches", "10", "--N", "5",
                 "--train-samples", "20"]) == 0
    clean = np.loadtxt(out / "clean.csv", delimiter=",", skiprows=1)
    hit = np.loadtxt(out / "attacked.csv", delimiter=",", skiprows=1)
    vec = np.loadtxt(out / "attack_vector.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(hit - clean, np.broadcast_to(vec, clean.shape), atol=1e-15)


def test_scenario_bad_grid_config(tmp_path):
    cfg = tmp_path / "g.cfg"
    cfg.write_text("shift_c = 1, 2\n")
    assert main(["scenario", "grid", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2
    assert not (tmp_path / "o").exists()


def test_reproduce_no_learned(tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["reproduce", "grid", "--out", str(out), "--batches", "100", "--seed", "1",
                 "--no-learned"]) == 0
    assert "jtest: auc=" in capsys.readouterr().out
    for name in ("roc.csv", "roc_jtest.csv", "roc_uad_oracle.csv", "summary.csv", "config.resolved"):
        assert (out / name).exists()


def test_reproduce_bad_alpha(tmp_path):
    assert main(["reproduce", "1", "--out", str(tmp_path), "--alpha", "3", "--no-learned"]) == 2


def test_bad_uad_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("UAD_SEED", "abc")
    assert main(["scenario", "case1", "--out", str(tmp_path / "x"), "--batches", "2"]) == 2
