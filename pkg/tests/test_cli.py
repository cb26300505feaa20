import csv

import numpy as np
import pytest

from neuim import cli, dataio, pinn

SHORT = "name = {name}\nkind = torque-change\nmachine = small\nt_end = 0.12\ntorque = 0:0, 0.06:{torque}\n"


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def datasets(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    for name, torque in (("train", 2), ("test", 3)):
        cfg = root / f"{name}.cfg"
        cfg.write_text(SHORT.format(name=name, torque=torque))
        assert run("build-dataset", "--config", cfg, "--out", root / name) == 0
    return root / "train", root / "test"


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_preset(tmp_path, capsys):
    assert run("simulate", "--preset", "free-accel", "--out", tmp_path) == 0
    rows = (tmp_path / "free-accel.csv").read_text().splitlines()
    assert len(rows) == 10001 + 1
    assert "final_omega_r=" in capsys.readouterr().out


def test_simulate_halving_dt_doubles_rows(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(SHORT.format(name="s", torque=1))
    assert run("simulate", "--config", cfg, "--dt", "1e-4", "--out", tmp_path / "a") == 0
    assert run("simulate", "--config", cfg, "--dt", "5e-5", "--out", tmp_path / "b") == 0
    n_a = len((tmp_path / "a" / "s.csv").read_text().splitlines()) - 1
    n_b = len((tmp_path / "b" / "s.csv").read_text().splitlines()) - 1
    assert n_b - 1 == 2 * (n_a - 1)


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(SHORT.format(name="s", torque=1) + "L_M = 0.07\n")
    assert run("simulate", "--config", cfg, "--lm", "0.05", "--out", tmp_path) == 0
    assert dataio.read_trajectory(tmp_path / "s.csv").params.L_M == 0.05


def test_bad_preset_is_a_config_error(tmp_path, capsys):
    assert run("simulate", "--preset", "warp-drive", "--out", tmp_path) == cli.EXIT_CONFIG
    assert "warp-drive" in capsys.readouterr().err


def test_missing_out_is_a_config_error():
    assert run("simulate", "--preset", "free-accel") == cli.EXIT_CONFIG


def test_numeric_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(SHORT.format(name="s", torque=1).replace("t_end = 0.12", "t_end = 3.0"))
    assert run("simulate", "--config", cfg, "--dt", "0.05", "--out", tmp_path) == cli.EXIT_NUMERIC
    assert "step" in capsys.readouterr().err


def test_train_without_data_has_zero_data_loss(tmp_path, datasets):
    train, _ = datasets
    assert run("train", "--dataset", train, "--data-fraction", 0, "--epochs", 5, "--p-epochs", 2,
               "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "torque-change" / "loss_history.csv")
    assert len(rows) == 5
    assert list(rows[0]) == ["epoch", "L_physics", "L_data", "L_total"]
    assert all(float(r["L_data"]) == 0.0 for r in rows)
    assert all(float(r["L_physics"]) > 0.0 for r in rows)


def test_train_zero_epochs_writes_initialization(tmp_path, datasets):
    train, _ = datasets
    assert run("train", "--dataset", train, "--epochs", 0, "--p-epochs", 0, "--seed", 3, "--out", tmp_path) == 0
    g = dataio.load_model(tmp_path / "torque-change" / "g.json")
    init = pinn.init_g_model(dataio.read_dataset(train).trajectories, pinn.TrainingConfig(seed=3))
    assert np.array_equal(g.net.flat(), init.net.flat())


def test_train_is_deterministic(tmp_path, datasets):
    train, _ = datasets
    for d in ("a", "b"):
        assert run("train", "--dataset", train, "--data-fraction", 1, "--epochs", 4, "--p-epochs", 2,
                   "--out", tmp_path / d) == 0
    for f in ("g.json", "p.json", "loss_history.csv"):
        assert (tmp_path / "a" / "torque-change" / f).read_bytes() == (tmp_path / "b" / "torque-change" / f).read_bytes()


def test_eval_table_and_repeatability(tmp_path, datasets):
    train, test = datasets
    assert run("train", "--dataset", train, "--epochs", 3, "--p-epochs", 2, "--out", tmp_path / "m") == 0
    for d in ("e1", "e2"):
        assert run("eval", "--dataset", test, "--models", f"physics={tmp_path / 'm'}", "--out", tmp_path / d) == 0
    assert (tmp_path / "e1" / "mse.csv").read_bytes() == (tmp_path / "e2" / "mse.csv").read_bytes()
    table = (tmp_path / "e1" / "table.txt").read_text().splitlines()
    assert table[0].split() == ["Scenario", "type", "MSE"] and "physics" in table[2]


def test_eval_missing_model_fails(tmp_path, datasets):
    _, test = datasets
    assert run("eval", "--dataset", test, "--models", tmp_path / "nowhere") != 0
    (tmp_path / "empty").mkdir()
    assert run("eval", "--dataset", test, "--models", tmp_path / "empty") != 0


def test_compare_is_byte_identical(tmp_path, datasets):
    train, test = datasets
    for d in ("a", "b"):
        assert run("compare", "--train", train, "--test", test, "--fractions", "0,0.5", "--epochs", 4,
                   "--p-epochs", 2, "--out", tmp_path / d) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert any(str(f).startswith("series") for f in files)
    assert {str(f) for f in files} >= {"mse.csv", "table.txt", "convergence/torque-change_hybrid-0.5.csv"}
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    methods = {r["method"] for r in read_rows(tmp_path / "a" / "mse.csv")}
    assert methods == {"data-driven", "physics", "hybrid-0.5"}


def test_compare_rejects_bad_fractions(tmp_path, datasets):
    train, test = datasets
    assert run("compare", "--train", train, "--test", test, "--fractions", "0,1.5", "--out", tmp_path) == cli.EXIT_CONFIG


def test_compare_plot_renders_pngs(tmp_path, datasets):
    pytest.importorskip("matplotlib")
    train, test = datasets
    assert run("compare", "--train", train, "--test", test, "--fractions", "0.5", "--epochs", 3,
               "--p-epochs", 2, "--out", tmp_path, "--plot") == 0
    pngs = list((tmp_path / "figures").glob("*.png"))
    assert pngs and all(p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" for p in pngs)
