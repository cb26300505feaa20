import hashlib
import json

import numpy as np
import pytest

from neuim import dataio, machine, nnet, pinn
from neuim.simulator import ScenarioKind, simulate


@pytest.fixture(scope="module")
def accel():
    return simulate(dataio.free_acceleration_scenario(t_end=0.3, save_every=10))


# -- presets


def test_paper_train_preset_layout():
    scs = dataio.preset_scenarios("paper-train")
    kinds = [sc.kind for sc in scs]
    assert kinds.count(ScenarioKind.TORQUE_CHANGE) == 2 and kinds.count(ScenarioKind.FAULT) == 3
    tc = [sc for sc in scs if sc.kind is ScenarioKind.TORQUE_CHANGE]
    assert [sc.torque_schedule for sc in tc] == [((0, 0), (2.05, 5), (2.5, -5)), ((0, 0), (2.05, 10), (2.5, -10))]
    faults = [sc for sc in scs if sc.kind is ScenarioKind.FAULT]
    assert [round(sc.v_mag / dataio.phase_peak(1.0), 6) for sc in faults] == [2.3, 2.4, 2.5]
    assert all(sc.sag_schedule == ((6.01, 0.0), (6.11, 1.0)) for sc in faults)
    assert all(sc.torque_schedule[-1][1] == 8900 for sc in faults)
    assert all(sc.params.L_M == machine.LARGE_MACHINE.L_M for sc in faults)


def test_paper_test_preset_changes_magnetizing_inductance():
    scs = dataio.preset_scenarios("paper-test")
    faults = [sc for sc in scs if sc.kind is ScenarioKind.FAULT]
    assert [sc.params.L_M for sc in faults] == [0.0531, 0.0531]
    tc = [sc.torque_schedule[1][1] for sc in scs if sc.kind is ScenarioKind.TORQUE_CHANGE]
    assert tc == [3.0, 12.0]


def test_preset_overrides_and_errors():
    scs = dataio.preset_scenarios("free-accel", params_override={"L_M": 0.05}, dt=5e-5)
    assert scs[0].params.L_M == 0.05 and scs[0].dt == 5e-5 and scs[0].sample_dt == pytest.approx(1e-3)
    assert dataio.preset_scenarios("free-accel", machine_name="large")[0].params.J == machine.LARGE_MACHINE.J
    with pytest.raises(KeyError):
        dataio.preset_scenarios("nope")


def test_empty_dataset_is_valid():
    ds = dataio.build_dataset([])
    assert len(ds) == 0 and ds.check_grid() is None


def test_config_file_scenario(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# a loaded start\nname = demo\nkind = torque-change\nmachine = small\n"
                   "t_end = 0.2\ntorque = 0:0, 0.1:4\nL_M = 0.07\n")
    ds = dataio.build_dataset(cfg)
    tr = ds.trajectories[0]
    assert ds.name == "demo" and tr.params.L_M == 0.07 and tr.T_m[-1] == 4.0
    bad = tmp_path / "bad.cfg"
    bad.write_text("kind torque-change\n")
    with pytest.raises(dataio.DataFormatError):
        dataio.read_config(bad)
    worse = tmp_path / "worse.cfg"
    worse.write_text("kind = spinning\n")
    with pytest.raises(dataio.DataFormatError):
        dataio.build_dataset(worse)


def test_dataset_fraction_and_kind_selection(accel):
    ds = dataio.Dataset("x", [dataio.DatasetEntry(None, accel) for _ in range(4)])
    assert [e.supervised for e in ds.with_data_fraction(0.75).entries] == [True, True, True, False]
    assert len(ds.of_kind("free-acceleration")) == 4 and len(ds.of_kind("fault")) == 0


def test_mixed_grid_rejected(accel):
    other = simulate(dataio.free_acceleration_scenario(t_end=0.3, save_every=5))
    ds = dataio.Dataset("x", [dataio.DatasetEntry(None, accel), dataio.DatasetEntry(None, other)])
    with pytest.raises(dataio.GridMismatchError):
        ds.check_grid()


# -- trajectory CSV


def test_csv_round_trip_is_exact(tmp_path, accel):
    path = tmp_path / "a.csv"
    dataio.write_trajectory(path, accel)
    lines = path.read_text().splitlines()
    assert len(lines) == len(accel) + 1
    assert lines[0] == ",".join(dataio.CSV_COLUMNS)
    back = dataio.read_trajectory(path)
    for f in ("t", "v_abcs", "i_abcs", "i_qd0s", "i_qd0r", "lam_qd0s", "lam_qd0r", "theta", "omega",
              "omega_r", "T_e", "T_m"):
        assert np.array_equal(getattr(back, f), getattr(accel, f)), f
    assert back.params == accel.params and back.kind == accel.kind


def test_csv_errors(tmp_path, accel):
    path = tmp_path / "a.csv"
    dataio.write_trajectory(path, accel)
    text = path.read_text().splitlines()

    missing = tmp_path / "m.csv"
    missing.write_text("\n".join([text[0].replace(",omega_r", "")] + text[1:]) + "\n")
    with pytest.raises(dataio.DataFormatError, match="omega_r"):
        dataio.read_trajectory(missing, params=accel.params)

    short = tmp_path / "s.csv"
    short.write_text("\n".join(text[:3] + [text[3].rsplit(",", 1)[0]]) + "\n")
    with pytest.raises(dataio.DataFormatError, match="fields"):
        dataio.read_trajectory(short, params=accel.params)

    nan = tmp_path / "n.csv"
    nan.write_text("\n".join(text[:2] + ["nan" + text[2][text[2].index(","):]]) + "\n")
    with pytest.raises(dataio.DataFormatError, match="non-finite"):
        dataio.read_trajectory(nan, params=accel.params)

    bare = tmp_path / "bare.csv"
    bare.write_text(path.read_text())
    with pytest.raises(dataio.DataFormatError, match="sidecar"):
        dataio.read_trajectory(bare)


def test_dataset_directory_round_trip(tmp_path, accel):
    ds = dataio.Dataset("demo", [dataio.DatasetEntry(None, accel, True)], "test")
    dataio.write_dataset(tmp_path, ds)
    back = dataio.read_dataset(tmp_path)
    assert back.name == "demo" and back.split == "test" and back.entries[0].supervised
    assert np.array_equal(back.trajectories[0].i_abcs, accel.i_abcs)


def test_build_dataset_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        dataio.write_dataset(d, dataio.build_dataset("free-accel"))
    assert [p.read_bytes() for p in sorted(a.iterdir())] == [p.read_bytes() for p in sorted(b.iterdir())]


# -- model JSON


@pytest.mark.parametrize("basis", ["current", "balanced"])
def test_model_round_trip_is_exact(tmp_path, accel, basis):
    g = pinn.init_g_model([accel], pinn.TrainingConfig(output_basis=basis))
    pm = pinn.init_p_model(g, [accel], pinn.TrainingConfig())
    for model, name in ((g, "g.json"), (pm, "p.json")):
        dataio.save_model(tmp_path / name, model)
        back = dataio.load_model(tmp_path / name)
        assert type(back) is type(model)
        x = np.random.default_rng(0).normal(size=(20, model.net.d_in))
        assert np.array_equal(nnet.forward(back.net, x)[0], nnet.forward(model.net, x)[0])
        assert np.array_equal(back.y_scale, model.y_scale)
    assert np.array_equal(pinn.g_currents(dataio.load_model(tmp_path / "g.json"), accel), pinn.g_currents(g, accel))


def test_model_file_validation(tmp_path, accel):
    g = pinn.init_g_model([accel], pinn.TrainingConfig())
    doc = dataio.model_to_dict(g)
    assert doc["format_version"] == 1 and doc["layer_sizes"] == [11, 38, 24, 6]

    tampered = json.loads(json.dumps(doc))
    tampered["weights"][1] = tampered["weights"][1][:-1]
    with pytest.raises(dataio.ModelFormatError, match="layer 1"):
        dataio.model_from_dict(tampered)

    future = dict(doc, format_version=2)
    with pytest.raises(dataio.ModelFormatError, match="format_version"):
        dataio.model_from_dict(future)

    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(dataio.ModelFormatError):
        dataio.load_model(tmp_path / "junk.json")


# -- evaluation


def oracle_pair(tr):
    """Zero-weight models: every prediction collapses to the (zero) output offset."""
    g = pinn.init_g_model([tr], pinn.TrainingConfig())
    g.net.set_flat(np.zeros(g.net.n_params))
    pm = pinn.init_p_model(g, [tr], pinn.TrainingConfig())
    pm.net.set_flat(np.zeros(pm.net.n_params))
    return g, pm


def test_evaluate_oracle_floor_and_repeatability(accel):
    g, pm = oracle_pair(accel)
    report = dataio.evaluate({"m": dataio.ModelPair(g, pm)}, dataio.Dataset("x", [dataio.DatasetEntry(None, accel)]))
    again = dataio.evaluate({"m": dataio.ModelPair(g, pm)}, dataio.Dataset("x", [dataio.DatasetEntry(None, accel)]))
    assert report.summary() == again.summary()
    s = report.summary()[0]
    # zero predictions: the normalized errors are exactly one
    assert s["nmse_didt"] == pytest.approx(1.0) and s["nmse_iqd0"] == pytest.approx(1.0)
    exact = dataio.score_trajectory(accel, accel.currents, pinn.derivative_targets(accel))
    assert exact["mse_didt"] == 0.0 and exact["mse_iqd0"] == 0.0


def test_evaluate_rejects_dt_mismatch(accel):
    g, pm = oracle_pair(accel)
    finer = simulate(dataio.free_acceleration_scenario(t_end=0.3, save_every=5))
    with pytest.raises(dataio.GridMismatchError):
        dataio.evaluate({"m": dataio.ModelPair(g, pm)}, dataio.Dataset("x", [dataio.DatasetEntry(None, finer)]))


def test_table_layout(accel):
    rows = [dataio.TrajectoryScore(k, m, "t", 1.0, 0.5, 1.0, 0.25, 0.1)
            for k in ("fault", "torque-change") for m in ("data-driven", "physics", "hybrid-0.75")]
    report = dataio.EvalReport(rows)
    text = dataio.format_table(report).splitlines()
    assert text[0].split() == ["Scenario", "type", "MSE"]
    assert len(text) == 2 + 6
    assert text[2].startswith("fault") and text[3].startswith(" ")
    assert report.lookup("fault", "physics") == 0.5


# -- preset regression digests (recorded from the reference build)

PRESET_DIGESTS = {
    "free-accel": "4bab3ee7d24a273ab7a747630162d93a1c63edb49ea862de5caa2b4978a478cb",
    "paper-test": "adf331db71ce09fbc3bcced7798b7e3d6e9be289b9084adf79127be0603602b9",
}


def csv_digest(directory):
    h = hashlib.sha256()
    for f in sorted(directory.glob("*.csv")):
        h.update(f.read_bytes())
    return h.hexdigest()


def test_free_accel_preset_digest(tmp_path):
    dataio.write_dataset(tmp_path, dataio.build_dataset("free-accel"))
    assert csv_digest(tmp_path) == PRESET_DIGESTS["free-accel"]


def test_paper_test_preset_digest(tmp_path, paper_test):
    dataio.write_dataset(tmp_path, paper_test)
    assert csv_digest(tmp_path) == PRESET_DIGESTS["paper-test"]
