"""Datasets, trajectory/model persistence and evaluation reports."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import machine, nnet, pinn
from .machine import MachineParams
from .simulator import Scenario, ScenarioKind, Trajectory, simulate

FORMAT_VERSION = 1

CSV_COLUMNS = (
    "t", "v_a", "v_b", "v_c", "i_a", "i_b", "i_c",
    "iq_s", "id_s", "i0_s", "iq_r", "id_r", "i0_r",
    "lq_s", "ld_s", "l0_s", "lq_r", "ld_r", "l0_r",
    "theta", "omega", "omega_r", "Te", "Tm",
)

# column blocks of the CSV layout
_BLOCKS = (
    ("t", 1), ("v_abcs", 3), ("i_abcs", 3), ("i_qd0s", 3), ("i_qd0r", 3),
    ("lam_qd0s", 3), ("lam_qd0r", 3), ("theta", 1), ("omega", 1), ("omega_r", 1),
    ("T_e", 1), ("T_m", 1),
)


class DataFormatError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


# ---------------------------------------------------------------- datasets

PARAM_CHANGE_LM = 0.0531  # H, the changed magnetizing inductance of the test fault machine

TC_T_END, TC_RECORD = 3.0, 1.9
FAULT_T_END, FAULT_RECORD = 7.0, 5.9
FAULT_LOAD = 8900.0
FAULT_LOAD_TIME = 3.5
SAG_START, SAG_END = 6.01, 6.11


def phase_peak(v_line_kv: float) -> float:
    """Peak phase voltage of a balanced source with the given rms line voltage (kV)."""
    return v_line_kv * 1000.0 * math.sqrt(2.0 / 3.0)


def free_acceleration_scenario(params=machine.SMALL_MACHINE, v_kv=0.22, dt=1e-4, save_every=10,
                               t_end=1.0, name="free-accel") -> Scenario:
    return Scenario(ScenarioKind.FREE_ACCELERATION, params, phase_peak(v_kv), t_end, dt=dt,
                    save_every=save_every, name=name)


def torque_change_scenario(torque, params=machine.SMALL_MACHINE, v_kv=0.22, dt=1e-4, save_every=10,
                           name=None) -> Scenario:
    """Start-up from rest, then load steps 0 -> +torque at 2.05 s and -> -torque at 2.5 s."""
    return Scenario(
        ScenarioKind.TORQUE_CHANGE, params, phase_peak(v_kv), TC_T_END, dt=dt, save_every=save_every,
        torque_schedule=((0.0, 0.0), (2.05, torque), (2.5, -torque)), t_record=TC_RECORD,
        name=name or f"tc-{torque:g}",
    )


def fault_scenario(v_kv, params=machine.LARGE_MACHINE, dt=1e-4, save_every=10, name=None) -> Scenario:
    """Start-up unloaded, rated load from 3.5 s, bus voltage to zero on [6.01, 6.11) s."""
    return Scenario(
        ScenarioKind.FAULT, params, phase_peak(v_kv), FAULT_T_END, dt=dt, save_every=save_every,
        torque_schedule=((0.0, 0.0), (FAULT_LOAD_TIME, FAULT_LOAD)),
        sag_schedule=((SAG_START, 0.0), (SAG_END, 1.0)), t_record=FAULT_RECORD,
        name=name or f"fault-{v_kv:g}kV" + ("" if params.L_M == machine.LARGE_MACHINE.L_M else f"-LM{params.L_M:g}"),
    )


def preset_scenarios(name: str, dt: float = 1e-4, params_override: dict | None = None,
                     save_every: int | None = None, machine_name: str | None = None) -> list:
    """Scenario list of a named preset.

    ``params_override`` applies to every machine; ``save_every`` defaults to a
    1 ms output grid; ``machine_name`` picks the machine of ``free-accel``.
    """
    ov = params_override or {}
    small = machine.SMALL_MACHINE.with_changes(**ov)
    large = machine.LARGE_MACHINE.with_changes(**ov)
    se = _save_every(dt) if save_every is None else save_every
    if name == "free-accel":
        if machine_name in (None, "small"):
            return [free_acceleration_scenario(small, dt=dt, save_every=se)]
        if machine_name == "large":
            # the large machine needs about 3 s to run up
            return [free_acceleration_scenario(large, v_kv=2.3, dt=dt, save_every=se, t_end=4.0)]
        raise KeyError(f"unknown machine {machine_name!r}")
    if machine_name is not None:
        raise ValueError("a machine choice applies to the free-accel preset only")
    if name == "paper-train":
        return [
            torque_change_scenario(5.0, small, dt=dt, save_every=se),
            torque_change_scenario(10.0, small, dt=dt, save_every=se),
            fault_scenario(2.3, large, dt=dt, save_every=se),
            fault_scenario(2.4, large, dt=dt, save_every=se),
            fault_scenario(2.5, large, dt=dt, save_every=se),
        ]
    if name == "paper-test":
        changed = large.with_changes(L_M=ov.get("L_M", PARAM_CHANGE_LM))
        return [
            torque_change_scenario(3.0, small, dt=dt, save_every=se),
            torque_change_scenario(12.0, small, dt=dt, save_every=se),
            fault_scenario(2.3, changed, dt=dt, save_every=se),
            fault_scenario(2.35, changed, dt=dt, save_every=se),
        ]
    raise KeyError(f"unknown preset {name!r} (choose from {', '.join(PRESETS)})")


PRESETS = ("paper-train", "paper-test", "free-accel")


def _save_every(dt: float) -> int:
    """Emit on a 1 ms grid when the integration step divides it, else every step."""
    n = 1e-3 / dt
    return int(round(n)) if n >= 1 and abs(n - round(n)) < 1e-9 * n else 1


@dataclass
class DatasetEntry:
    scenario: Scenario
    trajectory: Trajectory
    supervised: bool = False


@dataclass
class Dataset:
    name: str
    entries: list = field(default_factory=list)
    split: str = "train"

    def __len__(self):
        return len(self.entries)

    @property
    def trajectories(self) -> list:
        return [e.trajectory for e in self.entries]

    @property
    def kinds(self) -> list:
        seen = []
        for e in self.entries:
            if e.trajectory.kind not in seen:
                seen.append(e.trajectory.kind)
        return seen

    def of_kind(self, kind: str) -> "Dataset":
        return Dataset(f"{self.name}/{kind}", [e for e in self.entries if e.trajectory.kind == kind], self.split)

    def with_data_fraction(self, data_fraction: float) -> "Dataset":
        flags = pinn.supervised_flags(data_fraction, len(self.entries))
        return Dataset(self.name, [replace(e, supervised=f) for e, f in zip(self.entries, flags)], self.split)

    def check_grid(self) -> float | None:
        dts = [tr.dt for tr in self.trajectories]
        if dts and max(dts) - min(dts) > 1e-9 * max(dts):
            raise GridMismatchError(f"dataset {self.name!r} mixes sampling steps {sorted(set(dts))}")
        return dts[0] if dts else None


def build_dataset(source, dt: float | None = None, params_override: dict | None = None,
                  split: str | None = None) -> Dataset:
    """Simulate a preset (by name), a config file (path) or an explicit scenario list."""
    if isinstance(source, (list, tuple)):
        scenarios, name = list(source), "custom"
    elif isinstance(source, (str, os.PathLike)) and str(source) in PRESETS:
        name = str(source)
        scenarios = preset_scenarios(name, dt=dt or 1e-4, params_override=params_override)
    elif isinstance(source, (str, os.PathLike)) and Path(source).is_file():
        cfg = read_config(source)
        name = cfg.get("name", Path(source).stem)
        scenarios = scenarios_from_config(cfg, dt=dt, params_override=params_override)
    else:
        raise KeyError(f"unknown dataset preset or missing config file: {source!r}")
    if split is None:
        split = "test" if name.endswith("test") else "train"
    entries = [DatasetEntry(sc, simulate(sc)) for sc in scenarios]
    ds = Dataset(name, entries, split)
    ds.check_grid()
    return ds


# ---------------------------------------------------------------- config files


def read_config(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise DataFormatError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


def _schedule(text: str):
    steps = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        t, v = part.split(":")
        steps.append((float(t), float(v)))
    return tuple(steps)


PARAM_KEYS = ("r_s", "r_r", "L_ls", "L_lr", "L_M", "J", "poles")


def scenarios_from_config(cfg: dict, dt: float | None = None, params_override: dict | None = None) -> list:
    """One scenario from a flat config, or a preset when ``preset`` is given."""
    ov = {k: (int(cfg[k]) if k == "poles" else float(cfg[k])) for k in PARAM_KEYS if k in cfg}
    ov.update(params_override or {})
    dt = dt if dt is not None else float(cfg.get("dt", 1e-4))
    if "preset" in cfg:
        return preset_scenarios(cfg["preset"], dt=dt, params_override=ov)
    try:
        base = machine.MACHINES[cfg.get("machine", "small")]
        kind = ScenarioKind(cfg.get("kind", "free-acceleration"))
        params = base.with_changes(**ov)
        v_kv = float(cfg.get("v_kv", 0.22 if base is machine.SMALL_MACHINE else 2.3))
        return [
            Scenario(
                kind, params, phase_peak(v_kv), float(cfg.get("t_end", 1.0)), dt=dt,
                torque_schedule=_schedule(cfg.get("torque", "0:0")),
                sag_schedule=_schedule(cfg.get("sag", "")),
                save_every=int(cfg.get("save_every", _save_every(dt))),
                t_record=float(cfg.get("t_record", 0.0)),
                name=cfg.get("name", "scenario"),
            )
        ]
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"invalid scenario config: {exc}") from exc


# ---------------------------------------------------------------- trajectory csv


def write_trajectory(path, traj: Trajectory, sidecar: bool = True) -> None:
    """Write the fixed-column CSV (17 significant digits) plus a JSON sidecar with the parameters."""
    path = Path(path)
    data = np.column_stack([np.reshape(getattr(traj, f), (len(traj), -1)) for f, _ in _BLOCKS])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in data:
            fh.write(",".join("%.17g" % v for v in row) + "\n")
    if sidecar:
        meta = {"format_version": FORMAT_VERSION, "name": traj.name, "kind": traj.kind,
                "params": traj.params.to_dict()}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_trajectory(path, params: MachineParams | None = None) -> Trajectory:
    path = Path(path)
    name, kind = path.stem, ""
    side = path.with_suffix(".json")
    if params is None:
        if not side.is_file():
            raise DataFormatError(f"{path}: no parameter sidecar; pass params explicitly")
        meta = json.loads(side.read_text())
        params = MachineParams(**meta["params"])
        name, kind = meta.get("name", name), meta.get("kind", "")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing column(s) {', '.join(missing)}")
        if tuple(header) != CSV_COLUMNS:
            raise DataFormatError(f"{path}: unexpected column order")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(CSV_COLUMNS):
                raise DataFormatError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            vals = [float(v) for v in row]
            if not all(map(math.isfinite, vals)):
                raise DataFormatError(f"{path}:{lineno}: non-finite field")
            rows.append(vals)
    if len(rows) < 2:
        raise DataFormatError(f"{path}: a trajectory needs at least two samples")
    data = np.array(rows)
    fields, col = {}, 0
    for f, width in _BLOCKS:
        block = data[:, col : col + width]
        fields[f] = block[:, 0].copy() if width == 1 else block.copy()
        col += width
    return Trajectory(**fields, params=params, name=name, kind=kind)


def write_dataset(directory, ds: Dataset) -> list:
    """One CSV (+ sidecar) per trajectory and an ``index.json`` listing them in order."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for j, e in enumerate(ds.entries):
        fname = f"{j:02d}_{e.trajectory.name or 'trajectory'}.csv"
        write_trajectory(d / fname, e.trajectory)
        files.append(fname)
    index = {"format_version": FORMAT_VERSION, "name": ds.name, "split": ds.split,
             "trajectories": files, "supervised": [e.supervised for e in ds.entries]}
    (d / "index.json").write_text(json.dumps(index, indent=1) + "\n")
    return [d / f for f in files]


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    index = json.loads((d / "index.json").read_text())
    entries = [DatasetEntry(None, read_trajectory(d / f), bool(s))
               for f, s in zip(index["trajectories"], index["supervised"])]
    ds = Dataset(index["name"], entries, index.get("split", "train"))
    ds.check_grid()
    return ds


def load_dataset(source, dt=None, params_override=None) -> Dataset:
    """Dataset from a written directory, a preset name or a config file."""
    if isinstance(source, (str, os.PathLike)) and (Path(source) / "index.json").is_file():
        return read_dataset(source)
    return build_dataset(source, dt=dt, params_override=params_override)


# ---------------------------------------------------------------- model json


def _norm_dict(s: pinn.Standardizer) -> dict:
    return {"mean": s.mean.tolist(), "scale": s.scale.tolist()}


def model_to_dict(model) -> dict:
    stage = "G" if isinstance(model, pinn.GModel) else "P"
    net = model.net
    doc = {
        "format_version": FORMAT_VERSION,
        "stage": stage,
        "layer_sizes": list(net.layer_sizes),
        "activation": net.activation,
        "weights": [W.ravel().tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "input_norm": _norm_dict(model.x_norm),
        "output_offset": model.y_offset.tolist(),
        "output_scale": model.y_scale.tolist(),
        "meta": model.meta,
    }
    if stage == "G":
        doc["input_columns"] = list(model.columns)
    return doc


def model_from_dict(doc: dict):
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r} (expected {FORMAT_VERSION})")
    sizes = [int(n) for n in doc["layer_sizes"]]
    if len(doc["weights"]) != len(sizes) - 1 or len(doc["biases"]) != len(sizes) - 1:
        raise ModelFormatError("number of layers does not match layer_sizes")
    weights, biases = [], []
    for l, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w, b = doc["weights"][l], doc["biases"][l]
        if len(w) != n_in * n_out:
            raise ModelFormatError(f"layer {l}: weight array has {len(w)} entries, expected {n_in * n_out}")
        if len(b) != n_out:
            raise ModelFormatError(f"layer {l}: bias array has {len(b)} entries, expected {n_out}")
        weights.append(np.array(w, dtype=float).reshape(n_out, n_in))
        biases.append(np.array(b, dtype=float))
    net = nnet.MlpNetwork(sizes, weights, biases, doc.get("activation", "tanh"))
    norm = pinn.Standardizer(np.array(doc["input_norm"]["mean"]), np.array(doc["input_norm"]["scale"]))
    if norm.mean.shape != (sizes[0],) or norm.scale.shape != (sizes[0],):
        raise ModelFormatError("input normalization does not match the input layer")
    off, scale = np.array(doc["output_offset"]), np.array(doc["output_scale"])
    if off.shape != (sizes[-1],) or scale.shape not in ((sizes[-1],), (sizes[-1], sizes[-1])):
        raise ModelFormatError("output denormalization does not match the output layer")
    cls = {"G": pinn.GModel, "P": pinn.PModel}.get(doc.get("stage"))
    if cls is None:
        raise ModelFormatError(f"unknown model stage {doc.get('stage')!r}")
    extra = {"columns": tuple(doc.get("input_columns", range(pinn.G_INPUTS)))} if cls is pinn.GModel else {}
    try:
        return cls(net, norm, off, scale, meta=doc.get("meta", {}), **extra)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc


def save_model(path, model) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True) + "\n")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a JSON document ({exc})") from exc
    return model_from_dict(doc)


# ---------------------------------------------------------------- evaluation


@dataclass
class ModelPair:
    g: pinn.GModel
    p: pinn.PModel


@dataclass
class TrajectoryScore:
    scenario: str
    method: str
    trajectory: str
    mse_didt: float
    nmse_didt: float
    mse_iqd0: float
    nmse_iqd0: float
    nmse_iqs: float


@dataclass
class EvalReport:
    """Per-trajectory scores plus per-(scenario kind, method) means.

    ``nmse_*`` are mean squared errors divided by the mean square of the true
    signal; ``nmse_iqs`` divides by the peak squared q-axis stator current.
    """

    rows: list = field(default_factory=list)
    seed: int | None = None

    def summary(self) -> list:
        groups = {}
        for r in self.rows:
            groups.setdefault((r.scenario, r.method), []).append(r)
        out = []
        for (scenario, method), rs in groups.items():
            out.append({
                "scenario": scenario,
                "method": method,
                "n": len(rs),
                "mse_didt": float(np.mean([r.mse_didt for r in rs])),
                "nmse_didt": float(np.mean([r.nmse_didt for r in rs])),
                "mse_iqd0": float(np.mean([r.mse_iqd0 for r in rs])),
                "nmse_iqd0": float(np.mean([r.nmse_iqd0 for r in rs])),
                "nmse_iqs": float(np.mean([r.nmse_iqs for r in rs])),
            })
        return out

    def lookup(self, scenario: str, method: str, metric: str = "nmse_didt") -> float:
        for s in self.summary():
            if s["scenario"] == scenario and s["method"] == method:
                return s[metric]
        raise KeyError((scenario, method))


SUMMARY_COLUMNS = ("scenario", "method", "n", "mse_didt", "nmse_didt", "mse_iqd0", "nmse_iqd0", "nmse_iqs")


def score_trajectory(traj: Trajectory, i_qd0, didt) -> dict:
    truth_d = pinn.derivative_targets(traj)
    truth_c = traj.currents
    ed = didt - truth_d
    ec = i_qd0 - truth_c
    peak_qs = float(np.max(traj.i_qd0s[:, 0] ** 2)) or 1.0
    return {
        "mse_didt": float(np.mean(ed * ed)),
        "nmse_didt": float(np.mean(ed * ed) / max(np.mean(truth_d * truth_d), 1e-300)),
        "mse_iqd0": float(np.mean(ec * ec)),
        "nmse_iqd0": float(np.mean(ec * ec) / max(np.mean(truth_c * truth_c), 1e-300)),
        "nmse_iqs": float(np.mean(ec[:, 0] ** 2) / peak_qs),
    }


def predict(pair: ModelPair, traj: Trajectory):
    """G then P over the trajectory grid: ``(i_qd0 (K,6), i_abcs (K,3), didt (K,3))``."""
    i_s, i_r, i_abc = pinn.g_predict(pair.g, traj)
    return np.hstack([i_s, i_r]), i_abc, pinn.p_predict(pair.p, traj, i_abc)


def _check_dt(model, traj: Trajectory):
    dt = model.meta.get("dt")
    if dt is not None and abs(dt - traj.dt) > 1e-9 * dt:
        raise GridMismatchError(f"model trained on dt={dt:g} s, trajectory {traj.name!r} has dt={traj.dt:g} s")


def evaluate(models: dict, dataset: Dataset, seed: int | None = None) -> EvalReport:
    """Score every (method, trajectory) pair.

    ``models`` maps a method name to either a :class:`ModelPair` used for all
    trajectories or a dict from scenario kind to :class:`ModelPair`.
    """
    report = EvalReport(seed=seed)
    for method, m in models.items():
        for tr in dataset.trajectories:
            pair = m.get(tr.kind) if isinstance(m, dict) else m
            if pair is None:
                continue
            _check_dt(pair.g, tr)
            _check_dt(pair.p, tr)
            i_qd0, _, didt = predict(pair, tr)
            report.rows.append(TrajectoryScore(tr.kind, method, tr.name, **score_trajectory(tr, i_qd0, didt)))
    return report


def write_report_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for s in report.summary():
            fh.write(",".join(str(s[c]) if c in ("scenario", "method", "n") else "%.17g" % s[c]
                              for c in SUMMARY_COLUMNS) + "\n")


def format_table(report: EvalReport, metric: str = "nmse_didt") -> str:
    """Aligned text table in the layout Scenario | type | MSE."""
    rows = [(s["scenario"], s["method"], "%.4g" % s[metric]) for s in report.summary()]
    head = ("Scenario", "type", "MSE")
    widths = [max(len(r[i]) for r in rows + [head]) for i in range(3)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    last = None
    for r in rows:
        cells = ("" if r[0] == last else r[0], r[1], r[2])
        last = r[0]
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_series_csv(path, traj: Trajectory, i_qd0, didt) -> None:
    """Predicted-vs-true series of one trajectory (the data behind the comparison figures)."""
    truth_d = pinn.derivative_targets(traj)
    cols = ["t"] + [f"{c}_{w}" for c in pinn.CURRENT_CHANNELS for w in ("true", "pred")] \
        + [f"di{p}_dt_{w}" for p in "abc" for w in ("true", "pred")]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(len(traj)):
            vals = [traj.t[k]]
            for j in range(6):
                vals += [traj.currents[k, j], i_qd0[k, j]]
            for j in range(3):
                vals += [truth_d[k, j], didt[k, j]]
            fh.write(",".join("%.17g" % v for v in vals) + "\n")


def write_loss_history(path, g_report: pinn.LossReport) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,L_physics,L_data,L_total\n")
        for e, (a, b, c) in enumerate(zip(g_report.physics, g_report.data, g_report.total), 1):
            fh.write("%d,%.17g,%.17g,%.17g\n" % (e, a, b, c))
