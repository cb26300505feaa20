"""Command-line front end: ``neuim {simulate,build-dataset,train,eval,compare}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, machine, pinn
from .simulator import SimulationError, simulate

log = logging.getLogger("neuim")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

KINDS = ("free-acceleration", "torque-change", "fault")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _params_override(args) -> dict:
    return {"L_M": args.lm} if getattr(args, "lm", None) is not None else {}


def _scenario_config(args) -> dict:
    cfg = dict(getattr(args, "_file_config", {}))
    if args.machine is not None:
        cfg["machine"] = args.machine
    return cfg


def _scenarios(args, per_step: bool):
    """Scenario list from --preset / --config, honouring --dt, --lm and --machine."""
    dt = args.dt if args.dt is not None else 1e-4
    ov = _params_override(args)
    save_every = 1 if per_step else None
    preset = args.preset or getattr(args, "_file_config", {}).get("preset")
    if preset is not None:
        if preset not in dataio.PRESETS:
            raise ConfigError(f"unknown preset {preset!r} (choose from {', '.join(dataio.PRESETS)})")
        if args.machine is not None and preset != "free-accel":
            raise ConfigError("--machine applies to the free-accel preset and to config-file scenarios")
        scs = dataio.preset_scenarios(preset, dt=dt, params_override=ov, save_every=save_every,
                                      machine_name=args.machine)
        return preset, scs
    if getattr(args, "_file_config", None):
        cfg = _scenario_config(args)
        if per_step:
            cfg["save_every"] = "1"
        return cfg.get("name", Path(args.config).stem), dataio.scenarios_from_config(cfg, dt=args.dt, params_override=ov)
    raise ConfigError("give --preset or --config")


def _dataset(args, spec_attr="dataset", preset_attr="preset"):
    """Dataset from a directory written by build-dataset, or simulated from a preset/config."""
    directory = getattr(args, spec_attr, None)
    if directory:
        if not (Path(directory) / "index.json").is_file():
            raise ConfigError(f"{directory}: not a dataset directory (no index.json)")
        return dataio.read_dataset(directory)
    preset = getattr(args, preset_attr, None)
    if preset is None and not getattr(args, "_file_config", None):
        raise ConfigError("give a dataset directory, --preset or --config")
    if preset is not None and preset not in dataio.PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (choose from {', '.join(dataio.PRESETS)})")
    if preset is not None:
        return dataio.build_dataset(preset, dt=args.dt, params_override=_params_override(args))
    name, scs = _scenarios(args, per_step=False)
    ds = dataio.build_dataset(scs, split="test" if name.endswith("test") else "train")
    ds.name = name
    return ds


def _threads() -> int:
    raw = os.environ.get("NEUIM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"NEUIM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"NEUIM_THREADS must be a positive integer, got {raw!r}")
    return n


def _training_config(args, mode: str, data_fraction: float) -> pinn.TrainingConfig:
    base = pinn.TrainingConfig()
    return pinn.TrainingConfig(
        mode=mode,
        data_fraction=data_fraction,
        epochs=base.epochs if args.epochs is None else args.epochs,
        p_epochs=base.p_epochs if args.p_epochs is None else args.p_epochs,
        lr=base.lr if args.lr is None else args.lr,
        seed=args.seed,
        output_basis=base.output_basis if args.output_basis is None else args.output_basis,
    )


def _kinds(ds: dataio.Dataset, wanted: str | None) -> list:
    kinds = ds.kinds
    if wanted:
        if wanted not in kinds:
            raise ConfigError(f"dataset {ds.name!r} has no {wanted!r} trajectories")
        return [wanted]
    return kinds


def _fmt(x: float) -> str:
    return "%.6g" % x


# ---------------------------------------------------------------- subcommands


def cmd_simulate(args) -> int:
    name, scenarios = _scenarios(args, per_step=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for j, sc in enumerate(scenarios):
        tr = simulate(sc)
        fname = out / (f"{sc.name or name}.csv" if len(scenarios) > 1 else f"{name}.csv")
        dataio.write_trajectory(fname, tr)
        print(f"{fname}: steps={sc.n_steps} samples={len(tr)} final_omega_r={_fmt(tr.omega_r[-1])} "
              f"peak_abs_i_a={_fmt(np.abs(tr.i_abcs[:, 0]).max())}")
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    ds = _dataset(args)
    files = dataio.write_dataset(args.out, ds)
    print(f"{args.out}: dataset {ds.name!r} ({ds.split}), {len(files)} trajectories, dt={_fmt(ds.check_grid() or 0)} s")
    return EXIT_OK


def _train_one(job):
    """Train G then P for one (kind, method). Top-level so it can run in a worker process."""
    trajs, colloc, cfg = job
    g, g_rep = pinn.train_g(trajs, cfg, collocation=colloc)
    pm, p_rep = pinn.train_p(g, trajs, cfg, collocation=colloc)
    return g, g_rep, pm, p_rep


def _write_models(directory: Path, g, g_rep, pm, p_rep):
    directory.mkdir(parents=True, exist_ok=True)
    dataio.save_model(directory / "g.json", g)
    dataio.save_model(directory / "p.json", pm)
    dataio.write_loss_history(directory / "loss_history.csv", g_rep)
    dataio.write_loss_history(directory / "p_loss_history.csv", p_rep)


def cmd_train(args) -> int:
    ds = _dataset(args)
    colloc = _collocation(args)
    mode = args.mode or ("hybrid" if args.data_fraction > 0 else "physics")
    cfg = _training_config(args, mode, args.data_fraction if mode == "hybrid" else (1.0 if mode == "data" else 0.0))
    out = Path(args.out)
    for kind in _kinds(ds, args.kind):
        part = ds.of_kind(kind)
        c = [tr for tr in colloc if tr.kind == kind]
        g, g_rep, pm, p_rep = _train_one((part.trajectories, c, cfg))
        _write_models(out / kind, g, g_rep, pm, p_rep)
        print(f"{out / kind}: {kind} {mode} n={len(part)} G epochs={len(g_rep)} "
              f"L_G={_fmt(g_rep.total[-1]) if len(g_rep) else 'n/a'} P epochs={len(p_rep)}")
    return EXIT_OK


def _collocation(args) -> list:
    source = getattr(args, "collocation", None)
    if not source:
        return []
    if (Path(source) / "index.json").is_file():
        return dataio.read_dataset(source).trajectories
    if source not in dataio.PRESETS:
        raise ConfigError(f"unknown collocation preset or dataset directory {source!r}")
    return dataio.build_dataset(source, dt=args.dt, params_override=_params_override(args)).trajectories


def _find_model(directory: Path, kind: str, stage: str) -> Path | None:
    for candidate in (directory / kind / f"{stage}.json", directory / f"{stage}.json"):
        if candidate.is_file():
            return candidate
    return None


def _load_method(directory: Path, kinds) -> dict:
    if not directory.is_dir():
        raise FileNotFoundError(f"model directory {directory} does not exist")
    pairs = {}
    for kind in kinds:
        gp, pp = _find_model(directory, kind, "g"), _find_model(directory, kind, "p")
        if gp is not None and pp is not None:
            pairs[kind] = dataio.ModelPair(dataio.load_model(gp), dataio.load_model(pp))
    if not pairs:
        raise FileNotFoundError(f"no g.json/p.json pair under {directory}")
    return pairs


def _emit_report(report: dataio.EvalReport, out: Path | None):
    table = dataio.format_table(report)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        dataio.write_report_csv(out / "mse.csv", report)
        (out / "table.txt").write_text(table)
    sys.stdout.write(table)


def cmd_eval(args) -> int:
    ds = _dataset(args)
    models = {}
    for item in args.models:
        name, _, path = item.rpartition("=")
        path = Path(path)
        models[name or path.name] = _load_method(path, ds.kinds)
    report = dataio.evaluate(models, ds, seed=args.seed)
    _emit_report(report, Path(args.out) if args.out else None)
    return EXIT_OK


def _method_name(fraction: float) -> str:
    return "physics" if fraction == 0 else f"hybrid-{fraction:g}"


def cmd_compare(args) -> int:
    try:
        fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    except ValueError:
        raise ConfigError(f"--fractions must be comma-separated numbers, got {args.fractions!r}") from None
    if not fractions or any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ConfigError("--fractions must list values in [0, 1]")
    train = dataio.build_dataset(args.train, dt=args.dt, params_override=_params_override(args)) \
        if not (Path(args.train) / "index.json").is_file() else dataio.read_dataset(args.train)
    test = dataio.build_dataset(args.test, dt=args.dt, params_override=_params_override(args), split="test") \
        if not (Path(args.test) / "index.json").is_file() else dataio.read_dataset(args.test)
    kinds = _kinds(train, args.kind)

    methods = [("data-driven", "data", 1.0)] + [(_method_name(f), "hybrid" if f > 0 else "physics", f)
                                                 for f in dict.fromkeys(fractions)]
    jobs, keys = [], []
    for kind in kinds:
        trajs = train.of_kind(kind).trajectories
        colloc = [] if args.no_collocation else test.of_kind(kind).trajectories
        for name, mode, frac in methods:
            jobs.append((trajs, colloc, _training_config(args, mode, frac)))
            keys.append((kind, name))

    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]

    out = Path(args.out)
    models = {}
    for (kind, name), (g, g_rep, pm, p_rep) in zip(keys, results):
        _write_models(out / "models" / name / kind, g, g_rep, pm, p_rep)
        conv = out / "convergence"
        conv.mkdir(parents=True, exist_ok=True)
        dataio.write_loss_history(conv / f"{kind}_{name}.csv", g_rep)
        models.setdefault(name, {})[kind] = dataio.ModelPair(g, pm)

    test_sel = dataio.Dataset(test.name, [e for e in test.entries if e.trajectory.kind in kinds], test.split)
    report = dataio.evaluate(models, test_sel, seed=args.seed)
    for name, pairs in models.items():
        sdir = out / "series" / name
        sdir.mkdir(parents=True, exist_ok=True)
        for j, tr in enumerate(test_sel.trajectories):
            i_qd0, _, didt = dataio.predict(pairs[tr.kind], tr)
            dataio.write_series_csv(sdir / f"{j:02d}_{tr.name}.csv", tr, i_qd0, didt)
    _emit_report(report, out)
    if args.plot:
        from . import plotting

        for path in plotting.render_compare(out):
            log.info("wrote %s", path)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common(p, dt=True):
    p.add_argument("--config", help="flat key = value file; command-line flags override it")
    p.add_argument("--preset", help=f"named preset ({', '.join(dataio.PRESETS)})")
    p.add_argument("--out", help="output directory")
    p.add_argument("--lm", type=float, help="magnetizing inductance override (H)")
    p.add_argument("--machine", choices=sorted(machine.MACHINES), help="machine parameter set")
    if dt:
        p.add_argument("--dt", type=float, help="integration step (s)")


def _training_flags(p):
    p.add_argument("--epochs", type=int, help="G epochs (default 2000)")
    p.add_argument("--p-epochs", type=int, help="P epochs (default 1000)")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--output-basis", choices=sorted(pinn.OUTPUT_BASES),
                   help="coordinates the G outputs are scaled in (default: %s)" % pinn.TrainingConfig().output_basis)
    p.add_argument("--kind", choices=KINDS, help="restrict to one scenario kind")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neuim", description="Physics-informed neural induction machine model.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate scenarios and write trajectory CSVs")
    _common(p)
    p.set_defaults(func=cmd_simulate, out_required=True)

    p = sub.add_parser("build-dataset", help="simulate a dataset and write it to a directory")
    _common(p)
    p.add_argument("--dataset", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_build_dataset, out_required=True)

    p = sub.add_parser("train", help="train G then P per scenario kind")
    _common(p)
    _training_flags(p)
    p.add_argument("--dataset", help="dataset directory written by build-dataset")
    p.add_argument("--data-fraction", type=float, default=0.0, help="share of trajectories with current data")
    p.add_argument("--mode", choices=pinn.MODES, help="objective (default: physics, or hybrid when data-fraction > 0)")
    p.add_argument("--collocation", help="preset or dataset directory whose inputs enter the physics term only")
    p.set_defaults(func=cmd_train, out_required=True)

    p = sub.add_parser("eval", help="score trained models on a dataset")
    _common(p)
    p.add_argument("--dataset", help="dataset directory written by build-dataset")
    p.add_argument("--models", nargs="+", required=True, metavar="[NAME=]DIR",
                   help="model directories holding g.json/p.json (or <kind>/g.json, <kind>/p.json)")
    p.add_argument("--seed", type=int, help="recorded in the report")
    p.set_defaults(func=cmd_eval, out_required=False)

    p = sub.add_parser("compare", help="train data-driven, physics and hybrid variants and compare them")
    _common(p)
    _training_flags(p)
    p.add_argument("--train", default="paper-train", help="training preset or dataset directory")
    p.add_argument("--test", default="paper-test", help="test preset or dataset directory")
    p.add_argument("--fractions", default="0,0.75", help="comma-separated data fractions (0 = pure physics)")
    p.add_argument("--no-collocation", action="store_true",
                   help="do not add test-scenario inputs to the physics term")
    p.add_argument("--plot", action="store_true", help="also render PNG figures (needs matplotlib)")
    p.set_defaults(func=cmd_compare, out_required=True)
    return ap


def _apply_config_file(ap, sub_parser_args, argv):
    """Re-parse with values from --config as defaults so that flags override the file."""
    args = ap.parse_args(argv)
    args._file_config = {}
    if getattr(args, "config", None):
        cfg = dataio.read_config(args.config)
        args._file_config = cfg
        known = {k: v for k, v in vars(args).items()}
        defaults = {}
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if dest in known and known[dest] is None and dest not in ("config",):
                defaults[dest] = value
        if defaults:
            subparser = sub_parser_args[args.command]
            for action in subparser._actions:
                if action.dest in defaults and action.type is not None:
                    defaults[action.dest] = action.type(defaults[action.dest])
            subparser.set_defaults(**defaults)
            args = ap.parse_args(argv)
            args._file_config = cfg
    return args


def main(argv=None) -> int:
    ap = build_parser()
    subparsers = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction)).choices
    try:
        args = _apply_config_file(ap, subparsers, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.out_required and not args.out:
            raise ConfigError("--out is required")
        return args.func(args)
    except (SimulationError, pinn.TrainingError, FloatingPointError) as exc:
        print(f"neuim: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, KeyError, ValueError, FileNotFoundError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"neuim: error: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
