"""Command-line entry point: ``dld-forge <subcommand> [options]``.

Every option can also come from a JSON file given with ``--config``;
explicit flags win over file values, file values over built-in defaults.
Each run writes ``resolved-config.json`` into its output directory.

Exit codes: 0 success, 1 usage error, 2 computation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .automation import RequestError
from .geometry import RangeError

log = logging.getLogger("dld_forge")

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# Built-in defaults per subcommand; flags use SUPPRESS so that only options
# actually given on the command line override the config file.
DEFAULTS = {
    "solve": {"res": 128},
    "walls": {"res": 256},
    "trace": {"res": 64, "periods": 2, "wall_res": 256, "field": None},
    "dc": {"res": 64, "tol": 1e-3, "periods": 2, "wall_res": 256, "field": None},
    "sweep": {"grid": "desk", "f": None, "n": None, "re": None, "res": 64, "tol": 1e-3, "periods": 2, "jobs": 1, "dev_fraction": 0.2},
    "train-direct": {"hidden": 8, "width": 128, "epochs": 1000, "lr": 1e-4, "batch": 64},
    "train-field": {"res": 32, "filters": 64, "convs": 2, "dense": 256, "epochs": 300, "lr": 2e-3, "batch": 64},
    "augment": {"pairs": None, "step": 0.499, "tol": 1e-3, "periods": 2},
    "design": {"phi": 0.5, "cf": "free", "cn": "free", "cre": "free", "pop": 260, "generations": 60, "directions": 5, "periods": 10},
    "verify": {"res": 64, "tol": 1e-3, "periods": 2},
    "report": {"net": None, "field_net": None, "diameters": None, "periods": 10, "res": 64},
}
COMMON = {"out": "run", "seed": 0, "verbose": 0}


def _build_parser() -> _Parser:
    p = _Parser(prog="dld-forge", description="DLD unit-cell flow, particle tracing, surrogates and design automation.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    S = argparse.SUPPRESS

    def cmd(name, help_text):
        sp = sub.add_parser(name, help=help_text, argument_default=S)
        sp.add_argument("--config", help="JSON file of option values")
        sp.add_argument("--out", help="output directory (default: run)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="count")
        return sp

    def design_point(sp, with_re=True):
        sp.add_argument("--f", type=float, help="pillar diameter / pitch")
        sp.add_argument("--n", type=int, help="periodicity N")
        if with_re:
            sp.add_argument("--re", type=float, help="gap Reynolds number")

    sp = cmd("solve", "solve the flow in one unit cell")
    design_point(sp)
    sp.add_argument("--res", type=int)

    sp = cmd("walls", "tabulate the wall distance field")
    design_point(sp, with_re=False)
    sp.add_argument("--res", type=int)

    sp = cmd("trace", "trace one particle")
    design_point(sp)
    sp.add_argument("--d", type=float, help="particle diameter / pitch")
    sp.add_argument("--field", help="saved field file instead of a fresh solve")
    sp.add_argument("--res", type=int)
    sp.add_argument("--periods", type=int)
    sp.add_argument("--wall-res", dest="wall_res", type=int)

    sp = cmd("dc", "critical diameter for one configuration")
    design_point(sp)
    sp.add_argument("--field", help="saved field file instead of a fresh solve")
    sp.add_argument("--res", type=int)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--periods", type=int)
    sp.add_argument("--wall-res", dest="wall_res", type=int)

    sp = cmd("sweep", "build a dataset over a parameter grid")
    sp.add_argument("--grid", choices=["desk", "full", "test", "custom"])
    sp.add_argument("--f", help="start:stop:step or comma list (custom grid)")
    sp.add_argument("--n", help="comma list (custom grid)")
    sp.add_argument("--re", help="comma list (custom grid)")
    sp.add_argument("--res", type=int)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--periods", type=int)
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--dev-fraction", dest="dev_fraction", type=float)

    for name in ("train-direct", "train-field"):
        sp = cmd(name, f"train the {'direct d_c predictor' if name == 'train-direct' else 'field generator'}")
        sp.add_argument("--data", help="dataset manifest.json")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float, help="learning rate (single stage)")
        sp.add_argument("--batch", type=int)
        if name == "train-direct":
            sp.add_argument("--hidden", type=int)
            sp.add_argument("--width", type=int)
        else:
            sp.add_argument("--res", type=int)
            sp.add_argument("--filters", type=int)
            sp.add_argument("--convs", type=int)
            sp.add_argument("--dense", type=int)

    sp = cmd("augment", "label a fine Re grid using the field generator")
    sp.add_argument("--field-net", dest="field_net", help="trained field network")
    sp.add_argument("--data", help="manifest whose (f, N) pairs are augmented")
    sp.add_argument("--pairs", help="explicit pairs 'f,N;f,N'")
    sp.add_argument("--step", type=float)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--periods", type=int)

    sp = cmd("design", "optimise a device for a separation target")
    sp.add_argument("--d1", type=float, help="smaller particle diameter (µm)")
    sp.add_argument("--d2", type=float, help="larger particle diameter (µm)")
    sp.add_argument("--phi", type=float, help="0 = most stable, 1 = most flexible")
    sp.add_argument("--cf", help="f directive: min, max, free or a value")
    sp.add_argument("--cn", help="N directive")
    sp.add_argument("--cre", help="Re directive")
    sp.add_argument("--net", help="trained direct network")
    sp.add_argument("--pop", type=int)
    sp.add_argument("--generations", type=int)
    sp.add_argument("--directions", type=int)
    sp.add_argument("--periods", type=int)

    sp = cmd("verify", "check a design against the solver")
    sp.add_argument("--result", help="result.json from design")
    sp.add_argument("--res", type=int)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--periods", type=int)

    sp = cmd("report", "trajectories, recurrence maps and plots for a design")
    sp.add_argument("--result", help="result.json from design")
    sp.add_argument("--net", help="direct network for the D_c(Re) curve")
    sp.add_argument("--field-net", dest="field_net", help="field network instead of a solver run")
    sp.add_argument("--diameters", help="comma list in µm (default D1,D2)")
    sp.add_argument("--periods", type=int)
    sp.add_argument("--res", type=int)
    return p


def resolve(argv) -> tuple[str, dict]:
    parser = _build_parser()
    if not argv:
        raise UsageError(parser.format_help())
    ns = vars(parser.parse_args(argv))
    command = ns.pop("command", None)
    if command is None:
        raise UsageError(parser.format_usage() + "dld-forge: error: a subcommand is required")
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[command])
    path = ns.pop("config", None)
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in loaded.items()})
    cfg.update(ns)
    return command, cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _write_json(path: Path, body) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serialisable: {type(v).__name__}")


def _fmt(v) -> str:
    return f"{v:.4g}"


def _params(cfg, with_re=True):
    from .geometry import DldParams

    _require(cfg, "f", "n", *(["re"] if with_re else []))
    return DldParams(float(cfg["f"]), int(cfg["n"]), float(cfg["re"]) if with_re else 1.0)


def _list(text, conv):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [conv(t) for t in text]
    return [conv(t) for t in str(text).split(",") if t.strip()]


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(cfg, out: Path):
    from .flow import SolverConfig, divergence_ratio, save_field, solve_flow

    p = _params(cfg)
    fld = solve_flow(p, SolverConfig(res=int(cfg["res"])))
    save_field(fld, out / "field.bin")
    print(f"Re {_fmt(fld.achieved_re)}  max speed {_fmt(fld.max_speed)}  divergence ratio {_fmt(divergence_ratio(fld))}")


def cmd_walls(cfg, out: Path):
    from .geometry import unit_cell
    from .walls import dump_wall_field, wall_distance_field

    p = _params(cfg, with_re=False)
    wf = wall_distance_field(unit_cell(p), int(cfg["res"]))
    dump_wall_field(wf, out / "walls.bin")
    print(f"wall field {wf.res}x{wf.res}  min distance {_fmt(float(wf.dist.min()))}")


def _field_for(cfg):
    from .flow import SolverConfig, load_field, solve_flow

    if cfg.get("field"):
        return load_field(cfg["field"])[0]
    return solve_flow(_params(cfg), SolverConfig(res=int(cfg["res"])))


def cmd_trace(cfg, out: Path):
    from .geometry import unit_cell
    from .tracer import recurrence_map, release_point, trace, write_recurrence_csv, write_trajectory_csv
    from .walls import wall_distance_field

    _require(cfg, "d")
    fld = _field_for(cfg)
    geom = unit_cell(fld.params)
    wf = wall_distance_field(geom, int(cfg["wall_res"]))
    d = float(cfg["d"])
    traj = trace(fld, wf, release_point(geom, d), d, n_periods=int(cfg["periods"]))
    write_trajectory_csv(traj, out / "trajectory.csv")
    write_recurrence_csv(recurrence_map(traj), out / "recurrence.csv")
    print(f"mode {traj.mode.name.lower()}  contacts {len(traj.contacts)}")


def cmd_dc(cfg, out: Path):
    from .critical import critical_from_field
    from .geometry import unit_cell
    from .walls import wall_distance_field

    fld = _field_for(cfg)
    wf = wall_distance_field(unit_cell(fld.params), int(cfg["wall_res"]))
    res = critical_from_field(fld, wf, tol=float(cfg["tol"]), n_periods=int(cfg["periods"]))
    _write_json(out / "dc.json", {"d_c": res.d_c, "evaluations": res.evaluations, "bracket_history": res.bracket_history})
    shown = "none" if res.d_c is None else _fmt(res.d_c)
    print(f"d_c {shown}  evaluations {res.evaluations}")


def cmd_sweep(cfg, out: Path):
    from .dataset import BuildConfig, Span, build_dataset, desk_grid, generate_grid, full_grid, split, test_grid
    from .flow import SolverConfig

    grid = cfg["grid"]
    if cfg.get("f") or cfg.get("n") or cfg.get("re"):
        grid = "custom"
    if grid == "custom":
        _require(cfg, "f", "n", "re")
        f = cfg["f"]
        if isinstance(f, str) and ":" in f:
            a, b, c = (float(t) for t in f.split(":"))
            f = Span(a, b, c)
        else:
            f = _list(f, float)
        configs = generate_grid(f, _list(cfg["n"], int), _list(cfg["re"], float))
    else:
        configs = {"desk": desk_grid, "full": full_grid, "test": test_grid}[grid]()
    bcfg = BuildConfig(SolverConfig(res=int(cfg["res"])), float(cfg["tol"]), int(cfg["periods"]))
    man = build_dataset(configs, out, bcfg, jobs=int(cfg["jobs"]))
    if grid != "test":
        split(man, float(cfg["dev_fraction"]), int(cfg["seed"]))
    else:
        for r in man.records:
            r.split = "test"
    man.save()
    c = man.counts()
    print(f"records {c['total']}  labelled {c['labelled']}  failures {c['failures']}")


def _schedule(cfg, default):
    if cfg.get("schedule"):
        return [tuple(s) for s in cfg["schedule"]]
    return [(int(cfg["epochs"]), float(cfg["lr"]))] if cfg.get("epochs") is not None else default


def cmd_train_direct(cfg, out: Path):
    from .dataset import DatasetManifest
    from .surrogate import TrainConfig, fcnn_build, fcnn_train, save_net, write_loss_csv

    _require(cfg, "data")
    man = DatasetManifest.load_file(cfg["data"])
    net = fcnn_build(int(cfg["hidden"]), int(cfg["width"]), seed=int(cfg["seed"]))
    tc = TrainConfig(int(cfg["batch"]), _schedule(cfg, [(1000, 1e-4)]), int(cfg["seed"]))
    fcnn_train(net, man, tc)
    save_net(net, out / "direct.net")
    write_loss_csv(net, out / "losses.csv")
    _, tr, dv = net.training_meta["losses"][-1]
    print(f"epochs {net.training_meta['epochs']}  train MSE {_fmt(tr)}  dev MSE {_fmt(dv)}")


def cmd_train_field(cfg, out: Path):
    from .dataset import DatasetManifest
    from .surrogate import TrainConfig, cnn_build, cnn_train, save_net, write_loss_csv

    _require(cfg, "data")
    man = DatasetManifest.load_file(cfg["data"])
    net = cnn_build(int(cfg["res"]), int(cfg["filters"]), int(cfg["convs"]), int(cfg["dense"]), seed=int(cfg["seed"]))
    tc = TrainConfig(int(cfg["batch"]), _schedule(cfg, [(100, 2e-3), (100, 2e-4), (100, 2e-5)]), int(cfg["seed"]))
    cnn_train(net, man, tc)
    save_net(net, out / "field.net")
    write_loss_csv(net, out / "losses.csv")
    _, tr, dv = net.training_meta["losses"][-1]
    print(f"epochs {net.training_meta['epochs']}  train MSE {_fmt(tr)}  dev MSE {_fmt(dv)}")


def cmd_augment(cfg, out: Path):
    from .dataset import BuildConfig, DatasetManifest, augment
    from .surrogate import load_net

    _require(cfg, "field_net")
    if cfg.get("pairs"):
        pairs = [(float(a), int(b)) for a, b in (t.split(",") for t in str(cfg["pairs"]).split(";") if t.strip())]
    elif cfg.get("data"):
        pairs = [(r.f, r.N) for r in DatasetManifest.load_file(cfg["data"]).records]
    else:
        raise UsageError("augment needs --pairs or --data")
    net = load_net(cfg["field_net"])
    bcfg = BuildConfig(tol=float(cfg["tol"]), n_periods=int(cfg["periods"]))
    man = augment(net, pairs, float(cfg["step"]), out, bcfg)
    c = man.counts()
    print(f"records {c['total']}  labelled {c['labelled']}  failures {c['failures']}")


def _request(cfg):
    from .automation import DesignRequest

    _require(cfg, "d1", "d2")
    cons = {k: cfg[key] for k, key in (("f", "cf"), ("N", "cn"), ("Re", "cre")) if cfg.get(key) not in (None, "free")}
    return DesignRequest(float(cfg["d1"]), float(cfg["d2"]), float(cfg["phi"]), cons, int(cfg["periods"]))


def cmd_design(cfg, out: Path):
    from .automation import design, write_pareto_csv, write_result_json
    from .surrogate import load_net

    req = _request(cfg)
    _require(cfg, "net")
    net = load_net(cfg["net"])
    res = design(req, net, int(cfg["pop"]), int(cfg["generations"]), int(cfg["directions"]), seed=int(cfg["seed"]))
    write_result_json(res, out / "result.json", req)
    write_pareto_csv(res, out / "pareto.csv")
    print(f"f {_fmt(res.f)}  N {res.N}  Re {_fmt(res.Re)}  G {_fmt(res.G)} µm  D_c {_fmt(res.D_c)} µm  BW {_fmt(res.BW)} µm")


def _load_result(cfg):
    from .automation import DesignRequest, DesignResult

    _require(cfg, "result")
    body = json.loads(Path(cfg["result"]).read_text())
    req = DesignRequest.from_dict(body["request"]) if "request" in body else None
    return DesignResult.from_dict(body["result"]), req


def cmd_verify(cfg, out: Path):
    from .automation import verify, write_result_json
    from .flow import SolverConfig

    res, req = _load_result(cfg)
    e = verify(res, SolverConfig(res=int(cfg["res"])), float(cfg["tol"]), int(cfg["periods"]))
    write_result_json(res, out / "verified.json", req)
    solver = "none" if res.D_c_solver is None else _fmt(res.D_c_solver)
    print(f"D_c surrogate {_fmt(res.D_c)} µm  solver {solver} µm  E% {_fmt(e)}")


def cmd_report(cfg, out: Path):
    from .automation import simulate_device, write_report
    from .flow import SolverConfig
    from .surrogate import load_net

    res, req = _load_result(cfg)
    diam = _list(cfg.get("diameters"), float)
    if diam is None:
        if req is None:
            raise UsageError("report needs --diameters when the result carries no request")
        diam = [req.D1, req.D2]
    net = load_net(cfg["net"]) if cfg.get("net") else None
    fnet = load_net(cfg["field_net"]) if cfg.get("field_net") else None
    runs = simulate_device(res, diam, int(cfg["periods"]), field_net=fnet, cfg=SolverConfig(res=int(cfg["res"])))
    files = write_report(res, out, net, runs, req)
    for r in runs:
        print(f"D {_fmt(r.diameter_um)} µm  {r.trajectory.mode.name.lower()}")
    print(f"{len(files)} files written to {out}")


COMMANDS = {
    "solve": cmd_solve,
    "walls": cmd_walls,
    "trace": cmd_trace,
    "dc": cmd_dc,
    "sweep": cmd_sweep,
    "train-direct": cmd_train_direct,
    "train-field": cmd_train_field,
    "augment": cmd_augment,
    "design": cmd_design,
    "verify": cmd_verify,
    "report": cmd_report,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command, cfg = resolve(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(int(cfg.get("verbose") or 0), 2), format="%(levelname)s %(message)s")
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "resolved-config.json", {"command": command, **cfg})
        COMMANDS[command](cfg, out)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (RangeError, RequestError) as exc:
        print(f"dld-forge: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        print(f"dld-forge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
