"""Command-line interface.

Every command writes its result files plus a manifest JSON (config echo,
versions, seed, wall time).  Exit codes: 0 success, 2 usage or input
error, 3 numerical failure.  Errors are reported on one stderr line as
``taylormap: error[<category>]: <message>``.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError
from .mapbuilder import AdaptiveMapFamily, BuildConfig, TaylorMap, build_map, build_map_family, decade_spans
from .odemodel import system_from_label
from .pnn import PNN, StopBelow, adaptive_propagate, compose, propagate
from .training import DataSet, fit_gradient, fit_least_squares

DEFAULT_SEED = 20200101

SYSTEM_PARAMS = {
    "deflector": {"R": float, "theta": float},
    "rp": {"p_B": float, "p_inf": float, "rho": float, "R0": float, "form": str},
    "vdp": {},
    "burgers": {"N": int, "nu": float, "boundary": str},
}


class UsageError(Exception):
    pass


def _dump(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _load(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from exc


def _vector(text: str) -> np.ndarray:
    try:
        v = np.array([float(s) for s in text.split(",")])
    except ValueError as exc:
        raise UsageError(f"cannot parse vector {text!r}") from exc
    if not np.all(np.isfinite(v)):
        raise UsageError(f"vector {text!r} is not finite")
    return v


def _system_args(args) -> dict:
    params = {}
    for name, kind in SYSTEM_PARAMS[args.system].items():
        value = getattr(args, name, None)
        if value is not None:
            params[name] = kind(value)
    return params


def _load_map(path) -> TaylorMap:
    d = _load(path)
    try:
        return TaylorMap.from_dict(d["map"] if "map" in d else d)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{path}: not a map file ({exc})") from exc


# commands


def cmd_build_map(args) -> dict:
    params = _system_args(args)
    sys_ = system_from_label(args.system, **params)
    system = {"label": args.system, "params": params}
    if args.family:
        largest, smallest = args.family
        fam = build_map_family(sys_, args.order, decade_spans(largest, smallest), args.substeps)
        out = {"kind": "family", "system": system, "substeps": args.substeps, **fam.to_dict()}
        summary = {"members": len(fam), "spans": fam.spans}
    else:
        if args.span is None:
            raise UsageError("build-map needs --span or --family")
        m = build_map(sys_, BuildConfig(args.order, args.span, args.substeps))
        out = {"kind": "map", "system": system, "map": m.to_dict()}
        summary = {"nnz": m.nnz(), "t_span": m.t_span}
    _dump(out, args.out)
    return summary


def cmd_simulate(args) -> dict:
    m = _load_map(args.map)
    x0 = _vector(args.x0)
    if x0.size != m.n:
        raise UsageError(f"--x0 has {x0.size} components, map expects {m.n}")
    traj = propagate(PNN.repeated(m, args.steps), x0)
    _write_traj(traj, args.out)
    return {"final": traj.final.tolist(), "t_final": float(traj.times[-1])}


def _write_traj(traj, out) -> None:
    if out in (None, "-"):
        sys.stdout.write("t," + ",".join(f"x{i + 1}" for i in range(traj.states.shape[1])) + "\n")
        for t, row in zip(traj.times, traj.states):
            sys.stdout.write(",".join(repr(float(v)) for v in (t, *row)) + "\n")
    else:
        traj.to_csv(out)


def cmd_simulate_adaptive(args) -> dict:
    d = _load(args.family)
    try:
        system = None
        if "system" in d:
            system = system_from_label(d["system"]["label"], **d["system"].get("params", {}))
        fam = AdaptiveMapFamily.from_dict(d, system=system)
        if "substeps" in d:
            fam = AdaptiveMapFamily(fam.maps, system=system, substeps=int(d["substeps"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{args.family}: not a family file ({exc})") from exc
    x0 = _vector(args.x0)
    if x0.size != fam.n:
        raise UsageError(f"--x0 has {x0.size} components, family expects {fam.n}")
    stop = None
    if args.stop_below is not None:
        idx, value = args.stop_below
        stop = StopBelow(int(idx) - 1, float(value))
    traj = adaptive_propagate(fam, x0, args.t_end, args.rtol, stop=stop,
                              estimator=args.estimator, warm_start=args.warm_start)
    _write_traj(traj, args.out)
    return {"steps": len(traj) - 1, "t_final": float(traj.times[-1]), "stopped": traj.metadata["stopped"],
            "final_step": traj.metadata["final_step"]}


def cmd_train(args) -> dict:
    try:
        data = DataSet.from_csv(args.data, dt=args.dt)
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {args.data}") from exc
    if args.method == "lstsq":
        report = fit_least_squares(data, args.order)
    else:
        report = fit_gradient(data, args.order, args.epochs, args.step, args.reg, args.lam,
                              batch_size=args.batch_size, seed=args.seed, target_loss=args.target_loss)
    _dump(report.to_dict(), args.out)
    return {"epochs": report.epochs, "final_loss": report.final_loss, "nnz": report.nnz}


def cmd_compose(args) -> dict:
    a, b = _load_map(args.a), _load_map(args.b)
    c = compose(a, b, args.order)
    _dump({"kind": "map", "map": c.to_dict()}, args.out)
    return {"t_span": c.t_span, "order": c.order}


def cmd_benchmark(args) -> dict:
    from . import scenarios

    if args.case == "burgers":
        rows, info = scenarios.burgers_benchmark(scenarios.BurgersConfig(repeats=args.repeats))
    elif args.case == "deflector":
        rows, info = scenarios.deflector_benchmark(
            scenarios.DeflectorConfig(samples=args.samples, seed=args.seed, repeats=args.repeats))
    else:
        rows, info = scenarios.rp_benchmark(scenarios.RPConfig(repeats=args.repeats))
    _dump({"case": args.case, "results": [r.to_dict() for r in rows], "info": info}, args.out)
    return {r.label: {"elapsed": r.elapsed, "error": r.error} for r in rows}


def cmd_make_data(args) -> dict:
    from .baselines import rk4_fixed

    params = _system_args(args)
    sys_ = system_from_label(args.system, **params)
    steps = int(round(args.t_end / args.dt))
    states = rk4_fixed(sys_, _vector(args.x0), steps * args.dt, steps).states
    DataSet.from_trajectory(states, args.dt).to_csv(args.out)
    return {"pairs": steps}


# parser


def _add_system_flags(p) -> None:
    p.add_argument("--system", required=True, choices=sorted(SYSTEM_PARAMS))
    p.add_argument("--R", type=float, help="deflector bending radius [m]")
    p.add_argument("--theta", type=float, help="deflector bending angle [rad]")
    p.add_argument("--p-B", dest="p_B", type=float, help="bubble pressure [Pa]")
    p.add_argument("--p-inf", dest="p_inf", type=float, help="far-field pressure [Pa]")
    p.add_argument("--rho", type=float, help="liquid density [kg/m^3]")
    p.add_argument("--R0", type=float, help="initial bubble radius [m]")
    p.add_argument("--form", choices=["physical", "printed"])
    p.add_argument("--N", type=int, help="Burgers grid size")
    p.add_argument("--nu", type=float, help="Burgers viscosity")
    p.add_argument("--boundary", choices=["periodic", "dirichlet"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taylormap", description="Taylor maps and polynomial neural networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"random seed (default {DEFAULT_SEED})")
    common.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-map", parents=[common], help="build a Taylor map or a decade-spaced family")
    _add_system_flags(p)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--span", type=float)
    p.add_argument("--family", type=float, nargs=2, metavar=("LARGEST", "SMALLEST"))
    p.add_argument("--substeps", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("simulate", parents=[common], help="apply a map repeatedly")
    p.add_argument("--map", required=True)
    p.add_argument("--x0", required=True)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("simulate-adaptive", parents=[common], help="propagate with an adaptive map family")
    p.add_argument("--family", required=True)
    p.add_argument("--x0", required=True)
    p.add_argument("--t-end", dest="t_end", type=float, required=True)
    p.add_argument("--rtol", type=float, required=True)
    p.add_argument("--estimator", choices=["family", "tail"], default="family")
    p.add_argument("--warm-start", dest="warm_start", action="store_true")
    p.add_argument("--stop-below", dest="stop_below", type=float, nargs=2, metavar=("INDEX", "VALUE"),
                   help="stop once component INDEX (1-based) drops to VALUE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate_adaptive)

    p = sub.add_parser("train", parents=[common], help="fit a map to pair data")
    p.add_argument("--data", required=True)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--method", choices=["gradient", "lstsq"], default="gradient")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--step", type=float, default=3e-3)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--reg", choices=["none", "l1", "qubo"], default="none")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--target-loss", dest="target_loss", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compose", parents=[common], help="compose two maps (A first, then B)")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--order", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("benchmark", parents=[common], help="timing and accuracy benchmarks")
    p.add_argument("case", choices=["burgers", "deflector", "rp"])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("make-data", parents=[common], help="RK4 trajectory pairs as CSV")
    _add_system_flags(p)
    p.add_argument("--x0", required=True)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--t-end", dest="t_end", type=float, default=7.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_data)
    return parser


def _manifest(args, argv, summary, elapsed) -> dict:
    import scipy

    config = {k: v for k, v in vars(args).items() if k not in ("func", "manifest")}
    return {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seed": args.seed,
        "versions": {
            "taylormap": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "summary": summary,
        "wall_time": elapsed,
    }


def _fail(category: str, message: str, code: int) -> int:
    sys.stderr.write(f"taylormap: error[{category}]: {message}\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    t0 = time.perf_counter()
    try:
        summary = args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except NumericalError as exc:
        return _fail("numerical", f"{type(exc).__name__}: {exc}", 3)
    except (ValueError, TypeError) as exc:
        return _fail("input", str(exc), 2)
    elapsed = time.perf_counter() - t0
    out = getattr(args, "out", None)
    manifest = args.manifest or (f"{out}.manifest.json" if out not in (None, "-") else None)
    if manifest:
        _dump(_manifest(args, argv, summary, elapsed), manifest)
    return 0


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
