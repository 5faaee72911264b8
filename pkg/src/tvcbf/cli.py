"""Command-line front end.

Exit status is 0 when every check passes, 1 when a certification,
composition or invariance check fails, and 2 for usage errors (bad
arguments, malformed or inconsistent configs).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .barrier import GridSpec, ShiftableCbf, verify_shiftable
from .catalog import example_catalog, get_example
from .classk import linear, signed_sqrt
from .config import RunConfig, alpha_from_config, load_config, table_barrier, trajectory_from_config
from .errors import (
    CompositionRefusedError,
    ConfigError,
    DivergenceError,
    FilterInfeasibleError,
    InvalidInputError,
    TvcbfError,
)
from .lambda_traj import compose_tv_cbf
from .reports import RunReport, write_json, write_violations

log = logging.getLogger("tvcbf")

OK, FAIL, USAGE = 0, 1, 2
ENV_OUT_DIR = "TVCBF_OUT_DIR"
DEFAULT_OUT_DIR = "tvcbf_out"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument handling


def _common(p: argparse.ArgumentParser, target: bool = True) -> None:
    if target:
        p.add_argument("target", nargs="?", help="catalog example name (alternative to --config)")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--out-dir", help=f"output directory (default ${ENV_OUT_DIR} or ./{DEFAULT_OUT_DIR})")
    p.add_argument("--dt", type=float, help="integration step [s]")
    p.add_argument("--grid", type=int, help="verification grid resolution")
    p.add_argument("--tol", type=float, help="verification tolerance")
    p.add_argument("--c-alpha", type=float, dest="c_alpha", help="linear comparison slope (quadcopter)")
    p.add_argument("--seed", type=int, help="seed for random initial states and sampled grids")
    p.add_argument("--T", type=float, dest="T", help="phase deadline or horizon [s]")
    p.add_argument("--x0", type=float, nargs="+", help="initial state")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override an example parameter")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvcbf", description="Time-varying control barrier function toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("verify", help="certify the shiftable CBF condition on a grid"))
    _common(sub.add_parser("compose", help="domination, rate and beta steps; emit the certificate"))
    p = sub.add_parser("simulate", help="closed-loop run under the safety filter")
    _common(p)
    p.add_argument("--dt-ctrl", type=float, help="zero-order-hold control period (default: continuous)")
    p.add_argument("--soft", action="store_true", help="soft-constraint filter (diagnostics only)")
    p.add_argument("--random-x0", type=int, default=None, help="extra runs from random initial states")
    p = sub.add_parser("example", help="verify, compose and simulate a catalog example")
    _common(p)
    p.add_argument("--list", action="store_true", help="print the catalog and exit")
    p = sub.add_parser("batch", help="run several examples or configs in worker processes")
    p.add_argument("targets", nargs="+", help="example names or config paths")
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--no-plots", action="store_true")
    return parser


def _parse_value(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def resolve(args) -> RunConfig:
    """Merge config file, positional example name and flags into one config."""
    if args.config and args.target:
        raise UsageError("give either an example name or --config, not both")
    if args.config:
        cfg = load_config(args.config)
    elif args.target:
        names = [s.name for s in example_catalog()]
        if args.target not in names:
            raise UsageError(f"unknown example {args.target!r}; choose from {names}")
        cfg = RunConfig(example=args.target)
    else:
        raise UsageError("need an example name or --config")

    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.params[k.strip()] = _parse_value(v)
    if cfg.example:
        spec = get_example(cfg.example).spec
        if args.c_alpha is not None:
            if "c_alpha" not in spec.params:
                raise UsageError(f"--c-alpha does not apply to {cfg.example}")
            cfg.params["c_alpha"] = args.c_alpha
        if args.T is not None:
            cfg.params["T" if "T" in spec.params else "horizon"] = args.T
        if args.seed is not None and "seed" in spec.params:
            cfg.params["seed"] = args.seed
    if args.dt is not None:
        cfg.simulate["dt"] = args.dt
    if args.seed is not None:
        cfg.simulate["seed"] = args.seed
    if args.x0 is not None:
        cfg.simulate["x0"] = list(args.x0)
    if args.grid is not None:
        cfg.verify["grid"] = args.grid
    if args.tol is not None:
        cfg.verify["tol"] = args.tol
    if getattr(args, "no_plots", False):
        cfg.output["plots"] = False
    return cfg


def out_dir_for(args, cfg: RunConfig, name: str) -> Path:
    base = args.out_dir or cfg.output.get("dir") or os.environ.get(ENV_OUT_DIR) or DEFAULT_OUT_DIR
    path = Path(base) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _example(cfg: RunConfig):
    try:
        return get_example(cfg.example, **cfg.params)
    except InvalidInputError as exc:
        raise ConfigError(str(exc), "params", cfg.line_of("params")) from None


def _grid(ex, cfg: RunConfig):
    res = cfg.verify.get("grid")
    return ex.grid(tuple(res) if isinstance(res, list) else res) if res else ex.grid()


# ---------------------------------------------------------------------------
# commands


def _external_verify(cfg: RunConfig, rep: RunReport) -> None:
    d = cfg.barrier
    if d.get("kind", "table") != "table":
        raise ConfigError("only 'table' barriers are supported", "barrier.kind", cfg.line_of("barrier.kind"))
    if "path" not in d or "dynamics" not in d:
        raise ConfigError("table barriers need 'path' and 'dynamics'", "barrier", cfg.line_of("barrier"))
    path = Path(d["path"])
    if not path.is_absolute() and cfg.path is not None:
        path = cfg.path.parent / path
    try:
        b, axes = table_barrier(path)
    except (OSError, KeyError) as exc:
        raise ConfigError(f"cannot load table {path}: {exc}", "barrier.path", cfg.line_of("barrier.path")) from None
    try:
        dyn = get_example(d["dynamics"], **(d.get("params") or {})).dynamics()
    except (KeyError, InvalidInputError) as exc:
        raise ConfigError(f"unknown dynamics preset: {exc}", "barrier.dynamics", cfg.line_of("barrier.dynamics")) from None
    a = d.get("alpha", {"kind": "linear", "slope": 1.0})
    if a.get("kind") == "sqrt":
        alpha = signed_sqrt(float(a["coef"]), name="alpha")
    elif a.get("kind") == "linear":
        alpha = linear(float(a["slope"]), name="alpha")
    else:
        raise ConfigError("alpha kind must be linear or sqrt", "barrier.alpha", cfg.line_of("barrier.alpha"))
    cbf = ShiftableCbf(b, alpha, float(d.get("Lambda", 0.0)), name=b.name)
    res = d.get("grid") or cfg.verify.get("grid")
    lo, hi = [ax[0] for ax in axes], [ax[-1] for ax in axes]
    grid = GridSpec.box(lo, hi, res) if res else GridSpec.box(lo, hi, tuple(len(ax) for ax in axes))
    t0 = time.perf_counter()
    report = verify_shiftable(cbf, dyn, grid, tol=cfg.verify.get("tol", 1e-6))
    rep.timings["verify"] = time.perf_counter() - t0
    rep.sections["verify"] = report.to_dict()
    if report.violations:
        rep.add_file(write_violations(rep.out_dir / "violations.csv", report, dyn.n))
    rep.check("verify", report.passed)


def do_verify(ex, cfg: RunConfig, rep: RunReport) -> None:
    t0 = time.perf_counter()
    report = ex.verify(grid=_grid(ex, cfg), tol=cfg.verify.get("tol", 1e-6))
    rep.timings["verify"] = time.perf_counter() - t0
    rep.sections["verify"] = report.to_dict()
    if report.violations:
        rep.add_file(write_violations(rep.out_dir / "violations.csv", report, ex.dynamics().n))
    for w in report.warnings:
        log.warning("%s: %s", ex.name, w)
    rep.check("verify", report.passed)


def do_compose(ex, cfg: RunConfig, rep: RunReport, certify: bool | None = None) -> list:
    t0 = time.perf_counter()
    certify = cfg.compose.get("certify", True) if certify is None else certify
    custom_alpha = cfg.compose.get("alpha_lambda")
    custom_traj = cfg.compose.get("lambda")
    try:
        if custom_alpha is None and custom_traj is None:
            x0 = cfg.simulate.get("x0")
            tvs = ex.compose(x0, certify=certify)
        else:
            cbf = ex.cbf()
            base = ex.compose(cfg.simulate.get("x0"), certify=False)[0]
            Lambda = float(custom_traj.get("Lambda", math.inf)) if custom_traj else base.traj.Lambda
            al = alpha_from_config(custom_alpha, Lambda, lines=cfg.lines) if custom_alpha else base.alpha_lambda
            traj = trajectory_from_config(custom_traj, al, cfg.lines) if custom_traj else base.traj
            kw = {"dyn": ex.dynamics(), "state_grid": _grid(ex, cfg)} if certify else {}
            tvs = [compose_tv_cbf(cbf, traj, al, **kw)]
    except CompositionRefusedError as exc:
        rep.timings["compose"] = time.perf_counter() - t0
        rep.sections["compose"] = {"refused": True, "step": exc.step, "message": str(exc)}
        rep.error = str(exc)
        rep.check("compose", False)
        return []
    rep.timings["compose"] = time.perf_counter() - t0
    rep.sections["compose"] = {
        "refused": False,
        "phases": [{"certified": tv.certified, "lambda": tv.traj.to_dict(), "certificate": tv.certificate} for tv in tvs],
    }
    rep.check("compose", all(tv.certified for tv in tvs))
    return tvs


def _write_result(res, rep: RunReport, sub: str, plots: bool, bound) -> dict:
    d = rep.out_dir / sub if sub else rep.out_dir
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for k, ph in enumerate(res.phases):
        if len(res.phases) > 1:
            p = d / f"phase_{k + 1}.csv"
            ph.traj.to_csv(p)
            files.append(rep.add_file(p))
    p = d / "trajectory.csv"
    res.combined().to_csv(p)
    files.append(rep.add_file(p))
    if plots:
        from .plotting import render_all

        planar = res.phases[0].traj.n >= 2 and res.name in ("omni", "unicycle", "counterexample", "pendulum")
        for f in render_all(res, d, bound, planar):
            files.append(rep.add_file(f))
    return res.summary()


def _input_bound(ex):
    U = ex.dynamics().input_set
    if U.kind == "box" and np.allclose(U.lower, -U.upper):
        return float(np.max(U.upper))
    return None


def do_simulate(ex, cfg: RunConfig, rep: RunReport, certify: bool = False) -> None:
    sim = cfg.simulate
    plots = cfg.output.get("plots", True)
    mode = sim.get("mode", "hard")
    kw = {"dt": sim.get("dt"), "dt_ctrl": sim.get("dt_ctrl"), "certify": certify, "mode": mode}
    runs = [("", sim.get("x0"))]
    n_rand = int(sim.get("random_x0") or 0)
    if n_rand:
        rng = np.random.default_rng(sim.get("seed", 0))
        runs += [(f"run_{k + 1}", x) for k, x in enumerate(ex.sample_x0(rng, n_rand))]
    bound = _input_bound(ex)
    t0 = time.perf_counter()
    summaries = []
    for sub, x0 in runs:
        try:
            res = ex.simulate(x0=x0, **kw)
        except CompositionRefusedError as exc:
            rep.error = str(exc)
            summaries.append({"run": sub or "nominal", "passed": False, "error": str(exc)})
            rep.check(f"simulate{':' + sub if sub else ''}", False)
            continue
        except (FilterInfeasibleError, DivergenceError) as exc:
            rep.error = str(exc)
            summaries.append({"run": sub or "nominal", "passed": False, "error": str(exc)})
            rep.check(f"simulate{':' + sub if sub else ''}", False)
            continue
        s = _write_result(res, rep, sub, plots and not sub, bound)
        s["run"] = sub or "nominal"
        summaries.append(s)
        rep.check(f"invariance{':' + sub if sub else ''}", all(p.report.passed for p in res.phases))
        for name, ok in res.checks.items():
            rep.check(f"{name}{':' + sub if sub else ''}", ok)
    rep.timings["simulate"] = time.perf_counter() - t0
    rep.sections["simulate"] = summaries


def run(command: str, cfg: RunConfig, out: Path, args=None) -> RunReport:
    target = cfg.example or str(cfg.path)
    rep = RunReport(command, target, out)
    if cfg.barrier is not None:
        if command != "verify":
            raise ConfigError("external barriers support only 'verify'", "barrier", cfg.line_of("barrier"))
        _external_verify(cfg, rep)
        return rep
    ex = _example(cfg)
    rep.sections["example"] = ex.spec.to_dict()
    if command == "verify":
        do_verify(ex, cfg, rep)
    elif command == "compose":
        tvs = do_compose(ex, cfg, rep)
        if tvs and len(tvs) > 1:
            write_json(out / "lambda.json", [tv.traj.to_dict() for tv in tvs])
            rep.add_file(out / "lambda.json")
    elif command == "simulate":
        do_simulate(ex, cfg, rep)
    elif command == "example":
        do_verify(ex, cfg, rep)
        if do_compose(ex, cfg, rep):
            do_simulate(ex, cfg, rep, certify=False)
    return rep


def _execute(command: str, cfg: RunConfig, out: Path) -> int:
    try:
        rep = run(command, cfg, out)
    except ConfigError as exc:
        print(f"tvcbf: config error: {exc}", file=sys.stderr)
        return USAGE
    rep.write()
    status = "PASS" if rep.passed else "FAIL"
    print(f"{command} {rep.target}: {status}  ({out / 'report.json'})")
    if rep.error:
        print(f"  {rep.error}", file=sys.stderr)
    for name, ok in rep.checks.items():
        if not ok:
            print(f"  failed: {name}", file=sys.stderr)
    return OK if rep.passed else FAIL


def _batch_one(item):
    target, out_base, plots = item
    if target.endswith((".yaml", ".yml")):
        cfg = load_config(target)
        name = Path(target).stem
    else:
        cfg = RunConfig(example=target)
        name = target
    if not plots:
        cfg.output["plots"] = False
    out = Path(out_base) / name
    out.mkdir(parents=True, exist_ok=True)
    return target, _execute("example", cfg, out)


def cmd_batch(args) -> int:
    base = args.out_dir or os.environ.get(ENV_OUT_DIR) or DEFAULT_OUT_DIR
    names = {s.name for s in example_catalog()}
    for t in args.targets:
        if t not in names and not Path(t).is_file():
            raise UsageError(f"{t!r} is neither a catalog example nor a config file")
    items = [(t, base, not args.no_plots) for t in args.targets]
    codes = {}
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        for target, code in pool.map(_batch_one, items):
            codes[target] = code
    Path(base).mkdir(parents=True, exist_ok=True)
    write_json(Path(base) / "batch.json", {"runs": codes, "passed": all(c == OK for c in codes.values())})
    if any(c == USAGE for c in codes.values()):
        return USAGE
    return OK if all(c == OK for c in codes.values()) else FAIL


def cmd_list() -> int:
    for spec in example_catalog():
        print(f"{spec.name:15s} {spec.description}")
    return OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "batch":
            return cmd_batch(args)
        if args.command == "example" and args.list:
            return cmd_list()
        cfg = resolve(args)
        if args.command == "simulate":
            if args.dt_ctrl is not None:
                cfg.simulate["dt_ctrl"] = args.dt_ctrl
            if args.soft:
                cfg.simulate["mode"] = "soft"
            if args.random_x0 is not None:
                cfg.simulate["random_x0"] = args.random_x0
        name = cfg.example or (cfg.path.stem if cfg.path else "run")
        out = out_dir_for(args, cfg, f"{name}/{args.command}")
        return _execute(args.command, cfg, out)
    except (UsageError, ConfigError) as exc:
        print(f"tvcbf: {exc}", file=sys.stderr)
        return USAGE
    except TvcbfError as exc:
        print(f"tvcbf: {exc}", file=sys.stderr)
        return FAIL


if __name__ == "__main__":
    sys.exit(main())
