"""Command-line front end.

Subcommands: solve-soft, solve-dp, sweep, simulate, counterexample.
Parameters come from ``--config file.json`` with flags taking precedence.
Exit codes: 0 ok, 2 invalid input, 3 solver failure, 4 inconclusive verdict.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

from . import counterexamples as cx
from .dp import solve_dp, write_table_csv
from .errors import GeometryViolation, NoBracket, NonConvergence, ValidationError
from .simulate import EpisodeConfig, run_episode, simulate_batch, write_path_csv
from .sources import NoiseModel, Uniform, density_from_config
from .stage import solve_soft

log = logging.getLogger("dualsched")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_INCONCLUSIVE = 0, 2, 3, 4

DEFAULTS = {
    "T": 100,
    "N1": 40,
    "N2": 40,
    "lambda": 1.0,
    "gamma": 1.0,
    "c1": 0.5,
    "c2": 2.0,
    "seed": 0,
    "episodes": 1,
    "density": "laplace",
    "L": 10.0,
    "noise": "gaussian",
    "workers": 1,
    "axis": "N1",
    "fixed": [0, 10, 20],
    "max": 100,
    "beta1": 0.5,
    "beta2": 1.0,
    "null_shift": False,
    "out": None,
}

INT_FIELDS = ("T", "N1", "N2", "seed", "episodes", "workers", "max")


def _num(v):
    """Round floats to 12 significant digits for stable output files."""
    if isinstance(v, bool) or v is None:
        return v
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return float(f"{v:.12g}")
    if isinstance(v, dict):
        return {k: _num(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    if hasattr(v, "item"):
        return _num(v.item())
    return v


def _dump(obj) -> str:
    return json.dumps(_num(obj), indent=2, sort_keys=True) + "\n"


def _build_parser():
    p = argparse.ArgumentParser(prog="dualsched", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("parameters")
    g.add_argument("--config", help="JSON file with parameters; flags override it")
    g.add_argument("--T", type=int)
    g.add_argument("--N1", type=int)
    g.add_argument("--N2", type=int)
    g.add_argument("--lambda", dest="lambda", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--c1", type=float)
    g.add_argument("--c2", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--episodes", type=int)
    g.add_argument("--density", choices=("laplace", "uniform", "tabulated"))
    g.add_argument("--L", type=float, help="half-width of the uniform source")
    g.add_argument("--noise", choices=NoiseModel.SHAPES)
    g.add_argument("--out")
    g.add_argument("--workers", type=int)
    g.add_argument("-v", "--verbose", action="store_true")

    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-soft", parents=[common], help="one-stage thresholds for prices c1, c2")
    sub.add_parser("solve-dp", parents=[common], help="finite-horizon DP for budgets N1, N2")
    sw = sub.add_parser("sweep", parents=[common], help="optimal cost versus one budget")
    sw.add_argument("--axis", choices=("N1", "N2"))
    sw.add_argument("--fixed", type=lambda s: [int(v) for v in s.split(",") if v.strip()],
                    help="comma-separated values of the other budget")
    sw.add_argument("--max", type=int, help="largest value on the swept axis")
    sub.add_parser("simulate", parents=[common], help="sample path and Monte Carlo cost")
    ce = sub.add_parser("counterexample", parents=[common], help="uniform-source shift comparison")
    ce.add_argument("--beta1", type=float)
    ce.add_argument("--beta2", type=float)
    ce.add_argument("--null-shift", dest="null_shift", action="store_true", default=None)
    return p


def _resolve(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError("config", str(exc)) from exc
        if not isinstance(loaded, dict):
            raise ValidationError("config", "top level must be a JSON object")
        unknown = set(loaded) - set(DEFAULTS) - {"density"}
        if unknown:
            raise ValidationError(sorted(unknown)[0], "unknown config field")
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key in DEFAULTS and val is not None:
            cfg[key] = val
    for key in INT_FIELDS:
        v = cfg[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
            raise ValidationError(key, f"expected an integer, got {v!r}")
        cfg[key] = int(v)
    for key in ("lambda", "gamma", "c1", "c2", "L", "beta1", "beta2"):
        v = cfg[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or math.isnan(v):
            raise ValidationError(key, f"expected a number, got {v!r}")
        cfg[key] = float(v)
    for key in ("T", "episodes", "workers"):
        if cfg[key] < 1:
            raise ValidationError(key, f"must be >= 1, got {cfg[key]}")
    for key in ("N1", "N2", "seed", "max"):
        if cfg[key] < 0:
            raise ValidationError(key, f"must be >= 0, got {cfg[key]}")
    for key in ("lambda", "gamma", "L"):
        if not cfg[key] > 0:
            raise ValidationError(key, f"must be positive, got {cfg[key]}")
    for key in ("c1", "c2"):
        if cfg[key] < 0:
            raise ValidationError(key, f"must be nonnegative, got {cfg[key]}")
    return cfg


def _density(cfg):
    d = cfg["density"]
    if isinstance(d, dict):
        return density_from_config(d)
    if d == "laplace":
        return density_from_config({"kind": "laplace", "lambda": cfg["lambda"]})
    if d == "uniform":
        return density_from_config({"kind": "uniform", "L": cfg["L"]})
    if d == "tabulated":
        raise ValidationError("density", "a tabulated density must be given as an object in --config")
    raise ValidationError("density", f"unknown density {d!r}")


def _emit(text, out, stdout):
    if out:
        Path(out).write_text(text)
    stdout.write(text)


def cmd_solve_soft(cfg, stdout):
    sol = solve_soft(_density(cfg), cfg["c1"], cfg["c2"], cfg["gamma"])
    rep = {
        "beta1": sol.beta1,
        "beta2": sol.beta2,
        "J": sol.cost,
        "used_boundary": sol.used_boundary,
        "boundary": sol.boundary,
        "residuals": list(sol.residuals),
    }
    _emit(_dump(rep), cfg["out"], stdout)
    return EXIT_OK


def cmd_solve_dp(cfg, stdout):
    table = solve_dp(cfg["T"], cfg["N1"], cfg["N2"], _density(cfg), cfg["gamma"], workers=cfg["workers"])
    if cfg["out"]:
        table.to_csv(cfg["out"])
    rep = {"T": cfg["T"], "N1": cfg["N1"], "N2": cfg["N2"], "J": table.optimal_cost()}
    stdout.write(_dump(rep))
    return EXIT_OK


def sweep_rows(cfg):
    """Rows (axis value, fixed value, J*) from one DP over the enclosing budgets."""
    axis = cfg["axis"]
    fixed = sorted(set(cfg["fixed"]))
    if not fixed:
        raise ValidationError("fixed", "need at least one fixed budget value")
    if min(fixed) < 0:
        raise ValidationError("fixed", "budgets must be nonnegative")
    top = cfg["max"]
    n1, n2 = (top, max(fixed)) if axis == "N1" else (max(fixed), top)
    table = solve_dp(cfg["T"], n1, n2, _density(cfg), cfg["gamma"], workers=cfg["workers"])
    rows = []
    for f in cfg["fixed"]:
        for a in range(top + 1):
            j = table.value[1, a, f] if axis == "N1" else table.value[1, f, a]
            rows.append((a, f, float(j)))
    return rows


def cmd_sweep(cfg, stdout):
    rows = sweep_rows(cfg)
    other = "N2" if cfg["axis"] == "N1" else "N1"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([cfg["axis"], other, "J"])
    for a, f, j in rows:
        w.writerow([a, f, f"{j:.12g}"])
    _emit(buf.getvalue(), cfg["out"], stdout)
    return EXIT_OK


def cmd_simulate(cfg, stdout):
    table = solve_dp(cfg["T"], cfg["N1"], cfg["N2"], _density(cfg), cfg["gamma"], workers=cfg["workers"])
    config = EpisodeConfig.for_table(table, cfg["noise"], cfg["seed"], cfg["episodes"])
    path = run_episode(config, table, 0)
    summary = {
        "total_cost": path.total_cost,
        "final_En": path.final_En,
        "final_Ep": path.final_Ep,
        "J_dp": table.optimal_cost(),
        "seed": cfg["seed"],
    }
    if cfg["episodes"] > 1:
        res = simulate_batch(config, table, workers=cfg["workers"])
        summary.update(
            episodes=cfg["episodes"],
            mc_mean=res.mean,
            mc_std_error=res.std_error,
            frac_final_Ep_zero=float((res.final_Ep == 0).mean()),
            frac_final_En_zero=float((res.final_En == 0).mean()),
            mean_final_En=float(res.final_En.mean()),
        )
    text = _dump(summary)
    if cfg["out"]:
        out = Path(cfg["out"])
        with open(out, "w", newline="") as fh:
            write_path_csv(path, fh)
        out.with_suffix(".summary.json").write_text(text)
    stdout.write(text)
    return EXIT_OK


def cmd_counterexample(cfg, stdout):
    cons = cx.build_uniform_counterexample(cfg["L"], cfg["beta1"], cfg["beta2"])
    if cfg["null_shift"]:
        cons = cx.ShiftConstruction(cons.original, cons.original,
                                    {k: (a, a) for k, (a, _) in cons.masses.items()},
                                    cons.side_channel, "null_shift")
    rep = cx.report(cons, Uniform(cfg["L"]), cfg["c1"], cfg["c2"], cfg["gamma"])
    _emit(_dump(rep), cfg["out"], stdout)
    return EXIT_OK if rep["verdict"] == "shifted_cheaper" else EXIT_INCONCLUSIVE


COMMANDS = {
    "solve-soft": cmd_solve_soft,
    "solve-dp": cmd_solve_dp,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "counterexample": cmd_counterexample,
}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=stderr)
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg, stdout)
    except (ValidationError, GeometryViolation) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except (NonConvergence, NoBracket) as exc:
        stderr.write(f"solver failure: {exc}\n")
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
