"""Command-line pipeline: ``pdrci synthesize | verify | export-plot``.

Exit codes: 0 success, 1 verification found violations, 2 missing or
corrupt input file (or invalid flags), 3 synthesis failed. Failures print a
one-line JSON error object to stderr.
"""
import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import geometry, verify
from .model import PRESETS, ProblemError, load_problem, problem_from_dict, problem_to_dict
from .synthesis import (IterationRecord, SynthesisError, SynthesisOptions, SynthesisResult,
                        make_simplex_grid, synthesize)

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT, EXIT_SYNTHESIS = 0, 1, 2, 3
RESULT_FORMAT = 1

log = logging.getLogger("pdrci")


class InputError(Exception):
    """A result or problem file is missing or does not follow its schema."""


# -- bit-stable JSON ---------------------------------------------------------------------

def _fmt_float(v):
    v = float(v)
    if not math.isfinite(v):
        return "null"
    s = format(v, ".17g")
    # keep JSON floats recognisable as floats
    return s if any(c in s for c in ".eE") else s + ".0"


def dumps(obj, indent=0, step=2):
    """JSON with every float written at 17 significant digits and sorted keys."""
    pad, inner = " " * indent, " " * (indent + step)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent + step)}"
                 for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, step)
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return ("[\n" + ",\n".join(inner + dumps(v, indent + step) for v in obj)
                + "\n" + pad + "]")
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return json.dumps(obj if not isinstance(obj, np.bool_) else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _trace_row(rec, timing=True):
    row = {f: getattr(rec, f) for f in IterationRecord.FIELDS}
    if not timing:
        row.pop("wall_s")
    return row


def result_to_dict(result, problem, source, timestamp=None):
    """``timing`` (timestamp and wall times) is the only nondeterministic field."""
    pp = result.polytope
    return {
        "format": RESULT_FORMAT,
        "source": source,
        "problem": problem_to_dict(problem),
        "options": result.options.to_dict(),
        "P": [np.asarray(p) for p in pp.P],
        "W": np.asarray(pp.W),
        "K": [np.asarray(k) for k in result.K],
        "gamma_certified": result.gamma_certified,
        "robust_only": result.robust_only,
        "trace": [_trace_row(r, timing=False) for r in result.trace],
        "timing": {"timestamp": timestamp if timestamp is not None else time.time(),
                   "wall_s": [r.wall_s for r in result.trace]},
    }


def write_result(path, result, problem, source, timestamp=None):
    Path(path).write_text(dumps(result_to_dict(result, problem, source, timestamp)) + "\n")


def _nan(v):
    return float("nan") if v is None else float(v)


def load_result(path):
    """Read ``result.json``; returns ``(SynthesisResult, ProblemSpec)``."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"result file not found: {path}")
    try:
        data = json.loads(path.read_text())
        problem = problem_from_dict(data["problem"])
        P = tuple(np.array(p, dtype=float) for p in data["P"])
        W = np.array(data["W"], dtype=float)
        K = [np.array(k, dtype=float) for k in data["K"]]
        known = {f.name for f in fields(SynthesisOptions)}
        opts = SynthesisOptions(**{k: v for k, v in data["options"].items() if k in known})
        walls = data.get("timing", {}).get("wall_s", [])
        trace = []
        for i, row in enumerate(data["trace"]):
            wall = walls[i] if i < len(walls) else float("nan")
            trace.append(IterationRecord(int(row["iter"]), int(row["stage"]), _nan(row["detW"]),
                                         _nan(row["sigma_sum"]), _nan(row["mc_volume"]),
                                         _nan(row["exact_area"]), str(row["solver_status"]),
                                         _nan(wall)))
        pp = geometry.ParamPolytope(P, W)
        if len(K) != pp.n_xi or any(k.shape != (problem.system.n_u, pp.n_x) for k in K):
            raise InputError("gain shapes do not match the problem")
        if pp.n_xi != problem.system.n_xi or pp.n_x != problem.system.n_x:
            raise InputError("set dimensions do not match the problem")
    except InputError:
        raise
    except (ValueError, KeyError, TypeError, IndexError, ProblemError,
            geometry.GeometryError) as exc:
        raise InputError(f"corrupt result file {path}: {exc}") from None
    result = SynthesisResult(pp, K, bool(data.get("gamma_certified", False)), trace, None,
                             opts, robust_only=bool(data.get("robust_only", False)))
    return result, problem


# -- CSV artifacts -------------------------------------------------------------------------

def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(IterationRecord.FIELDS)
        for rec in trace:
            out.writerow([_csv_value(v) for v in rec.as_row()])


def _csv_value(v):
    if isinstance(v, float):
        return _fmt_float(v) if math.isfinite(v) else "nan"
    return v


def read_trace_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def polygon_rows(result, resolution=4):
    """``(xi_index, slice_id, vertices)`` for grid slices plus the robust set (n_x = 2)."""
    pp = result.polytope
    rows = []
    for m, xi in enumerate(make_simplex_grid(pp.n_xi, resolution)):
        V, _ = geometry.vertex_enumerate_2d(geometry.slice_at(pp, xi))
        rows.append((m, "slice", V))
    V, _ = geometry.vertex_enumerate_2d(result.robust_set())
    rows.append((-1, "robust", V))
    return rows


def write_grid_csv(path, result, resolution=4):
    """Simplex grid points for the ``xi_index`` column of polygons.csv."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        pp = result.polytope
        out.writerow(["xi_index"] + [f"xi{k + 1}" for k in range(pp.n_xi)])
        for m, xi in enumerate(make_simplex_grid(pp.n_xi, resolution)):
            out.writerow([m] + [_fmt_float(v) for v in xi])


def export_plots(result, problem, out, resolution=4, seed=0, steps=300, runs=20):
    """polygons.csv (+ grid), trace.csv and trajectories.csv under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    write_trace_csv(out / "trace.csv", result.trace)
    written.append("trace.csv")
    if result.polytope.n_x == 2:
        geometry.write_polygons_csv(out / "polygons.csv", polygon_rows(result, resolution))
        write_grid_csv(out / "grid.csv", result, resolution)
        written += ["polygons.csv", "grid.csv"]
    trajectories = overlay_trajectories(result, problem, seed, steps, runs)
    if trajectories:
        verify.write_trajectories_csv(out / "trajectories.csv", trajectories)
        written.append("trajectories.csv")
    return written


def overlay_trajectories(result, problem, seed=0, steps=300, runs=20):
    """Vertex-initialized closed-loop runs (qLPV) or random-schedule runs (LPV)."""
    if problem.qlpv is not None:
        if result.polytope.n_x != 2:
            return []
        return verify.check_qlpv_vertices(result, problem, steps)[1]
    rng = np.random.default_rng(seed)
    n_xi = problem.system.n_xi
    xi0 = verify.sample_simplex(rng, runs, n_xi)
    X0 = verify.sample_states_in_slices(result.polytope, problem, xi0, rng)
    out = []
    for r in range(runs):
        sched = np.vstack([xi0[r], verify.sample_simplex(rng, steps - 1, n_xi)])
        out.append((r, verify.simulate_closed_loop(problem, result.K, X0[r], sched)))
    return out


# -- commands ------------------------------------------------------------------------------

def _options_from_args(args):
    return SynthesisOptions(
        n_p=args.np, d=args.d, iters_stage1=args.iters1, iters_stage2=args.iters2,
        epsilon=args.eps, grid_resolution=args.grid, extra_boundary_samples=args.samples,
        gamma=args.gamma, seed=args.seed, mc_samples=args.mc_samples,
        convergence_tol=args.convergence_tol)


def _load_problem_arg(args):
    source = args.preset or args.problem
    try:
        return load_problem(source), source
    except FileNotFoundError:
        raise InputError(f"problem file not found: {source}") from None
    except (ProblemError, OSError) as exc:
        raise InputError(f"invalid problem {source}: {exc}") from None


def cmd_synthesize(args):
    problem, source = _load_problem_arg(args)
    opts = _options_from_args(args)
    try:
        opts.validate(problem.system.n_x)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = synthesize(problem, opts)
    write_result(out / "result.json", result, result.problem or problem, source)
    write_trace_csv(out / "trace.csv", result.trace)
    files = ["result.json", "trace.csv"]
    if result.polytope.n_x == 2:
        geometry.write_polygons_csv(out / "polygons.csv", polygon_rows(result, opts.grid_resolution))
        files.append("polygons.csv")
    summary = {"status": "ok", "out": str(out), "files": files,
               "iterations": len(result.trace)}
    if result.trace:
        last = result.trace[-1]
        summary.update(exact_area=_finite(last.exact_area), mc_volume=_finite(last.mc_volume))
    print(json.dumps(summary))
    return EXIT_OK


def _finite(v):
    return v if math.isfinite(v) else None


def cmd_verify(args):
    result, problem = load_result(args.result)
    gamma = args.gamma
    if gamma is None and result.gamma_certified:
        gamma = result.options.gamma
    report = verify.verify_all(result, problem, n_trials=args.trials, seed=args.seed, gamma=gamma)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    if problem.qlpv is not None and result.polytope.n_x == 2:
        verify.write_trajectories_csv(out / "trajectories.csv",
                                      verify.check_qlpv_vertices(result, problem)[1])
    print(json.dumps({"status": "ok" if report.passed else "violation",
                      "trials": report.trials, "violations": report.violations,
                      "report": str(out / "report.json")}))
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_export_plot(args):
    result, problem = load_result(args.result)
    files = export_plots(result, problem, args.out, args.grid, args.seed)
    print(json.dumps({"status": "ok", "out": str(args.out), "files": files}))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------------

def build_parser():
    defaults = SynthesisOptions()
    parser = argparse.ArgumentParser(
        prog="pdrci", description="Parameter-dependent robust control invariant sets.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    syn = sub.add_parser("synthesize", help="compute a set and gains")
    src = syn.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--problem", help="problem JSON file")
    syn.add_argument("--np", type=int, default=defaults.n_p, help="face pairs n_p")
    syn.add_argument("--d", type=int, default=defaults.d, help="Polya degree")
    syn.add_argument("--iters1", type=int, default=defaults.iters_stage1)
    syn.add_argument("--iters2", type=int, default=defaults.iters_stage2)
    syn.add_argument("--grid", type=int, default=defaults.grid_resolution,
                     help="simplex grid resolution")
    syn.add_argument("--samples", type=int, default=defaults.extra_boundary_samples,
                     help="boundary samples of the volume cost beyond the box vertices")
    syn.add_argument("--mc-samples", type=int, default=defaults.mc_samples,
                     help="Monte Carlo samples for the reported volume")
    syn.add_argument("--gamma", type=float, default=None, help="performance bound")
    syn.add_argument("--eps", type=float, default=defaults.epsilon, help="strictness margin")
    syn.add_argument("--convergence-tol", type=float, default=defaults.convergence_tol)
    syn.add_argument("--seed", type=int, default=defaults.seed)
    syn.add_argument("--out", default="out")
    syn.set_defaults(func=cmd_synthesize)

    ver = sub.add_parser("verify", help="sample-based checks of a result")
    ver.add_argument("--result", default="out/result.json")
    ver.add_argument("--trials", type=int, default=100_000)
    ver.add_argument("--gamma", type=float, default=None)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out", default="out")
    ver.set_defaults(func=cmd_verify)

    exp = sub.add_parser("export-plot", help="CSV data for plots")
    exp.add_argument("--result", default="out/result.json")
    exp.add_argument("--grid", type=int, default=4)
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--out", default="out")
    exp.set_defaults(func=cmd_export_plot)
    return parser


def _error(kind, message, code, **extra):
    print(json.dumps({"status": "error", "error": kind, "message": message, **extra}),
          file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        return _error("input", str(exc), EXIT_INPUT)
    except SynthesisError as exc:
        return _error("synthesis", str(exc), EXIT_SYNTHESIS, stage=exc.stage,
                      solver_status=exc.status)
    except geometry.GeometryError as exc:
        return _error("geometry", str(exc), EXIT_SYNTHESIS)


if __name__ == "__main__":
    sys.exit(main())
