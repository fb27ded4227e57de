"""Command-line entry point: ``spatialbd <kind> --config FILE`` or ``spatialbd preset ...``.

Exit codes: 0 success, 1 error, 2 usage, 3 run finished but diverged.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import __version__
from ._accel import BACKEND
from .combinatorics import (BoundDomainError, Vessel, cox_occupation, log_heavy_tail_lower_bound,
                            poisson_occupation, poisson_spectrum, sub_poissonian_bound,
                            total_variation)
from .grid import Grid1D, fields_to_csv
from .hierarchy import ClosureRule, integrate_pair_dynamics
from .homogeneous import RiccatiParams, riccati_derived, riccati_solve
from .ibm import (Configuration, ModelRates, empirical_factorial_moments, mean_field_density,
                  moments_over_time, run_replicas)
from .kernels import parse_kernel
from .kinetic import KineticProblem, integrate_kinetic
from .scenarios import (GROUPS, PRESETS, Scenario, ScenarioError, as_dict, parse_scenario, preset,
                        serialize)
from .svg import line_plot

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("spatialbd")


@dataclasses.dataclass
class RunResult:
    status: int
    files: list
    info: dict


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def kinetic_problem(s: Scenario) -> KineticProblem:
    return KineticProblem(
        grid=Grid1D(s.L, s.N), a_plus=parse_kernel(s.a_plus), a_minus=parse_kernel(s.a_minus),
        b_plus=parse_kernel(s.b_plus), b_minus=parse_kernel(s.b_minus),
        rho0=parse_kernel(s.rho0), t_end=s.t_end, dt=s.dt,
        adaptive=bool(s.adaptive), tol=s.tol if s.tol is not None else 1e-8,
        method=s.method or "auto")


def model_rates(s: Scenario) -> ModelRates:
    return ModelRates(parse_kernel(s.b_plus), parse_kernel(s.b_minus),
                      parse_kernel(s.a_plus), parse_kernel(s.a_minus))


def _times(s: Scenario):
    if s.snapshot_times:
        return [t for t in s.snapshot_times if t <= s.t_end] or [s.t_end]
    return list(np.linspace(0.0, s.t_end, 11))


# runners -------------------------------------------------------------------------------

def run_riccati(s: Scenario, out: str, svg: bool) -> RunResult:
    p = RiccatiParams(s.b, s.a, s.alpha)
    sol = riccati_derived(p)
    t = np.linspace(0.0, s.t_end, s.n_times)
    rho = riccati_solve(p, s.rho0_value, t)
    path = os.path.join(out, "riccati.csv")
    write_csv(path, ["t", "rho"], zip(t, rho))
    files = [path]
    if svg:
        files.append(_svg(out, "riccati.svg", [(s.name, t, rho)], s.name, "t", "rho"))
    info = {"lambda_plus": sol.lambda_plus, "lambda_minus": sol.lambda_minus,
            "omega": sol.omega, "delta": sol.delta}
    return RunResult(EXIT_OK, files, info)


def run_riccati_group(names: Sequence[str], out: str, svg: bool) -> RunResult:
    cols, series, info = [], [], {}
    t = None
    for name in names:
        s = preset(name).resolved()
        p = RiccatiParams(s.b, s.a, s.alpha)
        t = np.linspace(0.0, s.t_end, s.n_times)
        rho = riccati_solve(p, s.rho0_value, t)
        label = "rho_" + name[-1]
        cols.append((label, rho))
        series.append((label, t, rho))
        info[name] = {"lambda_plus": riccati_derived(p).lambda_plus}
    path = os.path.join(out, "fig1.csv")
    write_csv(path, ["t"] + [c for c, _ in cols], zip(t, *[v for _, v in cols]))
    files = [path]
    if svg:
        files.append(_svg(out, "fig1.svg", series, "homogeneous solutions", "t", "rho"))
    return RunResult(EXIT_OK, files, info)


def run_kinetic(s: Scenario, out: str, svg: bool) -> RunResult:
    prob = kinetic_problem(s)
    traj = integrate_kinetic(prob, _times(s), steady_tol=s.steady_tol,
                             stop_at_steady=bool(s.stop_at_steady),
                             absolute=bool(s.steady_absolute))
    files = []
    x = prob.grid.nodes
    for k, snap in enumerate(traj.snapshots):
        path = os.path.join(out, f"rho_{k:03d}.csv")
        _write_text(path, fields_to_csv(prob.grid, {"rho": snap.values}))
        files.append(path)
    path = os.path.join(out, "summary.csv")
    write_csv(path, ["time", "mass", "min", "max", "rhs_norm"], traj.summary_rows())
    files.append(path)
    if svg:
        series = [(f"t={t:.4g}", x, snap.values) for t, snap in zip(traj.times, traj.snapshots)]
        files.append(_svg(out, "snapshots.svg", series, s.name, "x", "rho"))
    info = {"diverged": traj.diverged, "blowup_time": traj.blowup_time,
            "steady_time": traj.steady_time, "final_time": float(traj.times[-1]),
            "max_density": float(max(np.max(f.values) for f in traj.snapshots)),
            "solver": traj.meta}
    return RunResult(EXIT_DIVERGED if traj.diverged else EXIT_OK, files, info)


def run_pair(s: Scenario, out: str, svg: bool) -> RunResult:
    prob = kinetic_problem(s)
    traj = integrate_pair_dynamics(prob, ClosureRule(s.closure), _times(s), mode=s.mode)
    grid = prob.grid
    files = []
    for k, (r1, r2) in enumerate(zip(traj.rho1, traj.rho2)):
        p1 = os.path.join(out, f"rho1_{k:03d}.csv")
        _write_text(p1, fields_to_csv(grid, {"rho": r1.values}))
        p2 = os.path.join(out, f"rho2_{k:03d}.csv")
        write_csv(p2, [f"c{j}" for j in range(grid.n_points)], r2.values)
        files += [p1, p2]
    r1, r2 = traj.final
    trunc = r2.truncated(r1)
    mid = grid.n_points // 2
    path = os.path.join(out, "diag.csv")
    _write_text(path, fields_to_csv(grid, {"rho2_same_point": r2.diagonal(),
                                           "truncated_y0": trunc[:, 0],
                                           "truncated_ymid": trunc[:, mid]}))
    files.append(path)
    if svg:
        series = [(f"t={t:.4g}", grid.nodes, f.values) for t, f in zip(traj.times, traj.rho1)]
        files.append(_svg(out, "rho1.svg", series, s.name, "x", "rho1"))
    info = {"diverged": traj.diverged, "blowup_time": traj.blowup_time, **traj.meta}
    return RunResult(EXIT_DIVERGED if traj.diverged else EXIT_OK, files, info)


def run_ibm(s: Scenario, out: str, svg: bool, events: bool = False,
            workers: int = 1) -> RunResult:
    rates = model_rates(s)
    L = s.L
    vessel = Vessel.interval(*s.vessel)

    def start(rng):
        return Configuration.uniform(s.n0, L, rng)

    trajs = run_replicas(start, rates, s.t_end, s.snapshot_interval, s.seed, s.replicas,
                         workers=workers, record_events=events)
    files = []
    path = os.path.join(out, "counts.csv")
    write_csv(path, ["replica", "time", "N", "N_vessel"],
              ((r, t, len(c), c.count_in(vessel))
               for r, tr in enumerate(trajs) for t, c in zip(tr.times, tr.snapshots)))
    files.append(path)
    if events:
        path = os.path.join(out, "events.csv")
        write_csv(path, ["replica", "time", "kind", "position", "population_after"],
                  ((r, e.time, 1 if e.kind == "birth" else -1, e.position, e.population_after)
                   for r, tr in enumerate(trajs) for e in tr.events))
        files.append(path)

    info = {"replicas": s.replicas, "blowup": any(tr.blowup for tr in trajs),
            "burn_in": s.burn_in, "n_births": sum(tr.n_births for tr in trajs),
            "n_deaths": sum(tr.n_deaths for tr in trajs)}
    try:
        info["mean_field_density"] = mean_field_density(rates, L)
    except ValueError:
        pass
    # stationary occupation from the pooled post-burn-in snapshots
    pooled = [c for tr in trajs for c in tr.snapshots[int(math.floor(s.burn_in * len(tr.snapshots))):]]
    rows = []
    if len(pooled) >= 2:
        counts = np.array([c.count_in(vessel) for c in pooled])
        spec = np.bincount(counts) / counts.size
        density = float(np.mean([len(c) for c in pooled])) / L
        info["empirical_density"] = density
        ref = density * vessel.volume
        rows = [(n, p, poisson_occupation(ref, n)) for n, p in enumerate(spec)]
        info["tv_to_poisson"] = float(
            0.5 * (sum(abs(p - q) for _, p, q in rows) + max(0.0, 1.0 - sum(q for *_, q in rows))))
        info["fano"] = float(counts.var() / counts.mean()) if counts.mean() > 0 else None
    path = os.path.join(out, "occupation.csv")
    write_csv(path, ["n", "p_empirical", "p_poisson_same_mean"], rows)
    files.append(path)

    path = os.path.join(out, "moments.csv")
    mrows = []
    if s.replicas >= 2:
        for t, fm in moments_over_time(trajs, vessel, s.k_max):
            mrows += [(t, k + 1, fm.c[k], fm.s[k], fm.se_s[k]) for k in range(fm.k_max)]
    elif len(pooled) >= 2:
        fm = empirical_factorial_moments(pooled, vessel, s.k_max)
        mrows = [(float(trajs[0].times[-1]), k + 1, fm.c[k], fm.s[k], fm.se_s[k])
                 for k in range(fm.k_max)]
    write_csv(path, ["time", "k", "c_k", "s_k", "se_s_k"], mrows)
    files.append(path)
    if svg:
        tr = trajs[0]
        files.append(_svg(out, "counts.svg", [("N(t)", tr.times, tr.counts)], s.name, "t", "N"))
    return RunResult(EXIT_DIVERGED if info["blowup"] else EXIT_OK, files, info)


def run_occupation(s: Scenario, out: str, svg: bool) -> RunResult:
    vessel = Vessel.interval(*s.vessel)
    cox = cox_occupation(s.kappa, vessel, n_max=s.n_max)
    m = s.kappa * vessel.volume
    rows = []
    for n in range(s.n_max + 1):
        try:
            heavy = math.exp(log_heavy_tail_lower_bound(s.kappa, vessel, n))
        except (BoundDomainError, ValueError):
            heavy = math.nan
        rows.append((n, poisson_occupation(m, n), cox.probs[n], sub_poissonian_bound(s.kappa, vessel, n),
                     heavy))
    path = os.path.join(out, "occupation.csv")
    write_csv(path, ["n", "p_poisson", "p_cox", "subpoisson_bound", "heavy_tail_bound"], rows)
    files = [path]
    if svg:
        n = [r[0] for r in rows]
        series = [("log10 p_poisson", n, [math.log10(r[1]) if r[1] > 0 else math.nan for r in rows]),
                  ("log10 p_cox", n, [math.log10(r[2]) if r[2] > 0 else math.nan for r in rows])]
        files.append(_svg(out, "occupation.svg", series, s.name, "n", "log10 p"))
    info = {"mean": cox.mean, "variance": cox.variance, "mass_deficit": cox.mass_deficit,
            "tv_cox_poisson": total_variation(cox, poisson_spectrum(m))}
    return RunResult(EXIT_OK, files, info)


def _svg(out, name, series, title, xl, yl):
    path = os.path.join(out, name)
    _write_text(path, line_plot(series, title, xl, yl))
    return path


_RUNNERS = {"riccati": run_riccati, "kinetic": run_kinetic, "pair": run_pair,
            "occupation": run_occupation}


def run(s: Scenario, out: str, svg: bool = False, events: bool = False,
        workers: int = 1) -> int:
    """Run a scenario into ``out``; writes ``metadata.json`` next to the data files."""
    os.makedirs(out, exist_ok=True)
    r = s.resolved()
    t0 = time.perf_counter()
    if r.kind == "ibm":
        res = run_ibm(r, out, svg, events, workers)
    else:
        res = _RUNNERS[r.kind](r, out, svg)
    _write_metadata(out, r, res, time.perf_counter() - t0)
    return res.status


def _write_metadata(out, s: Scenario, res: RunResult, wall: float, name: Optional[str] = None):
    meta = {"tool": "spatialbd", "version": __version__, "backend": BACKEND,
            "scenario": name or s.name, "scenario_hash": s.digest(),
            "resolved": as_dict(s), "wall_time_s": round(wall, 3),
            "status": res.status, "files": [os.path.basename(f) for f in res.files],
            "results": res.info}
    with open(os.path.join(out, "metadata.json"), "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    raise TypeError(f"not JSON serialisable: {type(v)}")


# argument handling -------------------------------------------------------------------------

def _parse_vessel(text: str):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"vessel must be lo:hi, got {text!r}") from None
    if not hi > lo:
        raise argparse.ArgumentTypeError("vessel needs hi > lo")
    return (lo, hi)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _common(p: argparse.ArgumentParser):
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--seed", type=_u64, help="base seed (ibm)")
    p.add_argument("--svg", action="store_true", help="also write an SVG plot")
    p.add_argument("--replicas", type=int, help="number of independent replicas (ibm)")
    p.add_argument("--t-end", type=float, dest="t_end", help="override the final time")
    p.add_argument("--vessel", type=_parse_vessel, help="counting window lo:hi (ibm, occupation)")
    p.add_argument("--events", action="store_true", help="write events.csv (ibm)")
    p.add_argument("--workers", type=int, default=1,
                   help="replicas run concurrently in this many threads (ibm; output unchanged)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spatialbd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"spatialbd {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in ("riccati", "kinetic", "ibm", "pair", "occupation"):
        p = sub.add_parser(kind, help=f"run a scenario file of kind {kind!r}")
        p.add_argument("--config", required=True, help="scenario file (flat TOML)")
        _common(p)
    pp = sub.add_parser("preset", help="list, show or run built-in scenarios")
    psub = pp.add_subparsers(dest="action", required=True)
    psub.add_parser("list")
    show = psub.add_parser("show")
    show.add_argument("name")
    prun = psub.add_parser("run")
    prun.add_argument("name")
    _common(prun)
    return ap


def _apply_overrides(s: Scenario, args) -> Scenario:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.replicas is not None:
        changes["replicas"] = args.replicas
    if args.t_end is not None:
        changes["t_end"] = args.t_end
    if args.vessel is not None:
        changes["vessel"] = args.vessel
    if not changes:
        return s
    s = dataclasses.replace(s, **changes)
    return parse_scenario(serialize(s))


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "preset":
            if args.action == "list":
                for name, s in PRESETS.items():
                    print(f"{name}\t{s.kind}")
                for name, members in GROUPS.items():
                    print(f"{name}\tgroup({','.join(members)})")
                return EXIT_OK
            if args.action == "show":
                print(serialize(preset(args.name)), end="")
                return EXIT_OK
            if args.name in GROUPS:
                os.makedirs(args.out, exist_ok=True)
                t0 = time.perf_counter()
                res = run_riccati_group(GROUPS[args.name], args.out, args.svg)
                _write_metadata(args.out, preset(GROUPS[args.name][0]).resolved(), res,
                                time.perf_counter() - t0, name=args.name)
                return res.status
            s = _apply_overrides(preset(args.name), args)
        else:
            with open(args.config) as fh:
                s = parse_scenario(fh.read())
            if s.kind != args.command:
                print(f"error: {args.config} describes a {s.kind!r} scenario, not {args.command!r}",
                      file=sys.stderr)
                return EXIT_USAGE
            s = _apply_overrides(s, args)
        status = run(s, args.out, svg=args.svg, events=args.events, workers=args.workers)
        if status == EXIT_DIVERGED:
            print(f"{s.name}: diverged (see {os.path.join(args.out, 'metadata.json')})",
                  file=sys.stderr)
        return status
    except (ScenarioError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
