"""Command line entry point: ``gamebridge <command> ...``.

Exit codes: 0 success, 1 check failed, 2 input error, 3 no convergence,
4 hypothesis violated (flows do not commute).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time

import numpy as np

from . import problemfile
from .bridge import (
    THREADS_ENV,
    GridMismatchError,
    TimeSlicedGrid,
    compare_grids,
    decreasing_by_sections_check,
    programmed_iteration,
    target_grid,
)
from .flows import check_flow_commutation
from .gamespec import ExplicitGrid, ProblemError, build_transformed
from .gridio import (
    GridFormatError,
    atomic_write,
    boundary_csv,
    grid_to_csv,
    load_grid,
    load_grid_csv,
    save_grid,
    spec_to_dict,
)
from .isaacs import default_directions, default_tolerance, isaacs_gap, isaacs_gap_transformed, sample_states
from .simulate import ConstantAdversary, capture_radius, run_trials, sample_starts
from .vectorfield import lie_bracket

OK, FAILED, INPUT, NO_CONVERGENCE, HYPOTHESIS = 0, 1, 2, 3, 4

log = logging.getLogger("gamebridge")


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


class _Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    def __call__(self, name):
        timer = self

        class _Stage:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.stages[name] = timer.stages.get(name, 0.0) + time.perf_counter() - self.t

        return _Stage()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_report(out: str, report: dict, timer: _Timer) -> None:
    # timings live in their own file so report.json stays byte-identical across runs
    atomic_write(os.path.join(out, "report.json"), _dump(report))
    atomic_write(os.path.join(out, "timings.json"), _dump({k: round(v, 6) for k, v in timer.stages.items()}))


def _load(path) -> problemfile.ProblemConfig:
    try:
        return problemfile.load(path)
    except (problemfile.ProblemFileError, ProblemError, GridFormatError, GridMismatchError) as exc:
        raise InputError(str(exc)) from None


def _read_grid(path) -> TimeSlicedGrid:
    try:
        if str(path).endswith(".csv"):
            return load_grid_csv(path)
        return load_grid(path)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except (GridFormatError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _grid_for(cfg, path) -> TimeSlicedGrid:
    grid = _read_grid(path)
    if grid.spec != cfg.spec:
        raise InputError(f"{path}: grid spec {spec_to_dict(grid.spec)} does not match the problem "
                         f"grid {spec_to_dict(cfg.spec)}")
    return grid


def _save(out, stem, grid, with_csv=True):
    save_grid(grid, os.path.join(out, stem + ".grid"))
    if with_csv:
        atomic_write(os.path.join(out, stem + ".csv"), grid_to_csv(grid))


def _header(cfg) -> dict:
    return {"problem": cfg.problem.name, "seed": cfg.seed, "grid": spec_to_dict(cfg.spec),
            "solver": cfg.solver}


# ---------------------------------------------------------------------------
# sampling shared by the checks


def commutation_samples(cfg, count: int, seed: int, tau_max: float) -> list[dict]:
    rng = np.random.default_rng(seed)
    xs = sample_states(cfg.spec.bounds, count, seed)
    P, Q, W = cfg.problem.P.points, cfg.problem.Q.points, cfg.aux.omega.points
    out = []
    for x in xs:
        tf, tg = rng.uniform(0.0, tau_max, size=2)
        out.append({"x": x, "tau_f": tf, "tau_g": tg,
                    "f_params": {"u": P[rng.integers(len(P))], "v": Q[rng.integers(len(Q))]},
                    "g_params": {"w": W[rng.integers(len(W))]}})
    return out


def _commute(cfg) -> tuple[float, dict, int]:
    c = cfg.checks
    samples = commutation_samples(cfg, c["commute_samples"], cfg.seed, c["tau_max"])
    res = check_flow_commutation(cfg.problem.f, cfg.aux.g, samples, cfg.solver["substeps"])
    worst = samples[res.argmax] if res.argmax >= 0 else None
    info = {"max_discrepancy": res.max_discrepancy, "tolerance": c["commute_tolerance"],
            "samples": len(samples)}
    if worst is not None:
        info["worst"] = {"x": worst["x"].tolist(), "tau_f": float(worst["tau_f"]),
                         "tau_g": float(worst["tau_g"]),
                         "f_params": {k: v.tolist() for k, v in worst["f_params"].items()},
                         "g_params": {k: v.tolist() for k, v in worst["g_params"].items()}}
    passed = res.max_discrepancy <= c["commute_tolerance"]
    return res.max_discrepancy, info, OK if passed else FAILED


def _bracket(cfg) -> tuple[float, dict, int]:
    c = cfg.checks
    n = c["bracket_samples"]
    rng = np.random.default_rng(cfg.seed)
    xs = sample_states(cfg.spec.bounds, n, cfg.seed)
    P, Q, W = cfg.problem.P.points, cfg.problem.Q.points, cfg.aux.omega.points
    pf = {"u": P[rng.integers(len(P), size=n)], "v": Q[rng.integers(len(Q), size=n)]}
    pg = {"w": W[rng.integers(len(W), size=n)]}
    norms = np.linalg.norm(lie_bracket(cfg.problem.f, cfg.aux.g, xs, pf, pg), axis=-1)
    worst = float(norms.max())
    info = {"max_bracket_norm": worst, "tolerance": c["bracket_tolerance"], "samples": n,
            "worst_x": xs[int(np.argmax(norms))].tolist()}
    return worst, info, OK if worst <= c["bracket_tolerance"] else FAILED


def _isaacs(cfg) -> tuple[float, dict, int]:
    n = cfg.isaacs["samples"]
    f = cfg.problem.f
    tol = cfg.isaacs.get("tolerance", default_tolerance(f))
    xs = sample_states(cfg.spec.bounds, n, cfg.seed)
    ss = default_directions(cfg.spec.ndim, n)
    rep = isaacs_gap(f, cfg.problem.P, cfg.problem.Q, xs, ss)
    info = {"samples": n, "tolerance": tol, "max_gap": rep.max_gap}
    worst = rep.max_gap
    if cfg.explicit_aux:
        tp = build_transformed(cfg.problem, cfg.aux)
        rs = isaacs_gap_transformed(tp, xs, ss)
        info["max_gap_transformed"] = rs.max_gap
        info["transformed_cases"] = {"f": rs.case.count("f"), "g": rs.case.count("g")}
        worst = max(worst, rs.max_gap)
    return worst, info, OK if worst <= tol else FAILED


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    cfg = _load(args.problem)
    timer = _Timer()
    s = cfg.solver
    with timer("target"):
        M = target_grid(cfg.problem, cfg.spec, s["mode"], s["substeps"])
    with timer("iteration"):
        res = programmed_iteration(cfg.problem, cfg.spec, s["max_iter"], s["mode"], M, s["substeps"],
                                   band=s["band"])
    with timer("export"):
        _save(args.out, "M", M, with_csv=False)
        _save(args.out, "W", res.grid)
        if not res.converged:
            _save(args.out, "W_last", res.grid)
            _save(args.out, "W_previous", res.previous)
    report = {**_header(cfg), "command": "solve", "converged": res.converged, "k": res.k,
              "sizes": res.sizes, "target_cells": M.count(), "slice_counts": res.grid.slice_counts(),
              "dropped_landings": res.dropped}
    _write_report(args.out, report, timer)
    if not res.converged:
        print(f"no fixed point within max_iter={s['max_iter']}; last two iterates written", file=sys.stderr)
        return NO_CONVERGENCE
    print(f"converged: k={res.k}, |W|={res.grid.count()}, sizes={res.sizes}")
    return OK


def cmd_transform_compare(args) -> int:
    cfg = _load(args.problem)
    if not cfg.explicit_aux and isinstance(cfg.problem.target, ExplicitGrid):
        raise InputError("transform-compare needs an auxiliary section or a cylinder target")
    if args.radius is None:
        args.radius = cfg.checks["radius"]
    timer = _Timer()
    s = cfg.solver
    report = {**_header(cfg), "command": "transform-compare", "radius": args.radius,
              "auxiliary": "explicit" if cfg.explicit_aux else "g=0"}
    with timer("precheck"):
        disc, info, status = _commute(cfg)
    report["precheck"] = info
    if status != OK:
        print(f"flows of f and g do not commute: max discrepancy {disc:.6g} "
              f"(tolerance {cfg.checks['commute_tolerance']:g})", file=sys.stderr)
        if not args.force:
            report["result"] = "hypothesis violated"
            _write_report(args.out, report, timer)
            return HYPOTHESIS
        print("--force given: comparing anyway", file=sys.stderr)
    if not cfg.explicit_aux:
        log.info("no auxiliary section: using g = 0 with Omega = {0}")
    tp = build_transformed(cfg.problem, cfg.aux)
    with timer("target"):
        M = target_grid(cfg.problem, cfg.spec, s["mode"], s["substeps"])
    with timer("direct"):
        rd = programmed_iteration(cfg.problem, cfg.spec, s["max_iter"], s["mode"], M, s["substeps"],
                                  record=True, band=s["band"])
    with timer("transformed"):
        rt = programmed_iteration(tp, cfg.spec, s["max_iter"], s["mode"], None, s["substeps"],
                                  record=True, band=s["band"])
    rows = []
    with timer("compare"):
        K = max(len(rd.history), len(rt.history))
        folder = os.path.join(args.out, "iterates")
        for k in range(K):
            a = rd.history[min(k, len(rd.history) - 1)]
            b = rt.history[min(k, len(rt.history) - 1)]
            c = compare_grids(a, b, args.radius)
            rows.append({"k": k, "size": a.count(), "size_star": b.count(),
                         "symmetric_difference": c.symmetric_difference,
                         "W_in_dilated_Wstar": c.a_in_dilated_b, "Wstar_in_dilated_W": c.b_in_dilated_a,
                         "mutual": c.mutual})
            save_grid(a, os.path.join(folder, f"W_{k}.grid"))
            save_grid(b, os.path.join(folder, f"Wstar_{k}.grid"))
        _save(args.out, "M", M, with_csv=False)
        _save(args.out, "W", rd.grid)
        _save(args.out, "Wstar", rt.grid)
    final = compare_grids(rd.grid, rt.grid, args.radius)
    occupied = max(1, rd.grid.count(), rt.grid.count())
    passed = all(r["mutual"] for r in rows)
    report.update({
        "per_k": rows, "direct": {"k": rd.k, "sizes": rd.sizes, "converged": rd.converged},
        "transformed": {"k": rt.k, "sizes": rt.sizes, "converged": rt.converged},
        "final_symmetric_difference": final.symmetric_difference,
        "final_symmetric_difference_fraction": final.symmetric_difference / occupied,
        "result": "pass" if passed else "fail",
    })
    _write_report(args.out, report, timer)
    for r in rows:
        print(f"k={r['k']:3d} |W|={r['size']:8d} |W*|={r['size_star']:8d} "
              f"symdiff={r['symmetric_difference']:6d} mutual@{args.radius}={r['mutual']}")
    print(f"headline: {'PASS' if passed else 'FAIL'}")
    if not (rd.converged and rt.converged):
        return NO_CONVERGENCE
    return OK if passed else FAILED


def cmd_check(args) -> int:
    cfg = _load(args.problem)
    timer = _Timer()
    which = args.which
    if which == "sections":
        if not args.grid:
            raise InputError("check sections needs --grid (an exported set)")
        E = _grid_for(cfg, args.grid)
        c = cfg.checks
        with timer(which):
            rep = decreasing_by_sections_check(E, cfg.aux, c["sections_samples"], cfg.seed,
                                               c["sections_tolerance"], cfg.solver["substeps"])
        value = len(rep)
        info = {"violations": value, "checked": rep.checked, "left_grid": rep.left_grid,
                "tolerance_cells": c["sections_tolerance"],
                "first": [v.__dict__ for v in rep.violations[:10]]}
        status = OK if value == 0 else FAILED
        print(f"sections: {value} violations over {rep.checked} landings")
    else:
        fn = {"commute": _commute, "bracket": _bracket, "isaacs": _isaacs}[which]
        with timer(which):
            value, info, status = fn(cfg)
        label = {"commute": "max discrepancy", "bracket": "max bracket norm", "isaacs": "max gap"}[which]
        print(f"{which}: {label} {value:.6g} ({'pass' if status == OK else 'fail'})")
    if args.out:
        _write_report(args.out, {**_header(cfg), "command": f"check {which}", which: info,
                                 "result": "pass" if status == OK else "fail"}, timer)
    return status


def _adversaries(cfg, names):
    out = {}
    for name in names:
        if name == "const":
            for v in cfg.problem.Q.points:
                out["const:" + ",".join(repr(float(c)) for c in v)] = ConstantAdversary(tuple(v))
        elif name == "lookahead":
            out[name] = "lookahead"
        else:
            raise InputError(f"simulate/adversaries: unknown adversary {name!r}")
    return out


def cmd_simulate(args) -> int:
    cfg = _load(args.problem)
    W = _grid_for(cfg, args.grid)
    timer = _Timer()
    sim, s = cfg.simulate, cfg.solver
    advs = _adversaries(cfg, sim["adversaries"])
    eps = capture_radius(cfg.spec, sim["eps_diagonals"])
    report = {**_header(cfg), "command": "simulate", "simulate": sim, "eps": eps}
    if W.count() == 0:
        print("warning: the bridge is empty; the trial report is vacuous", file=sys.stderr)
        report.update(vacuous=True, inside={}, outside={})
        _write_report(args.out, report, timer)
        return OK
    with timer("target"):
        M = target_grid(cfg.problem, cfg.spec, s["mode"], s["substeps"])
    inside = sample_starts(W, sim["starts"], cfg.seed, sim["margin"])
    outside = sample_starts(W, sim["starts"], cfg.seed + 1, sim["margin"], outside=True)
    with timer("inside"):
        rin, trin = run_trials(cfg.problem, W, M, inside, advs, sim["fineness"], eps,
                               substeps=s["substeps"], keep=args.trajectories)
    with timer("outside"):
        rout, trout = run_trials(cfg.problem, W, M, outside, {"lookahead": "lookahead"}, sim["fineness"],
                                 eps, substeps=s["substeps"], keep=args.trajectories)
    atomic_write(os.path.join(args.out, "trials_inside.csv"), _trials_csv(rin))
    atomic_write(os.path.join(args.out, "trials_outside.csv"), _trials_csv(rout))
    if args.trajectories:
        for tag, trs in (("inside", trin), ("outside", trout)):
            for tr in trs:
                body = "t," + ",".join(f"x{i + 1}" for i in range(cfg.spec.ndim)) + "\n"
                body += "".join(",".join(map(repr, row)) + "\n" for row in tr.to_rows())
                name = f"{tag}_{tr.meta['adversary'].replace(':', '_').replace(',', '_')}_{tr.meta['start']}.csv"
                atomic_write(os.path.join(args.out, "trajectories", name), body)
    fin = {f"{a}@{h!r}": v for (a, h), v in rin.fractions().items()}
    fout = {f"{a}@{h!r}": 1.0 - v for (a, h), v in rout.fractions().items()}
    report.update({
        "vacuous": False,
        "inside": {"starts": len(inside), "success_fraction": fin, "expected_at_least": 0.95,
                   "dropped": sum(r.exit_reason is not None for r in rin.records)},
        "outside": {"starts": len(outside), "prevented_fraction": fout, "expected_at_least": 0.8,
                    "dropped": sum(r.exit_reason is not None for r in rout.records)},
        "note": "thresholds are soft allowances for the grid and partition discretization",
    })
    _write_report(args.out, report, timer)
    for k, v in fin.items():
        print(f"inside  {k}: success {v:.3f}")
    for k, v in fout.items():
        print(f"outside {k}: prevented {v:.3f}")
    return OK


def _trials_csv(rep) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["start", "adversary", "fineness", "success", "capture_time", "exit_reason"])
    for r in rep.records:
        w.writerow([r.start, r.adversary, repr(r.fineness), int(r.success),
                    "" if r.capture_time is None else repr(r.capture_time), r.exit_reason or ""])
    return buf.getvalue()


def _slices(text: str, N: int) -> list[int]:
    if text == "all":
        return list(range(N + 1))
    try:
        out = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise InputError(f"--slices: expected comma separated integers or 'all', got {text!r}") from None
    bad = [i for i in out if not 0 <= i <= N]
    if bad:
        raise InputError(f"--slices: {bad} outside 0..{N}")
    return out


def cmd_export_plot(args) -> int:
    grid = _read_grid(args.grid)
    body = boundary_csv(grid, _slices(args.slices, grid.spec.time_steps))
    if args.out:
        atomic_write(args.out, body)
    else:
        sys.stdout.write(body)
    return OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gamebridge", description="Programmed iteration for approach games.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, help=f"worker threads (also ${THREADS_ENV})")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("solve", help="run the programmed iteration and export W")
    q.add_argument("problem")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_solve)

    q = sub.add_parser("transform-compare", help="compare W_k with the transformed game's W*_k")
    q.add_argument("problem")
    q.add_argument("--out", required=True)
    q.add_argument("--radius", type=int, help="dilation radius for mutual inclusion (default: checks.radius)")
    q.add_argument("--force", action="store_true", help="compare even if the flows do not commute")
    q.set_defaults(func=cmd_transform_compare)

    q = sub.add_parser("check", help="commute | bracket | isaacs | sections")
    q.add_argument("which", choices=["commute", "bracket", "isaacs", "sections"])
    q.add_argument("problem")
    q.add_argument("--grid", help="exported set (sections only)")
    q.add_argument("--out")
    q.set_defaults(func=cmd_check)

    q = sub.add_parser("simulate", help="extremal-shift trials from inside and outside W")
    q.add_argument("problem")
    q.add_argument("--grid", required=True, help="W artifact from solve")
    q.add_argument("--out", required=True)
    q.add_argument("--trajectories", action="store_true", help="also write one CSV per trial")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("export-plot", help="boundary cells of selected slices as CSV")
    q.add_argument("grid")
    q.add_argument("--slices", default="0")
    q.add_argument("--out")
    q.set_defaults(func=cmd_export_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        os.environ[THREADS_ENV] = str(args.threads)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INPUT


if __name__ == "__main__":
    sys.exit(main())
