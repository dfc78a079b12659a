"""Command-line front end.

``avgctl check|steer|average|track|optimize <scenario.json> [flags]``

Exit codes: 0 pass, 1 verification failed, 2 input error, 3 numerical
failure. The environment variable ``AVGCTL_SEED`` overrides the scenario
seed.
"""

import argparse
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    BoundViolation,
    DimensionError,
    DomainError,
    EvaluationError,
    NumericalFailure,
    RankError,
    ScheduleInfeasible,
    SchemaError,
)
from .linops import gramian, kalman_rank
from .model import FastSystem, load_scenario, validate_declared_bounds

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3

SEED_ENV = "AVGCTL_SEED"


def exit_code_for(exc):
    """Exit code for an exception raised while running a command."""
    if isinstance(exc, (RankError, BoundViolation)):
        return EXIT_FAIL
    if isinstance(exc, (SchemaError, DomainError, DimensionError, FileNotFoundError)):
        return EXIT_INPUT
    if isinstance(exc, (NumericalFailure, ScheduleInfeasible, EvaluationError)):
        return EXIT_NUMERIC
    raise exc


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_atomic(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _load(path, validate=True):
    scenario = load_scenario(path, validate=validate)
    seed = os.environ.get(SEED_ENV)
    if seed is not None:
        try:
            scenario = scenario.replace(seed=int(seed))
        except ValueError:
            raise SchemaError(f"{SEED_ENV} must be an integer, got {seed!r}") from None
    return scenario


def _vector_arg(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _list_arg(text):
    return [float(v) for v in _vector_arg(text)]


def _manifest(command, scenario_path, params, seed, out_dir, started, status):
    return {
        "command": command,
        "scenario": str(scenario_path),
        "parameters": params,
        "seed": seed,
        "out": str(out_dir),
        "wall_time": time.time() - started,
        "exit_status": status,
        "version": __version__,
    }


# check --------------------------------------------------------------------


def cmd_check(args):
    scenario = _load(args.scenario, validate=False)
    fast, slow = scenario.fast, scenario.slow
    print(f"rank {kalman_rank(fast.A, fast.B)}/{fast.m}")
    cond = gramian(fast.A, fast.B, scenario.S).cond_estimate
    print(f"gramian condition at tau=S={scenario.S:g}: {cond:.3e}")
    report = validate_declared_bounds(
        slow,
        samples=scenario.validation_samples,
        seed=scenario.seed,
        z0=scenario.z0,
        T=scenario.T,
        raise_on_fail=False,
    )
    print(
        f"bounds: max|g|={report.max_norm:.6g} (M_g={slow.M_g:g}), "
        f"max dg/dy={report.max_quotient_y:.6g} (L_y={slow.L_y:g}), "
        f"max dg/dz={report.max_quotient_z:.6g} (L_z={slow.L_z:g}) over {report.samples} samples"
    )
    for v in report.violations:
        print(f"violation: {v}")
    print("PASS" if report.passed else "FAIL")
    return EXIT_PASS if report.passed else EXIT_FAIL


# steer --------------------------------------------------------------------


def cmd_steer(args):
    from .steer import steer_and_check, steering_gain

    started = time.time()
    scenario = _load(args.scenario)
    fast = scenario.fast
    y_from = fast.y0 if args.y_from is None else args.y_from
    y_to = scenario.slow.y_box.hi if args.y_to is None else args.y_to
    tau = scenario.S if args.tau is None else args.tau
    step = min(scenario.fast_step(), tau / 10.0) if args.step is None else args.step
    seg = steering_gain(fast.A, fast.B, y_from, y_to, tau)
    miss = steer_and_check(fast.A, fast.B, seg, step)
    exact = float(np.linalg.norm(seg.predicted_endpoint() - seg.y_to))
    passed = miss <= args.tol
    report = {
        "y_from": seg.y_from.tolist(),
        "y_to": seg.y_to.tolist(),
        "tau": tau,
        "rk4_step": step,
        "xi": seg.xi.tolist(),
        "gramian_cond": seg.cond,
        "endpoint_error": miss,
        "propagator_endpoint_error": exact,
        "tolerance": args.tol,
        "pass": passed,
    }
    print(f"steer {seg.y_from.tolist()} -> {seg.y_to.tolist()} in tau={tau:g}: endpoint error {miss:.3e}")
    print("PASS" if passed else "FAIL")
    status = EXIT_PASS if passed else EXIT_FAIL
    _write_outputs(args, "steer", {"steer.json": _dump_json(report)}, scenario,
                   {"tau": tau, "rk4_step": step}, started, status)
    return status


# average ------------------------------------------------------------------


def cmd_average(args):
    from .average import auto_delta, build_schedule, realize_average
    from .hull import caratheodory_reduce, project, sample_atoms

    started = time.time()
    scenario = _load(args.scenario)
    fast, slow = scenario.fast, scenario.slow
    z = scenario.z0 if args.z is None else args.z
    S = scenario.S if args.S is None else args.S
    P = sample_atoms(slow, z, scenario.atoms_per_axis, scenario.seed)
    if args.target is not None:
        w = args.target
    elif scenario.reference.kind == "constant_derivative":
        w = np.array(scenario.reference.value)
    else:
        w = P.G.mean(axis=0)
    v, comb, dist = project(w, P)
    comb = caratheodory_reduce(comb, P.G)
    tol = scenario.epsilon * S
    if args.delta is not None:
        delta = args.delta
    elif scenario.delta == "auto":
        delta = auto_delta(slow, S, comb.weights, tol)
    else:
        delta = float(scenario.delta)
    sched = build_schedule(comb, P, fast.y0, S, delta, fast, scenario.tau_min)
    res = realize_average(sched, fast, slow, z, scenario.fast_step(S))
    passed = res.error <= res.bound
    report = {
        "target": np.atleast_1d(w).tolist(),
        "projection": v.tolist(),
        "projection_dist": dist,
        "achieved_average": res.achieved_average.tolist(),
        "error": res.error,
        "bound": res.bound,
        "delta": delta,
        "S": S,
        "support": len(comb),
        "atoms": [
            {"u": u.tolist(), "y": y.tolist(), "g": g.tolist(), "weight": float(lam)}
            for u, y, g, lam in zip(sched.atom_u, sched.atom_y, sched.atom_g, sched.weights)
        ],
        "hold_drift": res.hold_drift.tolist(),
        "segments": len(res.control.segments),
        "pass": passed,
    }
    print(f"average target {report['target']} -> projection {v.tolist()} (dist {dist:.3g})")
    print(f"achieved {res.achieved_average.tolist()}: error {res.error:.3e} <= bound {res.bound:.3e}: {passed}")
    print("PASS" if passed else "FAIL")
    status = EXIT_PASS if passed else EXIT_FAIL
    files = {"average.json": _dump_json(report), "schedule.json": _dump_json(sched.to_json())}
    _write_outputs(args, "average", files, scenario, {"S": S, "delta": delta}, started, status)
    return status


# track --------------------------------------------------------------------


def _with_epsilon(scenario, eps):
    fast = scenario.fast
    return scenario.replace(fast=FastSystem(eps, fast.A, fast.B, fast.y0))


def _track_run(job):
    """One tracking run; executed in a worker process for sweeps."""
    from .track import OUTPUT_FRACTION, build_reference, synthesize, write_trajectory_csv

    scenario_path, seed_env, S, eps, out_dir = job
    started = time.time()
    if seed_env is not None:
        os.environ[SEED_ENV] = seed_env
    try:
        scenario = _load(scenario_path, validate=False)
        if eps is not None:
            scenario = _with_epsilon(scenario, eps)
        eps = scenario.epsilon
        zref = build_reference(scenario, S)
        program, traj, report = synthesize(scenario, zref, S=S)
    except Exception as exc:  # mapped to an exit code by the parent
        code = exit_code_for(exc)
        return {"S": S, "eps": eps, "status": code, "error": f"{type(exc).__name__}: {exc}"}
    status = EXIT_PASS if report.passed else EXIT_FAIL
    summary = {
        "S": S,
        "eps": eps,
        "status": status,
        "sup_error": report.sup_error,
        "bound_paper": report.bound_paper,
        "bound_limit": report.bound_limit,
        "max_projection_dist": report.max_projection_dist,
        "reasons": report.reasons,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(out / "trajectory.csv", traj, program, zref, eps * S / OUTPUT_FRACTION)
        (out / "report.json").write_text(_dump_json(report.to_dict()))
        params = {"S": S, "eps": eps, "h_fast": scenario.fast_step(S), "delta": scenario.delta,
                  "T": scenario.T, "atoms_per_axis": scenario.atoms_per_axis}
        _write_atomic(out / "manifest.json",
                      _dump_json(_manifest("track", scenario_path, params, scenario.seed, out, started, status)))
    return summary


def cmd_track(args):
    scenario = _load(args.scenario)
    base_S = args.S if args.S is not None else scenario.S
    S_list = args.sweep if args.sweep else [base_S]
    eps0 = scenario.epsilon
    runs = []
    for S in S_list:
        if args.eps_sweep:
            for eps in args.eps_sweep:
                runs.append((S * eps0 / eps, eps))
        else:
            runs.append((S, None))
    from .track import make_partition

    for S, eps in runs:  # surface range errors before any work starts
        make_partition(scenario.T, eps if eps is not None else eps0, S)

    def run_dir(S, eps):
        if args.out is None:
            return None
        if len(runs) == 1:
            return args.out
        return os.path.join(args.out, f"S{S:g}_eps{eps if eps is not None else eps0:g}")

    seed_env = os.environ.get(SEED_ENV)
    jobs = [(args.scenario, seed_env, S, eps, run_dir(S, eps)) for S, eps in runs]
    workers = min(args.jobs or os.cpu_count() or 1, len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_track_run, jobs))
    else:
        results = [_track_run(j) for j in jobs]

    worst = EXIT_PASS
    for r in results:
        if "error" in r:
            print(f"S={r['S']:g} eps={r['eps']}: ERROR {r['error']}")
        else:
            bp = r["bound_paper"]
            bound = bp if math.isfinite(bp) else r["bound_limit"]
            verdict = "PASS" if r["status"] == EXIT_PASS else "FAIL " + "; ".join(r["reasons"])
            print(
                f"S={r['S']:g} eps={r['eps']:g}: sup_error={r['sup_error']:.6g} "
                f"bound_paper={bp:.6g} bound_limit={r['bound_limit']:.6g} "
                f"(checked against {bound:.6g}) {verdict}"
            )
        worst = max(worst, r["status"])
    return worst


# optimize -----------------------------------------------------------------


def cmd_optimize(args):
    from .relax import corollary_compare

    started = time.time()
    scenario = _load(args.scenario)
    S = scenario.S if args.S is None else args.S
    rep = corollary_compare(scenario, S=S, pieces=args.pieces, budget=args.budget)
    print(f"G_hat_star={rep.G_hat_star:.9g} G_hat_eps={rep.G_hat_eps:.9g}")
    print(f"gap={rep.gap:.3e} budget={rep.budget:.3e} ordering={'ok' if rep.ordering_ok else 'violated'}")
    print("PASS" if rep.passed else "FAIL")
    status = EXIT_PASS if rep.passed else EXIT_FAIL
    params = {"S": S, "pieces": args.pieces, "budget": args.budget}
    _write_outputs(args, "optimize", {"corollary.json": _dump_json(rep.to_dict())}, scenario, params,
                   started, status)
    return status


def _write_outputs(args, command, files, scenario, params, started, status):
    if args.out is None:
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
    _write_atomic(out / "manifest.json",
                  _dump_json(_manifest(command, args.scenario, params, scenario.seed, out, started, status)))


# entry point --------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="avgctl", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"avgctl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="rank condition, Gramian conditioning, declared bounds")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("steer", help="minimum-energy steering of the fast subsystem")
    p.add_argument("scenario")
    p.add_argument("--from", dest="y_from", type=_vector_arg, help="start state (default y0)")
    p.add_argument("--to", dest="y_to", type=_vector_arg, help="target state (default y_box hi corner)")
    p.add_argument("--tau", type=float, help="steering time (default S)")
    p.add_argument("--step", type=float, help="RK4 step for the endpoint check")
    p.add_argument("--tol", type=float, default=1e-6, help="endpoint error tolerance")
    p.add_argument("--out")
    p.set_defaults(func=cmd_steer)

    p = sub.add_parser("average", help="realise a hull point as a time average")
    p.add_argument("scenario")
    p.add_argument("--target", type=_vector_arg, help="velocity to realise (default: reference value)")
    p.add_argument("--z", type=_vector_arg, help="frozen slow state (default z0)")
    p.add_argument("--S", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("track", help="track the reference with the coupled system")
    p.add_argument("scenario")
    p.add_argument("--S", type=float)
    p.add_argument("--out")
    p.add_argument("--sweep", type=_list_arg, help="comma-separated S values")
    p.add_argument("--eps-sweep", type=_list_arg, help="comma-separated epsilons at fixed eps*S")
    p.add_argument("--jobs", type=int, help="parallel runs (default: logical cores)")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("optimize", help="relaxed optimum versus the coupled system's value")
    p.add_argument("scenario")
    p.add_argument("--S", type=float)
    p.add_argument("--pieces", type=int, default=4)
    p.add_argument("--budget", type=int, default=4000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_optimize)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_PASS
    try:
        return args.func(args)
    except Exception as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
