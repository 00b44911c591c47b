"""Command-line front end.

    multimode-mrta simulate --scenario <path|name> --out <dir> [--dt S] [--t-end S]
                            [--check-certificates] [--cert-sample-hz F]
    multimode-mrta validate --scenario <path|name>
    multimode-mrta certify  --scenario <path|name> --at <t>

A scenario argument that is not an existing file is looked up among the
bundled scenarios (``single_uav``, ``band_mud``).

Exit codes: 0 success, 1 validation failure, 2 solver infeasibility, 3 I/O.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .scenario import Scenario, ScenarioError, bundled_scenario_path, load_scenario

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INFEASIBLE = 2
EXIT_IO = 3

log = logging.getLogger("multimode_mrta")


def _load(arg: str) -> Scenario:
    path = Path(arg)
    if not path.exists() and path.suffix == "" and "/" not in arg:
        bundled = bundled_scenario_path(arg)
        if bundled.exists():
            path = bundled
    return load_scenario(path)


def _overrides(sc: Scenario, args) -> Scenario:
    changes = {}
    if getattr(args, "dt", None) is not None:
        changes["dt"] = args.dt
    if getattr(args, "t_end", None) is not None:
        changes["t_end"] = args.t_end
    if getattr(args, "cert_sample_hz", None) is not None:
        changes["cert_sample_hz"] = args.cert_sample_hz
    return sc.with_params(**changes) if changes else sc


def cmd_simulate(args) -> int:
    from .simulation import run_simulation
    from .traceio import export_traces, summary_text

    sc = _overrides(_load(args.scenario), args)
    trace = run_simulation(sc, check_certificates=args.check_certificates)
    export_traces(trace, args.out, sc.params.completion_radius)
    print(summary_text(trace, sc.params.completion_radius), end="")
    if not trace.complete:
        log.error("simulation stopped early: %s", trace.error)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    n_vr = sum(len(r.modes) for r in sc.robots)
    print(f"{sc.name}: {len(sc.robots)} robots, {n_vr} modes, {len(sc.tasks)} tasks, "
          f"{len(sc.restrictions)} restrictions - ok")
    return EXIT_OK


def cmd_certify(args) -> int:
    from .convergence import certify_step
    from .qp import OPTIMAL
    from .simulation import Simulator, StepError

    sc = _load(args.scenario)
    if args.at < 0:
        raise ScenarioError("--at must be non-negative", "--at")
    sim = Simulator(sc)
    trace = sim.run(until=args.at)
    if not trace.complete:
        log.error("%s", trace.error)
        return EXIT_INFEASIBLE
    states = trace.final_states
    problem = sim.build_problem(states)
    solution = sim.solver.solve(problem)
    if solution.status != OPTIMAL:
        log.error("allocation %s at t=%s", solution.status, args.at)
        return EXIT_INFEASIBLE
    rec = certify_step(sc, states, problem, solution)
    t = len(trace.records) * sc.params.dt
    print(f"t = {t:.4f} s")
    print(f"proposition: {rec.proposition}")
    print("tau: " + ", ".join(f"{x:.6g}" for x in rec.tau))
    print(f"margin: {rec.margin:.6g}")
    print(f"feasible: {rec.feasible}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multimode-mrta",
                                 description="Multi-mode multi-robot task allocation simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write CSV traces")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--check-certificates", action="store_true")
    p.add_argument("--cert-sample-hz", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="parse and validate a scenario")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("certify", help="one-shot certificate report at time t")
    p.add_argument("--scenario", required=True)
    p.add_argument("--at", type=float, required=True)
    p.set_defaults(func=cmd_certify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
