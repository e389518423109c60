"""Command-line front-end: power flow, robustness, design optimization,
contingency sweeps, robustness curve, and design comparison.

Exit codes: 0 success, 1 domain infeasibility (violations found or no
feasible design), 2 usage or parse errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, contingency, design, ecometrics, powerflow
from .model import CaseFormatError, Network, ValidationError, apply_topology, load_case

log = logging.getLogger("ecogrid")


def _json_dump(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _write(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _load(args) -> Network:
    return load_case(args.case, format=args.format)


def resolve_dispatch(net: Network, spec: str) -> np.ndarray:
    """Turn a --dispatch flag into an MW vector balanced against total load.

    "base" scales the case file's set points to the total load; against a
    file path, a JSON list of per-generator MW is read verbatim;
    "proportional" shares the load by capacity.
    """
    base = net.base_mva
    load = net.total_load() * base
    if spec == "proportional":
        cap = np.array([g.p_max for g in net.generators]) * base
        if cap.sum() <= 0:
            raise ValueError("no generation capacity")
        return load * cap / cap.sum()
    if spec == "base":
        p = np.array([(g.p_set if g.p_set is not None else g.p_max) for g in net.generators]) * base
        if p.sum() <= 0:
            raise ValueError("case has no base dispatch")
        return p * (load / p.sum())
    p = np.asarray(json.loads(Path(spec).read_text()), dtype=float)
    if len(p) != len(net.generators):
        raise ValueError(f"dispatch file has {len(p)} entries for {len(net.generators)} generators")
    return p


def _cmd_pf(args) -> int:
    net = _load(args)
    dispatch = resolve_dispatch(net, args.dispatch)
    if args.model == "dc":
        sol = powerflow.solve_dc(net, dispatch, require_balance=False)
        violations = powerflow.check_limits(net, sol)
        out = {
            "model": "dc",
            "theta_rad": sol.theta.tolist(),
            "p_flow_mw": sol.p_flow.tolist(),
            "p_gen_mw": sol.p_gen.tolist(),
            "slack_bus": sol.slack_bus,
            "islanded_buses": [b.id for i, b in enumerate(net.buses) if sol.islanded[i]],
            "violations": violations.to_dict(),
        }
    else:
        sol = powerflow.solve_ac(net, dispatch)
        if not sol.converged:
            _json_dump({"model": "ac", "converged": False, "iterations": sol.iterations,
                        "mismatch": sol.mismatch}, args.out)
            return 1
        violations = powerflow.check_limits(net, sol)
        out = {
            "model": "ac",
            "converged": True,
            "iterations": sol.iterations,
            "v_mag_pu": sol.v_mag.tolist(),
            "v_ang_rad": sol.v_ang.tolist(),
            "p_flow_pu": sol.p_flow.tolist(),
            "q_flow_pu": sol.q_flow.tolist(),
            "p_loss_pu": sol.p_loss.tolist(),
            "p_loss_i2r_pu": sol.p_loss_i2r.tolist(),
            "violations": violations.to_dict(),
        }
    _json_dump(out, args.out)
    return 0 if violations.empty else 1


def _cmd_robustness(args) -> int:
    net = _load(args)
    dispatch = resolve_dispatch(net, args.dispatch)
    sol = powerflow.solve_dc(net, dispatch, require_balance=False)
    op = powerflow.dc_operating_point(net, sol)
    efm = ecometrics.build_ecoflow_matrix(net, op)
    report = ecometrics.robustness(efm)
    if args.efm_csv:
        Path(args.efm_csv).write_text(efm.to_csv())
    _json_dump(report.to_dict(), args.out)
    return 0


def _cmd_optimize(args) -> int:
    net = _load(args)
    settings = design.NlpSettings(tolerance=args.tol, time_limit=args.time_limit,
                                  multistart=args.multistart)
    prob = design.DesignProblem(net=net, model=args.model,
                                candidate_budget=args.budget, nlp=settings)
    sol = design.optimize_design(prob, seed=args.seed)
    log.info("optimize finished: status=%s wall=%.3fs", sol.status, sol.wall_time)
    # Wall time stays out of the report file so identical seeds give
    # byte-identical reports.
    out = {
        "case": str(args.case),
        "model": args.model,
        "seed": args.seed,
        "status": sol.status,
        "optimal_r": None if sol.report is None else sol.report.r,
        "new_branches": sol.new_branch_labels(net),
        "alpha": {str(k): v for k, v in sorted(sol.alpha.items())},
        "dispatch_mw": None if sol.p_gen is None else [round(v, 9) for v in sol.p_gen],
        "report": None if sol.report is None else sol.report.to_dict(),
        "enumeration": [
            {"alpha": list(t.alpha), "feasible": t.feasible,
             "r": None if not t.feasible else t.r}
            for t in sol.enumeration
        ],
    }
    _json_dump(out, args.out)
    sys.stderr.write(f"status={sol.status} wall_time_sec={sol.wall_time:.3f}\n")
    return 0 if sol.status == design.STATUS_SOLVED else 1


def _design_network(net: Network, report_path: str) -> tuple[Network, np.ndarray]:
    doc = json.loads(Path(report_path).read_text())
    alpha = {int(k): int(v) for k, v in doc["alpha"].items()}
    dispatch = np.asarray(doc["dispatch_mw"], dtype=float)
    return apply_topology(net, alpha), dispatch


def _cmd_contingency(args) -> int:
    net = _load(args)
    if args.design:
        net, dispatch = _design_network(net, args.design)
    else:
        dispatch = resolve_dispatch(net, args.dispatch)
    reports = [
        contingency.run_contingencies(net, dispatch, x, policy=args.policy, jobs=args.jobs)
        for x in args.x
    ]
    out = [r.to_dict() for r in reports]
    if args.out_format == "csv":
        lines = ["x,scenarios,islanded_scenarios,unsolved_scenarios,violation_count"]
        for r in reports:
            lines.append(f"{r.x},{r.scenarios},{r.islanded_scenarios},"
                         f"{r.unsolved_scenarios},{r.violation_count}")
        _write("\n".join(lines) + "\n", args.out)
    else:
        _json_dump(out, args.out)
    return 0


def _cmd_curve(args) -> int:
    points = ecometrics.robustness_curve(args.samples)
    lines = ["ratio,robustness"] + [f"{x:.12g},{r:.12g}" for x, r in points]
    _write("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_compare(args) -> int:
    net = _load(args)
    entries: list[tuple[str, list[contingency.ContingencyReport]]] = []
    if args.include_base:
        dispatch = resolve_dispatch(net, args.dispatch)
        entries.append(("original", [
            contingency.run_contingencies(net, dispatch, x, policy=args.policy, jobs=args.jobs)
            for x in args.x
        ]))
    for item in args.design:
        if "=" not in item:
            raise ValueError(f"--design expects LABEL=REPORT.json, got {item!r}")
        label, path = item.split("=", 1)
        designed, dispatch = _design_network(net, path)
        entries.append((label, [
            contingency.run_contingencies(designed, dispatch, x, policy=args.policy, jobs=args.jobs)
            for x in args.x
        ]))
    table = contingency.compare_designs(entries)
    if args.out_format == "csv":
        _write(contingency.comparison_csv(table), args.out)
    else:
        _json_dump(table, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecogrid",
        description="Bio-inspired robust transmission network design and analysis.",
    )
    parser.add_argument("--version", action="version", version=f"ecogrid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_case(p):
        p.add_argument("case", help="case file path")
        p.add_argument("--format", choices=["native-json", "matpower-subset"],
                       default="native-json", help="case file format")

    p = sub.add_parser("pf", help="solve a power flow and screen limits")
    add_case(p)
    p.add_argument("--model", choices=["dc", "ac"], default="dc")
    p.add_argument("--dispatch", default="base",
                   help="'base', 'proportional', or a JSON file of MW values")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_pf)

    p = sub.add_parser("robustness", help="robustness report for an operating point")
    add_case(p)
    p.add_argument("--dispatch", default="base")
    p.add_argument("--efm-csv", help="also write the labeled flow matrix as CSV")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("optimize", help="design the topology maximizing robustness")
    add_case(p)
    p.add_argument("--model", choices=["dc"], default="dc")
    p.add_argument("--budget", type=int, default=None, help="max candidate branches to build")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--time-limit", type=float, default=1500.0)
    p.add_argument("--multistart", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("contingency", help="N-x outage sweep with overload tallies")
    add_case(p)
    p.add_argument("--x", type=int, nargs="+", default=[1], help="outage depths")
    p.add_argument("--policy", choices=[contingency.POLICY_FIXED, contingency.POLICY_REDISPATCH],
                   default=contingency.POLICY_FIXED)
    p.add_argument("--design", help="optimize report JSON selecting the topology/dispatch")
    p.add_argument("--dispatch", default="base")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out")
    p.add_argument("--out-format", choices=["json", "csv"], default="json")
    p.set_defaults(func=_cmd_contingency)

    p = sub.add_parser("curve", help="tabulate the robustness curve -x ln x")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_curve)

    p = sub.add_parser("compare", help="contingency comparison across designs")
    add_case(p)
    p.add_argument("--x", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--design", action="append", default=[],
                   help="LABEL=REPORT.json, repeatable")
    p.add_argument("--include-base", action="store_true",
                   help="also sweep the un-designed network")
    p.add_argument("--dispatch", default="base")
    p.add_argument("--policy", choices=[contingency.POLICY_FIXED, contingency.POLICY_REDISPATCH],
                   default=contingency.POLICY_FIXED)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out")
    p.add_argument("--out-format", choices=["json", "csv"], default="json")
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("ECOGRID_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CaseFormatError, ValidationError, json.JSONDecodeError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    except ValueError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
