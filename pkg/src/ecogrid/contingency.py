"""N-x contingency sweep: remove every x-subset of active branches, re-solve
the DC power flow, and count branch overload instances.

Scenario evaluations are pure functions of immutable inputs and aggregate by
commutative sums, so results are identical for any worker count.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .model import Network
from .powerflow import SingularNetworkError, check_limits, solve_dc

POLICY_FIXED = "fixed-dispatch"
POLICY_REDISPATCH = "redispatch-slack"


@dataclass(frozen=True)
class ContingencyReport:
    x: int
    scenarios: int
    islanded_scenarios: int
    unsolved_scenarios: int
    violation_count: int
    worst: tuple[tuple[str, float], ...]  # (scenario label, worst overload MW over limit)

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "scenarios": self.scenarios,
            "islanded_scenarios": self.islanded_scenarios,
            "unsolved_scenarios": self.unsolved_scenarios,
            "violation_count": self.violation_count,
            "worst": [list(w) for w in self.worst],
        }


def _without_branches(net: Network, drop: tuple[int, ...]) -> Network:
    active = net.active_branches
    kept = tuple(br for k, br in enumerate(active) if k not in drop)
    return replace(net, branches=kept + net.candidate_branches)


def _scenario_label(net: Network, drop: tuple[int, ...]) -> str:
    active = net.active_branches
    return "+".join(f"{active[k].from_bus}-{active[k].to_bus}#{active[k].ordinal}" for k in drop)


def _evaluate(net: Network, dispatch: np.ndarray, drop: tuple[int, ...], policy: str,
              ) -> tuple[str, str, int, float]:
    """One outage scenario: (label, kind, overload instances, worst excess MW).

    kind is "ok", "islanded" (load cut off from the slack component), or
    "unsolved" (singular subnetwork).
    """
    label = _scenario_label(net, drop)
    sub = _without_branches(net, drop)
    try:
        sol = solve_dc(sub, dispatch, require_balance=False)
    except SingularNetworkError:
        return label, "unsolved", 0, 0.0
    if sol.any_islanded:
        lost_load = any(
            b.p_load > 0 and sol.islanded[i] for i, b in enumerate(sub.buses)
        )
        if lost_load:
            return label, "islanded", 0, 0.0
    if policy == POLICY_REDISPATCH:
        # Rescale surviving generation to the surviving load, then re-solve.
        served = sum(b.p_load for i, b in enumerate(sub.buses) if not sol.islanded[i])
        avail = np.array([
            0.0 if sol.islanded[sub.bus_index(g.bus)] else dispatch[k]
            for k, g in enumerate(sub.generators)
        ])
        if avail.sum() > 0:
            scaled = avail * (served * sub.base_mva / avail.sum())
            sol = solve_dc(sub, scaled, require_balance=False)
    violations = check_limits(sub, sol).branch_overloads
    worst = max((flow - limit for _, flow, limit in violations), default=0.0)
    return label, "ok", len(violations), worst


def _evaluate_chunk(args) -> list[tuple[str, str, int, float]]:
    net, dispatch, drops, policy = args
    return [_evaluate(net, dispatch, d, policy) for d in drops]


def run_contingencies(net: Network, dispatch: np.ndarray, x: int,
                      policy: str = POLICY_FIXED, jobs: int = 1,
                      top_k: int = 5) -> ContingencyReport:
    """Sweep all x-subsets of active branches and tally overload instances.

    `dispatch` is the base-case MW generation; under the default
    fixed-dispatch policy it is held and the slack absorbs any imbalance,
    while redispatch-slack rescales surviving units to the surviving load.
    Scenarios that island load are excluded from overload counting and
    reported separately. Overload instances are summed across scenarios.
    """
    active = net.active_branches
    m = len(active)
    if not (1 <= x < m):
        raise ValueError(f"outage depth x={x} must satisfy 1 <= x < {m}")
    if policy not in (POLICY_FIXED, POLICY_REDISPATCH):
        raise ValueError(f"unknown policy {policy!r}")
    base = solve_dc(net, dispatch, require_balance=False)
    if base.any_islanded and any(
        b.p_load > 0 and base.islanded[i] for i, b in enumerate(net.buses)
    ):
        raise ValueError("base case does not serve all load; contingency sweep refused")

    dispatch = np.asarray(dispatch, dtype=float)
    combos = list(itertools.combinations(range(m), x))
    if jobs > 1 and len(combos) > jobs:
        chunk = max(1, math.ceil(len(combos) / (jobs * 4)))
        tasks = [(net, dispatch, combos[i:i + chunk], policy)
                 for i in range(0, len(combos), chunk)]
        results = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for part in pool.map(_evaluate_chunk, tasks):
                results.extend(part)
    else:
        results = [_evaluate(net, dispatch, d, policy) for d in combos]

    islanded = sum(1 for _, kind, _, _ in results if kind == "islanded")
    unsolved = sum(1 for _, kind, _, _ in results if kind == "unsolved")
    count = sum(c for _, kind, c, _ in results if kind == "ok")
    worst = sorted(
        ((label, excess) for label, kind, _, excess in results if kind == "ok" and excess > 0),
        key=lambda t: (-t[1], t[0]),
    )[:top_k]
    return ContingencyReport(x=x, scenarios=len(combos), islanded_scenarios=islanded,
                             unsolved_scenarios=unsolved, violation_count=count,
                             worst=tuple(worst))


def compare_designs(reports: list[tuple[str, list[ContingencyReport]]]) -> dict:
    """Tabulate several designs' contingency tallies side by side.

    Every entry must cover the same sequence of outage depths; the result
    maps cleanly onto CSV or JSON emission.
    """
    if not reports:
        raise ValueError("no reports to compare")
    xs = [tuple(r.x for r in per_x) for _, per_x in reports]
    if len(set(xs)) != 1:
        raise ValueError(f"mismatched x ranges across designs: {xs}")
    rows = []
    for label, per_x in reports:
        row: dict = {"design": label}
        for r in per_x:
            row[f"n_{r.x}_violations"] = r.violation_count
            row[f"n_{r.x}_islanded"] = r.islanded_scenarios
        rows.append(row)
    return {"x_levels": list(xs[0]), "rows": rows}


def comparison_csv(table: dict) -> str:
    xs = table["x_levels"]
    header = ["design"] + [f"n_{x}_violations" for x in xs] + [f"n_{x}_islanded" for x in xs]
    lines = [",".join(header)]
    for row in table["rows"]:
        lines.append(",".join(str(row[h]) for h in header))
    return "\n".join(lines) + "\n"
