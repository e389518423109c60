"""Robust-topology design: maximize ecological robustness over candidate
branch selections and generator dispatch under DC power-flow constraints.

Binary build decisions are enumerated exhaustively (candidate sets are small
by construction); each topology gets a continuous dispatch optimization.
Under the DC model branch flows are linear in dispatch, so the inner problem
is a smooth objective over a polytope: box bounds, one generation/load
balance equality, and two-sided flow limits. It is solved by projected
augmented-Lagrangian ascent — projection handles the box and balance
constraints exactly, multipliers handle the flow limits — with multistart.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ecometrics
from .ecometrics import DegenerateNetworkError, EcoFlowMatrix, OperatingPoint, RobustnessReport
from .model import Network, apply_topology
from .powerflow import (
    AcSolution,
    ViolationSet,
    _slack_component,
    check_limits,
    solve_ac,
    solve_dc,
)

STATUS_SOLVED = "solved"
STATUS_INFEASIBLE = "infeasible"
STATUS_TIMEOUT = "timeout"

_TIE_EPS = 1e-9
_FEAS_TOL = 1e-9  # normalized constraint violation accepted as feasible


@dataclass(frozen=True)
class NlpSettings:
    tolerance: float = 1e-4
    time_limit: float = 1500.0
    multistart: int = 8
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.multistart < 1:
            raise ValueError("multistart must be >= 1")


@dataclass(frozen=True)
class DesignProblem:
    net: Network
    model: str = "dc"
    candidate_budget: int | None = None
    nlp: NlpSettings = field(default_factory=NlpSettings)

    def __post_init__(self):
        if len(self.net.candidate_branches) > 20:
            raise ValueError("more than 20 candidate branches; enumeration refused")
        if self.model not in ("dc", "ac-check"):
            raise ValueError(f"unknown model {self.model!r}")


@dataclass(frozen=True)
class TopologyResult:
    alpha: tuple[int, ...]
    feasible: bool
    r: float


@dataclass(frozen=True)
class DesignSolution:
    alpha: dict[int, int]
    p_gen: np.ndarray | None
    op: OperatingPoint | None
    report: RobustnessReport | None
    status: str
    wall_time: float
    enumeration: tuple[TopologyResult, ...] = ()

    def new_branch_labels(self, net: Network) -> list[str]:
        cands = net.candidate_branches
        return [f"{cands[k].from_bus}-{cands[k].to_bus}" for k, v in sorted(self.alpha.items()) if v]


# ---------------------------------------------------------------------------
# Inner NLP over dispatch for a fixed topology
# ---------------------------------------------------------------------------

def _balance_project(p: np.ndarray, lb: np.ndarray, ub: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {sum p = total} intersected with [lb, ub].

    The projection is clip(p + t, lb, ub) for the scalar shift t making the
    sum hit `total`; the sum is monotone in t, so bisection suffices.
    """
    if lb.sum() > total + 1e-9 or ub.sum() < total - 1e-9:
        raise ValueError("balance target outside box capacity")
    lo = float((lb - p).min()) - 1.0
    hi = float((ub - p).max()) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = np.clip(p + mid, lb, ub).sum()
        if s < total:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, abs(total)):
            break
    return np.clip(p + 0.5 * (lo + hi), lb, ub)


class DispatchEvaluator:
    """Robustness value/gradient and flow constraints as functions of dispatch.

    Precomputes the linear map from MW dispatch to branch flows (slack
    compensated) and the flow-matrix layout, so each evaluation is a couple
    of small matrix products.
    """

    def __init__(self, net: Network):
        self.net = net
        base = net.base_mva
        ng = len(net.generators)
        self.ng = ng
        self.lb = np.array([g.p_min * base for g in net.generators])
        self.ub = np.array([g.p_max * base for g in net.generators])
        self.load_mw = net.total_load() * base
        self.p_load = np.array([b.p_load * base for b in net.buses])

        zero = solve_dc(net, np.zeros(ng), require_balance=False)
        self.flow0 = zero.p_flow.copy()
        cols = []
        for g in range(ng):
            e = np.zeros(ng)
            e[g] = 1.0
            cols.append(solve_dc(net, e, require_balance=False).p_flow - self.flow0)
        self.flow_map = np.column_stack(cols) if ng else np.zeros((len(self.flow0), 0))
        self.s_max = np.array([br.s_max * base for br in net.active_branches])

        # Flow-matrix layout: pair flows aggregated over parallel branches.
        idx = ecometrics.compartment_indices(net)
        self.dim = len(idx)
        self.gen_rows = np.array([idx[f"gen{g.id}"] for g in net.generators], dtype=int)
        self.gen_bus_cols = np.array([idx[f"bus{g.bus}"] for g in net.generators], dtype=int)
        self.bus_rows = np.array([idx[f"bus{b.id}"] for b in net.buses], dtype=int)
        self.export_col = idx["export"]

        pair_order: dict[tuple[int, int], list[tuple[int, float]]] = {}
        for k, br in enumerate(net.active_branches):
            fwd = (br.from_bus, br.to_bus)
            rev = (br.to_bus, br.from_bus)
            if fwd in pair_order:
                pair_order[fwd].append((k, 1.0))
            elif rev in pair_order:
                pair_order[rev].append((k, -1.0))
            else:
                pair_order[fwd] = [(k, 1.0)]
        self.pairs = []
        for (i, j), members in pair_order.items():
            sel = np.zeros(len(self.flow0))
            for k, sign in members:
                sel[k] = sign
            self.pairs.append((idx[f"bus{i}"], idx[f"bus{j}"], sel))

    def branch_flows(self, p: np.ndarray) -> np.ndarray:
        return self.flow_map @ p + self.flow0

    def constraint_violation(self, p: np.ndarray) -> np.ndarray:
        """Normalized flow-limit excess, max(0, |f| - s_max) / s_max per branch."""
        f = self.branch_flows(p)
        return np.maximum(0.0, np.abs(f) - self.s_max) / self.s_max

    def efm(self, p: np.ndarray) -> np.ndarray:
        t = np.zeros((self.dim, self.dim))
        t[0, self.gen_rows] = p
        t[self.gen_rows, self.gen_bus_cols] = p
        f = self.branch_flows(p)
        for (i, j, sel) in self.pairs:
            q = float(sel @ f)
            if q >= 0:
                t[i, j] += q
            else:
                t[j, i] += -q
        t[self.bus_rows, self.export_col] = self.p_load
        return t

    def robustness(self, p: np.ndarray) -> float:
        try:
            return ecometrics.robustness(self.efm(p)).r
        except DegenerateNetworkError:
            return -math.inf

    def robustness_grad(self, p: np.ndarray) -> tuple[float, np.ndarray]:
        """R and dR/dp, chaining dR/dT through the linear flow map.

        Pair entries flip position with the flow sign; at exactly zero pair
        flow the subgradient 0 is used.
        """
        t = self.efm(p)
        try:
            r = ecometrics.robustness(t).r
        except DegenerateNetworkError:
            return -math.inf, np.zeros(self.ng)
        g_t = ecometrics.robustness_gradient(t)
        grad = g_t[0, self.gen_rows] + g_t[self.gen_rows, self.gen_bus_cols]
        f = self.branch_flows(p)
        for (i, j, sel) in self.pairs:
            q = float(sel @ f)
            if q > 0:
                grad = grad + g_t[i, j] * (sel @ self.flow_map)
            elif q < 0:
                grad = grad - g_t[j, i] * (sel @ self.flow_map)
        return r, grad

    # -- feasibility (convex) ------------------------------------------------

    def restore_feasibility(self, p: np.ndarray, max_iter: int = 5000) -> np.ndarray:
        """Drive flow-limit violations to zero by projected gradient descent.

        Half the squared normalized excess is convex and the feasible set
        (box plus balance) is convex, so this converges to the global
        minimum; a nonzero floor means the polytope is empty.
        """
        a = self.flow_map / self.s_max[:, None]
        b = self.flow0 / self.s_max
        step = 1.0 / max(1e-12, np.linalg.norm(a, 2) ** 2)
        p = _balance_project(p, self.lb, self.ub, self.load_mw)
        if a.size == 0:
            return p
        for _ in range(max_iter):
            fbar = a @ p + b
            excess = np.maximum(0.0, np.abs(fbar) - 1.0)
            if excess.max() <= _FEAS_TOL * 1e-3:
                break
            grad = a.T @ (excess * np.sign(fbar))
            p = _balance_project(p - step * grad, self.lb, self.ub, self.load_mw)
        return p

    def is_feasible(self, p: np.ndarray) -> bool:
        viol = self.constraint_violation(p)
        bal = abs(p.sum() - self.load_mw) / max(1.0, self.load_mw)
        return (viol.max() if viol.size else 0.0) <= _FEAS_TOL and bal <= _FEAS_TOL


def _auglag_maximize(ev: DispatchEvaluator, p0: np.ndarray, settings: NlpSettings,
                     deadline: float) -> np.ndarray:
    """Projected augmented-Lagrangian ascent on R from one start point.

    Box and balance constraints are enforced by exact projection each step;
    two-sided flow limits carry multipliers. Minimizes -R plus the augmented
    penalty, with Armijo backtracking on the projected gradient step.
    """
    a = ev.flow_map / ev.s_max[:, None]
    bvec = ev.flow0 / ev.s_max
    m = len(bvec)
    nu_hi = np.zeros(m)
    nu_lo = np.zeros(m)
    mu = 10.0
    p = p0.copy()
    prev_viol = math.inf

    def al_value_grad(p):
        r, g_r = ev.robustness_grad(p)
        if not math.isfinite(r):
            return math.inf, np.zeros(ev.ng)
        fbar = a @ p + bvec
        hi = fbar - 1.0   # <= 0
        lo = -fbar - 1.0  # <= 0
        thi = np.maximum(0.0, nu_hi + mu * hi)
        tlo = np.maximum(0.0, nu_lo + mu * lo)
        val = -r + (np.sum(thi**2 - nu_hi**2) + np.sum(tlo**2 - nu_lo**2)) / (2 * mu)
        grad = -g_r + a.T @ thi - a.T @ tlo
        return val, grad

    step = 1.0
    for _outer in range(30):
        # Inner projected-gradient descent with backtracking.
        val, grad = al_value_grad(p)
        for _inner in range(300):
            if time.monotonic() > deadline:
                return p
            trial_step = step
            for _bt in range(40):
                cand = _balance_project(p - trial_step * grad, ev.lb, ev.ub, ev.load_mw)
                cval, cgrad = al_value_grad(cand)
                dp = cand - p
                if cval <= val + 1e-4 * float(grad @ dp) or not np.any(dp):
                    break
                trial_step *= 0.5
            move = float(np.abs(cand - p).max())
            p, val, grad = cand, cval, cgrad
            step = min(trial_step * 2.0, 1e6)
            if move <= settings.tolerance * max(1.0, float(np.abs(p).max())) * 1e-3:
                break
        fbar = a @ p + bvec
        hi = fbar - 1.0
        lo = -fbar - 1.0
        viol = max(float(np.maximum(0, hi).max(initial=0.0)),
                   float(np.maximum(0, lo).max(initial=0.0)))
        nu_hi = np.maximum(0.0, nu_hi + mu * hi)
        nu_lo = np.maximum(0.0, nu_lo + mu * lo)
        if viol <= _FEAS_TOL * 0.1:
            break
        if viol > 0.25 * prev_viol:
            mu *= 10.0
        prev_viol = viol
        if time.monotonic() > deadline:
            break
    return ev.restore_feasibility(p, max_iter=2000)


def _multistart_points(ev: DispatchEvaluator, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Initial dispatches: capacity-proportional first, then one start leaning
    on each generator in turn, then random box points; all balance-projected."""
    pts = []
    cap = ev.ub.sum()
    if cap > 0:
        prop = ev.load_mw * ev.ub / cap
    else:
        prop = ev.lb.copy()
    pts.append(_balance_project(prop, ev.lb, ev.ub, ev.load_mw))
    for g in range(ev.ng):
        if len(pts) >= count + ev.ng:
            break
        lean = ev.lb.copy()
        lean[g] = ev.ub[g]
        pts.append(_balance_project(lean, ev.lb, ev.ub, ev.load_mw))
    while len(pts) < count + ev.ng:
        raw = rng.uniform(ev.lb, ev.ub)
        pts.append(_balance_project(raw, ev.lb, ev.ub, ev.load_mw))
    return pts


def solve_inner_nlp(net: Network, settings: NlpSettings | None = None,
                    rng: np.random.Generator | None = None,
                    deadline: float | None = None,
                    ) -> tuple[np.ndarray, OperatingPoint, RobustnessReport] | None:
    """Maximize robustness over generator dispatch for a fixed topology.

    Returns (p_gen MW, operating point, robustness report) at the best
    feasible local optimum over the multistart sweep, or None when no
    feasible dispatch exists (flow limits unsatisfiable or capacity short).
    """
    settings = settings or NlpSettings()
    rng = rng if rng is not None else np.random.default_rng(0)
    if deadline is None:
        deadline = time.monotonic() + settings.time_limit
    ev = DispatchEvaluator(net)
    if ev.lb.sum() > ev.load_mw + 1e-9 or ev.ub.sum() < ev.load_mw - 1e-9:
        return None

    # Convex feasibility phase: a nonzero residual proves the polytope empty.
    p_feas = ev.restore_feasibility(_multistart_points(ev, 1, rng)[0])
    if not ev.is_feasible(p_feas):
        return None

    best: tuple[float, np.ndarray] | None = None
    for p0 in _multistart_points(ev, settings.multistart, rng):
        if time.monotonic() > deadline:
            break
        p = _auglag_maximize(ev, ev.restore_feasibility(p0), settings, deadline)
        if not ev.is_feasible(p):
            continue
        r = ev.robustness(p)
        if math.isfinite(r) and (best is None or r > best[0]):
            best = (r, p)
    if best is None:
        # Timed out before any start finished; fall back to the feasible point.
        best = (ev.robustness(p_feas), p_feas)
        if not math.isfinite(best[0]):
            return None

    p = best[1]
    sol = solve_dc(net, p)
    op = OperatingPoint(
        p_gen=sol.p_gen.copy(),
        p_flow=sol.p_flow.copy(),
        p_load=ev.p_load.copy(),
        p_loss=np.zeros(net.n_bus),
    )
    efm = ecometrics.build_ecoflow_matrix(net, op)
    return sol.p_gen, op, ecometrics.robustness(efm)


# ---------------------------------------------------------------------------
# Outer enumeration over candidate selections
# ---------------------------------------------------------------------------

def _islands_load_or_generation(net: Network) -> bool:
    energized = _slack_component(net, net.active_branches)
    for b in net.buses:
        if b.id not in energized and b.p_load > 0:
            return True
    for g in net.generators:
        if g.bus not in energized:
            return True
    return False


def optimize_design(prob: DesignProblem, seed: int = 0) -> DesignSolution:
    """Enumerate all candidate selections and keep the feasible maximum of R.

    Selections are visited in lexicographic order; ties within 1e-9 on R are
    broken toward fewer built branches, then the lexicographically smaller
    selection. Topologies that island load or generation are skipped.
    """
    if prob.model != "dc":
        raise ValueError("design optimization supports the dc model only")
    t0 = time.monotonic()
    deadline = t0 + prob.nlp.time_limit
    ncand = len(prob.net.candidate_branches)
    results: list[TopologyResult] = []
    best: dict | None = None
    timed_out = False

    for bits in itertools.product((0, 1), repeat=ncand):
        if prob.candidate_budget is not None and sum(bits) > prob.candidate_budget:
            continue
        if time.monotonic() > deadline:
            timed_out = True
            break
        alpha = {k: v for k, v in enumerate(bits)}
        topo = apply_topology(prob.net, alpha)
        if _islands_load_or_generation(topo):
            results.append(TopologyResult(alpha=bits, feasible=False, r=math.nan))
            continue
        rng = np.random.default_rng([seed, *bits])
        out = solve_inner_nlp(topo, prob.nlp, rng=rng, deadline=deadline)
        if out is None:
            results.append(TopologyResult(alpha=bits, feasible=False, r=math.nan))
            continue
        p_gen, op, report = out
        results.append(TopologyResult(alpha=bits, feasible=True, r=report.r))
        cand = {"alpha": alpha, "bits": bits, "p_gen": p_gen, "op": op, "report": report}
        if best is None:
            best = cand
        else:
            dr = report.r - best["report"].r
            if dr > _TIE_EPS:
                best = cand
            elif abs(dr) <= _TIE_EPS:
                if (sum(bits), bits) < (sum(best["bits"]), best["bits"]):
                    best = cand

    wall = time.monotonic() - t0
    if best is None:
        status = STATUS_TIMEOUT if timed_out else STATUS_INFEASIBLE
        return DesignSolution(alpha={}, p_gen=None, op=None, report=None,
                              status=status, wall_time=wall,
                              enumeration=tuple(results))
    status = STATUS_TIMEOUT if timed_out else STATUS_SOLVED
    return DesignSolution(alpha=best["alpha"], p_gen=best["p_gen"], op=best["op"],
                          report=best["report"], status=status, wall_time=wall,
                          enumeration=tuple(results))


def check_ac_feasibility(net: Network, sol: DesignSolution,
                         ) -> tuple[ViolationSet, AcSolution]:
    """AC-model screen of a solved DC design at its optimal dispatch.

    Runs a full AC solve on the designed topology with the slack absorbing
    losses and reports every voltage, flow, and generator violation. Does
    not optimize; non-convergence is visible on the returned solution.
    """
    if sol.status != STATUS_SOLVED:
        raise ValueError("AC feasibility check requires a solved design")
    topo = apply_topology(net, sol.alpha)
    ac = solve_ac(topo, sol.p_gen)
    if not ac.converged:
        return ViolationSet(), ac
    return check_limits(topo, ac), ac
