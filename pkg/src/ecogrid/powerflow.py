"""DC and AC power-flow solution, limit checking, and loss evaluation.

All solvers operate on the active (existing-status) branch set of an
immutable Network and are pure functions, so they can run concurrently
from contingency sweeps and the design optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ecometrics import OperatingPoint
from .model import Branch, Network

DC_BALANCE_TOL = 1e-6  # per-unit
MISMATCH_TOL = 1e-8  # per-unit
LIMIT_TOL = 1e-6  # relative numerical guard for violation screening


class SingularNetworkError(Exception):
    """The susceptance matrix of the slack component is singular."""


@dataclass(frozen=True)
class DcSolution:
    theta: np.ndarray  # rad per bus; 0 for islanded buses
    p_flow: np.ndarray  # MW per active branch; 0 on de-energized branches
    p_gen: np.ndarray  # MW per generator, slack imbalance absorbed
    slack_bus: int
    islanded: np.ndarray  # bool per bus
    energized_branch: np.ndarray  # bool per active branch

    @property
    def any_islanded(self) -> bool:
        return bool(self.islanded.any())


@dataclass(frozen=True)
class AcSolution:
    v_mag: np.ndarray  # per-unit per bus
    v_ang: np.ndarray  # rad per bus
    p_flow: np.ndarray  # per-unit, from-side, per active branch
    q_flow: np.ndarray  # per-unit, from-side
    p_flow_to: np.ndarray  # per-unit, to-side
    q_flow_to: np.ndarray  # per-unit, to-side
    p_loss: np.ndarray  # per-unit per bus, branch-susceptance loss formula
    p_loss_i2r: np.ndarray  # per-unit per bus, exact series-resistance losses
    p_gen: np.ndarray  # per-unit per generator (slack absorbs losses)
    q_gen: np.ndarray  # per-unit per generator
    converged: bool
    iterations: int
    mismatch: float


@dataclass
class ViolationSet:
    branch_overloads: list[tuple[str, float, float]] = field(default_factory=list)
    voltage_violations: list[tuple[int, float, float]] = field(default_factory=list)
    gen_violations: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.branch_overloads or self.voltage_violations or self.gen_violations)

    def count(self) -> int:
        return len(self.branch_overloads) + len(self.voltage_violations) + len(self.gen_violations)

    def to_dict(self) -> dict:
        return {
            "branch_overloads": [list(v) for v in self.branch_overloads],
            "voltage_violations": [list(v) for v in self.voltage_violations],
            "gen_violations": [list(v) for v in self.gen_violations],
        }


def branch_label(br: Branch) -> str:
    base = f"{br.from_bus}-{br.to_bus}"
    return base if br.ordinal == 0 else f"{base}#{br.ordinal}"


def _slack_component(net: Network, branches: tuple[Branch, ...]) -> set[int]:
    adj: dict[int, set[int]] = {b.id: set() for b in net.buses}
    for br in branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    seen = {net.slack}
    stack = [net.slack]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return seen


def bus_injections(net: Network, p_gen_mw: np.ndarray) -> np.ndarray:
    """Per-bus net real injection in per-unit: generation minus load."""
    inj = np.array([-b.p_load for b in net.buses])
    for g, p in zip(net.generators, p_gen_mw):
        inj[net.bus_index(g.bus)] += p / net.base_mva
    return inj


def solve_dc(net: Network, p_gen: np.ndarray, require_balance: bool = True) -> DcSolution:
    """Linearized real power flow: solve B' theta = P with the slack at 0.

    `p_gen` is the MW dispatch aligned with net.generators. Buses outside
    the slack component are flagged islanded and excluded from the balance;
    any residual imbalance on the slack component is absorbed by the slack.
    With `require_balance`, a mismatch between total generation and load
    beyond 1e-6 per-unit raises ValueError.
    """
    p_gen = np.asarray(p_gen, dtype=float)
    branches = net.active_branches
    energized_buses = _slack_component(net, branches)
    islanded = np.array([b.id not in energized_buses for b in net.buses])
    energized_branch = np.array(
        [br.from_bus in energized_buses and br.to_bus in energized_buses for br in branches]
    )

    inj = bus_injections(net, p_gen)
    if require_balance:
        resid = inj[~islanded].sum()
        if abs(resid) > DC_BALANCE_TOL:
            raise ValueError(f"dispatch/load imbalance {resid:.3e} per-unit")

    n = net.n_bus
    bmat = np.zeros((n, n))
    for br, on in zip(branches, energized_branch):
        if not on:
            continue
        i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        b = br.b_dc
        bmat[i, i] += b
        bmat[j, j] += b
        bmat[i, j] -= b
        bmat[j, i] -= b

    slack_i = net.bus_index(net.slack)
    keep = [i for i, b in enumerate(net.buses) if not islanded[i] and i != slack_i]
    theta = np.zeros(n)
    if keep:
        sub = bmat[np.ix_(keep, keep)]
        try:
            theta[keep] = np.linalg.solve(sub, inj[keep])
        except np.linalg.LinAlgError as e:
            raise SingularNetworkError(
                f"singular susceptance matrix on the slack component ({sorted(energized_buses)})"
            ) from e

    p_flow = np.zeros(len(branches))
    for k, (br, on) in enumerate(zip(branches, energized_branch)):
        if on:
            i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
            p_flow[k] = br.b_dc * (theta[i] - theta[j]) * net.base_mva

    # Slack absorbs the energized-component imbalance; report effective output.
    p_gen_eff = p_gen.copy()
    imbalance = -inj[~islanded].sum() * net.base_mva
    for gi, g in enumerate(net.generators):
        if g.bus == net.slack:
            p_gen_eff[gi] += imbalance
            break
    # Generators on islanded buses deliver nothing.
    for gi, g in enumerate(net.generators):
        if g.bus not in energized_buses:
            p_gen_eff[gi] = 0.0
    return DcSolution(theta=theta, p_flow=p_flow, p_gen=p_gen_eff,
                      slack_bus=net.slack, islanded=islanded,
                      energized_branch=energized_branch)


def ptdf_matrix(net: Network) -> np.ndarray:
    """Power transfer distribution factors for a fully connected network.

    Independent of solve_dc's assembly: built from the incidence matrix and
    an explicit inverse of the reduced nodal susceptance matrix. Row k maps
    per-unit bus injections to the per-unit flow on active branch k.
    """
    branches = net.active_branches
    n, m = net.n_bus, len(branches)
    a = np.zeros((m, n))
    bd = np.zeros(m)
    for k, br in enumerate(branches):
        a[k, net.bus_index(br.from_bus)] = 1.0
        a[k, net.bus_index(br.to_bus)] = -1.0
        bd[k] = br.b_dc
    bprime = a.T @ np.diag(bd) @ a
    slack_i = net.bus_index(net.slack)
    keep = [i for i in range(n) if i != slack_i]
    inv = np.linalg.inv(bprime[np.ix_(keep, keep)])
    h = np.zeros((m, n))
    h[:, keep] = np.diag(bd) @ a[:, keep] @ inv
    return h


def dc_operating_point(net: Network, sol: DcSolution) -> OperatingPoint:
    """Lossless MW operating point for flow-matrix construction."""
    p_load = np.array([b.p_load * net.base_mva for b in net.buses])
    p_load[sol.islanded] = 0.0
    return OperatingPoint(
        p_gen=sol.p_gen.copy(),
        p_flow=sol.p_flow.copy(),
        p_load=p_load,
        p_loss=np.zeros(net.n_bus),
    )


# ---------------------------------------------------------------------------
# AC power flow (Newton-Raphson, polar)
# ---------------------------------------------------------------------------

def _ybus(net: Network) -> np.ndarray:
    n = net.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br in net.active_branches:
        i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        ys = 1.0 / complex(br.resistance, br.reactance)
        y[i, i] += ys
        y[j, j] += ys
        y[i, j] -= ys
        y[j, i] -= ys
    return y


def solve_ac(net: Network, p_gen: np.ndarray, v_setpoints: dict[int, float] | None = None,
             max_iter: int = 50, tol: float = MISMATCH_TOL) -> AcSolution:
    """Newton-Raphson AC power flow at a fixed real dispatch.

    Generator buses are held at their voltage setpoints (PV), the slack bus
    fixes the angle reference and absorbs losses. `v_setpoints` overrides
    per-bus setpoints; otherwise each generator's v_set (default 1.0) is
    used. Non-convergence within max_iter returns converged=False.
    """
    p_gen = np.asarray(p_gen, dtype=float) / net.base_mva
    n = net.n_bus
    y = _ybus(net)
    slack_i = net.bus_index(net.slack)
    gen_buses = {net.bus_index(g.bus) for g in net.generators}
    pv = sorted(gen_buses - {slack_i})
    pq = sorted(set(range(n)) - gen_buses - {slack_i})

    vm = np.ones(n)
    for g in net.generators:
        vm[net.bus_index(g.bus)] = g.v_set
    if v_setpoints:
        for bus_id, v in v_setpoints.items():
            vm[net.bus_index(bus_id)] = v
    va = np.zeros(n)

    p_sched = bus_injections(net, p_gen * net.base_mva)
    q_sched = np.array([-b.q_load for b in net.buses])

    pvpq = pv + pq
    mismatch = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        v = vm * np.exp(1j * va)
        ibus = y @ v
        s = v * np.conj(ibus)
        dp = p_sched - s.real
        dq = q_sched - s.imag
        f = np.concatenate([dp[pvpq], dq[pq]])
        mismatch = float(np.abs(f).max()) if len(f) else 0.0
        if mismatch < tol:
            break

        # Standard complex-form power-flow Jacobian blocks.
        dV = np.diag(v)
        dI = np.diag(ibus)
        dE = np.diag(v / vm)
        ds_dva = 1j * dV @ np.conj(dI - y @ dV)
        ds_dvm = dV @ np.conj(y @ dE) + np.conj(dI) @ dE
        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq)].real
        j21 = ds_dva[np.ix_(pq, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq, pq)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError:
            break
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
    converged = mismatch < tol

    branches = net.active_branches
    m = len(branches)
    pf = np.zeros(m)
    qf = np.zeros(m)
    pt = np.zeros(m)
    qt = np.zeros(m)
    for k, br in enumerate(branches):
        i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        pf[k], qf[k] = _branch_flow(br, vm[i], vm[j], va[i] - va[j])
        pt[k], qt[k] = _branch_flow(br, vm[j], vm[i], va[j] - va[i])

    # Exact series losses, split evenly between the branch endpoints.
    loss_i2r = np.zeros(n)
    for k, br in enumerate(branches):
        i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        total = pf[k] + pt[k]
        loss_i2r[i] += 0.5 * total
        loss_i2r[j] += 0.5 * total

    # Generator outputs: real dispatch held, slack picks up losses; bus-level
    # reactive support split across co-located units by reactive range.
    v = vm * np.exp(1j * va)
    s = v * np.conj(y @ v)
    p_out = p_gen.copy()
    q_out = np.zeros(len(net.generators))
    for bi in sorted(gen_buses):
        bus = net.buses[bi]
        gens = [gi for gi, g in enumerate(net.generators) if net.bus_index(g.bus) == bi]
        q_need = s[bi].imag + bus.q_load
        ranges = np.array([net.generators[gi].q_max - net.generators[gi].q_min for gi in gens])
        weights = ranges / ranges.sum() if ranges.sum() > 0 else np.full(len(gens), 1.0 / len(gens))
        for gi, w in zip(gens, weights):
            q_out[gi] = q_need * w
        if bi == slack_i:
            p_need = s[bi].real + bus.p_load
            p_out[gens[0]] += p_need - sum(p_gen[gi] for gi in gens)

    sol = AcSolution(v_mag=vm, v_ang=va, p_flow=pf, q_flow=qf, p_flow_to=pt,
                     q_flow_to=qt, p_loss=np.zeros(n), p_loss_i2r=loss_i2r,
                     p_gen=p_out, q_gen=q_out, converged=converged,
                     iterations=it, mismatch=mismatch)
    if converged:
        object.__setattr__(sol, "p_loss", compute_losses(sol, net))
    return sol


def _branch_flow(br: Branch, v_from: float, v_to: float, angle: float) -> tuple[float, float]:
    """Real and reactive sending-end flow on a series branch.

    Uses the off-diagonal admittance convention: G = -g_series, B = -b_series,
    P = V_i^2 (-G) + V_i V_j (G cos + B sin), Q = V_i^2 B + V_i V_j (G sin - B cos).
    """
    g = -br.conductance_g
    b = -br.susceptance_b
    p = v_from**2 * (-g) + v_from * v_to * (g * np.cos(angle) + b * np.sin(angle))
    q = v_from**2 * b + v_from * v_to * (g * np.sin(angle) - b * np.cos(angle))
    return p, q


def compute_losses(sol: AcSolution, net: Network) -> np.ndarray:
    """Per-bus dissipation via the branch-susceptance loss formula.

    loss_i = 1/2 sum_j (P_ij^2 + Q_ij^2) / (B_ij V_i^2) over incident
    branches, with B_ij the (positive) off-diagonal susceptance magnitude.
    This approximates but does not equal exact series I^2 r losses; the
    exact value is available as AcSolution.p_loss_i2r.
    """
    if not sol.converged:
        raise ValueError("losses require a converged AC solution")
    loss = np.zeros(net.n_bus)
    for k, br in enumerate(net.active_branches):
        bij = -br.susceptance_b
        if bij == 0:
            raise ZeroDivisionError(
                f"branch {branch_label(br)} has zero susceptance; loss formula undefined"
            )
        i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        loss[i] += 0.5 * (sol.p_flow[k] ** 2 + sol.q_flow[k] ** 2) / (bij * sol.v_mag[i] ** 2)
        loss[j] += 0.5 * (sol.p_flow_to[k] ** 2 + sol.q_flow_to[k] ** 2) / (bij * sol.v_mag[j] ** 2)
    return loss


def ac_operating_point(net: Network, sol: AcSolution) -> OperatingPoint:
    """MW operating point from a converged AC solve.

    Dissipation uses exact series losses so generation, load, and loss
    balance; the susceptance-based loss values live on the solution object.
    """
    base = net.base_mva
    return OperatingPoint(
        p_gen=sol.p_gen * base,
        p_flow=sol.p_flow * base,
        p_load=np.array([b.p_load * base for b in net.buses]),
        p_loss=sol.p_loss_i2r * base,
    )


def check_limits(net: Network, sol: DcSolution | AcSolution, tol: float = LIMIT_TOL) -> ViolationSet:
    """Evaluate branch, voltage, and generator limits against a solution.

    DC solutions are screened only for real flow and real dispatch limits;
    voltage and reactive limits hold trivially under the DC assumptions.
    `tol` is a relative numerical guard below which excursions are ignored.
    """
    out = ViolationSet()
    base = net.base_mva
    branches = net.active_branches
    if isinstance(sol, DcSolution):
        for k, br in enumerate(branches):
            if not sol.energized_branch[k]:
                continue
            limit = br.s_max * base
            if abs(sol.p_flow[k]) > limit * (1 + tol):
                out.branch_overloads.append((branch_label(br), abs(float(sol.p_flow[k])), limit))
        for g, p in zip(net.generators, sol.p_gen):
            lo, hi = g.p_min * base, g.p_max * base
            span = max(abs(lo), abs(hi), 1.0)
            if p > hi + tol * span or p < lo - tol * span:
                bound = hi if p > hi else lo
                out.gen_violations.append((g.id, float(p), bound))
        return out

    for i, b in enumerate(net.buses):
        v = float(sol.v_mag[i])
        if v > b.v_max * (1 + tol):
            out.voltage_violations.append((b.id, v, b.v_max))
        elif v < b.v_min * (1 - tol):
            out.voltage_violations.append((b.id, v, b.v_min))
    for k, br in enumerate(branches):
        s_from = float(np.hypot(sol.p_flow[k], sol.q_flow[k]))
        s_to = float(np.hypot(sol.p_flow_to[k], sol.q_flow_to[k]))
        s = max(s_from, s_to)
        if s > br.s_max * (1 + tol):
            out.branch_overloads.append((branch_label(br), s * base, br.s_max * base))
    for gi, g in enumerate(net.generators):
        s = float(np.hypot(sol.p_gen[gi], sol.q_gen[gi]))
        if s > g.s_max * (1 + tol):
            out.gen_violations.append((g.id, s * base, g.s_max * base))
        else:
            p, q = float(sol.p_gen[gi]), float(sol.q_gen[gi])
            if p > g.p_max + tol or p < g.p_min - tol:
                out.gen_violations.append((g.id, p * base, (g.p_max if p > g.p_max else g.p_min) * base))
            elif q > g.q_max + tol or q < g.q_min - tol:
                out.gen_violations.append((g.id, q * base, (g.q_max if q > g.q_max else g.q_min) * base))
    return out
