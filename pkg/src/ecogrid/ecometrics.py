"""Ecological flow matrix construction and robustness metrics.

The flow matrix T is square of dimension N+3, where N counts the actors
(generators plus buses). Row 0 is the system-input row, the last two columns
hold useful exports (load) and dissipation (losses). All flows are in MW;
the robustness metrics are invariant to that choice of scale.

Natural logarithms are used throughout, and 0*log(0) terms contribute zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Network

BALANCE_TOL = 1e-6  # MW, relative to system size


class DegenerateNetworkError(Exception):
    """Raised when the flow matrix carries no information (DC = 0 or TSTp = 0)."""


@dataclass(frozen=True)
class OperatingPoint:
    """A steady-state operating point in MW, aligned with a Network.

    p_gen is per generator; p_flow is per active branch, signed positive in
    the branch's from->to orientation; p_load and p_loss are per bus.
    """

    p_gen: np.ndarray
    p_flow: np.ndarray
    p_load: np.ndarray
    p_loss: np.ndarray

    def balance_residual(self) -> float:
        return float(self.p_gen.sum() - self.p_load.sum() - self.p_loss.sum())


@dataclass(frozen=True)
class EcoFlowMatrix:
    t: np.ndarray
    labels: tuple[str, ...]

    @property
    def n_actors(self) -> int:
        return len(self.labels) - 3

    def to_csv(self) -> str:
        lines = ["," + ",".join(self.labels)]
        for label, row in zip(self.labels, self.t):
            lines.append(label + "," + ",".join(f"{v:.10g}" for v in row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RobustnessReport:
    tstp: float
    dc: float
    asc: float
    ratio: float
    r: float

    def to_dict(self) -> dict:
        return {"tstp": self.tstp, "dc": self.dc, "asc": self.asc,
                "ratio": self.ratio, "r": self.r}


def compartment_labels(net: Network) -> tuple[str, ...]:
    """Compartment ordering: input, generators, buses, export, dissipation."""
    return (
        ("input",)
        + tuple(f"gen{g.id}" for g in net.generators)
        + tuple(f"bus{b.id}" for b in net.buses)
        + ("export", "dissipation")
    )


def compartment_indices(net: Network) -> dict[str, int]:
    return {name: i for i, name in enumerate(compartment_labels(net))}


def pair_flows(net: Network, p_flow: np.ndarray) -> dict[tuple[int, int], float]:
    """Sum signed branch flows over parallel branches, keyed by oriented pair.

    The orientation of each pair follows the first branch seen for it; the
    returned value is the net signed MW flow in that orientation.
    """
    acc: dict[tuple[int, int], float] = {}
    for br, f in zip(net.active_branches, p_flow):
        fwd = (br.from_bus, br.to_bus)
        rev = (br.to_bus, br.from_bus)
        if fwd in acc:
            acc[fwd] += f
        elif rev in acc:
            acc[rev] -= f
        else:
            acc[fwd] = float(f)
    return acc


def build_ecoflow_matrix(net: Network, op: OperatingPoint) -> EcoFlowMatrix:
    """Assemble the flow matrix from generation, branch flows, load, and loss.

    Branch flows are oriented by sign: a negative from->to flow is recorded
    as a to->from entry of its magnitude. Generators dissipate nothing.
    """
    n_act = len(net.generators) + net.n_bus
    if len(op.p_gen) != len(net.generators):
        raise ValueError("p_gen length does not match generator count")
    if len(op.p_flow) != len(net.active_branches):
        raise ValueError("p_flow length does not match the active branch set")
    if len(op.p_load) != net.n_bus or len(op.p_loss) != net.n_bus:
        raise ValueError("p_load/p_loss length does not match bus count")
    if np.any(op.p_load < 0):
        raise ValueError("negative load in operating point")
    scale = max(1.0, float(np.abs(op.p_gen).sum()))
    if abs(op.balance_residual()) > BALANCE_TOL * scale:
        raise ValueError(
            f"operating point unbalanced: residual {op.balance_residual():.3e} MW"
        )

    labels = compartment_labels(net)
    idx = {name: i for i, name in enumerate(labels)}
    t = np.zeros((n_act + 3, n_act + 3))
    exp_col = idx["export"]
    dis_col = idx["dissipation"]

    for g, pg in zip(net.generators, op.p_gen):
        gi = idx[f"gen{g.id}"]
        t[0, gi] = pg
        t[gi, idx[f"bus{g.bus}"]] = pg
    for (i, j), f in pair_flows(net, op.p_flow).items():
        if f >= 0:
            t[idx[f"bus{i}"], idx[f"bus{j}"]] += f
        else:
            t[idx[f"bus{j}"], idx[f"bus{i}"]] += -f
    for b, load, loss in zip(net.buses, op.p_load, op.p_loss):
        bi = idx[f"bus{b.id}"]
        t[bi, exp_col] = load
        t[bi, dis_col] = loss
    return EcoFlowMatrix(t=t, labels=labels)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def tstp(efm: EcoFlowMatrix | np.ndarray) -> float:
    """Total system throughput: the sum of all matrix entries."""
    t = efm.t if isinstance(efm, EcoFlowMatrix) else efm
    return float(t.sum())


def development_capacity(efm: EcoFlowMatrix | np.ndarray) -> float:
    """Upper bound on organization: -TSTp * sum (T/TSTp) ln (T/TSTp)."""
    t = efm.t if isinstance(efm, EcoFlowMatrix) else efm
    s = t.sum()
    if s <= 0:
        raise DegenerateNetworkError("zero total system throughput")
    nz = t[t > 0]
    return float(-np.sum(nz * np.log(nz / s)))


def ascendency(efm: EcoFlowMatrix | np.ndarray) -> float:
    """Organized power: TSTp * sum (T/TSTp) ln (T*TSTp / (T_i T_j)).

    T_i and T_j are the total flow out of row i and into column j. The
    nonnegative sign convention is used so that 0 <= ASC <= DC.
    """
    t = efm.t if isinstance(efm, EcoFlowMatrix) else efm
    s = t.sum()
    if s <= 0:
        raise DegenerateNetworkError("zero total system throughput")
    row = t.sum(axis=1)
    col = t.sum(axis=0)
    i, j = np.nonzero(t)
    vals = t[i, j]
    return float(np.sum(vals * np.log(vals * s / (row[i] * col[j]))))


def robustness_value(ratio: float) -> float:
    """The robustness curve r(x) = -x ln x, with r(0) := 0."""
    if ratio <= 0:
        return 0.0
    return -ratio * math.log(ratio)


def robustness(efm: EcoFlowMatrix | np.ndarray) -> RobustnessReport:
    """Full robustness report for a flow matrix."""
    total = tstp(efm)
    dc = development_capacity(efm)
    if dc <= 0:
        raise DegenerateNetworkError(
            "zero development capacity (single-flow network)"
        )
    asc = ascendency(efm)
    ratio = asc / dc
    return RobustnessReport(tstp=total, dc=dc, asc=asc, ratio=ratio,
                            r=robustness_value(ratio))


def robustness_curve(samples: int) -> list[tuple[float, float]]:
    """Tabulate r(x) = -x ln x at `samples` evenly spaced points of (0, 1]."""
    if samples < 2:
        raise ValueError("samples must be >= 2")
    xs = np.linspace(0.0, 1.0, samples + 1)[1:]
    return [(float(x), robustness_value(float(x))) for x in xs]


def robustness_gradient(t: np.ndarray) -> np.ndarray:
    """dR/dT_kl over the nonzero entries of T (zero elsewhere).

    Uses dDC/dT = ln(S/T_kl) and dASC/dT = ln(T_kl S / (T_k. T_.l)) with
    S = TSTp, then the quotient and -x ln x chain rules.
    """
    s = t.sum()
    row = t.sum(axis=1)
    col = t.sum(axis=0)
    nzmask = t > 0
    dc = development_capacity(t)
    asc = ascendency(t)
    ratio = asc / dc

    grad = np.zeros_like(t)
    i, j = np.nonzero(nzmask)
    vals = t[i, j]
    d_dc = np.log(s / vals)
    d_asc = np.log(vals * s / (row[i] * col[j]))
    d_ratio = (d_asc * dc - asc * d_dc) / dc**2
    grad[i, j] = -(math.log(ratio) + 1.0) * d_ratio
    return grad
