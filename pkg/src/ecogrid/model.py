"""Network data model, native-JSON case I/O, and validation.

All electrical quantities are stored in per-unit on the system MVA base.
Case files carry MW/MVAr for powers and per-unit for impedances and voltage
bounds; `load_case` converts on ingestion and `save_case` converts back.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

NATIVE_FORMAT = "ecogrid-case/1"

EXISTING = "existing"
CANDIDATE = "candidate"


class CaseFormatError(Exception):
    """Raised when a case file cannot be parsed under its declared format."""


class ValidationError(Exception):
    """Raised when a parsed case violates model invariants.

    Carries the full list of violations, not just the first one found.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float = 0.9
    v_max: float = 1.1
    p_load: float = 0.0  # per-unit
    q_load: float = 0.0  # per-unit


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    s_max: float  # per-unit
    status: str = EXISTING
    ordinal: int = 0  # distinguishes parallel branches on the same bus pair

    @property
    def conductance_g(self) -> float:
        """Series conductance g = r / (r^2 + x^2)."""
        z2 = self.resistance**2 + self.reactance**2
        return self.resistance / z2

    @property
    def susceptance_b(self) -> float:
        """Series susceptance b = -x / (r^2 + x^2)."""
        z2 = self.resistance**2 + self.reactance**2
        return -self.reactance / z2

    @property
    def b_dc(self) -> float:
        """DC susceptance 1/x (resistance ignored)."""
        return 1.0 / self.reactance

    def pair(self) -> tuple[int, int]:
        return (self.from_bus, self.to_bus)


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_min: float = 0.0  # per-unit
    p_max: float = 0.0
    q_min: float = 0.0
    q_max: float = 0.0
    s_max: float = float("inf")
    p_set: float | None = None  # base-case dispatch, per-unit; optional
    v_set: float = 1.0


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    slack_bus: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "_bus_index", {b.id: i for i, b in enumerate(self.buses)})

    def bus_index(self, bus_id: int) -> int:
        return self._bus_index[bus_id]

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def active_branches(self) -> tuple[Branch, ...]:
        return tuple(br for br in self.branches if br.status == EXISTING)

    @property
    def candidate_branches(self) -> tuple[Branch, ...]:
        return tuple(br for br in self.branches if br.status == CANDIDATE)

    @property
    def slack(self) -> int:
        """Designated slack bus, defaulting to the first generator's bus."""
        if self.slack_bus is not None:
            return self.slack_bus
        if self.generators:
            return self.generators[0].bus
        return self.buses[0].id

    def total_load(self) -> float:
        """Total real load in per-unit."""
        return sum(b.p_load for b in self.buses)


def _assign_ordinals(branches: Sequence[Branch]) -> list[Branch]:
    seen: dict[tuple[int, int], int] = {}
    out = []
    for br in branches:
        key = (min(br.from_bus, br.to_bus), max(br.from_bus, br.to_bus))
        k = seen.get(key, 0)
        seen[key] = k + 1
        out.append(replace(br, ordinal=k))
    return out


def validate(net: Network) -> None:
    """Check every model invariant; raise ValidationError listing all failures."""
    problems: list[str] = []
    bus_ids = {b.id for b in net.buses}
    if len(bus_ids) != len(net.buses):
        problems.append("duplicate bus ids")
    if net.base_mva <= 0:
        problems.append(f"base_mva must be positive, got {net.base_mva}")
    for b in net.buses:
        if not (0 < b.v_min <= b.v_max):
            problems.append(f"bus {b.id}: voltage bounds violate 0 < v_min <= v_max")
        if b.p_load < 0:
            problems.append(f"bus {b.id}: negative real load {b.p_load}")
    for br in net.branches:
        tag = f"branch {br.from_bus}-{br.to_bus}#{br.ordinal}"
        if br.from_bus not in bus_ids:
            problems.append(f"{tag}: from_bus {br.from_bus} does not exist")
        if br.to_bus not in bus_ids:
            problems.append(f"{tag}: to_bus {br.to_bus} does not exist")
        if br.from_bus == br.to_bus:
            problems.append(f"{tag}: self-loop")
        if br.reactance == 0:
            problems.append(f"{tag}: zero reactance")
        if br.s_max <= 0:
            problems.append(f"{tag}: nonpositive flow limit")
        if br.status not in (EXISTING, CANDIDATE):
            problems.append(f"{tag}: unknown status {br.status!r}")
    for g in net.generators:
        if g.bus not in bus_ids:
            problems.append(f"generator {g.id}: bus {g.bus} does not exist")
        if g.p_min > g.p_max:
            problems.append(f"generator {g.id}: p_min > p_max")
        if g.q_min > g.q_max:
            problems.append(f"generator {g.id}: q_min > q_max")
    if net.slack_bus is not None and net.slack_bus not in bus_ids:
        problems.append(f"slack bus {net.slack_bus} does not exist")
    if problems:
        raise ValidationError(problems)
    # Connectivity over existing branches is advisory only: candidates may
    # restore it at design time.
    if net.buses and not _connected_over(net, net.active_branches):
        warnings.warn("network is not connected over existing branches", stacklevel=2)


def _connected_over(net: Network, branches: Sequence[Branch]) -> bool:
    adj: dict[int, set[int]] = {b.id: set() for b in net.buses}
    for br in branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    if not net.buses:
        return True
    start = net.buses[0].id
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(net.buses)


def apply_topology(net: Network, alpha: Mapping[int, int]) -> Network:
    """Return a network whose branch set is B plus the selected candidates.

    `alpha` maps candidate ordinal (position in `net.candidate_branches`) to
    0 or 1. Keys must cover the candidate set exactly. The input network is
    not modified; built candidates become existing branches in the result.
    """
    cands = net.candidate_branches
    expected = set(range(len(cands)))
    got = set(alpha)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise KeyError(f"alpha keys must cover candidates exactly: missing {missing}, extra {extra}")
    kept = [br for br in net.branches if br.status == EXISTING]
    for k, cand in enumerate(cands):
        if alpha[k]:
            kept.append(replace(cand, status=EXISTING))
    return replace(net, branches=tuple(_assign_ordinals(kept)))


# ---------------------------------------------------------------------------
# Native JSON case format ("ecogrid-case/1")
# ---------------------------------------------------------------------------

def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise CaseFormatError(f"{where}: missing required field {key!r}")
    return obj[key]


def _network_from_native(doc: dict, where: str) -> Network:
    if doc.get("format") != NATIVE_FORMAT:
        raise CaseFormatError(
            f"{where}: unsupported format {doc.get('format')!r}, expected {NATIVE_FORMAT!r}"
        )
    base = float(_require(doc, "base_mva", where))
    if base <= 0:
        raise CaseFormatError(f"{where}: base_mva must be positive")
    buses = []
    for i, rec in enumerate(_require(doc, "buses", where)):
        w = f"{where}: buses[{i}]"
        buses.append(Bus(
            id=int(_require(rec, "id", w)),
            v_min=float(rec.get("v_min", 0.9)),
            v_max=float(rec.get("v_max", 1.1)),
            p_load=float(rec.get("p_load", 0.0)) / base,
            q_load=float(rec.get("q_load", 0.0)) / base,
        ))
    raw_branches = list(_require(doc, "branches", where))
    branches: list[Branch] = []
    for i, rec in enumerate(raw_branches):
        w = f"{where}: branches[{i}]"
        like = rec.get("same_as")
        if like is not None:
            src = next(
                (b for b in branches
                 if {b.from_bus, b.to_bus} == {int(like[0]), int(like[1])}),
                None,
            )
            if src is None:
                raise CaseFormatError(f"{w}: same_as references unknown branch {like}")
            branches.append(Branch(
                from_bus=int(_require(rec, "from_bus", w)),
                to_bus=int(_require(rec, "to_bus", w)),
                resistance=src.resistance,
                reactance=src.reactance,
                s_max=src.s_max,
                status=rec.get("status", EXISTING),
            ))
            continue
        branches.append(Branch(
            from_bus=int(_require(rec, "from_bus", w)),
            to_bus=int(_require(rec, "to_bus", w)),
            resistance=float(rec.get("r", 0.0)),
            reactance=float(_require(rec, "x", w)),
            s_max=float(_require(rec, "s_max", w)) / base,
            status=rec.get("status", EXISTING),
        ))
    gens = []
    for i, rec in enumerate(_require(doc, "generators", where)):
        w = f"{where}: generators[{i}]"
        p_set = rec.get("p_set")
        gens.append(Generator(
            id=int(rec.get("id", i + 1)),
            bus=int(_require(rec, "bus", w)),
            p_min=float(rec.get("p_min", 0.0)) / base,
            p_max=float(_require(rec, "p_max", w)) / base,
            q_min=float(rec.get("q_min", 0.0)) / base,
            q_max=float(rec.get("q_max", 0.0)) / base,
            s_max=float(rec.get("s_max", float("inf"))) / base,
            p_set=None if p_set is None else float(p_set) / base,
            v_set=float(rec.get("v_set", 1.0)),
        ))
    slack = doc.get("slack_bus")
    net = Network(
        buses=tuple(buses),
        branches=tuple(_assign_ordinals(branches)),
        generators=tuple(gens),
        base_mva=base,
        slack_bus=None if slack is None else int(slack),
    )
    validate(net)
    return net


def network_to_native(net: Network) -> dict:
    """Serialize a Network back to the native JSON document (MW/MVAr units)."""
    base = net.base_mva
    doc = {
        "format": NATIVE_FORMAT,
        "base_mva": base,
        "buses": [
            {"id": b.id, "v_min": b.v_min, "v_max": b.v_max,
             "p_load": b.p_load * base, "q_load": b.q_load * base}
            for b in net.buses
        ],
        "generators": [
            {"id": g.id, "bus": g.bus,
             "p_min": g.p_min * base, "p_max": g.p_max * base,
             "q_min": g.q_min * base, "q_max": g.q_max * base,
             **({} if g.s_max == float("inf") else {"s_max": g.s_max * base}),
             **({} if g.p_set is None else {"p_set": g.p_set * base}),
             "v_set": g.v_set}
            for g in net.generators
        ],
        "branches": [
            {"from_bus": br.from_bus, "to_bus": br.to_bus,
             "r": br.resistance, "x": br.reactance,
             "s_max": br.s_max * base, "status": br.status}
            for br in net.branches
        ],
    }
    if net.slack_bus is not None:
        doc["slack_bus"] = net.slack_bus
    return doc


def save_case(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_native(net), indent=2, sort_keys=True) + "\n")


def load_case(path: str | Path, format: str = "native-json") -> Network:
    """Load and validate a case file.

    Supported formats: "native-json" (the ecogrid-case/1 schema) and
    "matpower-subset" (bus/gen/branch/ne_branch tables of a MATPOWER .m file).
    """
    path = Path(path)
    if not path.exists():
        raise CaseFormatError(f"{path}: no such file")
    if format == "native-json":
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise CaseFormatError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from e
        if not isinstance(doc, dict):
            raise CaseFormatError(f"{path}: top-level value must be an object")
        return _network_from_native(doc, str(path))
    if format == "matpower-subset":
        from .matpower import parse_matpower
        net = parse_matpower(path.read_text(), where=str(path))
        validate(net)
        return net
    raise CaseFormatError(f"unknown case format {format!r}")
