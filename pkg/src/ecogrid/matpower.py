"""MATPOWER-subset importer: baseMVA, bus, gen, branch, and ne_branch tables.

Only the columns the network model needs are read; cost tables, DC lines,
and the remaining bus/gen columns are ignored. Branch rows with br_status 0
are dropped.
"""

from __future__ import annotations

import re

from .model import Branch, Bus, CANDIDATE, CaseFormatError, EXISTING, Generator, Network, _assign_ordinals

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.DOTALL)
_BASE_RE = re.compile(r"mpc\.baseMVA\s*=\s*([0-9eE.+-]+)\s*;")


def _parse_matrix(text: str) -> list[list[float]]:
    rows = []
    for line in text.split(";"):
        line = line.split("%")[0].strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError as e:
            raise CaseFormatError(f"bad numeric row: {line!r}") from e
    return rows


def parse_matpower(text: str, where: str = "<string>") -> Network:
    """Parse the MATPOWER-subset tables of a case file into a Network."""
    m = _BASE_RE.search(text)
    if m is None:
        raise CaseFormatError(f"{where}: missing mpc.baseMVA")
    base = float(m.group(1))

    tables: dict[str, list[list[float]]] = {}
    for name, body in _MATRIX_RE.findall(text):
        tables[name] = _parse_matrix(body)
    for required in ("bus", "gen", "branch"):
        if required not in tables:
            raise CaseFormatError(f"{where}: missing mpc.{required} table")

    buses = []
    for row in tables["bus"]:
        if len(row) < 13:
            raise CaseFormatError(f"{where}: bus row too short: {row}")
        buses.append(Bus(
            id=int(row[0]),
            p_load=row[2] / base,
            q_load=row[3] / base,
            v_max=row[11],
            v_min=row[12],
        ))

    gens = []
    for i, row in enumerate(tables["gen"]):
        if len(row) < 10:
            raise CaseFormatError(f"{where}: gen row too short: {row}")
        gens.append(Generator(
            id=i + 1,
            bus=int(row[0]),
            p_set=row[1] / base,
            q_max=row[3] / base,
            q_min=row[4] / base,
            v_set=row[5] if row[5] > 0 else 1.0,
            p_max=row[8] / base,
            p_min=row[9] / base,
        ))

    def branch_rows(name: str, status: str) -> list[Branch]:
        out = []
        for row in tables.get(name, []):
            if len(row) < 11:
                raise CaseFormatError(f"{where}: {name} row too short: {row}")
            if row[10] == 0:  # br_status
                continue
            out.append(Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                resistance=row[2],
                reactance=row[3],
                s_max=row[5] / base,
                status=status,
            ))
        return out

    branches = branch_rows("branch", EXISTING) + branch_rows("ne_branch", CANDIDATE)
    # MATPOWER convention: the slack is the type-3 bus.
    slack = next((int(r[0]) for r in tables["bus"] if int(r[1]) == 3), None)
    return Network(
        buses=tuple(buses),
        branches=tuple(_assign_ordinals(branches)),
        generators=tuple(gens),
        base_mva=base,
        slack_bus=slack,
    )
