"""Bio-inspired robust transmission network design.

Designs transmission topologies that maximize ecological robustness, the
balance of pathway efficiency and redundancy measured on a directed flow
matrix, subject to DC power-flow constraints, and evaluates them with N-x
contingency sweeps.
"""

__version__ = "0.1.0"

from .contingency import ContingencyReport, compare_designs, run_contingencies
from .design import (
    DesignProblem,
    DesignSolution,
    NlpSettings,
    check_ac_feasibility,
    optimize_design,
    solve_inner_nlp,
)
from .ecometrics import (
    EcoFlowMatrix,
    OperatingPoint,
    RobustnessReport,
    ascendency,
    build_ecoflow_matrix,
    development_capacity,
    robustness,
    robustness_curve,
    robustness_value,
    tstp,
)
from .model import (
    Branch,
    Bus,
    Generator,
    Network,
    apply_topology,
    load_case,
    save_case,
)
from .powerflow import (
    AcSolution,
    DcSolution,
    ViolationSet,
    check_limits,
    compute_losses,
    ptdf_matrix,
    solve_ac,
    solve_dc,
)

__all__ = [
    "AcSolution", "Branch", "Bus", "ContingencyReport", "DcSolution",
    "DesignProblem", "DesignSolution", "EcoFlowMatrix", "Generator",
    "Network", "NlpSettings", "OperatingPoint", "RobustnessReport",
    "ViolationSet", "apply_topology", "ascendency", "build_ecoflow_matrix",
    "check_ac_feasibility", "check_limits", "compare_designs",
    "compute_losses", "development_capacity", "load_case", "optimize_design",
    "ptdf_matrix", "robustness", "robustness_curve", "robustness_value",
    "run_contingencies", "save_case", "solve_ac", "solve_dc",
    "solve_inner_nlp", "tstp",
]
