"""Iterated-logarithm asymptotics of flows toward weight filtrations"""

import sys as _sys

if _sys.version_info < (3, 10):
    raise ImportError("iterlog requires Python 3.10 or later")

from ._csf import (  # noqa: E402
    CylinderConfig,
    build_cylinder,
    chamber_rates,
    compare_pde_ode,
    extract_y,
    fit_ansatz,
    fixed_point,
    grid,
    initial_curve,
    integrate_ode,
    integrate_pde,
    wall_asymptotics,
)
from ._errors import (  # noqa: E402
    AxiomError,
    BlowUpError,
    ConfigError,
    ConsistencyError,
    DomainError,
    IntegrationError,
    IterlogError,
    LatticeTooLargeError,
    NotALatticeError,
    StiffnessError,
)
from ._flow import (  # noqa: E402
    StabilityVerdict,
    Verdict,
    asymptotic_fit,
    check_monotonicity,
    compare_trajectories,
    construct_asymptotic_solution,
    greens_correction,
    integrate_metric_flow,
    king_test,
    projector_lattice,
    rescale_time,
    total_asymptotics,
)
from ._lattice import (  # noqa: E402
    Chamber,
    IteratedLabel,
    OrientedCycleGraph,
    PolarizedLattice,
    Polarization,
    SubsetLattice,
    TableLattice,
    build_ideal_lattice,
    cycle_graph_digraph,
    find_wall_point,
    five_cycle,
    harder_narasimhan,
    is_polystable,
    is_semistable,
    iterated_weight_filtration,
    total_filtration,
    walls_5cycle,
    weight_filtration,
    weight_grading,
)
from ._lozenge import (  # noqa: E402
    Arrow,
    LozengeAlgebra,
    QuiverData,
    build_from_quiver,
    check_axioms,
    greens_operator,
    harmonic_algebra,
    harmonic_projection,
    hodge_decomposition,
    laplacians,
)

del _csf, _errors, _flow, _lattice, _lozenge, _sys  # type: ignore[name-defined] # noqa: F821

__all__ = [
    "Arrow",
    "AxiomError",
    "BlowUpError",
    "Chamber",
    "ConfigError",
    "ConsistencyError",
    "CylinderConfig",
    "DomainError",
    "IntegrationError",
    "IterlogError",
    "IteratedLabel",
    "LatticeTooLargeError",
    "LozengeAlgebra",
    "NotALatticeError",
    "OrientedCycleGraph",
    "PolarizedLattice",
    "Polarization",
    "QuiverData",
    "StabilityVerdict",
    "StiffnessError",
    "SubsetLattice",
    "TableLattice",
    "Verdict",
    "asymptotic_fit",
    "build_cylinder",
    "build_from_quiver",
    "build_ideal_lattice",
    "chamber_rates",
    "check_axioms",
    "check_monotonicity",
    "compare_pde_ode",
    "compare_trajectories",
    "construct_asymptotic_solution",
    "cycle_graph_digraph",
    "extract_y",
    "find_wall_point",
    "fit_ansatz",
    "five_cycle",
    "fixed_point",
    "greens_correction",
    "greens_operator",
    "grid",
    "harder_narasimhan",
    "harmonic_algebra",
    "harmonic_projection",
    "hodge_decomposition",
    "initial_curve",
    "integrate_metric_flow",
    "integrate_ode",
    "integrate_pde",
    "is_polystable",
    "is_semistable",
    "iterated_weight_filtration",
    "king_test",
    "laplacians",
    "projector_lattice",
    "rescale_time",
    "total_asymptotics",
    "total_filtration",
    "wall_asymptotics",
    "walls_5cycle",
    "weight_filtration",
    "weight_grading",
]
__version__ = "0.1.0"
