"""Dirac operators with Kirchhoff-type vertex conditions on metric graphs,
their spectra, and normalized solutions of the nonlinear Dirac equation with
a nonlinearity localized on the compact core."""
from .graph_model import (BoundedEdge, CoreOnly, CoreUnionSegment, HalfLine, MetricGraph,
                          make_graph, parse_graph)
from .dirac_core import DiracParams, Grid, assemble_dirac, eigen, eigenvalues
from .functionals import NonlinearitySpec, PenalizationSpec, estimate_gns, thresholds
from .solver import (ContinuationSchedule, SolveReport, continuation_solve, direct_solve,
                     verify_nonexistence_chain)

__version__ = "0.1.0"

__all__ = [
    "BoundedEdge", "CoreOnly", "CoreUnionSegment", "HalfLine", "MetricGraph", "make_graph",
    "parse_graph", "DiracParams", "Grid", "assemble_dirac", "eigen", "eigenvalues",
    "NonlinearitySpec", "PenalizationSpec", "estimate_gns", "thresholds",
    "ContinuationSchedule", "SolveReport", "continuation_solve", "direct_solve",
    "verify_nonexistence_chain",
]
