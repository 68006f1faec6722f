"""Numerical laboratory for thin branched Dirichlet wave guides.

Computes Dirichlet spectra of thin planar domains built around metric
graphs, shifts them by the transversal threshold and compares them with the
decoupled edge operators ``-d^2/dx^2 - kappa^2/4``.
"""

__version__ = "0.1.0"

from qwglab.graph import (
    CROSS_SECTION,
    CurvatureProfile,
    Edge,
    GraphError,
    LimitSpectrum,
    MetricGraph,
    Vertex,
    eta_bound,
    limit_spectrum_1d,
    merged_limit_spectrum,
    straight_limit_spectrum,
    validate_graph,
)

__all__ = [
    "CROSS_SECTION",
    "CurvatureProfile",
    "Edge",
    "GraphError",
    "LimitSpectrum",
    "MetricGraph",
    "Vertex",
    "eta_bound",
    "limit_spectrum_1d",
    "merged_limit_spectrum",
    "straight_limit_spectrum",
    "validate_graph",
]
