"""Mean curvature flow of graphs of area-preserving surface maps.

Torus maps are evolved on periodic grids in the flat product of two tori;
equivariant twist maps of the round sphere are evolved as a 1-D problem in
colatitude. Observables follow the flow and are written as CSV.
"""

from __future__ import annotations

from .errors import ConfigError, DegenerateGraphError, GeneratorError, LagflowError, NumericError
from .flow import FlowConfig, FlowResult, FlowState, cfl_dt, project_area_preserving, run, step
from .generators import GeneratorSpec, StreamMode, generate, generate_with_report, validate
from .grid import MapGrid, read_map, write_map
from .observables import (
    CSV_COLUMNS,
    ObservableRow,
    comparison_bound,
    gaussian_density,
    max_rho,
    parabolic_rescale,
    read_csv,
    willmore,
    write_csv,
)
from .sphere import TwistProfile, read_profile, run_sphere, sphere_geometry, twist_velocity, write_profile
from .torus import GeometryField, b_identities, b_sigma_from_A, compute_geometry, eta_field, lagrangian_defect

__all__ = [
    "CSV_COLUMNS",
    "ConfigError",
    "DegenerateGraphError",
    "FlowConfig",
    "FlowResult",
    "FlowState",
    "GeneratorError",
    "GeneratorSpec",
    "GeometryField",
    "LagflowError",
    "MapGrid",
    "NumericError",
    "ObservableRow",
    "StreamMode",
    "TwistProfile",
    "b_identities",
    "b_sigma_from_A",
    "cfl_dt",
    "comparison_bound",
    "compute_geometry",
    "eta_field",
    "gaussian_density",
    "generate",
    "generate_with_report",
    "lagrangian_defect",
    "max_rho",
    "parabolic_rescale",
    "project_area_preserving",
    "read_csv",
    "read_map",
    "read_profile",
    "run",
    "run_sphere",
    "sphere_geometry",
    "step",
    "twist_velocity",
    "validate",
    "willmore",
    "write_csv",
    "write_map",
    "write_profile",
]

__version__ = "0.1.0"
