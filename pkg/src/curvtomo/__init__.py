"""Transport tomography along trajectories of a potential plus magnetic force.

The package traces trajectories of ``x'' = -grad(phi) + Y x'`` on a fixed
energy shell, builds the attenuated ray transform and the scattering
transport solver along those curves, and reconstructs sources from
boundary measurements.
"""

from .errors import (ConfigError, CurvtomoError, DivergenceError, DomainError, FileFormatError,
                     ShellError, TrappedTrajectoryError)
from .geometry import (Disc, Domain, Ellipse, EnergyShell, ForceField, Geometry, GriddedField,
                       IntegratorOptions, LevelSetDomain, Magnetic, PhaseState, Potential)
from .dynamics import (BoundaryNodes, boundary_measure_nodes, check_nontrapping,
                       check_strict_convexity, energy_drift, energy_drift_sweep, santalo_check,
                       shoot_trajectory)
from .grids import PhaseFunction, PhaseGrid, SourceImage, SpatialGrid
from .fields import AttenuationField, ScatteringKernel
from .raytransform import (BoundarySinogram, RayOperator, adjoint_dot_test, build_ray_operator,
                           continuous_adjoint, exit_jacobian)
from .transport import TransportModel, TransportSolution
from .reconstruction import (InverseProblemSetup, MeasurementOperator, ReconstructionResult,
                             injectivity_probe, reconstruct_cgne, reconstruct_landweber,
                             stability_probe)
from .phantoms import band_limited_ensemble, make_phantom
from .config import ExperimentConfig, load_config, parse_config

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CurvtomoError", "DivergenceError", "DomainError", "FileFormatError",
    "ShellError", "TrappedTrajectoryError",
    "Disc", "Domain", "Ellipse", "EnergyShell", "ForceField", "Geometry", "GriddedField",
    "IntegratorOptions", "LevelSetDomain", "Magnetic", "PhaseState", "Potential",
    "BoundaryNodes", "boundary_measure_nodes", "check_nontrapping", "check_strict_convexity",
    "energy_drift", "energy_drift_sweep", "santalo_check", "shoot_trajectory",
    "PhaseFunction", "PhaseGrid", "SourceImage", "SpatialGrid",
    "AttenuationField", "ScatteringKernel",
    "BoundarySinogram", "RayOperator", "adjoint_dot_test", "build_ray_operator",
    "continuous_adjoint", "exit_jacobian",
    "TransportModel", "TransportSolution",
    "InverseProblemSetup", "MeasurementOperator", "ReconstructionResult", "injectivity_probe",
    "reconstruct_cgne", "reconstruct_landweber", "stability_probe",
    "band_limited_ensemble", "make_phantom",
    "ExperimentConfig", "load_config", "parse_config",
]
