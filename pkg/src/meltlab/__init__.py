"""Orientational melting of mesoscopic 2D ion crystals: simulation and analysis.

The package splits into a physics stack (trap voltages -> Mathieu parameters ->
crystal ground states -> shell rotation barriers -> thermal angular densities)
and a measurement stack (synthetic camera frames -> ring extraction -> angular
correlations, spreads and temperatures).  The meltlab command drives both.
"""

from meltlab.analysis import (
    DEFAULT_T_GRID,
    SUPPRESSION_THRESHOLD,
    AngularDensity,
    CorrelationResult,
    SpreadFit,
    Suppressed,
    TemperatureFit,
    angular_correlation,
    bin_centers,
    correlate,
    correlation_amplitude,
    fit_angular_spread,
    fit_temperature,
)
from meltlab.barrier import (
    BarrierCurve,
    BarrierFit,
    ThermalParameters,
    barrier_vs_n,
    convert_density,
    default_psf_sigma,
    eccentric_angle,
    fit_barrier,
    physical_angle,
    rigid_rotation_curve,
    rotation_energy_curve,
    shell_eta_seed,
    thermal_angular_density,
)
from meltlab.constants import CONSTANTS, joules_to_millikelvin, millikelvin_to_joules
from meltlab.energy import (
    PlanarConfiguration,
    load_configuration_csv,
    potential_energy,
    save_configuration_csv,
)
from meltlab.errors import (
    CoincidentIons,
    DegenerateShell,
    EmptyDensity,
    FitFailed,
    FrameOverflow,
    MeltlabError,
    NoRing,
    NoSolution,
    NotConverged,
    PlacementFailed,
    ShapeMismatch,
    UnstableTrap,
)
from meltlab.groundstate import (
    MAX_IONS,
    Ellipse,
    GridSpec,
    MinimizationResult,
    ShellDecomposition,
    assign_shells,
    find_ground_state,
    fit_enclosing_ellipse,
    relax_configuration,
)
from meltlab.imaging import (
    DensityImage,
    EllipseROI,
    Optics,
    PolarImage,
    angular_profile,
    find_roi,
    read_csv_image,
    read_pgm,
    render_image,
    subtract_background,
    to_elliptic,
    write_csv_image,
    write_pgm,
)
from meltlab.melting import (
    REFERENCE_Q_Y,
    CorrelationSimulator,
    Impurity,
    MeltingPoint,
    ShellBarrier,
    melting_curve,
    melting_point,
    parse_impurity,
    shell_barrier,
    trap_for_ratio,
)
from meltlab.trap import (
    BA136,
    BA137,
    BA138,
    IonSpecies,
    TrapCalibration,
    TrapModel,
    default_calibration,
    fit_calibration,
    get_species,
    is_stable,
    load_calibration,
    mathieu_for_species,
    save_calibration,
    secular_frequencies,
    symmetric_locus,
    symmetric_vdc,
    trap_from_frequencies,
    vdc_for_ratio,
    vrf_for_qy,
)

__all__ = [
    "AngularDensity",
    "BA136",
    "BA137",
    "BA138",
    "BarrierCurve",
    "BarrierFit",
    "CONSTANTS",
    "CoincidentIons",
    "CorrelationResult",
    "CorrelationSimulator",
    "DEFAULT_T_GRID",
    "DegenerateShell",
    "DensityImage",
    "Ellipse",
    "EllipseROI",
    "EmptyDensity",
    "FitFailed",
    "FrameOverflow",
    "GridSpec",
    "Impurity",
    "IonSpecies",
    "MAX_IONS",
    "MeltingPoint",
    "MeltlabError",
    "MinimizationResult",
    "NoRing",
    "NoSolution",
    "NotConverged",
    "Optics",
    "PlacementFailed",
    "PlanarConfiguration",
    "PolarImage",
    "REFERENCE_Q_Y",
    "SUPPRESSION_THRESHOLD",
    "ShapeMismatch",
    "ShellBarrier",
    "ShellDecomposition",
    "SpreadFit",
    "Suppressed",
    "TemperatureFit",
    "ThermalParameters",
    "TrapCalibration",
    "TrapModel",
    "UnstableTrap",
    "angular_correlation",
    "angular_profile",
    "assign_shells",
    "barrier_vs_n",
    "bin_centers",
    "convert_density",
    "correlate",
    "correlation_amplitude",
    "default_calibration",
    "default_psf_sigma",
    "eccentric_angle",
    "find_ground_state",
    "find_roi",
    "fit_angular_spread",
    "fit_barrier",
    "fit_calibration",
    "fit_enclosing_ellipse",
    "fit_temperature",
    "get_species",
    "is_stable",
    "joules_to_millikelvin",
    "load_calibration",
    "load_configuration_csv",
    "mathieu_for_species",
    "melting_curve",
    "melting_point",
    "millikelvin_to_joules",
    "parse_impurity",
    "physical_angle",
    "potential_energy",
    "read_csv_image",
    "read_pgm",
    "relax_configuration",
    "render_image",
    "rigid_rotation_curve",
    "rotation_energy_curve",
    "save_calibration",
    "save_configuration_csv",
    "secular_frequencies",
    "shell_barrier",
    "shell_eta_seed",
    "subtract_background",
    "symmetric_locus",
    "symmetric_vdc",
    "thermal_angular_density",
    "to_elliptic",
    "trap_for_ratio",
    "trap_from_frequencies",
    "vdc_for_ratio",
    "vrf_for_qy",
    "write_csv_image",
    "write_pgm",
]
