"""End-to-end melting pipeline: trap -> crystal -> barrier -> thermal statistics.

One MeltingPoint bundles everything the melting plots need at a single trap
anisotropy: the fitted rotation barrier, the thermal angular density at the
working temperature, its correlation amplitude C and, when the crystal is
localized enough, the angular spread of the peaks.
"""

import math
from dataclasses import dataclass

import numpy as np

from .analysis import (
    SpreadFit,
    Suppressed,
    correlate,
    fit_angular_spread,
)
from .barrier import (
    BarrierFit,
    ThermalParameters,
    fit_barrier,
    rotation_energy_curve,
    shell_eta_seed,
    thermal_angular_density,
)
from .constants import CONSTANTS
from .energy import PlanarConfiguration
from .errors import PlacementFailed
from .groundstate import (
    GridSpec,
    MinimizationResult,
    ShellDecomposition,
    assign_shells,
    find_ground_state,
    relax_configuration,
)
from .trap import (
    BA138,
    IonSpecies,
    TrapCalibration,
    TrapModel,
    default_calibration,
    get_species,
    mathieu_for_species,
    vdc_for_ratio,
    vrf_for_qy,
)

REFERENCE_Q_Y = -0.182  # RF drive strength all melting scans are taken at


def trap_for_ratio(
    ratio: float,
    cal: TrapCalibration | None = None,
    species: IonSpecies = BA138,
    q_y: float = REFERENCE_Q_Y,
) -> TrapModel:
    """Trap at the reference RF drive with the requested omega_y / omega_z."""
    cal = cal or default_calibration()
    v_rf = vrf_for_qy(cal, species, q_y)
    return mathieu_for_species(cal, vdc_for_ratio(cal, species, ratio, v_rf), v_rf, species)


@dataclass(frozen=True)
class Impurity:
    """A substituted ion and the shell it must settle in ('inner' or 'outer')."""

    species: IonSpecies
    shell: str

    def __post_init__(self):
        if self.shell not in ("inner", "outer"):
            raise ValueError("impurity shell must be 'inner' or 'outer'")


def parse_impurity(spec: str) -> Impurity:
    """Parse an impurity request of the form '137Ba@inner'."""
    label, sep, shell = spec.partition("@")
    if not sep or not label or not shell:
        raise ValueError(f"impurity spec {spec!r} must look like '137Ba@inner'")
    return Impurity(species=get_species(label), shell=shell.strip().lower())


@dataclass
class ShellBarrier:
    """Ground state, shell split and fitted rotation barrier at one trap setting."""

    ground: MinimizationResult
    decomposition: ShellDecomposition
    fit: BarrierFit
    curve_theta: np.ndarray
    curve_energy: np.ndarray

    @property
    def n_t(self) -> int:
        return self.fit.n_t


def shell_barrier(
    n: int,
    trap: TrapModel,
    seed: int = 0,
    species: IonSpecies = BA138,
    impurity: Impurity | None = None,
    pin_inner: bool = True,
    restarts: int = 5,
    grid: GridSpec = GridSpec(),
    theta_points: int = 25,
) -> ShellBarrier:
    """Compute and fit the outer-shell rotation barrier of an n-ion crystal.

    An impurity spec is a preparation instruction: the pure crystal is
    relaxed first, then one ion of the requested shell is substituted and
    the crystal re-relaxed.  Placements differ by only microkelvins, so the
    swap is how the state is prepared, not a property of blind restarts.
    PlacementFailed signals the substitute drifting out of its shell.
    """
    if impurity is not None and n < 2:
        raise ValueError("an impurity needs at least a 2-ion crystal")
    ground = find_ground_state([species] * n, trap, seed=seed, restarts=restarts, grid=grid)
    dec = assign_shells(ground.config)
    if impurity is not None:
        pos = ground.config.positions
        members = dec.inner_indices() if impurity.shell == "inner" else list(dec.outer())
        if not members:
            raise PlacementFailed(f"crystal of {n} ions has no {impurity.shell} shell")
        if impurity.shell == "inner":
            site = min(members, key=lambda i: (math.hypot(pos[i, 0], pos[i, 1]), i))
        else:
            site = min(members, key=lambda i: (abs(math.atan2(pos[i, 0], pos[i, 1])), i))
        roster = [species] * n
        roster[site] = impurity.species
        ground = relax_configuration(
            PlanarConfiguration(roster, pos), trap, grid=grid, seed=seed
        )
        dec = assign_shells(ground.config)
        members = dec.inner_indices() if impurity.shell == "inner" else list(dec.outer())
        if site not in members:
            raise PlacementFailed(
                f"impurity {impurity.species.label} drifted out of the "
                f"{impurity.shell} shell while relaxing"
            )
    n_t = len(list(dec.outer()))
    theta_grid = np.linspace(0.0, 2.0 * math.pi / n_t, theta_points)
    curve = rotation_energy_curve(
        ground,
        trap,
        theta_grid=theta_grid,
        pin_inner=pin_inner,
        grid=grid,
        seed=seed,
        decomposition=dec,
    )
    # the geometric aspect pins down eta for a species-uniform ring; a mixed
    # ring's curve is deformed by the heavy ion and needs the shape freedom
    outer = list(dec.outer())
    uniform = len({ground.config.species[i].label for i in outer}) == 1
    fit = fit_barrier(
        curve, eta_seed=shell_eta_seed(ground.config, outer) if uniform else None
    )
    return ShellBarrier(
        ground=ground,
        decomposition=dec,
        fit=fit,
        curve_theta=curve.theta,
        curve_energy=curve.energy,
    )


@dataclass
class MeltingPoint:
    """Thermal melting observables at one anisotropy ratio."""

    ratio: float
    n: int
    n_t: int
    v_b: float  # joules
    c: float
    spread: SpreadFit | Suppressed
    temperature: float  # kelvin
    barrier: ShellBarrier

    @property
    def v_b_mk(self) -> float:
        return self.v_b / CONSTANTS.k_b * 1e3

    @property
    def sigma_over_theta_nt(self) -> float | None:
        if isinstance(self.spread, SpreadFit):
            return self.spread.sigma_over_theta_nt
        return None

    @property
    def suppressed(self) -> bool:
        return isinstance(self.spread, Suppressed)


def melting_point(
    n: int,
    ratio: float,
    temperature: float,
    cal: TrapCalibration | None = None,
    seed: int = 0,
    impurity: Impurity | None = None,
    bins: int = 360,
    barrier: ShellBarrier | None = None,
) -> MeltingPoint:
    """One point of a melting curve: C and spread at (ratio, temperature).

    A precomputed ShellBarrier for this ratio can be passed to reuse the
    expensive crystal work across temperatures.
    """
    if barrier is None:
        trap = trap_for_ratio(ratio, cal)
        barrier = shell_barrier(n, trap, seed=seed, impurity=impurity)
    thermal = ThermalParameters(temperature=temperature)
    density = thermal_angular_density(barrier.fit, thermal, bins=bins)
    result = correlate(density, barrier.n_t)
    spread = fit_angular_spread(density, barrier.n_t)
    return MeltingPoint(
        ratio=ratio,
        n=n,
        n_t=barrier.n_t,
        v_b=barrier.fit.v_b,
        c=result.c,
        spread=spread,
        temperature=temperature,
        barrier=barrier,
    )


def melting_curve(
    n: int,
    ratios,
    temperature: float,
    cal: TrapCalibration | None = None,
    seed: int = 0,
    impurity: Impurity | None = None,
    bins: int = 360,
) -> list:
    """MeltingPoints across anisotropy ratios at a fixed temperature."""
    cal = cal or default_calibration()
    return [
        melting_point(n, float(r), temperature, cal=cal, seed=seed, impurity=impurity, bins=bins)
        for r in ratios
    ]


class CorrelationSimulator:
    """Callable T -> [(ratio, C)] reusing one barrier fit per ratio.

    This is the 'theory curve' generator handed to fit_temperature: the
    crystal work is done once per ratio, then each temperature only costs a
    Boltzmann reweighting of the angular density.
    """

    def __init__(
        self,
        n: int,
        ratios,
        cal: TrapCalibration | None = None,
        seed: int = 0,
        impurity: Impurity | None = None,
        bins: int = 360,
    ):
        self.n = int(n)
        self.ratios = [float(r) for r in ratios]
        self.bins = bins
        cal = cal or default_calibration()
        self.barriers = [
            shell_barrier(self.n, trap_for_ratio(r, cal), seed=seed, impurity=impurity)
            for r in self.ratios
        ]

    def __call__(self, temperature: float) -> list:
        thermal = ThermalParameters(temperature=float(temperature))
        pairs = []
        for ratio, barrier in zip(self.ratios, self.barriers):
            density = thermal_angular_density(barrier.fit, thermal, bins=self.bins)
            pairs.append((ratio, correlate(density, barrier.n_t).c))
        return pairs
