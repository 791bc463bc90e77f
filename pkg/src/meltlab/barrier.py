"""Hindered rotation of a shell: energy curves, barrier fits, thermal densities.

The curve is traced by rotating the outer shell away from its ground
orientation in steps spanning one corrugation period, tethering one outer ion
to a ray at the target angle, and re-relaxing on the grid (inner ions stay
pinned at their ground positions by default, so the curve measures the
corrugation the outer shell rides over).

On an elliptical shell the corrugation is periodic in the elliptic (De La
Hire) angle rather than the polar angle; tan(theta) = eta tan(theta_e) links
the two, and the fit adapts eta until the data looks periodic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.optimize import least_squares, minimize_scalar

from .analysis import AngularDensity, bin_centers
from .constants import CONSTANTS
from .energy import PlanarConfiguration, potential_energy
from .errors import DegenerateShell, FitFailed
from .groundstate import (
    GridSpec,
    MinimizationResult,
    RayConstraint,
    ShellDecomposition,
    _Minimizer,
    _snap_to_ray,
    assign_shells,
    find_ground_state,
    fit_enclosing_ellipse,
)
from .trap import BA138, IonSpecies, TrapModel

TWO_PI = 2.0 * math.pi


# --- elliptic angle geometry ------------------------------------------------------


def _branch_continuous(theta, base_of):
    """Apply a (-pi, pi] -> (-pi, pi] angle map while preserving the branch."""
    theta = np.asarray(theta, dtype=float)
    wrapped = theta - TWO_PI * np.round(theta / TWO_PI)
    return base_of(wrapped) + (theta - wrapped)


def eccentric_angle(theta, eta):
    """Elliptic angle of the point at polar angle theta on an ellipse.

    eta is the aspect ratio r_y / r_z of the ellipse; tan(theta) =
    eta tan(theta_e), continued across branch cuts so theta_e tracks theta
    over any number of revolutions.  eta = 1 is the identity.
    """
    if eta <= 0:
        raise ValueError("aspect ratio must be positive")
    out = _branch_continuous(theta, lambda w: np.arctan2(np.sin(w), eta * np.cos(w)))
    return out if out.ndim else float(out)


def physical_angle(theta_e, eta):
    """Inverse of eccentric_angle: polar angle of the elliptic-angle point."""
    if eta <= 0:
        raise ValueError("aspect ratio must be positive")
    out = _branch_continuous(theta_e, lambda w: np.arctan2(eta * np.sin(w), np.cos(w)))
    return out if out.ndim else float(out)


def convert_density(density: AngularDensity, eta: float, nbins: int | None = None) -> AngularDensity:
    """Resample a density between elliptic-angle and polar-angle bin grids.

    Bin edges are pushed through the angle transform and each source bin's
    weight is split over the target bins by exact interval overlap, so total
    weight is conserved and a physically-uniform ring picks up the correct
    non-uniform elliptic-angle profile (and vice versa).
    """
    if density.angle_kind == "physical":
        mapper, target_kind = eccentric_angle, "eccentric"
    else:
        mapper, target_kind = physical_angle, "physical"
    nbins = density.nbins if nbins is None else nbins
    src = density.nbins
    edges = np.asarray(mapper(TWO_PI * np.arange(src + 1) / src, eta))
    out = np.zeros(nbins)
    width = TWO_PI / nbins
    for w, lo, hi in zip(density.values, edges[:-1], edges[1:]):
        space = hi - lo
        first, last = int(np.floor(lo / width)), int(np.floor((hi - 1e-15) / width))
        for b in range(first, last + 1):
            overlap = min(hi, (b + 1) * width) - max(lo, b * width)
            if overlap > 0:
                out[b % nbins] += w * overlap / space
    return AngularDensity(out, angle_kind=target_kind)


# --- rotation energy curve --------------------------------------------------------


@dataclass
class BarrierCurve:
    """Relaxed energy versus shell rotation over one corrugation period.

    theta holds the absolute ray angle of the constrained ion (radians from
    the +z axis, strictly increasing within [0, 2 pi / n_t]); energy is in
    joules with the curve minimum subtracted.
    """

    theta: np.ndarray
    energy: np.ndarray
    constrained_ion: int
    pinned: list  # ion indices frozen at their ground positions
    n_t: int

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.energy = np.asarray(self.energy, dtype=float)
        if self.theta.shape != self.energy.shape or self.theta.ndim != 1:
            raise ValueError("theta and energy must be matching 1-D arrays")
        if np.any(np.diff(self.theta) <= 0):
            raise ValueError("theta must be strictly increasing")
        if abs(float(self.energy.min())) > 1e-30:
            raise ValueError("energy must have its minimum subtracted")


def _constrained_ion_choice(config: PlanarConfiguration, outer: list) -> int:
    """The outer-shell ion whose ground angle is nearest 0 (deterministic)."""
    angles = np.arctan2(config.positions[outer, 0], config.positions[outer, 1])
    return outer[int(np.argmin(np.abs(angles)))]


def rotation_energy_curve(
    ground: MinimizationResult,
    trap: TrapModel,
    theta_grid: np.ndarray | None = None,
    pin_inner: bool = True,
    grid: GridSpec = GridSpec(),
    seed: int = 0,
    decomposition: ShellDecomposition | None = None,
    sweep_budget: int = 10_000,
) -> BarrierCurve:
    """Constrained-relaxation energy at each ray angle over one period.

    For each theta the outer shell starts rigidly rotated from the ground
    orientation so the constrained ion's ray sits at theta; the constrained
    ion may then only move along that ray while the rest of its shell (and
    the inner ions, unless pinned) relax freely.  Each theta uses its own
    seeded substream, so points are independent and reproducible.
    """
    config = ground.config
    dec = assign_shells(config) if decomposition is None else decomposition
    outer = list(dec.outer())
    n_t = len(outer)
    if theta_grid is None:
        theta_grid = np.linspace(0.0, TWO_PI / n_t, 25)
    theta_grid = np.asarray(theta_grid, dtype=float)
    if np.any(np.diff(theta_grid) <= 0):
        raise ValueError("theta_grid must be strictly increasing")
    if theta_grid[0] < -1e-12 or theta_grid[-1] > TWO_PI / n_t + 1e-12:
        raise ValueError("theta_grid must stay within one period [0, 2 pi / n_t]")

    tracked = _constrained_ion_choice(config, outer)
    pos0 = config.positions
    theta0 = math.atan2(pos0[tracked, 0], pos0[tracked, 1])
    radius0 = math.hypot(pos0[tracked, 0], pos0[tracked, 1])
    inner = dec.inner_indices()
    movable = outer if pin_inner else list(range(len(config)))
    pinned = list(inner) if pin_inner else []
    species = list(config.species)
    mini = _Minimizer(species, trap, grid)

    energies = np.empty(len(theta_grid))
    for j, theta in enumerate(theta_grid):
        delta = theta - theta0
        c, s = math.cos(delta), math.sin(delta)
        pos = pos0.copy()
        y, z = pos0[outer, 0], pos0[outer, 1]
        pos[outer, 0] = y * c + z * s
        pos[outer, 1] = z * c - y * s
        idx = np.column_stack([grid.nearest_index(pos[:, 0]), grid.nearest_index(pos[:, 1])])
        ray = RayConstraint(ion=tracked, angle=float(theta))
        idx[tracked] = _snap_to_ray(grid, radius0, ray)
        rng = np.random.default_rng(seed + j)
        idx, _, _ = mini.relax(idx, rng, sweep_budget, movable=movable, constraint=ray)
        final = PlanarConfiguration(species, mini.positions(idx))
        energies[j] = potential_energy(final, trap)
    return BarrierCurve(
        theta=theta_grid,
        energy=energies - energies.min(),
        constrained_ion=int(tracked),
        pinned=pinned,
        n_t=n_t,
    )


def rigid_rotation_curve(
    ground: MinimizationResult,
    trap: TrapModel,
    theta_grid: np.ndarray | None = None,
    decomposition: ShellDecomposition | None = None,
) -> tuple:
    """Oracle scan: the whole crystal rotated as a rigid body, no relaxation.

    Returns (theta, energy) with the minimum subtracted.  Relaxed curves must
    lie at or below this pointwise (they start from the rotated configuration
    and only ever move downhill).
    """
    config = ground.config
    dec = assign_shells(config) if decomposition is None else decomposition
    outer = list(dec.outer())
    if theta_grid is None:
        theta_grid = np.linspace(0.0, TWO_PI / len(outer), 25)
    theta_grid = np.asarray(theta_grid, dtype=float)
    tracked = _constrained_ion_choice(config, outer)
    pos0 = config.positions
    theta0 = math.atan2(pos0[tracked, 0], pos0[tracked, 1])
    energies = np.empty(len(theta_grid))
    for j, theta in enumerate(theta_grid):
        delta = theta - theta0
        c, s = math.cos(delta), math.sin(delta)
        pos = np.column_stack([
            pos0[:, 0] * c + pos0[:, 1] * s,
            pos0[:, 1] * c - pos0[:, 0] * s,
        ])
        energies[j] = potential_energy(PlanarConfiguration(list(config.species), pos), trap)
    return theta_grid, energies - energies.min()


# --- barrier shape fit ------------------------------------------------------------


@dataclass(frozen=True)
class BarrierFit:
    """Corrugation model a + b u + c u^3 + d u^4 + e u^5, u = cos(n_t theta_e + phi)."""

    eta: float  # fitted shell aspect ratio r_y / r_z
    phi: float
    coeffs: tuple  # (a, b, c, d, e) in joules
    n_t: int
    v_b: float  # peak-to-valley height of the fitted model, joules
    rms_residual: float  # joules

    def model_eccentric(self, theta_e):
        u = np.cos(self.n_t * np.asarray(theta_e, dtype=float) + self.phi)
        a, b, c, d, e = self.coeffs
        return a + b * u + c * u**3 + d * u**4 + e * u**5

    def model(self, theta):
        return self.model_eccentric(eccentric_angle(theta, self.eta))

    @property
    def v_b_mk(self) -> float:
        """Barrier height as a temperature, millikelvin."""
        return self.v_b / CONSTANTS.k_b * 1e3


def _design(u: np.ndarray, fundamental_only: bool) -> np.ndarray:
    if fundamental_only:
        return np.column_stack([np.ones_like(u), u])
    return np.column_stack([np.ones_like(u), u, u**3, u**4, u**5])


# curves dominated by even powers of the cosine (period-halved landscapes,
# e.g. an odd-fold ring in the two-fold trap) carry no fundamental harmonic,
# so the phase must be searched, not read off the first Fourier component
_PHI_GRID = np.linspace(0.0, math.pi, 24, endpoint=False)


def _linear_stage(theta, scaled, n_t, eta, fundamental_only):
    te = n_t * eccentric_angle(theta, eta)
    harm = np.column_stack([np.ones_like(te), np.cos(te), np.sin(te)])
    sol, *_ = np.linalg.lstsq(harm, scaled, rcond=None)
    # phi and phi + pi only flip the odd-power signs: half a turn covers all
    candidates = [math.atan2(-sol[2], sol[1]), *_PHI_GRID]
    best = None
    for phi in candidates:
        design = _design(np.cos(te + phi), fundamental_only)
        coeffs, *_ = np.linalg.lstsq(design, scaled, rcond=None)
        rss = float(np.sum((design @ coeffs - scaled) ** 2))
        if best is None or rss < best[2]:
            best = (phi, coeffs, rss)
    return best


def shell_eta_seed(config: PlanarConfiguration, shell) -> float | None:
    """Geometric aspect r_y0/r_z0 of a shell, or None when it has no ellipse."""
    shell = list(shell)
    if len(shell) < 3:
        return None
    try:
        e = fit_enclosing_ellipse(config, shell)
    except DegenerateShell:
        return None
    return e.r_y0 / e.r_z0


def fit_barrier(
    curve: BarrierCurve,
    eta_bounds: tuple = (0.3, 3.0),
    fundamental_only: bool = False,
    polish: bool = True,
    eta_seed: float | None = None,
) -> BarrierFit:
    """Joint least squares of the corrugation model over (eta, phi, a..e).

    eta enters through the elliptic-angle change of variable and is found by
    a coarse geometric scan plus a bounded refine, then a joint polish of all
    parameters.  One sampled period cannot always separate eta from a far
    mirror-image basin by residual alone; callers that know the shell
    geometry should pass ``eta_seed`` (the ring's r_y0/r_z0), which restricts
    the scan to etas within a factor 1.6 of it.  ``fundamental_only``
    restricts the model to the pure n_t-fold cosine (the near-isotropic
    sinusoidal regime).  Raises FitFailed when the rms residual exceeds 10%
    of the curve amplitude.
    """
    theta = np.asarray(curve.theta, dtype=float)
    energy = np.asarray(curve.energy, dtype=float)
    if len(theta) < 12:
        raise ValueError("need at least 12 samples per period to fit the barrier")
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(energy))):
        raise FitFailed("rotation curve contains non-finite values")
    n_t = curve.n_t
    if n_t < 1:
        raise ValueError("n_t must be at least 1")

    amplitude = float(energy.max() - energy.min())
    mean = float(energy.mean())
    scale = float(energy.std())
    if scale == 0.0:  # perfectly flat curve: no barrier
        return BarrierFit(
            eta=1.0, phi=0.0, coeffs=(mean, 0.0, 0.0, 0.0, 0.0),
            n_t=n_t, v_b=0.0, rms_residual=0.0,
        )
    scaled = (energy - mean) / scale

    # the residual landscape over eta is multimodal (a mirror-image basin can
    # fit the sampled curve tolerably); scan a coarse geometric grid to pick
    # the basin, then refine inside the winning bracket only
    def stage_residual(eta):
        return _linear_stage(theta, scaled, n_t, eta, fundamental_only)[2]

    lo_eta, hi_eta = (float(b) for b in eta_bounds)
    if eta_seed is not None:
        if not eta_seed > 0:
            raise ValueError("eta_seed must be positive")
        seed = min(max(float(eta_seed), lo_eta), hi_eta)
        lo_eta = max(lo_eta, seed / 1.6)
        hi_eta = min(hi_eta, seed * 1.6)
    grid = np.geomspace(lo_eta, hi_eta, 25 if eta_seed is not None else 41)
    coarse = [stage_residual(float(g)) for g in grid]
    k0 = int(np.argmin(coarse))
    bracket = (float(grid[max(k0 - 1, 0)]), float(grid[min(k0 + 1, len(grid) - 1)]))
    search = minimize_scalar(
        stage_residual,
        bounds=bracket,
        method="bounded",
        options={"xatol": 1e-5},
    )
    eta = float(search.x)
    phi, coeffs, _ = _linear_stage(theta, scaled, n_t, eta, fundamental_only)

    if polish:
        def residuals(p):
            te = n_t * eccentric_angle(theta, p[0]) + p[1]
            return _design(np.cos(te), fundamental_only) @ p[2:] - scaled

        k = len(coeffs)
        lo = [lo_eta, phi - np.pi] + [-np.inf] * k
        hi = [hi_eta, phi + np.pi] + [np.inf] * k
        x0 = np.concatenate([[eta, phi], coeffs])
        result = least_squares(residuals, x0, bounds=(lo, hi), method="trf")
        if np.all(np.isfinite(result.x)):
            eta, phi = float(result.x[0]), float(result.x[1])
            coeffs = result.x[2:]

    fitted = _design(np.cos(n_t * eccentric_angle(theta, eta) + phi), fundamental_only) @ coeffs
    rms = float(np.sqrt(np.mean((fitted - scaled) ** 2))) * scale
    u = np.cos(np.linspace(0.0, TWO_PI / n_t, 4097) * n_t + phi)
    v = _design(u, fundamental_only) @ coeffs
    full = np.zeros(5)
    full[: len(coeffs)] = coeffs
    if rms > 0.10 * amplitude:
        raise FitFailed("barrier model misses the curve by more than 10% of its amplitude")
    fit = BarrierFit(
        eta=eta,
        phi=phi % TWO_PI,
        coeffs=tuple(float(ci) * scale + (mean if i == 0 else 0.0) for i, ci in enumerate(full)),
        n_t=n_t,
        v_b=float(v.max() - v.min()) * scale,
        rms_residual=rms,
    )
    if not np.isfinite(fit.v_b):
        raise FitFailed("barrier fit produced a non-finite height")
    return fit


# --- thermal ring density ---------------------------------------------------------


def default_psf_sigma(n_t: int) -> float:
    """Angular blur used when none is given: 30% of an eighth of a peak spacing."""
    return 0.3 * TWO_PI / (8.0 * n_t)


@dataclass(frozen=True)
class ThermalParameters:
    """Temperature (kelvin) and imaging blur (radians) for density synthesis."""

    temperature: float
    psf_sigma: float | None = None  # None picks the default for the shell size

    def __post_init__(self):
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError("temperature must be positive")
        if self.psf_sigma is not None and self.psf_sigma < 0:
            raise ValueError("psf_sigma must be non-negative")

    @property
    def thermal_energy(self) -> float:
        """k_B T in joules."""
        return CONSTANTS.k_b * self.temperature


def thermal_angular_density(
    fit: BarrierFit,
    thermal: ThermalParameters,
    bins: int = 360,
) -> AngularDensity:
    """Boltzmann ring density over the eccentric angle at a given temperature.

    The collective rotation coordinate of the shell is its eccentric angle:
    a rigid ring rotation has an angle-independent kinetic metric (the
    squared site speeds sum to a constant for three or more sites), so the
    configurational weight is exp(-V/kT) per unit eccentric angle and an
    infinitely hot ring is exactly uniform in it.  Each of the n_t ions
    contributes one copy of the weight shifted by the site spacing; the
    fitted landscape has that period, so the copies coincide.  The result
    is blurred by a circular Gaussian and normalized to unit sum; use
    convert_density to map it to the lab-frame polar angle.
    """
    if bins < 8 * fit.n_t:
        raise ValueError("need at least 8 bins per shell site")
    theta_e = bin_centers(bins)
    shifts = TWO_PI * np.arange(fit.n_t) / fit.n_t
    v = np.asarray(fit.model_eccentric(theta_e[:, None] + shifts[None, :]), dtype=float)
    v = v - v.min()
    weights = np.exp(-v / thermal.thermal_energy).sum(axis=1)
    psf = default_psf_sigma(fit.n_t) if thermal.psf_sigma is None else thermal.psf_sigma
    if psf > 0:
        weights = gaussian_filter1d(weights, sigma=psf * bins / TWO_PI, mode="wrap")
    return AngularDensity(weights / weights.sum(), angle_kind="eccentric")


# --- barrier versus crystal size --------------------------------------------------


def barrier_vs_n(
    n_range,
    trap: TrapModel,
    pin_inner: bool = True,
    seed: int = 0,
    species: IonSpecies | None = None,
    grid: GridSpec = GridSpec(),
    restarts: int = 5,
) -> list:
    """(N, V_B) for each crystal size: ground state, outer-shell curve, fit."""
    sp = BA138 if species is None else species
    out = []
    for n in n_range:
        if not 3 <= n <= 30:
            raise ValueError("crystal sizes must lie in [3, 30]")
        ground = find_ground_state([sp] * n, trap, grid=grid, seed=seed, restarts=restarts)
        dec = assign_shells(ground.config)
        curve = rotation_energy_curve(
            ground, trap, pin_inner=pin_inner, grid=grid, seed=seed, decomposition=dec
        )
        fit = fit_barrier(curve, eta_seed=shell_eta_seed(ground.config, dec.outer()))
        out.append((int(n), fit.v_b))
    return out
