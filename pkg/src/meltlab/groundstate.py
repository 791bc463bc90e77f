"""Ground states of planar ion crystals by windowed grid Monte Carlo.

The plane is discretized into square cells and ions live on cell centers.
One move picks an ion and relocates it to the lowest-energy cell inside a
window centered on its current cell (staying put if nothing is lower).  A
restart converges when 10 N consecutive moves fail to improve and a final
deterministic pass over every ion finds nothing either; if the final pass
does improve, the random sweep resumes.  Several independent restarts from
stochastic initial placements are kept and the lowest final energy wins.

All randomness comes from numpy Generators seeded per restart with
seed + restart_index, so results are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .constants import ATOMIC_MASS, CONSTANTS
from .energy import MIN_SEPARATION, PlanarConfiguration, potential_energy, species_frequencies
from .errors import DegenerateShell, NotConverged
from .trap import IonSpecies, TrapModel, secular_frequencies

MAX_IONS = 30


@dataclass(frozen=True)
class GridSpec:
    """Search grid: square cells of size ``cell`` covering ``extent`` x ``extent``."""

    cell: float = 25e-9
    extent: float = 100e-6
    window: int = 81  # cells per side of the move window (odd)

    def __post_init__(self):
        if not (self.cell > 0 and self.extent > 0):
            raise ValueError("cell and extent must be positive")
        n = round(self.extent / self.cell)
        if abs(n * self.cell - self.extent) > 1e-9 * self.extent:
            raise ValueError("extent must be an integer number of cells")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be an odd integer >= 3")
        if self.window > n:
            raise ValueError("window larger than the grid")

    @property
    def n_cells(self) -> int:
        return round(self.extent / self.cell)

    def coordinates(self, idx) -> np.ndarray:
        """Cell-center coordinate(s) of integer cell indices."""
        return -self.extent / 2.0 + (np.asarray(idx) + 0.5) * self.cell

    def nearest_index(self, x) -> np.ndarray:
        """Integer cell index whose center is nearest to coordinate x."""
        i = np.floor((np.asarray(x) + self.extent / 2.0) / self.cell).astype(int)
        return np.clip(i, 0, self.n_cells - 1)


@dataclass
class MinimizationResult:
    config: PlanarConfiguration
    energy: float  # joules, recomputed from the final configuration
    restarts_used: int
    sweep_count: int  # total ion moves attempted over all restarts
    seed: int
    energy_trace: list | None = None  # winning restart's energy after each accepted move


@dataclass
class RayConstraint:
    """Restrict one ion to grid cells within half a cell of a ray from the origin."""

    ion: int
    angle: float  # measured from the +z axis toward +y

    def direction(self) -> tuple[float, float]:
        return math.sin(self.angle), math.cos(self.angle)

    def mask(self, y: np.ndarray, z: np.ndarray, cell: float) -> np.ndarray:
        dy, dz = self.direction()
        cross = y * dz - z * dy
        along = y * dy + z * dz
        return (np.abs(cross) <= cell / 2.0) & (along >= -cell / 2.0)


def _snap_to_ray(grid: GridSpec, radius: float, constraint: RayConstraint) -> tuple[int, int]:
    """Nearest grid cell to the point at ``radius`` on the ray that satisfies the mask."""
    dy, dz = constraint.direction()
    target = np.array([radius * dy, radius * dz])
    iy0, iz0 = grid.nearest_index(target[0]), grid.nearest_index(target[1])
    for reach in range(2, 12):
        iy = np.arange(max(0, iy0 - reach), min(grid.n_cells, iy0 + reach + 1))
        iz = np.arange(max(0, iz0 - reach), min(grid.n_cells, iz0 + reach + 1))
        cy = np.repeat(grid.coordinates(iy), len(iz))
        cz = np.tile(grid.coordinates(iz), len(iy))
        ok = constraint.mask(cy, cz, grid.cell)
        if np.any(ok):
            d2 = (cy - target[0]) ** 2 + (cz - target[1]) ** 2
            d2[~ok] = np.inf
            k = int(np.argmin(d2))
            return int(iy[k // len(iz)]), int(iz[k % len(iz)])
    raise RuntimeError("no grid cell near the ray; grid too coarse for this radius")


class _Minimizer:
    """Shared machinery for one constrained or unconstrained relaxation."""

    def __init__(
        self,
        species: list[IonSpecies],
        trap: TrapModel,
        grid: GridSpec,
        constants=CONSTANTS,
    ):
        self.grid = grid
        self.n = len(species)
        # positions are irrelevant here; distinct dummies keep validation happy
        probe_pos = np.column_stack([np.arange(self.n) * 1e-6, np.zeros(self.n)])
        config_probe = PlanarConfiguration(species, probe_pos)
        w = species_frequencies(config_probe, trap)
        m = config_probe.masses_kg()
        self.species = species
        self.wy2 = w[:, 0] ** 2
        self.wz2 = w[:, 1] ** 2
        self.m = m
        self.alpha = constants.alpha
        self.coord = grid.coordinates(np.arange(grid.n_cells))

    def positions(self, idx: np.ndarray) -> np.ndarray:
        return np.column_stack([self.coord[idx[:, 0]], self.coord[idx[:, 1]]])

    def _local_energy(self, i: int, cand: np.ndarray, others: np.ndarray) -> np.ndarray:
        harm = 0.5 * self.m[i] * (self.wy2[i] * cand[:, 0] ** 2 + self.wz2[i] * cand[:, 1] ** 2)
        if len(others) == 0:
            return harm
        d = cdist(cand, others)
        with np.errstate(divide="ignore"):
            inv = 1.0 / d
        inv[d < MIN_SEPARATION] = np.inf
        return harm + self.alpha * inv.sum(axis=1)

    def step(self, idx: np.ndarray, pos: np.ndarray, i: int, constraint: RayConstraint | None):
        """Window-minimize ion i in place.  Returns the energy decrease (>= 0)."""
        hw = self.grid.window // 2
        n = self.grid.n_cells
        iy = np.arange(max(0, idx[i, 0] - hw), min(n, idx[i, 0] + hw + 1))
        iz = np.arange(max(0, idx[i, 1] - hw), min(n, idx[i, 1] + hw + 1))
        cy = np.repeat(self.coord[iy], len(iz))
        cz = np.tile(self.coord[iz], len(iy))
        if constraint is not None and constraint.ion == i:
            keep = constraint.mask(cy, cz, self.grid.cell)
            cand_iy = np.repeat(iy, len(iz))[keep]
            cand_iz = np.tile(iz, len(iy))[keep]
            cy, cz = cy[keep], cz[keep]
        else:
            cand_iy = np.repeat(iy, len(iz))
            cand_iz = np.tile(iz, len(iy))
        cand = np.column_stack([cy, cz])
        others = np.delete(pos, i, axis=0)
        e = self._local_energy(i, cand, others)
        cur = np.nonzero((cand_iy == idx[i, 0]) & (cand_iz == idx[i, 1]))[0]
        if len(cur) != 1:  # pragma: no cover - the current cell is always a candidate
            raise RuntimeError("current cell missing from the candidate window")
        k_cur = int(cur[0])
        k_best = int(np.argmin(e))
        if e[k_best] < e[k_cur]:
            idx[i] = (cand_iy[k_best], cand_iz[k_best])
            pos[i] = cand[k_best]
            return float(e[k_cur] - e[k_best])
        return 0.0

    def relax(
        self,
        idx: np.ndarray,
        rng: np.random.Generator,
        budget: int,
        movable: list[int] | None = None,
        constraint: RayConstraint | None = None,
        record_trace: bool = False,
    ):
        """Run the sweep/final-pass protocol.  Mutates and returns idx."""
        movable = list(range(self.n)) if movable is None else list(movable)
        pos = self.positions(idx)
        trace = [] if record_trace else None
        if record_trace:
            energy = self._total_energy(pos)
        steps = 0
        stall_limit = 10 * len(movable)
        stalled = 0
        while True:
            if stalled < stall_limit:
                i = movable[int(rng.integers(0, len(movable)))]
                gained = self.step(idx, pos, i, constraint)
                steps += 1
                if gained > 0.0:
                    stalled = 0
                    if record_trace:
                        energy -= gained
                        trace.append(energy)
                else:
                    stalled += 1
            else:
                # deterministic final pass over every movable ion
                improved = False
                for i in movable:
                    gained = self.step(idx, pos, i, constraint)
                    steps += 1
                    if gained > 0.0:
                        improved = True
                        if record_trace:
                            energy -= gained
                            trace.append(energy)
                if not improved:
                    return idx, steps, trace
                stalled = 0
            if steps > budget:
                raise NotConverged(f"exceeded the {budget}-move budget")

    def _total_energy(self, pos: np.ndarray) -> float:
        harm = 0.5 * np.sum(self.m * (self.wy2 * pos[:, 0] ** 2 + self.wz2 * pos[:, 1] ** 2))
        if self.n < 2:
            return float(harm)
        d = cdist(pos, pos)
        iu = np.triu_indices(self.n, k=1)
        return float(harm + self.alpha * np.sum(1.0 / d[iu]))


def find_ground_state(
    species: list[IonSpecies],
    trap: TrapModel,
    grid: GridSpec = GridSpec(),
    seed: int = 0,
    restarts: int = 5,
    sweep_budget: int = 10_000,
    record_trace: bool = False,
) -> MinimizationResult:
    """Best-of-``restarts`` grid Monte Carlo minimization.

    Restart k draws its initial placement and move order from a Generator
    seeded with seed + k.  Raises NotConverged if any restart exhausts its
    move budget and UnstableTrap if any species is unstable in the trap.
    """
    n = len(species)
    if not 1 <= n <= MAX_IONS:
        raise ValueError(f"ion count must be between 1 and {MAX_IONS}")
    if restarts < 1:
        raise ValueError("need at least one restart")
    for sp in {s.mass_u: s for s in species}.values():
        secular_frequencies(trap, sp)  # raises UnstableTrap early

    mini = _Minimizer(species, trap, grid)
    best = None
    total_steps = 0
    for k in range(restarts):
        rng = np.random.default_rng(seed + k)
        while True:
            idx = rng.integers(0, grid.n_cells, size=(n, 2))
            if len({(int(a), int(b)) for a, b in idx}) == n:
                break
        idx, steps, trace = mini.relax(idx, rng, sweep_budget, record_trace=record_trace)
        total_steps += steps
        config = PlanarConfiguration(species, mini.positions(idx))
        e = potential_energy(config, trap)
        if best is None or e < best[0]:
            best = (e, config, trace)
    energy, config, trace = best
    return MinimizationResult(
        config=config,
        energy=energy,
        restarts_used=restarts,
        sweep_count=total_steps,
        seed=seed,
        energy_trace=trace,
    )


def relax_configuration(
    config: PlanarConfiguration,
    trap: TrapModel,
    grid: GridSpec = GridSpec(),
    seed: int = 0,
    sweep_budget: int = 10_000,
) -> MinimizationResult:
    """Polish a given configuration in place (no random restarts).

    Positions snap to their nearest grid cells, then the usual sweep and
    final-pass protocol runs until no single-ion move improves the energy.
    Useful for prepared states, e.g. a crystal with a substituted ion.
    """
    species = list(config.species)
    for sp in {s.mass_u: s for s in species}.values():
        secular_frequencies(trap, sp)
    mini = _Minimizer(species, trap, grid)
    pos = config.positions
    idx = np.column_stack([grid.nearest_index(pos[:, 0]), grid.nearest_index(pos[:, 1])])
    idx, steps, _ = mini.relax(idx, np.random.default_rng(seed), sweep_budget)
    final = PlanarConfiguration(species, mini.positions(idx))
    return MinimizationResult(
        config=final,
        energy=potential_energy(final, trap),
        restarts_used=1,
        sweep_count=steps,
        seed=seed,
    )


# --- shell structure ----------------------------------------------------------


@dataclass(frozen=True)
class Ellipse:
    """Axis-aligned ellipse in the trap plane (meters)."""

    o_y: float
    o_z: float
    r_y0: float
    r_z0: float

    @property
    def aspect(self) -> float:
        """Semi-axis ratio r_z0 / r_y0 (> 1 means elongated along z)."""
        return self.r_z0 / self.r_y0


@dataclass
class ShellDecomposition:
    shells: list[list[int]] = field(default_factory=list)  # innermost first
    radii: np.ndarray | None = None  # elliptic radius per ion (dimensionless scale)

    @property
    def occupancy(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.shells)

    def outer(self) -> list[int]:
        return self.shells[-1]

    def inner_indices(self) -> list[int]:
        out = []
        for shell in self.shells[:-1]:
            out.extend(shell)
        return out


def _elliptic_radii(config: PlanarConfiguration, ellipse: Ellipse | None) -> np.ndarray:
    y = config.positions[:, 0]
    z = config.positions[:, 1]
    if ellipse is not None:
        return np.sqrt(((y - ellipse.o_y) / ellipse.r_y0) ** 2 + ((z - ellipse.o_z) / ellipse.r_z0) ** 2)
    # no ellipse known yet: estimate the aspect from second moments about the trap center
    my, mz = np.mean(y**2), np.mean(z**2)
    if my > 0 and mz > 0:
        lam = np.clip(np.sqrt(np.sqrt(my / mz)), 0.05, 20.0)  # semi-axis ratio estimate
    else:
        lam = 1.0
    return np.sqrt((y / lam) ** 2 + (z * lam) ** 2)


def assign_shells(
    config: PlanarConfiguration,
    ellipse: Ellipse | None = None,
    gap_threshold: float = 0.5,
    central_fraction: float = 0.2,
) -> ShellDecomposition:
    """Group ions into concentric shells by elliptic radius.

    A single ion much closer to the center than everything else forms its own
    innermost shell; otherwise the sorted radii are split at the largest
    relative gap exceeding ``gap_threshold``.  At most two shells result.
    """
    radii = _elliptic_radii(config, ellipse)
    n = len(config)
    if n == 1:
        return ShellDecomposition(shells=[[0]], radii=radii)
    order = np.argsort(radii, kind="stable")
    r = radii[order]
    rest_mean = float(np.mean(r[1:]))
    if rest_mean > 0 and r[0] < central_fraction * rest_mean and (
        n == 2 or r[1] >= central_fraction * rest_mean
    ):
        return ShellDecomposition(
            shells=[[int(order[0])], [int(i) for i in order[1:]]], radii=radii
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        gaps = np.where(r[:-1] > 0, r[1:] / r[:-1] - 1.0, np.inf)
    k = int(np.argmax(gaps))
    if gaps[k] > gap_threshold:
        return ShellDecomposition(
            shells=[[int(i) for i in order[: k + 1]], [int(i) for i in order[k + 1 :]]],
            radii=radii,
        )
    return ShellDecomposition(shells=[[int(i) for i in order]], radii=radii)


def fit_enclosing_ellipse(config: PlanarConfiguration, shell: list[int] | None = None) -> Ellipse:
    """Least-squares axis-aligned ellipse through shell ion positions.

    The center is the shell centroid; the semi-axes solve the linear least
    squares problem u/r_y0^2 + v/r_z0^2 = 1 with u, v the squared centered
    coordinates.  Raises DegenerateShell when no ellipse passes through the
    shell: fewer than three ions, or collinear ions (chains).
    """
    pts = config.positions if shell is None else config.positions[list(shell)]
    if len(pts) < 3:
        raise DegenerateShell("need at least three ions to fit an ellipse")
    o_y, o_z = pts.mean(axis=0)
    u = (pts[:, 0] - o_y) ** 2
    v = (pts[:, 1] - o_z) ** 2
    mat = np.array([[np.sum(u * u), np.sum(u * v)], [np.sum(u * v), np.sum(v * v)]])
    rhs = np.array([np.sum(u), np.sum(v)])
    scale = np.trace(mat)
    if scale <= 0 or np.linalg.det(mat) < 1e-12 * scale**2:
        raise DegenerateShell("shell ions are collinear; no enclosing ellipse")
    p, q = np.linalg.solve(mat, rhs)
    if p <= 0 or q <= 0:
        raise DegenerateShell("ellipse fit produced non-positive curvatures")
    return Ellipse(o_y=float(o_y), o_z=float(o_z), r_y0=float(1 / math.sqrt(p)), r_z0=float(1 / math.sqrt(q)))
