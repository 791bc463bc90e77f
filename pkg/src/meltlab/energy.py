"""Potential energy of a planar ion crystal in the secular approximation.

The crystal lives in the trap's y-z plane (the x confinement is far stiffer,
so motion out of the plane is frozen out).  The energy of a configuration is

    U = sum_i  m_i/2 * (omega_y,i^2 y_i^2 + omega_z,i^2 z_i^2)
      + sum_{j>i}  alpha * Z_i Z_j / |r_i - r_j|

with per-ion secular frequencies (heavier isotopes are trapped more weakly)
and alpha = e^2 / (4 pi eps0).  Everything is SI: positions in meters,
energies in joules.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .constants import ATOMIC_MASS, PhysicalConstants, CONSTANTS
from .errors import CoincidentIons
from .trap import IonSpecies, SPECIES, TrapModel, get_species, secular_frequencies

# Ions closer than this are treated as numerically coincident.  It equals one
# cell of the ground-state search grid, the finest length scale the package
# resolves.
MIN_SEPARATION = 25e-9


class PlanarConfiguration:
    """Positions of N ions in the trap plane, each tagged with its species.

    positions is an (N, 2) float array with columns (y, z) in meters.
    """

    def __init__(self, species: list[IonSpecies], positions):
        positions = np.array(positions, dtype=float).reshape(len(species), 2)
        if len(species) == 0:
            raise ValueError("configuration needs at least one ion")
        if not np.all(np.isfinite(positions)):
            raise ValueError("positions must be finite")
        # identical coordinates are always a modelling error, whatever the scale
        seen = set(map(tuple, positions))
        if len(seen) != len(positions):
            raise CoincidentIons("two ions share identical coordinates")
        self.species = list(species)
        self.positions = positions

    @classmethod
    def from_triples(cls, triples) -> "PlanarConfiguration":
        """Build from an iterable of (species, y, z)."""
        triples = list(triples)
        return cls([t[0] for t in triples], [(t[1], t[2]) for t in triples])

    def __len__(self) -> int:
        return len(self.species)

    def __iter__(self):
        for sp, (y, z) in zip(self.species, self.positions):
            yield sp, float(y), float(z)

    def masses_kg(self) -> np.ndarray:
        return np.array([sp.mass_u for sp in self.species]) * ATOMIC_MASS

    def replace_positions(self, positions) -> "PlanarConfiguration":
        return PlanarConfiguration(self.species, positions)


def species_frequencies(config: PlanarConfiguration, trap: TrapModel) -> np.ndarray:
    """(N, 2) array of in-plane secular frequencies (omega_y, omega_z) per ion."""
    cache: dict[float, tuple[float, float]] = {}
    out = np.empty((len(config), 2))
    for i, sp in enumerate(config.species):
        if sp.mass_u not in cache:
            _, wy, wz = secular_frequencies(trap, sp)
            cache[sp.mass_u] = (wy, wz)
        out[i] = cache[sp.mass_u]
    return out


def potential_energy(
    config: PlanarConfiguration,
    trap: TrapModel,
    constants: PhysicalConstants = CONSTANTS,
    min_separation: float = MIN_SEPARATION,
) -> float:
    """Total potential energy in joules.

    Raises CoincidentIons if any pair sits closer than min_separation.
    """
    y = config.positions[:, 0]
    z = config.positions[:, 1]
    m = config.masses_kg()
    w = species_frequencies(config, trap)
    harmonic = 0.5 * np.sum(m * (w[:, 0] ** 2 * y**2 + w[:, 1] ** 2 * z**2))
    if len(config) == 1:
        return float(harmonic)
    d = pdist(config.positions)
    if np.min(d) < min_separation:
        raise CoincidentIons(
            f"minimum pair separation {np.min(d):.3e} m below {min_separation:.3e} m"
        )
    coulomb = constants.alpha * np.sum(1.0 / d)
    return float(harmonic + coulomb)


def energy_gradient(
    config: PlanarConfiguration,
    trap: TrapModel,
    constants: PhysicalConstants = CONSTANTS,
) -> np.ndarray:
    """Analytic gradient dU/d(y_i, z_i), shape (N, 2), in newtons.

    The restoring force on ion i is the negative of row i.
    """
    pos = config.positions
    m = config.masses_kg()
    w = species_frequencies(config, trap)
    grad = m[:, None] * w**2 * pos
    if len(config) > 1:
        diff = pos[:, None, :] - pos[None, :, :]  # (N, N, 2)
        r = squareform(pdist(pos))
        np.fill_diagonal(r, np.inf)
        grad -= constants.alpha * np.sum(diff / r[:, :, None] ** 3, axis=1)
    return grad


# --- CSV interchange ----------------------------------------------------------

CSV_HEADER = ["label", "mass_u", "y_um", "z_um"]


def save_configuration_csv(config: PlanarConfiguration, path) -> None:
    """Write 'label,mass_u,y_um,z_um' rows (positions in micrometers)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for sp, y, z in config:
            writer.writerow([sp.label or f"{sp.mass_u:g}u", repr(sp.mass_u), repr(y * 1e6), repr(z * 1e6)])


def load_configuration_csv(path) -> PlanarConfiguration:
    species, positions = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != CSV_HEADER:
            raise ValueError(f"expected header {CSV_HEADER}, got {header}")
        for row in reader:
            if not row:
                continue
            label, mass_u, y_um, z_um = row
            mass_u = float(mass_u)
            key = label.strip().rstrip("+")
            if key in SPECIES and SPECIES[key].mass_u == mass_u:
                sp = get_species(key)
            else:
                sp = IonSpecies(mass_u=mass_u, label=label.strip())
            species.append(sp)
            # divide by the exactly representable 1e6 so micrometer-exact
            # values round-trip bit for bit
            positions.append((float(y_um) / 1e6, float(z_um) / 1e6))
    return PlanarConfiguration(species, positions)
