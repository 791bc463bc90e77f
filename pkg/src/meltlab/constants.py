"""Physical constants used throughout the package (SI units internally)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import scipy.constants

E_CHARGE = scipy.constants.e            # elementary charge, C
EPSILON_0 = scipy.constants.epsilon_0   # vacuum permittivity, F/m
K_BOLTZMANN = scipy.constants.k         # Boltzmann constant, J/K
ATOMIC_MASS = scipy.constants.atomic_mass  # unified atomic mass unit, kg

# Coulomb coupling prefactor e^2 / (4 pi eps0), J*m for two unit charges.
COULOMB_ALPHA = E_CHARGE**2 / (4.0 * math.pi * EPSILON_0)


@dataclass(frozen=True)
class PhysicalConstants:
    """Bundle of the constants entering the crystal energy model.

    ``alpha`` must equal ``e**2 / (4 pi epsilon0)``; a custom instance that
    breaks the identity is rejected.
    """

    e: float = E_CHARGE
    epsilon0: float = EPSILON_0
    k_b: float = K_BOLTZMANN
    u: float = ATOMIC_MASS
    alpha: float = field(default=COULOMB_ALPHA)

    def __post_init__(self):
        expected = self.e**2 / (4.0 * math.pi * self.epsilon0)
        if not math.isclose(self.alpha, expected, rel_tol=1e-12):
            raise ValueError(
                f"alpha {self.alpha!r} inconsistent with e^2/(4 pi eps0) = {expected!r}"
            )


CONSTANTS = PhysicalConstants()


def joules_to_millikelvin(energy_j: float) -> float:
    """Express an energy as an equivalent temperature in millikelvin."""
    return energy_j / K_BOLTZMANN * 1e3


def millikelvin_to_joules(energy_mk: float) -> float:
    return energy_mk * 1e-3 * K_BOLTZMANN
