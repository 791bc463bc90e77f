"""Linear Paul trap model: Mathieu parameters, secular frequencies, calibration.

The trap is described in the pseudo-potential approximation.  Along each
principal axis l the secular frequency is

    omega_l = (Omega_RF / 2) * sqrt(a_l + q_l**2 / 2)

where (a_l, q_l) are the Mathieu stability parameters of the reference ion.
Both scale as 1/mass, so a different isotope in the same fields sees the
reference parameters multiplied by reference_mass / mass.

A ``TrapCalibration`` maps electrode voltages to Mathieu parameters: ``a`` is
affine in the static voltage V_DC, ``q`` is linear in the RF amplitude V_RF
(volts peak-to-peak), and both are inversely proportional to the ion mass.
The default calibration shipped with the package was fitted by least squares
to a set of measured operating points of a mesoscopic Ba+ planar-crystal trap
(see ``fit_calibration``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.optimize import brentq, least_squares

from .errors import FitFailed, NoSolution, UnstableTrap

OMEGA_RF_DEFAULT = 2.0 * math.pi * 4.7e6  # rad/s

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class IonSpecies:
    """A singly ionized atomic species held in the trap."""

    mass_u: float
    label: str = ""
    charge: int = 1
    bright: bool = True  # whether the species fluoresces on the imaging transition

    def __post_init__(self):
        if not self.mass_u > 0:
            raise ValueError("mass_u must be positive")
        if self.charge != 1:
            raise ValueError("only singly charged ions are supported")


BA138 = IonSpecies(138.0, "138Ba", bright=True)
BA137 = IonSpecies(137.0, "137Ba", bright=False)
BA136 = IonSpecies(136.0, "136Ba", bright=False)

SPECIES = {s.label: s for s in (BA138, BA137, BA136)}


def get_species(label: str) -> IonSpecies:
    """Look up a species by label, tolerating a trailing '+'."""
    key = label.strip().rstrip("+")
    try:
        return SPECIES[key]
    except KeyError:
        raise KeyError(f"unknown species {label!r}; known: {sorted(SPECIES)}") from None


@dataclass(frozen=True)
class TrapModel:
    """Mathieu parameters of one operating point, quoted at a reference mass.

    a and q are (x, y, z) tuples.  The planar geometry requires q_x = -q_y and
    q_z = 0; a_z need not equal -(a_x + a_y) because the static electrodes are
    calibrated independently per axis.
    """

    omega_rf: float
    a: tuple[float, float, float]
    q: tuple[float, float, float]
    reference_mass_u: float

    def __post_init__(self):
        if not self.omega_rf > 0:
            raise ValueError("omega_rf must be positive")
        if not self.reference_mass_u > 0:
            raise ValueError("reference_mass_u must be positive")
        if len(self.a) != 3 or len(self.q) != 3:
            raise ValueError("a and q must have three components")
        qx, qy, qz = self.q
        scale = max(1.0, abs(qx), abs(qy))
        if abs(qx + qy) > 1e-9 * scale:
            raise ValueError(f"planar trap requires q_x = -q_y, got {qx} and {qy}")
        if abs(qz) > 1e-15:
            raise ValueError("planar trap requires q_z = 0")


def _radicands(trap: TrapModel, species: IonSpecies) -> np.ndarray:
    scale = trap.reference_mass_u / species.mass_u
    a = np.asarray(trap.a) * scale
    q = np.asarray(trap.q) * scale
    return a + q**2 / 2.0


def axis_secular_frequency(omega_rf: float, a: float, q: float) -> float:
    """Secular frequency of a single axis, rad/s.

    Returns 0 exactly at a zero radicand; the trap-level ``secular_frequencies``
    additionally flags radicands <= 0 as UnstableTrap.
    """
    rad = a + q**2 / 2.0
    if rad < 0.0:
        raise UnstableTrap(f"a + q^2/2 = {rad:.3e} < 0")
    return omega_rf / 2.0 * math.sqrt(rad)


def secular_frequencies(trap: TrapModel, species: IonSpecies) -> tuple[float, float, float]:
    """Secular frequencies (omega_x, omega_y, omega_z) in rad/s for a species.

    Raises UnstableTrap if any radicand a + q^2/2 is zero or negative.
    """
    rad = _radicands(trap, species)
    for axis, r in zip(AXES, rad):
        if r <= 0.0:
            raise UnstableTrap(
                f"axis {axis}: a + q^2/2 = {r:.3e} <= 0 for {species.label or species.mass_u}"
            )
    w = trap.omega_rf / 2.0 * np.sqrt(rad)
    return (float(w[0]), float(w[1]), float(w[2]))


def is_stable(trap: TrapModel, species: IonSpecies) -> bool:
    """True if all three radicands are strictly positive for this species."""
    return bool(np.all(_radicands(trap, species) > 0.0))


def trap_from_frequencies(
    omega_x: float,
    omega_y: float,
    omega_z: float,
    omega_rf: float = OMEGA_RF_DEFAULT,
    reference_mass_u: float = 138.0,
) -> TrapModel:
    """Build a purely static-equivalent trap (q = 0) with given secular frequencies."""
    a = tuple((2.0 * w / omega_rf) ** 2 for w in (omega_x, omega_y, omega_z))
    return TrapModel(omega_rf=omega_rf, a=a, q=(0.0, 0.0, 0.0), reference_mass_u=reference_mass_u)


@dataclass(frozen=True)
class TrapCalibration:
    """Voltage-to-Mathieu-parameter map, quoted at a reference mass.

    coeff_a[l] = (offset, slope): a_l(V_DC, m) = (offset + slope * V_DC) * m_ref / m
    coeff_q[l] = (offset, slope): q_l(V_RF, m) = (offset + slope * V_RF) * m_ref / m

    The q offsets are zero for a clean RF drive; they are kept in the schema so
    files stay forward compatible with stray-field corrections.
    """

    omega_rf: float
    coeff_a: tuple[tuple[float, float], ...]
    coeff_q: tuple[tuple[float, float], ...]
    reference_mass_u: float

    def __post_init__(self):
        if len(self.coeff_a) != 3 or len(self.coeff_q) != 3:
            raise ValueError("coeff_a and coeff_q must have one (offset, slope) row per axis")
        for row in (*self.coeff_a, *self.coeff_q):
            if len(row) != 2:
                raise ValueError("each coefficient row must be (offset, slope)")
        (qx0, qx1), (qy0, qy1), (qz0, qz1) = self.coeff_q
        scale = max(1e-12, abs(qx1), abs(qy1))
        if abs(qx0 + qy0) > 1e-12 or abs(qx1 + qy1) > 1e-9 * scale:
            raise ValueError("coeff_q must satisfy q_x = -q_y")
        if qz0 != 0.0 or qz1 != 0.0:
            raise ValueError("coeff_q z row must be zero for a planar trap")

    def a_vector(self, v_dc: float, mass_u: float) -> tuple[float, float, float]:
        s = self.reference_mass_u / mass_u
        return tuple((off + slope * v_dc) * s for off, slope in self.coeff_a)

    def q_vector(self, v_rf: float, mass_u: float) -> tuple[float, float, float]:
        s = self.reference_mass_u / mass_u
        return tuple((off + slope * v_rf) * s for off, slope in self.coeff_q)


def mathieu_for_species(
    cal: TrapCalibration, v_dc: float, v_rf: float, species: IonSpecies
) -> TrapModel:
    """Trap model seen by one species at the given electrode voltages."""
    return TrapModel(
        omega_rf=cal.omega_rf,
        a=cal.a_vector(v_dc, species.mass_u),
        q=cal.q_vector(v_rf, species.mass_u),
        reference_mass_u=species.mass_u,
    )


def vrf_for_qy(cal: TrapCalibration, species: IonSpecies, q_y: float) -> float:
    """RF amplitude producing the requested q_y for a species."""
    off, slope = cal.coeff_q[1]
    if slope == 0.0:
        raise NoSolution("calibration has no q_y dependence on V_RF")
    v_rf = (q_y * species.mass_u / cal.reference_mass_u - off) / slope
    if v_rf < 0.0:
        raise NoSolution(f"q_y = {q_y} needs a negative RF amplitude")
    return v_rf


def _stable_vdc_window(
    cal: TrapCalibration, species: IonSpecies, v_rf: float, span: tuple[float, float]
) -> tuple[float, float]:
    """Intersection of the span with the V_DC interval where all axes are stable."""
    lo, hi = min(span), max(span)
    s = cal.reference_mass_u / species.mass_u
    q = cal.q_vector(v_rf, species.mass_u)
    for axis in range(3):
        off, slope = cal.coeff_a[axis]
        # radicand(V) = (off + slope V) s + q^2/2 > 0
        const = off * s + q[axis] ** 2 / 2.0
        rate = slope * s
        if rate == 0.0:
            if const <= 0.0:
                raise NoSolution(f"axis {AXES[axis]} unstable for all V_DC")
            continue
        edge = -const / rate
        if rate > 0.0:
            lo = max(lo, edge)
        else:
            hi = min(hi, edge)
    if not lo < hi:
        raise NoSolution("no stable V_DC window inside the allowed span")
    return lo, hi


def _bracketed_root(fn, lo: float, hi: float) -> float:
    """brentq with the bracket nudged inside the open stability interval."""
    eps = 1e-9 * max(1.0, abs(lo), abs(hi))
    a, b = lo + eps, hi - eps
    fa, fb = fn(a), fn(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if fa * fb > 0.0:
        raise NoSolution("no sign change inside the stable V_DC window")
    return float(brentq(fn, a, b, xtol=1e-12, rtol=1e-14))


def symmetric_vdc(
    cal: TrapCalibration,
    species: IonSpecies,
    v_rf: float,
    span: tuple[float, float] = (-60.0, 60.0),
) -> float:
    """Static voltage at which the in-plane trap is round (omega_y = omega_z)."""
    lo, hi = _stable_vdc_window(cal, species, v_rf, span)

    def gap(v):
        _, wy, wz = secular_frequencies(mathieu_for_species(cal, v, v_rf, species), species)
        return wy - wz

    return _bracketed_root(gap, lo, hi)


def vdc_for_ratio(
    cal: TrapCalibration,
    species: IonSpecies,
    ratio: float,
    v_rf: float,
    span: tuple[float, float] = (-60.0, 60.0),
) -> float:
    """Static voltage realizing a requested omega_y / omega_z ratio."""
    if not ratio > 0:
        raise ValueError("ratio must be positive")
    lo, hi = _stable_vdc_window(cal, species, v_rf, span)

    def gap(v):
        _, wy, wz = secular_frequencies(mathieu_for_species(cal, v, v_rf, species), species)
        return wy / wz - ratio

    return _bracketed_root(gap, lo, hi)


def symmetric_locus(
    cal: TrapCalibration,
    species: IonSpecies,
    qy_range,
    vdc_span: tuple[float, float] = (-60.0, 60.0),
) -> list[tuple[float, float]]:
    """(a_y, q_y) points where the trap is round, one per requested q_y.

    Raises NoSolution for q_y values that no V_DC in the span can symmetrize.
    """
    points = []
    for q_y in qy_range:
        v_rf = vrf_for_qy(cal, species, q_y)
        v_dc = symmetric_vdc(cal, species, v_rf, vdc_span)
        a_y = cal.a_vector(v_dc, species.mass_u)[1]
        points.append((a_y, q_y))
    return points


# --- calibration fitting -----------------------------------------------------

# Measured operating points used to pin down the default calibration.  All are
# taken at V_RF = 802 Vpp with mass 138 u and Omega_RF = 2 pi x 4.7 MHz:
#   * q_y = -0.182 at that drive,
#   * the trap is round at V_DC = -12.9 V,
#   * two (omega_x, omega_y, omega_z)/2pi triples measured at static voltages
#     that are themselves fitted (the voltages were not recorded),
#   * omega_x / omega_y = 4.1 in the round configuration (soft constraint).
DEFAULT_ANCHORS = {
    "v_rf": 802.0,
    "q_y": -0.182,
    "symmetric_v_dc": -12.9,
    "frequency_points_hz": ((401e3, 116e3, 98e3), (400e3, 121e3, 97e3)),
    "round_xy_ratio": 4.1,
    "round_xy_weight": 0.3,
    "symmetric_weight": 5.0,
}


def fit_calibration(
    anchors: dict | None = None,
    omega_rf: float = OMEGA_RF_DEFAULT,
    reference_mass_u: float = 138.0,
) -> TrapCalibration:
    """Least-squares fit of the voltage map to the anchor operating points.

    The static map is modelled as a_l(V) = s_l * (V - v0): one slope per axis
    plus a single shared voltage offset (a stray-potential shift).  Keeping the
    offsets proportional to the slopes preserves the exact invariance of the
    symmetric locus under rescaling V_RF and mass together.  The static
    voltages of the two frequency anchor points are free parameters.
    """
    anc = dict(DEFAULT_ANCHORS)
    if anchors:
        anc.update(anchors)
    v_rf = anc["v_rf"]
    slope_qy = anc["q_y"] / v_rf
    w = anc["q_y"] ** 2 / 2.0
    points = [np.asarray(p, dtype=float) for p in anc["frequency_points_hz"]]
    v_sym = anc["symmetric_v_dc"]

    def freqs_hz(params, v):
        sx, sy, sz, v0 = params[:4]
        t = v - v0
        rad = np.array([sx * t + w, sy * t + w, sz * t])
        return omega_rf / 2.0 * np.sqrt(np.maximum(rad, 1e-12)) / (2.0 * math.pi)

    def residuals(params):
        out = []
        for point, v in zip(points, params[4:]):
            out.extend((freqs_hz(params, v) - point) / point)
        fs = freqs_hz(params, v_sym)
        out.append(anc["symmetric_weight"] * (fs[1] / fs[2] - 1.0))
        out.append(
            anc["round_xy_weight"]
            * (fs[0] / fs[1] - anc["round_xy_ratio"])
            / anc["round_xy_ratio"]
        )
        return np.asarray(out)

    # start from the zero-offset closed-form estimate
    p0 = np.array([-1.0e-3, 1.1e-3, -1.4e-4, 0.0, -12.4, -12.2])
    sol = least_squares(residuals, p0, method="lm", xtol=1e-15, ftol=1e-15)
    if not sol.success:
        raise FitFailed("calibration fit did not converge")  # pragma: no cover
    sx, sy, sz, v0 = sol.x[:4]
    coeff_a = ((-sx * v0, sx), (-sy * v0, sy), (-sz * v0, sz))
    coeff_q = ((0.0, -slope_qy), (0.0, slope_qy), (0.0, 0.0))
    return TrapCalibration(
        omega_rf=omega_rf,
        coeff_a=coeff_a,
        coeff_q=coeff_q,
        reference_mass_u=reference_mass_u,
    )


# --- calibration file I/O ----------------------------------------------------


def save_calibration(cal: TrapCalibration, path, description: str | None = None) -> None:
    doc = {
        "description": description
        or "Voltage-to-Mathieu-parameter calibration: a = (offset + slope*V_DC)*m_ref/m, "
        "q = (offset + slope*V_RF)*m_ref/m, omega_l = Omega_RF/2 * sqrt(a_l + q_l^2/2).",
        "omega_rf_hz": cal.omega_rf / (2.0 * math.pi),
        "reference_mass_u": cal.reference_mass_u,
        "coeff_a": [list(row) for row in cal.coeff_a],
        "coeff_q": [list(row) for row in cal.coeff_q],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_calibration(path) -> TrapCalibration:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return TrapCalibration(
            omega_rf=2.0 * math.pi * float(doc["omega_rf_hz"]),
            coeff_a=tuple(tuple(float(x) for x in row) for row in doc["coeff_a"]),
            coeff_q=tuple(tuple(float(x) for x in row) for row in doc["coeff_q"]),
            reference_mass_u=float(doc["reference_mass_u"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad calibration file {path}: {exc}") from exc


def default_calibration() -> TrapCalibration:
    """The calibration shipped with the package (fitted to the anchor points)."""
    with resources.as_file(resources.files("meltlab").joinpath("data/trap_default.json")) as p:
        return load_calibration(p)
