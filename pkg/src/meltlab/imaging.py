"""Synthetic fluorescence images and the ring-profile extraction pipeline.

Rendering deposits shell densities along their ellipses, blurs with a
Gaussian point-spread function and optionally adds Poisson shot noise.
Extraction runs the other way: background subtraction, elliptical ROI
search, a De La Hire elliptic-coordinate resampling, and radial integration
down to an angular profile that the analysis module consumes.

Pixel coordinates are (z, y): z runs along image columns, y along rows, so
``counts[iy, iz]`` holds the pixel at column iz, row iy.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .analysis import AngularDensity, bin_centers
from .barrier import eccentric_angle
from .errors import FrameOverflow, NoRing, ShapeMismatch

TWO_PI = 2.0 * math.pi

# angular resolution shared with the analysis chain: 1 degree bins
THETA_BINS = 360


@dataclass(frozen=True)
class Optics:
    """Camera model for rendering.

    Defaults put a 17 um feature across about 30 pixels, blur by a 2 px
    point-spread sigma and collect 1e4 photon counts per ion.  None of these
    are calibrated absolutes; the analysis chain only uses relative scales.
    """

    pixel_pitch: float = 17.0 / 30.0  # micrometers per pixel
    psf_px: float = 2.0
    counts_per_ion: float = 1e4
    width: int = 256
    height: int = 256
    noise_seed: int | None = None

    def __post_init__(self):
        if self.pixel_pitch <= 0:
            raise ValueError("pixel_pitch must be positive")
        if self.psf_px < 0:
            raise ValueError("psf_px must be non-negative")
        if self.counts_per_ion <= 0:
            raise ValueError("counts_per_ion must be positive")
        if self.width < 8 or self.height < 8:
            raise ValueError("image frame must be at least 8x8 pixels")


@dataclass
class DensityImage:
    """A camera frame of expected (or recorded) photon counts."""

    counts: np.ndarray  # shape (height, width), non-negative
    pixel_pitch: float  # micrometers per pixel
    origin: tuple | None = None  # (z, y) pixel coordinates of the trap center

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.ndim != 2:
            raise ValueError("counts must be a 2-D array")
        if not np.all(np.isfinite(self.counts)):
            raise ValueError("counts must be finite")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")
        if self.pixel_pitch <= 0:
            raise ValueError("pixel_pitch must be positive")

    @property
    def height(self) -> int:
        return self.counts.shape[0]

    @property
    def width(self) -> int:
        return self.counts.shape[1]


@dataclass(frozen=True)
class EllipseROI:
    """Elliptic annulus of half-width delta around a ring of ions.

    A pixel at (z, y) belongs to the annulus when it lies outside the
    ellipse shrunk by delta and inside the one grown by delta; the central
    disc of radius delta is reserved for a central ion.
    """

    o_z: float
    o_y: float
    r_z0: float
    r_y0: float
    delta: float = 5.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not (self.r_z0 > self.delta and self.r_y0 > self.delta):
            raise ValueError("semi-axes must exceed delta")

    @property
    def scaled_axes(self) -> tuple:
        """De La Hire semi-axes (R_z, R_y), normalized so R_z^2 + R_y^2 = 2."""
        norm = math.hypot(self.r_z0, self.r_y0)
        return (math.sqrt(2.0) * self.r_z0 / norm, math.sqrt(2.0) * self.r_y0 / norm)

    @property
    def ring_radius(self) -> float:
        """Dimensionless radius at which the De La Hire map hits the ellipse."""
        return math.hypot(self.r_z0, self.r_y0) / math.sqrt(2.0)

    @property
    def eta(self) -> float:
        """Angle-warp parameter of this ellipse: tan(theta) = eta tan(theta_e)."""
        return self.r_y0 / self.r_z0

    def annulus_mask(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        dz, dy = z - self.o_z, y - self.o_y
        outer = dz**2 / (self.r_z0 + self.delta) ** 2 + dy**2 / (self.r_y0 + self.delta) ** 2
        inner = dz**2 / (self.r_z0 - self.delta) ** 2 + dy**2 / (self.r_y0 - self.delta) ** 2
        return (outer < 1.0) & (inner > 1.0)

    def central_mask(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.hypot(z - self.o_z, y - self.o_y) < self.delta


@dataclass
class PolarImage:
    """Image resampled on the (r, theta) De La Hire grid.

    counts has shape (len(r), THETA_BINS); theta bins share the analysis
    module's center convention; r counts pixels along the ring normal.
    """

    counts: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    r_window: int = 40

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.counts.shape != (len(self.r), len(self.theta)):
            raise ValueError("counts shape must be (len(r), len(theta))")


# --- rendering --------------------------------------------------------------------


def _deposit_bilinear(frame: np.ndarray, z: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Splat weights at sub-pixel (z, y) onto the four surrounding pixels."""
    h, width = frame.shape
    z0 = np.floor(z).astype(int)
    y0 = np.floor(y).astype(int)
    fz, fy = z - z0, y - y0
    for dz, dy, ww in (
        (0, 0, (1 - fz) * (1 - fy)),
        (1, 0, fz * (1 - fy)),
        (0, 1, (1 - fz) * fy),
        (1, 1, fz * fy),
    ):
        zz, yy = z0 + dz, y0 + dy
        ok = (zz >= 0) & (zz < width) & (yy >= 0) & (yy < h)
        np.add.at(frame, (yy[ok], zz[ok]), w[ok] * ww[ok])


def render_image(
    shells: list,
    optics: Optics = Optics(),
    central_ions: int = 0,
    center_px: tuple | None = None,
) -> DensityImage:
    """Synthesize the frame a camera would record for a set of ring densities.

    shells: list of (AngularDensity, ellipse, n_ions) with the ellipse in
    meters (o_y, o_z, r_y0, r_z0 attributes, as produced by the shell fit).
    Each shell deposits n_ions * counts_per_ion photons along its ellipse
    with the given angular distribution; central_ions adds that many ions'
    worth of counts at the trap center.  The trap center maps to center_px
    (default: middle of the frame).
    """
    if central_ions < 0:
        raise ValueError("central_ions must be non-negative")
    pitch_m = optics.pixel_pitch * 1e-6
    cz, cy = center_px if center_px is not None else (optics.width / 2.0, optics.height / 2.0)
    frame = np.zeros((optics.height, optics.width))
    total_ions = central_ions
    for density, ellipse, n_ions in shells:
        if n_ions <= 0:
            raise ValueError("each shell needs a positive ion count")
        total_ions += n_ions
        o_z = cz + ellipse.o_z / pitch_m
        o_y = cy + ellipse.o_y / pitch_m
        a_z = ellipse.r_z0 / pitch_m
        a_y = ellipse.r_y0 / pitch_m
        if min(a_z, a_y) <= 0:
            raise ValueError("ellipse semi-axes must be positive")
        if (
            o_z - a_z < 0
            or o_z + a_z > optics.width - 1
            or o_y - a_y < 0
            or o_y + a_y > optics.height - 1
        ):
            raise FrameOverflow("shell ellipse does not fit inside the image frame")
        centers = density.bin_centers
        if density.angle_kind == "physical":
            theta_e = np.asarray(eccentric_angle(centers, a_y / a_z))
        else:
            theta_e = centers
        z = o_z + a_z * np.cos(theta_e)
        y = o_y + a_y * np.sin(theta_e)
        _deposit_bilinear(frame, z, y, density.normalized * n_ions * optics.counts_per_ion)
    if central_ions:
        if not (0 <= cz <= optics.width - 1 and 0 <= cy <= optics.height - 1):
            raise FrameOverflow("trap center lies outside the image frame")
        _deposit_bilinear(
            frame,
            np.array([cz]),
            np.array([cy]),
            np.array([central_ions * optics.counts_per_ion]),
        )
    if total_ions == 0:
        raise ValueError("nothing to render: no shells and no central ions")
    if optics.psf_px > 0:
        frame = gaussian_filter(frame, optics.psf_px, mode="constant")
    if optics.noise_seed is not None:
        frame = np.random.default_rng(optics.noise_seed).poisson(frame).astype(float)
    return DensityImage(counts=frame, pixel_pitch=optics.pixel_pitch, origin=(cz, cy))


# --- ROI search -------------------------------------------------------------------


def _background_rms(counts: np.ndarray, margin: int = 8) -> float:
    """Noise scale from the frame border, which a centered ring never touches."""
    mask = np.zeros(counts.shape, dtype=bool)
    mask[:margin, :] = mask[-margin:, :] = True
    mask[:, :margin] = mask[:, -margin:] = True
    return float(np.sqrt(np.mean(counts[mask] ** 2)))


def _roi_objective(counts: np.ndarray, roi: EllipseROI, top_k: int) -> tuple:
    """(top-k annulus sum, total annulus sum), computed on the bounding box.

    The second component only breaks exact ties of the first: on a noiseless
    image every annulus that swallows the bright ring core scores the same
    top-k sum, and the total pulls the window onto the ring's full flanks.
    """
    h, w = counts.shape
    z0 = max(0, int(math.floor(roi.o_z - roi.r_z0 - roi.delta)))
    z1 = min(w, int(math.ceil(roi.o_z + roi.r_z0 + roi.delta)) + 1)
    y0 = max(0, int(math.floor(roi.o_y - roi.r_y0 - roi.delta)))
    y1 = min(h, int(math.ceil(roi.o_y + roi.r_y0 + roi.delta)) + 1)
    if z0 >= z1 or y0 >= y1:
        return (-np.inf, -np.inf)
    z = np.arange(z0, z1, dtype=float)[None, :]
    y = np.arange(y0, y1, dtype=float)[:, None]
    mask = roi.annulus_mask(z, y) & ~roi.central_mask(z, y)
    sel = counts[y0:y1, z0:z1][mask]
    if len(sel) == 0:
        return (-np.inf, -np.inf)
    total = float(sel.sum())
    if len(sel) <= top_k:
        return (total, total)
    return (float(np.partition(sel, len(sel) - top_k)[-top_k:].sum()), total)


def find_roi(image: DensityImage, n_ring: int, delta: float = 5.0) -> EllipseROI:
    """Locate the ring of a background-subtracted image.

    Maximizes the photon count in the 4*delta^2*n_ring brightest annulus
    pixels: a coarse scan over center (+-10 px) and semi-axes, then a
    hill-climb to half-pixel resolution.  Raises NoRing when even the best
    annulus is indistinguishable from the border noise.
    """
    if n_ring < 3:
        raise ValueError("n_ring must be at least 3")
    if delta <= 0:
        raise ValueError("delta must be positive")
    counts = image.counts
    h, w = counts.shape
    top_k = int(round(4 * delta * delta * n_ring))

    if image.origin is not None:
        cz0, cy0 = image.origin
    else:
        total = counts.sum()
        if total <= 0:
            raise NoRing("image carries no counts")
        cz0 = float((counts * np.arange(w)[None, :]).sum() / total)
        cy0 = float((counts * np.arange(h)[:, None]).sum() / total)

    def objective(o_z, o_y, r_z, r_y):
        if min(r_z, r_y) <= delta:
            return (-np.inf, -np.inf)
        return _roi_objective(counts, EllipseROI(o_z, o_y, r_z, r_y, delta), top_k)

    def better(new, old):
        # noiseless rings tie the top-k sum to the last ulp across many
        # annuli; compare with a relative tolerance so rounding noise never
        # drives the search (and the argmax stays scale-invariant), letting
        # the total-counts component center the window on the flanks
        for a, b in zip(new, old):
            tol = 1e-9 * max(abs(a), abs(b)) if math.isfinite(a) and math.isfinite(b) else 0.0
            if a > b + tol:
                return True
            if a < b - tol:
                return False
        return False

    r_max = min(w, h) / 2.0 - delta - 1
    radii = np.arange(delta + 2.0, r_max, 2.0)
    if len(radii) == 0:
        raise ValueError("frame too small for the requested delta")

    # stage 1: circular scan over center offsets and a common radius
    best, best_val = None, (-np.inf, -np.inf)
    for dz in np.arange(-10.0, 10.5, 2.0):
        for dy in np.arange(-10.0, 10.5, 2.0):
            for r in radii:
                val = objective(cz0 + dz, cy0 + dy, r, r)
                if better(val, best_val):
                    best, best_val = (cz0 + dz, cy0 + dy, r, r), val

    # stage 2: let the semi-axes differ freely; a strongly eccentric ring is
    # not near any circle, so the full axes grid is scanned, both at the
    # stage-1 center and at the centroid the circle scan started from
    o_z, o_y = best[0], best[1]
    centers = {(o_z, o_y), (cz0, cy0)}
    for c_z, c_y in sorted(centers):
        for r_z in radii:
            for r_y in radii:
                val = objective(c_z, c_y, r_z, r_y)
                if better(val, best_val):
                    best, best_val = (c_z, c_y, r_z, r_y), val

    # stage 2b: re-scan the center offsets with the winning semi-axes
    r_z, r_y = best[2], best[3]
    for dz in np.arange(-10.0, 10.5, 2.0):
        for dy in np.arange(-10.0, 10.5, 2.0):
            val = objective(cz0 + dz, cy0 + dy, r_z, r_y)
            if better(val, best_val):
                best, best_val = (cz0 + dz, cy0 + dy, r_z, r_y), val

    # stage 3: coordinate hill-climb, halving steps down to 0.5 px
    params = np.array(best)
    step = 2.0
    while step >= 0.5:
        improved = True
        while improved:
            improved = False
            for i in range(4):
                for sign in (1.0, -1.0):
                    trial = params.copy()
                    trial[i] += sign * step
                    val = objective(*trial)
                    if better(val, best_val):
                        params, best_val, improved = trial, val, True
        step /= 2.0

    if best_val[0] <= 3.0 * _background_rms(counts) * top_k:
        raise NoRing("no annulus rises above the background noise")
    return EllipseROI(params[0], params[1], params[2], params[3], delta)


# --- elliptic resampling ----------------------------------------------------------


def _bilinear_sample(counts: np.ndarray, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample at sub-pixel points, clamping coordinates to the frame."""
    h, w = counts.shape
    z = np.clip(z, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    z0 = np.clip(np.floor(z).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 2)
    fz, fy = z - z0, y - y0
    c00 = counts[y0, z0]
    c10 = counts[y0, z0 + 1]
    c01 = counts[y0 + 1, z0]
    c11 = counts[y0 + 1, z0 + 1]
    return c00 * (1 - fz) * (1 - fy) + c10 * fz * (1 - fy) + c01 * (1 - fz) * fy + c11 * fz * fy


def to_elliptic(image: DensityImage, roi: EllipseROI, r_window: int = 40) -> PolarImage:
    """Resample the image on the De La Hire (r, theta) grid of the ROI.

    theta runs over the standard 360 bins; r takes r_window unit steps
    centered on the ring radius, one step averaging one pixel radially.
    """
    if r_window < 2:
        raise ValueError("r_window must cover at least 2 pixels")
    r_z, r_y = roi.scaled_axes
    r_grid = roi.ring_radius + (np.arange(r_window) - (r_window - 1) / 2.0)
    r_grid = r_grid[r_grid > 0]
    theta = bin_centers(THETA_BINS)
    rr, tt = np.meshgrid(r_grid, theta, indexing="ij")
    z = roi.o_z + r_z * rr * np.cos(tt)
    y = roi.o_y + r_y * rr * np.sin(tt)
    return PolarImage(
        counts=_bilinear_sample(image.counts, z, y),
        r=r_grid,
        theta=theta,
        r_window=r_window,
    )


def angular_profile(polar: PolarImage) -> AngularDensity:
    """Integrate the radial band: n(theta) = sum_r counts(r, theta).

    Not normalized; the correlation statistic downstream is scale-invariant.
    The De La Hire theta is the elliptic (eccentric) angle of the ring.
    """
    return AngularDensity(polar.counts.sum(axis=0), angle_kind="eccentric")


def subtract_background(image: DensityImage, background: DensityImage) -> DensityImage:
    """Pixel-wise difference clamped at zero; keeps the image's metadata."""
    if image.counts.shape != background.counts.shape:
        raise ShapeMismatch("image and background dimensions differ")
    return DensityImage(
        counts=np.maximum(image.counts - background.counts, 0.0),
        pixel_pitch=image.pixel_pitch,
        origin=image.origin,
    )


# --- file formats -----------------------------------------------------------------


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def _write_sidecar(image: DensityImage, path: Path, scale: float):
    meta = {
        "pixel_pitch_um": image.pixel_pitch,
        "origin": list(image.origin) if image.origin is not None else None,
        "counts_scale": scale,
    }
    _sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _read_sidecar(path: Path) -> dict:
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        return {}
    return json.loads(sidecar.read_text())


def write_pgm(image: DensityImage, path) -> None:
    """16-bit binary PGM (P5, big-endian) plus a JSON metadata sidecar.

    Counts are scaled so the brightest pixel maps to 65535; the scale is
    recorded in the sidecar so reading recovers absolute counts.
    """
    path = Path(path)
    peak = float(image.counts.max())
    scale = 65535.0 / peak if peak > 0 else 1.0
    quantized = np.round(image.counts * scale).astype(">u2")
    header = f"P5\n{image.width} {image.height}\n65535\n".encode("ascii")
    path.write_bytes(header + quantized.tobytes())
    _write_sidecar(image, path, scale)


def read_pgm(path) -> DensityImage:
    path = Path(path)
    data = path.read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:  # magic, width, height, maxval
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 65535:
        raise ValueError("expected a 16-bit PGM")
    raw = np.frombuffer(data[pos:], dtype=">u2", count=width * height)
    meta = _read_sidecar(path)
    scale = float(meta.get("counts_scale", 1.0))
    return DensityImage(
        counts=raw.reshape(height, width).astype(float) / scale,
        pixel_pitch=float(meta.get("pixel_pitch_um", 1.0)),
        origin=tuple(meta["origin"]) if meta.get("origin") else None,
    )


def write_csv_image(image: DensityImage, path) -> None:
    """Plain matrix CSV (one row per pixel row) plus the JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in image.counts:
            writer.writerow(f"{v:.10g}" for v in row)
    _write_sidecar(image, path, 1.0)


def read_csv_image(path) -> DensityImage:
    path = Path(path)
    counts = np.loadtxt(path, delimiter=",", ndmin=2)
    meta = _read_sidecar(path)
    return DensityImage(
        counts=counts,
        pixel_pitch=float(meta.get("pixel_pitch_um", 1.0)),
        origin=tuple(meta["origin"]) if meta.get("origin") else None,
    )
