"""Command-line interface: reproducible simulation and analysis runs.

Each subcommand wires the library modules into one experiment step and
records a run manifest next to its outputs.  The manifest holds the exact
command line, the effective option values, the master seed, package
versions, timestamps and every file the run produced, so a finished run can
be reproduced bit for bit later; a run that omitted --seed is still
reproducible because the drawn seed is recorded.

Exit codes: 0 success, 2 unstable trap, 3 relaxation did not converge,
4 no ring found in an image, 1 any other domain error, 64 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .analysis import (
    AngularDensity,
    SpreadFit,
    Suppressed,
    bin_centers,
    correlate,
    fit_angular_spread,
)
from .barrier import ThermalParameters, default_psf_sigma, thermal_angular_density
from .constants import CONSTANTS
from .energy import save_configuration_csv
from .errors import MeltlabError, NoRing, NotConverged, UnstableTrap
from .groundstate import Ellipse, assign_shells, find_ground_state, fit_enclosing_ellipse
from .imaging import (
    DensityImage,
    Optics,
    angular_profile,
    find_roi,
    read_csv_image,
    read_pgm,
    render_image,
    subtract_background,
    to_elliptic,
    write_pgm,
)
from .melting import (
    REFERENCE_Q_Y,
    melting_point,
    parse_impurity,
    shell_barrier,
    trap_for_ratio,
)
from .trap import (
    default_calibration,
    fit_calibration,
    get_species,
    load_calibration,
    mathieu_for_species,
    save_calibration,
    secular_frequencies,
    symmetric_vdc,
    vrf_for_qy,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNSTABLE = 2
EXIT_NOT_CONVERGED = 3
EXIT_NO_RING = 4
EXIT_USAGE = 64


# --- run manifest ------------------------------------------------------------------


@dataclass
class RunManifest:
    """Record of one CLI run: inputs, seed, versions and produced files."""

    command_line: list
    config: dict
    seed: int
    versions: dict
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def _versions() -> dict:
    try:
        own = metadata.version("meltlab")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "meltlab": own,
    }


def _finish(manifest: RunManifest, path: Path) -> None:
    manifest.finished = _now()
    _atomic_write_json(path, asdict(manifest))


def _manifest_path(args, default: Path) -> Path:
    return Path(args.manifest) if args.manifest else default


# --- atomic file helpers -----------------------------------------------------------


def _ensure_parent(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def _atomic_write_text(path: Path, text: str) -> None:
    _ensure_parent(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _atomic_write_json(path: Path, doc) -> None:
    _atomic_write_text(Path(path), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _atomic_csv(path: Path, header: list, rows: list) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write_text(Path(path), buf.getvalue())


def _image_sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def _write_pgm_atomic(image: DensityImage, path: Path) -> None:
    # write_pgm emits the frame plus its metadata sidecar; stage both under a
    # temporary name and swap them in so readers never see a partial file
    _ensure_parent(path)
    tmp = path.with_name(path.name + ".tmp")
    write_pgm(image, tmp)
    os.replace(_image_sidecar(tmp), _image_sidecar(path))
    os.replace(tmp, path)


def _json_sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


# --- shared value formatting -------------------------------------------------------


def _mk(energy_j: float) -> float:
    """Energy as a temperature in millikelvin."""
    return energy_j / CONSTANTS.k_b * 1e3


def _cell(x) -> str:
    return repr(float(x))


def _sigma_cell(spread) -> str:
    if isinstance(spread, SpreadFit):
        return _cell(spread.sigma_over_theta_nt)
    return ""  # suppressed or unfit: no spread to report


def _khz(omega: float) -> float:
    return omega / (2.0 * math.pi) / 1e3


# --- angular density tables --------------------------------------------------------


def write_density_csv(density: AngularDensity, path) -> None:
    """theta_rad,density rows with the angle parameterization in a comment."""
    buf = io.StringIO()
    buf.write(f"# angle_kind={density.angle_kind}\n")
    writer = csv.writer(buf)
    writer.writerow(["theta_rad", "density"])
    for theta, value in zip(density.bin_centers, density.values):
        writer.writerow([_cell(theta), _cell(value)])
    _atomic_write_text(Path(path), buf.getvalue())


def read_density_csv(path) -> AngularDensity:
    kind = "physical"
    lines = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                if "angle_kind=" in line:
                    kind = line.split("angle_kind=", 1)[1].strip()
                continue
            lines.append(line)
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:2]] != ["theta_rad", "density"]:
        raise ValueError(f"{path}: expected a theta_rad,density table")
    values = [float(row[1]) for row in reader if row]
    return AngularDensity(np.asarray(values, dtype=float), angle_kind=kind)


# --- physics plumbing shared by the commands ---------------------------------------


def _load_cal(args):
    return load_calibration(args.trap) if args.trap else default_calibration()


def _optics(args, noise_seed) -> Optics:
    return Optics(
        pixel_pitch=args.pixel_pitch_um,
        psf_px=args.psf_px,
        counts_per_ion=args.counts_per_ion,
        width=args.frame,
        height=args.frame,
        noise_seed=noise_seed,
    )


def _cold_shell(config, members, bins):
    """Render spec for a frozen inner shell: narrow peaks at the ion angles."""
    members = list(members)
    pts = config.positions[members]
    if len(members) >= 3:
        ellipse = fit_enclosing_ellipse(config, members)
    else:
        o_y, o_z = pts.mean(axis=0)
        radius = float(np.mean(np.hypot(pts[:, 0] - o_y, pts[:, 1] - o_z)))
        ellipse = Ellipse(o_y=float(o_y), o_z=float(o_z), r_y0=radius, r_z0=radius)
    angles = np.arctan2(pts[:, 0] - ellipse.o_y, pts[:, 1] - ellipse.o_z)
    theta = bin_centers(bins)
    sigma = default_psf_sigma(len(members))
    diff = (theta[:, None] - angles[None, :] + math.pi) % math.tau - math.pi
    values = np.exp(-0.5 * (diff / sigma) ** 2).sum(axis=1)
    density = AngularDensity(values / values.sum(), angle_kind="physical")
    return (density, ellipse, len(members))


def _render_crystal(barrier, outer_density, optics: Optics) -> DensityImage:
    """Frame for a crystal: thermal outer ring, frozen inner shells."""
    config = barrier.ground.config
    dec = barrier.decomposition
    shells = []
    central = 0
    for members in dec.shells[:-1]:
        if len(members) == 1:
            central += 1  # a lone center ion renders as the central disc
        else:
            shells.append(_cold_shell(config, members, outer_density.nbins))
    outer = list(dec.outer())
    shells.append((outer_density, fit_enclosing_ellipse(config, outer), len(outer)))
    return render_image(shells, optics, central_ions=central)


def _read_image(path: Path) -> DensityImage:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".csv":
        return read_csv_image(path)
    raise ValueError(f"{path}: unknown image format (expected .pgm or .csv)")


def _infer_n_t(n) -> int:
    # small planar crystals: a single shell up to 5 ions, then one ion moves
    # to the center; larger crystals need the ring size stated explicitly
    if n is None:
        raise ValueError("give --n-t, or --n so the ring size can be inferred")
    if 1 <= n <= 5:
        return n
    if 6 <= n <= 8:
        return n - 1
    raise ValueError("cannot infer the ring size for N > 8; give --n-t")


# --- subcommands -------------------------------------------------------------------


def cmd_ground(args, manifest: RunManifest) -> int:
    cal = _load_cal(args)
    species = get_species(args.species)
    trap = trap_for_ratio(args.ratio, cal, species, q_y=args.qy)
    result = find_ground_state(
        [species] * args.n, trap, seed=args.seed, restarts=args.restarts
    )
    dec = assign_shells(result.config)

    out = Path(args.out)
    _ensure_parent(out)
    tmp = out.with_name(out.name + ".tmp")
    save_configuration_csv(result.config, tmp)
    os.replace(tmp, out)
    manifest.outputs.append(str(out))

    outer = list(dec.outer())
    ellipse = fit_enclosing_ellipse(result.config, outer) if len(outer) >= 3 else None
    freqs = secular_frequencies(trap, species)
    sidecar = {
        "n": args.n,
        "species": species.label,
        "ratio": args.ratio,
        "q_y": args.qy,
        "seed": args.seed,
        "energy_mk": _mk(result.energy),
        "occupancy": list(dec.occupancy),
        "shells": [list(s) for s in dec.shells],
        "frequencies_khz": [_khz(w) for w in freqs],
        "ellipse_um": None
        if ellipse is None
        else {
            "o_y": ellipse.o_y * 1e6,
            "o_z": ellipse.o_z * 1e6,
            "r_y0": ellipse.r_y0 * 1e6,
            "r_z0": ellipse.r_z0 * 1e6,
        },
        "restarts_used": result.restarts_used,
        "sweep_count": result.sweep_count,
    }
    side = _json_sidecar(out)
    _atomic_write_json(side, sidecar)
    manifest.outputs.append(str(side))

    print(
        f"N={args.n} ratio={args.ratio:g} occupancy={dec.occupancy} "
        f"energy={_mk(result.energy):.6g} mK -> {out}"
    )
    _finish(manifest, _manifest_path(args, out.with_name(out.name + ".manifest.json")))
    return EXIT_OK


def cmd_barrier(args, manifest: RunManifest) -> int:
    cal = _load_cal(args)
    species = get_species(args.species)
    trap = trap_for_ratio(args.ratio, cal, species, q_y=args.qy)
    impurity = parse_impurity(args.impurity) if args.impurity else None
    result = shell_barrier(
        args.n,
        trap,
        seed=args.seed,
        species=species,
        impurity=impurity,
        pin_inner=args.pin_inner,
        restarts=args.restarts,
        theta_points=args.points,
    )

    out = Path(args.out)
    rows = [
        [_cell(theta), _cell(_mk(energy))]
        for theta, energy in zip(result.curve_theta, result.curve_energy)
    ]
    _atomic_csv(out, ["theta_rad", "energy_mk"], rows)
    manifest.outputs.append(str(out))

    fit = result.fit
    sidecar = {
        "n": args.n,
        "ratio": args.ratio,
        "q_y": args.qy,
        "species": species.label,
        "impurity": args.impurity,
        "pin_inner": args.pin_inner,
        "seed": args.seed,
        "occupancy": list(result.decomposition.occupancy),
        "n_t": fit.n_t,
        "eta": fit.eta,
        "phi_rad": fit.phi,
        "coeffs_j": [float(c) for c in fit.coeffs],
        "vb_mk": fit.v_b_mk,
        "rms_mk": _mk(fit.rms_residual),
    }
    side = _json_sidecar(out)
    _atomic_write_json(side, sidecar)
    manifest.outputs.append(str(side))

    print(
        f"N={args.n} ratio={args.ratio:g} N_T={fit.n_t} "
        f"V_B={fit.v_b_mk:.4g} mK eta={fit.eta:.4f} -> {out}"
    )
    _finish(manifest, _manifest_path(args, out.with_name(out.name + ".manifest.json")))
    return EXIT_OK


_SWEEP_HEADER = [
    "ratio",
    "n_t",
    "v_b_mk",
    "c",
    "sigma_over_theta_nt",
    "c_image",
    "sigma_image_over_theta_nt",
]


def cmd_sweep(args, manifest: RunManifest) -> int:
    ratios = [float(tok) for tok in args.ratios.split(",") if tok.strip()]
    cal = _load_cal(args)
    species = get_species(args.species)
    impurity = parse_impurity(args.impurity) if args.impurity else None
    temperature = args.temperature_mk * 1e-3
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def point(item):
        index, ratio = item
        seed_i = args.seed + index  # independent deterministic seed per point
        try:
            trap = trap_for_ratio(ratio, cal, species, q_y=args.qy)
            barrier = shell_barrier(
                args.n,
                trap,
                seed=seed_i,
                species=species,
                impurity=impurity,
                restarts=args.restarts,
            )
            mp = melting_point(
                args.n, ratio, temperature, seed=seed_i, bins=args.bins, barrier=barrier
            )
            density = thermal_angular_density(
                barrier.fit, ThermalParameters(temperature), bins=args.bins
            )
            optics = _optics(args, noise_seed=seed_i if args.noise else None)
            image = _render_crystal(barrier, density, optics)

            image_path = out_dir / f"image_r{ratio:g}.pgm"
            _write_pgm_atomic(image, image_path)
            density_path = out_dir / f"density_r{ratio:g}.csv"
            write_density_csv(density, density_path)

            roi = find_roi(image, barrier.fit.n_t, delta=args.delta)
            profile = angular_profile(to_elliptic(image, roi))
            c_image = correlate(profile, barrier.fit.n_t).c
            try:
                spread_image = fit_angular_spread(profile, barrier.fit.n_t)
            except MeltlabError:
                spread_image = None
            row = [
                _cell(ratio),
                str(mp.n_t),
                _cell(mp.v_b_mk),
                _cell(mp.c),
                _sigma_cell(mp.spread),
                _cell(c_image),
                _sigma_cell(spread_image),
            ]
            files = [str(image_path), str(_image_sidecar(image_path)), str(density_path)]
            return ("ok", ratio, row, files)
        except MeltlabError as exc:
            return ("fail", ratio, type(exc).__name__, str(exc))

    workers = max(1, args.workers)
    if ratios:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(point, enumerate(ratios)))
    else:
        results = []

    rows = []
    for status, ratio, *rest in results:
        if status == "ok":
            row, files = rest
            rows.append(row)
            manifest.outputs.extend(files)
        else:
            error, message = rest
            manifest.failures.append({"ratio": ratio, "error": error, "message": message})
            print(f"ratio {ratio:g} failed: {error}: {message}", file=sys.stderr)

    table = out_dir / "sweep.csv"
    _atomic_csv(table, _SWEEP_HEADER, rows)
    manifest.outputs.insert(0, str(table))

    print(
        f"swept {len(ratios)} ratio(s), {len(rows)} succeeded, "
        f"{len(manifest.failures)} failed -> {table}"
    )
    _finish(manifest, _manifest_path(args, out_dir / "manifest.json"))
    return EXIT_OK


def cmd_synth(args, manifest: RunManifest) -> int:
    cal = _load_cal(args)
    species = get_species(args.species)
    trap = trap_for_ratio(args.ratio, cal, species, q_y=args.qy)
    impurity = parse_impurity(args.impurity) if args.impurity else None
    barrier = shell_barrier(
        args.n, trap, seed=args.seed, species=species, impurity=impurity,
        restarts=args.restarts,
    )
    density = thermal_angular_density(
        barrier.fit, ThermalParameters(args.temperature_mk * 1e-3), bins=args.bins
    )
    optics = _optics(args, noise_seed=args.seed if args.noise else None)
    image = _render_crystal(barrier, density, optics)

    out = Path(args.out)
    _write_pgm_atomic(image, out)
    manifest.outputs.extend([str(out), str(_image_sidecar(out))])

    print(
        f"N={args.n} ratio={args.ratio:g} T={args.temperature_mk:g} mK "
        f"N_T={barrier.fit.n_t} -> {out}"
    )
    _finish(manifest, _manifest_path(args, out.with_name(out.name + ".manifest.json")))
    return EXIT_OK


_ANALYZE_HEADER = [
    "source",
    "c",
    "sigma_over_theta_nt",
    "eta",
    "ring_radius_px",
    "center_z_px",
    "center_y_px",
]


def cmd_analyze(args, manifest: RunManifest) -> int:
    images = list(args.image or [])
    densities = list(args.density or [])
    if not images and not densities:
        print("meltlab analyze: give at least one --image or --density", file=sys.stderr)
        return EXIT_USAGE
    n_t = args.n_t if args.n_t else _infer_n_t(args.n)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    background = _read_image(Path(args.background)) if args.background else None

    rows = []
    c_values = []
    sigma_values = []
    suppressed = 0
    saw_no_ring = False
    sources = [("image", p) for p in images] + [("density", p) for p in densities]
    for index, (kind, path_str) in enumerate(sources):
        path = Path(path_str)
        roi = None
        try:
            if kind == "image":
                image = _read_image(path)
                if background is not None:
                    image = subtract_background(image, background)
                roi = find_roi(image, n_t, delta=args.delta)
                profile = angular_profile(to_elliptic(image, roi))
            else:
                profile = read_density_csv(path)
        except NoRing as exc:
            saw_no_ring = True
            manifest.failures.append(
                {"input": str(path), "error": "NoRing", "message": str(exc)}
            )
            print(f"{path}: no ring found: {exc}", file=sys.stderr)
            continue
        except (MeltlabError, OSError, ValueError) as exc:
            manifest.failures.append(
                {"input": str(path), "error": type(exc).__name__, "message": str(exc)}
            )
            print(f"{path}: {exc}", file=sys.stderr)
            continue

        result = correlate(profile, n_t)
        try:
            spread = fit_angular_spread(profile, n_t)
        except MeltlabError as exc:
            manifest.failures.append(
                {"input": str(path), "error": type(exc).__name__, "message": str(exc)}
            )
            spread = None

        lags = np.arange(len(result.g)) * math.tau / len(result.g)
        g_path = out_dir / f"{index:02d}_{path.stem}_g.csv"
        _atomic_csv(
            g_path,
            ["dtheta_rad", "g"],
            [[_cell(lag), _cell(value)] for lag, value in zip(lags, result.g)],
        )
        manifest.outputs.append(str(g_path))

        c_values.append(result.c)
        if isinstance(spread, SpreadFit):
            sigma_values.append(spread.sigma_over_theta_nt)
        elif isinstance(spread, Suppressed):
            suppressed += 1
        rows.append(
            [
                str(path),
                _cell(result.c),
                _sigma_cell(spread),
                _cell(roi.eta) if roi else "",
                _cell(roi.ring_radius) if roi else "",
                _cell(roi.o_z) if roi else "",
                _cell(roi.o_y) if roi else "",
            ]
        )

    results_path = out_dir / "results.csv"
    _atomic_csv(results_path, _ANALYZE_HEADER, rows)
    manifest.outputs.append(str(results_path))

    def _mean(xs):
        return float(np.mean(xs)) if xs else None

    def _std(xs):
        return float(np.std(xs, ddof=1)) if len(xs) >= 2 else None

    summary = {
        "n_inputs": len(sources),
        "n_analyzed": len(rows),
        "n_t": n_t,
        "c_mean": _mean(c_values),
        "c_std": _std(c_values),
        "sigma_over_theta_nt_mean": _mean(sigma_values),
        "sigma_over_theta_nt_std": _std(sigma_values),
        "suppressed": suppressed,
    }
    summary_path = out_dir / "summary.json"
    _atomic_write_json(summary_path, summary)
    manifest.outputs.append(str(summary_path))

    if c_values:
        print(
            f"analyzed {len(rows)}/{len(sources)} input(s): "
            f"C mean {summary['c_mean']:.4g} -> {results_path}"
        )
    else:
        print(f"analyzed {len(rows)}/{len(sources)} input(s) -> {results_path}")
    _finish(manifest, _manifest_path(args, out_dir / "manifest.json"))
    return EXIT_NO_RING if saw_no_ring else EXIT_OK


def cmd_calibrate(args, manifest: RunManifest) -> int:
    anchors = json.loads(Path(args.anchors).read_text()) if args.anchors else None
    cal = fit_calibration(anchors)

    out = Path(args.out)
    _ensure_parent(out)
    tmp = out.with_name(out.name + ".tmp")
    save_calibration(cal, tmp)
    os.replace(tmp, out)
    manifest.outputs.append(str(out))

    trap = trap_for_ratio(1.18, cal)
    freqs = [_khz(w) for w in secular_frequencies(trap, get_species("138Ba"))]
    print(
        "calibration fitted; at ratio 1.18 the secular frequencies are "
        f"({freqs[0]:.1f}, {freqs[1]:.1f}, {freqs[2]:.1f}) kHz -> {out}"
    )
    _finish(manifest, _manifest_path(args, out.with_name(out.name + ".manifest.json")))
    return EXIT_OK


def cmd_locus(args, manifest: RunManifest) -> int:
    cal = _load_cal(args)
    species = get_species(args.species)
    rows = []
    for q_y in np.linspace(args.qy_min, args.qy_max, args.steps):
        q_y = float(q_y)
        try:
            v_rf = vrf_for_qy(cal, species, q_y)
            v_dc = symmetric_vdc(cal, species, v_rf)
            trap = mathieu_for_species(cal, v_dc, v_rf, species)
            rows.append([_cell(q_y), _cell(trap.a[1]), _cell(v_rf), _cell(v_dc)])
        except MeltlabError as exc:
            manifest.failures.append(
                {"q_y": q_y, "error": type(exc).__name__, "message": str(exc)}
            )
            print(f"q_y {q_y:g} failed: {exc}", file=sys.stderr)

    out = Path(args.out)
    _atomic_csv(out, ["q_y", "a_y", "v_rf_v", "v_dc_v"], rows)
    manifest.outputs.append(str(out))

    print(f"symmetric locus: {len(rows)}/{args.steps} point(s) -> {out}")
    _finish(manifest, _manifest_path(args, out.with_name(out.name + ".manifest.json")))
    return EXIT_OK


# --- argument parsing --------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """ArgumentParser with a usage exit code that stays clear of the domain codes."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", metavar="JSON", help="JSON file of option defaults; explicit flags win"
    )
    common.add_argument(
        "--seed",
        type=int,
        help="master random seed (default: drawn from the OS, recorded in the manifest)",
    )
    common.add_argument(
        "--trap", metavar="JSON", help="trap calibration file (default: packaged calibration)"
    )
    common.add_argument(
        "--manifest", metavar="JSON", help="run manifest path (default: next to the outputs)"
    )

    physics = argparse.ArgumentParser(add_help=False)
    physics.add_argument(
        "--species", default="138Ba", help="ion species label (default %(default)s)"
    )
    physics.add_argument(
        "--qy",
        type=float,
        default=REFERENCE_Q_Y,
        help="Mathieu q_y operating point (default %(default)s)",
    )
    physics.add_argument(
        "--restarts", type=int, default=5, help="ground-state restarts (default %(default)s)"
    )

    optics = argparse.ArgumentParser(add_help=False)
    optics.add_argument(
        "--pixel-pitch-um",
        type=float,
        default=17.0 / 30.0,
        help="micrometers per pixel (default %(default).4f)",
    )
    optics.add_argument(
        "--psf-px", type=float, default=2.0, help="point-spread sigma in pixels"
    )
    optics.add_argument(
        "--counts-per-ion", type=float, default=1e4, help="photon counts per ion"
    )
    optics.add_argument(
        "--frame", type=int, default=256, help="square frame size in pixels"
    )
    optics.add_argument(
        "--noise",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="Poisson photon noise, seeded by --seed",
    )
    optics.add_argument(
        "--bins", type=int, default=360, help="angular bins for the thermal density"
    )

    parser = _Parser(prog="meltlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser(
        "ground", parents=[common, physics], help="relax an N-ion planar crystal"
    )
    p.add_argument("--n", type=int, help="number of ions (1..30)")
    p.add_argument("--ratio", type=float, default=1.18, help="omega_y/omega_z target")
    p.add_argument("--out", default="gs.csv", help="configuration CSV (default %(default)s)")
    p.set_defaults(func=cmd_ground, _required=("n",))

    p = sub.add_parser(
        "barrier",
        parents=[common, physics],
        help="rotation barrier of the outer shell",
    )
    p.add_argument("--n", type=int, help="number of ions (3..30)")
    p.add_argument("--ratio", type=float, default=1.18, help="omega_y/omega_z target")
    p.add_argument("--impurity", help="substituted ion spec, e.g. 137Ba@inner")
    p.add_argument(
        "--pin-inner",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="freeze inner shells while the outer shell rotates",
    )
    p.add_argument("--points", type=int, default=25, help="samples over one period")
    p.add_argument("--out", default="barrier.csv", help="curve CSV (default %(default)s)")
    p.set_defaults(func=cmd_barrier, _required=("n",))

    p = sub.add_parser(
        "sweep",
        parents=[common, physics, optics],
        help="melting observables across anisotropy ratios",
    )
    p.add_argument("--n", type=int, help="number of ions")
    p.add_argument("--ratios", help="comma-separated omega_y/omega_z values")
    p.add_argument("--temperature-mk", type=float, help="ring temperature in mK")
    p.add_argument("--impurity", help="substituted ion spec, e.g. 137Ba@inner")
    p.add_argument("--delta", type=float, default=5.0, help="ROI half-width in pixels")
    p.add_argument(
        "--workers",
        type=int,
        default=min(4, os.cpu_count() or 1),
        help="bounded worker pool size (default %(default)s)",
    )
    p.add_argument("--out-dir", default="sweep_out", help="output directory")
    p.set_defaults(func=cmd_sweep, _required=("n", "ratios", "temperature_mk"))

    p = sub.add_parser(
        "synth",
        parents=[common, physics, optics],
        help="synthesize one fluorescence image",
    )
    p.add_argument("--n", type=int, help="number of ions")
    p.add_argument("--ratio", type=float, default=1.18, help="omega_y/omega_z target")
    p.add_argument("--temperature-mk", type=float, help="ring temperature in mK")
    p.add_argument("--impurity", help="substituted ion spec, e.g. 137Ba@inner")
    p.add_argument("--out", default="synth.pgm", help="image path (default %(default)s)")
    p.set_defaults(func=cmd_synth, _required=("n", "temperature_mk"))

    p = sub.add_parser(
        "analyze",
        parents=[common],
        help="ring correlation and spread from images or density tables",
    )
    p.add_argument("--image", action="append", help="PGM or CSV image (repeatable)")
    p.add_argument("--density", action="append", help="theta_rad,density CSV (repeatable)")
    p.add_argument("--background", help="background image to subtract")
    p.add_argument("--n", type=int, help="total ion count (used to infer the ring size)")
    p.add_argument("--n-t", type=int, help="outer-shell ion count")
    p.add_argument("--delta", type=float, default=5.0, help="ROI half-width in pixels")
    p.add_argument("--out-dir", default="analysis_out", help="output directory")
    p.set_defaults(func=cmd_analyze, _required=())

    p = sub.add_parser(
        "calibrate",
        parents=[common],
        help="fit the voltage-to-Mathieu calibration to anchor points",
    )
    p.add_argument("--anchors", metavar="JSON", help="anchor overrides (see docs)")
    p.add_argument("--out", default="trap.json", help="calibration path (default %(default)s)")
    p.set_defaults(func=cmd_calibrate, _required=())

    p = sub.add_parser(
        "locus",
        parents=[common],
        help="scan the omega_y = omega_z locus over q_y",
    )
    p.add_argument("--species", default="138Ba", help="ion species label")
    p.add_argument("--qy-min", type=float, default=-0.25, help="scan start")
    p.add_argument("--qy-max", type=float, default=-0.10, help="scan end")
    p.add_argument("--steps", type=int, default=16, help="number of scan points")
    p.add_argument("--out", default="locus.csv", help="locus CSV (default %(default)s)")
    p.set_defaults(func=cmd_locus, _required=())

    subparsers = {
        name: sp for name, sp in sub.choices.items()
    }
    return parser, subparsers


def _dests(parser) -> set:
    return {action.dest for action in parser._actions if action.dest != "help"}


def _scan_config(argv) -> str | None:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def _apply_config(parser, subparsers, argv) -> int | None:
    """Load --config JSON into parser defaults; flags given on argv still win."""
    path = _scan_config(argv)
    if path is None:
        return None
    try:
        overrides = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"meltlab: cannot read config {path}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not isinstance(overrides, dict):
        print(f"meltlab: config {path} must hold a JSON object", file=sys.stderr)
        return EXIT_ERROR
    known = set().union(*[_dests(sp) for sp in subparsers.values()])
    unknown = set(overrides) - known
    if unknown:
        print(
            f"meltlab: unknown config key(s): {', '.join(sorted(unknown))}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    if isinstance(overrides.get("ratios"), list):
        overrides["ratios"] = ",".join(str(r) for r in overrides["ratios"])
    for sp in subparsers.values():
        sp.set_defaults(**{k: v for k, v in overrides.items() if k in _dests(sp)})
    return None


def _config_snapshot(args) -> dict:
    doc = {}
    for key, value in vars(args).items():
        if key.startswith("_") or key == "func":
            continue
        doc[key] = value
    return doc


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subparsers = build_parser()
    code = _apply_config(parser, subparsers, argv)
    if code is not None:
        return code
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR

    for name in getattr(args, "_required", ()):
        if getattr(args, name) is None:
            flag = "--" + name.replace("_", "-")
            print(f"meltlab {args.command}: missing required option {flag}", file=sys.stderr)
            return EXIT_USAGE

    if args.seed is None:
        args.seed = int.from_bytes(os.urandom(4), "big")

    manifest = RunManifest(
        command_line=["meltlab", *argv],
        config=_config_snapshot(args),
        seed=args.seed,
        versions=_versions(),
        started=_now(),
    )
    try:
        return args.func(args, manifest)
    except UnstableTrap as exc:
        print(f"meltlab: unstable trap: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except NotConverged as exc:
        print(f"meltlab: did not converge: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except NoRing as exc:
        print(f"meltlab: no ring: {exc}", file=sys.stderr)
        return EXIT_NO_RING
    except MeltlabError as exc:
        print(f"meltlab: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError) as exc:
        print(f"meltlab: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
