"""End-to-end command-line tests: exit codes, outputs, manifests, reproducibility.

Commands run in-process through main(argv).  Runs are kept small (few ions,
few restarts) so the whole module stays fast; the heavy physics is covered
by the module tests.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from meltlab.analysis import AngularDensity, bin_centers, correlate
from meltlab.cli import main, read_density_csv, write_density_csv
from meltlab.energy import load_configuration_csv
from meltlab.errors import NotConverged, UnstableTrap
from meltlab.imaging import DensityImage, write_pgm
from meltlab.trap import load_calibration


def run(*argv):
    return main([str(a) for a in argv])


def manifest_of(path):
    return json.loads(Path(path).read_text())


# --- ground ------------------------------------------------------------------------


def test_ground_writes_config_sidecar_and_manifest(tmp_path):
    out = tmp_path / "gs.csv"
    code = run("ground", "--n", 7, "--ratio", 1.25, "--seed", 3,
               "--restarts", 3, "--out", out)
    assert code == 0
    config = load_configuration_csv(out)
    assert len(config.species) == 7

    sidecar = json.loads((tmp_path / "gs.csv.json").read_text())
    assert sidecar["occupancy"] == [1, 6]
    assert sidecar["seed"] == 3
    assert sidecar["energy_mk"] > 0
    assert len(sidecar["frequencies_khz"]) == 3
    assert sidecar["ellipse_um"]["r_z0"] > sidecar["ellipse_um"]["r_y0"]

    doc = manifest_of(tmp_path / "gs.csv.manifest.json")
    assert doc["command_line"][0] == "meltlab"
    assert doc["seed"] == 3
    assert doc["config"]["n"] == 7
    assert set(doc["versions"]) == {"python", "numpy", "scipy", "meltlab"}
    assert doc["outputs"] == [str(out), str(tmp_path / "gs.csv.json")]
    for produced in doc["outputs"]:
        assert Path(produced).exists()


def test_ground_single_ion_sits_at_the_trap_center(tmp_path):
    out = tmp_path / "one.csv"
    assert run("ground", "--n", 1, "--seed", 0, "--restarts", 1, "--out", out) == 0
    config = load_configuration_csv(out)
    y, z = config.positions[0]
    assert abs(y) < 25e-9 and abs(z) < 25e-9  # within one grid cell of the origin


def test_ground_is_byte_reproducible(tmp_path):
    paths = []
    for name in ("a", "b"):
        out = tmp_path / name / "gs.csv"
        assert run("ground", "--n", 4, "--ratio", 1.1, "--seed", 11,
                   "--restarts", 2, "--out", out) == 0
        paths.append(out)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    first = (paths[0].parent / "gs.csv.json").read_bytes()
    second = (paths[1].parent / "gs.csv.json").read_bytes()
    assert first == second


# --- barrier -----------------------------------------------------------------------


def test_barrier_curve_and_fit_sidecar(tmp_path):
    out = tmp_path / "barrier.csv"
    code = run("barrier", "--n", 4, "--ratio", 1.1, "--seed", 0,
               "--restarts", 2, "--points", 13, "--out", out)
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "theta_rad,energy_mk"
    assert len(rows) == 1 + 13
    first = rows[1].split(",")
    assert float(first[0]) == 0.0 and float(first[1]) == 0.0

    fit = json.loads((tmp_path / "barrier.csv.json").read_text())
    assert fit["n_t"] == 4
    assert fit["vb_mk"] > 1.0
    assert fit["eta"] > 0
    assert len(fit["coeffs_j"]) == 5
    assert fit["occupancy"] == [4]


# --- synth and analyze -------------------------------------------------------------


@pytest.fixture(scope="module")
def synth_image(tmp_path_factory):
    # one shared ordered-phase frame: 4-ion crystal at ratio 1.2 and 102 mK
    root = tmp_path_factory.mktemp("synth")
    out = root / "img.pgm"
    code = main(["synth", "--n", "4", "--ratio", "1.2", "--temperature-mk", "102",
                 "--seed", "9", "--restarts", "2", "--frame", "160", "--out", str(out)])
    assert code == 0
    return out


def test_synth_writes_image_and_sidecar(synth_image):
    assert synth_image.exists()
    meta = json.loads((synth_image.parent / "img.pgm.json").read_text())
    assert meta["pixel_pitch_um"] > 0
    assert meta["origin"] == [80.0, 80.0]


def test_synth_is_byte_reproducible(tmp_path, synth_image):
    again = tmp_path / "img.pgm"
    code = run("synth", "--n", 4, "--ratio", 1.2, "--temperature-mk", 102,
               "--seed", 9, "--restarts", 2, "--frame", 160, "--out", again)
    assert code == 0
    assert again.read_bytes() == synth_image.read_bytes()
    assert (tmp_path / "img.pgm.json").read_bytes() == \
        (synth_image.parent / "img.pgm.json").read_bytes()


def test_analyze_image_reports_correlation(tmp_path, synth_image):
    out_dir = tmp_path / "an"
    code = run("analyze", "--image", synth_image, "--n", 4, "--out-dir", out_dir)
    assert code == 0
    rows = (out_dir / "results.csv").read_text().splitlines()
    header = rows[0].split(",")
    assert header[:3] == ["source", "c", "sigma_over_theta_nt"]
    cells = rows[1].split(",")
    assert float(cells[1]) > 4e-4  # ordered phase: well above suppression
    assert float(cells[3]) > 0  # recovered ring aspect

    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["n_analyzed"] == 1
    assert summary["c_std"] is None
    assert (out_dir / "00_img_g.csv").read_text().splitlines()[0] == "dtheta_rad,g"


def test_analyze_two_identical_images_zero_std(tmp_path, synth_image):
    twin = tmp_path / "twin.pgm"
    twin.write_bytes(synth_image.read_bytes())
    (tmp_path / "twin.pgm.json").write_bytes(
        (synth_image.parent / "img.pgm.json").read_bytes()
    )
    out_dir = tmp_path / "an"
    code = run("analyze", "--image", synth_image, "--image", twin,
               "--n", 4, "--out-dir", out_dir)
    assert code == 0
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["n_analyzed"] == 2
    assert summary["c_std"] == 0.0


def test_analyze_noise_image_exits_no_ring(tmp_path):
    rng = np.random.default_rng(5)
    counts = np.maximum(rng.poisson(5.0, size=(128, 128)).astype(float) - 5.0, 0.0)
    noise = tmp_path / "noise.pgm"
    write_pgm(DensityImage(counts=counts, pixel_pitch=1.0), noise)
    out_dir = tmp_path / "an"
    code = run("analyze", "--image", noise, "--n-t", 6, "--out-dir", out_dir)
    assert code == 4
    rows = (out_dir / "results.csv").read_text().splitlines()
    assert len(rows) == 1  # header only
    doc = manifest_of(out_dir / "manifest.json")
    assert doc["failures"][0]["error"] == "NoRing"


def test_analyze_density_table_directly(tmp_path):
    theta = bin_centers(360)
    dens = AngularDensity(1.0 + 0.5 * np.cos(4 * theta), angle_kind="eccentric")
    table = tmp_path / "dens.csv"
    write_density_csv(dens, table)
    back = read_density_csv(table)
    assert back.angle_kind == "eccentric"
    assert np.allclose(back.values, dens.values, rtol=1e-12)

    out_dir = tmp_path / "an"
    code = run("analyze", "--density", table, "--n-t", 4, "--out-dir", out_dir)
    assert code == 0
    cells = (out_dir / "results.csv").read_text().splitlines()[1].split(",")
    assert float(cells[1]) == pytest.approx(correlate(dens, 4).c, rel=1e-12)
    assert float(cells[1]) == pytest.approx(1.0 / 9.0, rel=1e-3)


def test_analyze_without_inputs_is_a_usage_error(tmp_path):
    assert run("analyze", "--n-t", 6, "--out-dir", tmp_path / "an") == 64


# --- sweep -------------------------------------------------------------------------


def test_sweep_continues_past_failures(tmp_path):
    out_dir = tmp_path / "sw"
    code = run("sweep", "--n", 4, "--ratios", "1.1,5.0", "--temperature-mk", 102,
               "--seed", 2, "--restarts", 2, "--frame", 160,
               "--workers", 2, "--out-dir", out_dir)
    assert code == 0

    rows = (out_dir / "sweep.csv").read_text().splitlines()
    assert rows[0].split(",")[:5] == ["ratio", "n_t", "v_b_mk", "c", "sigma_over_theta_nt"]
    assert len(rows) == 2  # the unreachable ratio contributes no row
    cells = rows[1].split(",")
    assert float(cells[0]) == 1.1
    assert int(cells[1]) == 4
    assert float(cells[2]) > 1.0
    assert float(cells[3]) > 0

    assert (out_dir / "image_r1.1.pgm").exists()
    assert (out_dir / "density_r1.1.csv").exists()
    doc = manifest_of(out_dir / "manifest.json")
    assert doc["failures"] and doc["failures"][0]["ratio"] == 5.0
    for produced in doc["outputs"]:
        assert Path(produced).exists()


def test_sweep_empty_ratio_list(tmp_path):
    out_dir = tmp_path / "sw"
    code = run("sweep", "--n", 4, "--ratios", "", "--temperature-mk", 102,
               "--seed", 0, "--out-dir", out_dir)
    assert code == 0
    rows = (out_dir / "sweep.csv").read_text().splitlines()
    assert len(rows) == 1
    assert not list(out_dir.glob("*.pgm"))


# --- calibrate and locus -----------------------------------------------------------


def test_calibrate_then_locus(tmp_path):
    trap = tmp_path / "trap.json"
    assert run("calibrate", "--out", trap) == 0
    load_calibration(trap)  # parses back

    out = tmp_path / "locus.csv"
    code = run("locus", "--trap", trap, "--qy-min", -0.2, "--qy-max", -0.16,
               "--steps", 3, "--out", out)
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "q_y,a_y,v_rf_v,v_dc_v"
    assert len(rows) == 4
    table = np.array([[float(x) for x in row.split(",")] for row in rows[1:]])
    assert np.all(np.diff(table[:, 0]) > 0)  # q_y scan in order
    assert np.all(table[:, 2] > 0)  # physical RF amplitudes


# --- configuration file and usage errors -------------------------------------------


def test_config_file_supplies_defaults_and_flags_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"steps": 3, "qy_min": -0.2, "qy_max": -0.16}))

    out = tmp_path / "locus.csv"
    assert run("locus", "--config", cfg, "--out", out) == 0
    assert len(out.read_text().splitlines()) == 4

    assert run("locus", "--config", cfg, "--steps", 2, "--out", out) == 0
    assert len(out.read_text().splitlines()) == 3  # explicit flag wins


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"stpes": 3}))
    assert run("locus", "--config", cfg) == 64


def test_missing_required_options_are_usage_errors(tmp_path):
    assert run("ground", "--out", tmp_path / "gs.csv") == 64
    assert run("sweep", "--n", 4, "--temperature-mk", 102,
               "--out-dir", tmp_path / "sw") == 64
    assert run("no-such-command") == 64


def test_domain_errors_map_to_exit_codes(tmp_path, monkeypatch):
    import meltlab.cli as cli

    def unstable(*args, **kwargs):
        raise UnstableTrap("forced")

    monkeypatch.setattr(cli, "find_ground_state", unstable)
    assert run("ground", "--n", 2, "--seed", 0, "--out", tmp_path / "gs.csv") == 2

    def stuck(*args, **kwargs):
        raise NotConverged("forced")

    monkeypatch.setattr(cli, "find_ground_state", stuck)
    assert run("ground", "--n", 2, "--seed", 0, "--out", tmp_path / "gs.csv") == 3
