"""
From crystal to camera frame and back
=====================================

Renders synthetic fluorescence images of a 7-ion crystal at two trap
settings, then runs the blind extraction chain (ring search, elliptic
unrolling, angular profile) and compares the recovered modulation with
the thermal model it came from.  Writes camera_pipeline.png next to this
script.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from meltlab import (
    Optics,
    ThermalParameters,
    angular_profile,
    convert_density,
    correlate,
    find_roi,
    fit_enclosing_ellipse,
    render_image,
    shell_barrier,
    thermal_angular_density,
    to_elliptic,
    trap_for_ratio,
)

TEMPERATURE = 0.096  # kelvin

fig, axes = plt.subplots(2, 2, figsize=(10, 8))
for col, ratio in enumerate((1.18, 1.3)):
    barrier = shell_barrier(7, trap_for_ratio(ratio), seed=0)
    density = thermal_angular_density(barrier.fit, ThermalParameters(TEMPERATURE))

    # put the hot outer ring and the cold center ion on the sensor
    outer = list(barrier.decomposition.outer())
    ellipse = fit_enclosing_ellipse(barrier.ground.config, outer)
    optics = Optics(noise_seed=col)
    image = render_image([(density, ellipse, len(outer))], optics=optics,
                         central_ions=1)

    roi = find_roi(image, n_ring=len(outer))
    profile = angular_profile(to_elliptic(image, roi))
    c_img = correlate(profile, barrier.fit.n_t).c
    c_mod = correlate(density, barrier.fit.n_t).c

    ax = axes[0, col]
    ax.imshow(image.counts, cmap="inferno", origin="lower")
    t = np.linspace(0, 2 * np.pi, 200)
    ax.plot(roi.o_y + roi.r_y0 * np.sin(t), roi.o_z + roi.r_z0 * np.cos(t),
            "c--", lw=0.8)
    ax.set_title(f"ratio {ratio}: frame + recovered ring")
    ax.set_xticks([])
    ax.set_yticks([])

    ax = axes[1, col]
    theta = profile.bin_centers
    ax.plot(theta, profile.normalized, label=f"image (C = {c_img:.3g})")
    model = convert_density(density, eta=roi.eta)
    ax.plot(theta, model.normalized, "--", label=f"model (C = {c_mod:.3g})")
    ax.set_xlabel("elliptic angle (rad)")
    ax.set_ylabel("ring weight")
    ax.legend(fontsize=8)

fig.suptitle(f"7-ion crystal at {TEMPERATURE * 1e3:.0f} mK")
fig.tight_layout()
fig.savefig(__file__.replace(".py", ".png"), dpi=120)
print("wrote", __file__.replace(".py", ".png"))
