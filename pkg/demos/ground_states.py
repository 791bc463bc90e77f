"""
Shell structure of small planar crystals
========================================

Grid Monte Carlo ground states for a few crystal sizes in the anisotropic
trap, with the shell split and the enclosing ellipse of the outer ring.
Writes ground_states.png next to this script.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from meltlab import (
    BA138,
    assign_shells,
    find_ground_state,
    fit_enclosing_ellipse,
    trap_for_ratio,
)

trap = trap_for_ratio(1.18)

fig, axes = plt.subplots(1, 3, figsize=(12, 4), sharex=True, sharey=True)
for ax, n in zip(axes, (7, 8, 14)):
    result = find_ground_state([BA138] * n, trap, seed=1, restarts=5)
    dec = assign_shells(result.config)
    pos = result.config.positions * 1e6  # meters -> micrometers

    # one color per shell, innermost first
    for k, shell in enumerate(dec.shells):
        pts = pos[list(shell)]
        ax.plot(pts[:, 1], pts[:, 0], "o", ms=9, label=f"shell {k}: {len(shell)} ions")

    # the outer ring carries the rotation physics; draw its fitted ellipse
    outer = list(dec.outer())
    if len(outer) >= 3:
        e = fit_enclosing_ellipse(result.config, outer)
        t = np.linspace(0, 2 * np.pi, 200)
        ax.plot(
            (e.o_z + e.r_z0 * np.cos(t)) * 1e6,
            (e.o_y + e.r_y0 * np.sin(t)) * 1e6,
            "k--",
            lw=0.8,
        )

    ax.set_title(f"N = {n}, occupancy {dec.occupancy}")
    ax.set_xlabel("z (um)")
    ax.set_aspect("equal")
    ax.legend(fontsize=8)

axes[0].set_ylabel("y (um)")
fig.suptitle("Ground states at frequency ratio 1.18 (z is the soft axis)")
fig.tight_layout()
fig.savefig(__file__.replace(".py", ".png"), dpi=120)
print("wrote", __file__.replace(".py", ".png"))
