"""
Rotation barriers versus crystal size
=====================================

The barrier opposing rigid rotation of the outer shell is not monotone in
the ion number: closed-shell counts (7 = 1+6, 14 = 4+10) lock the two
shells together and stand out by an order of magnitude.  Expect a few
minutes of runtime; every crystal needs its own ground state search and a
relaxed rotation curve.  Writes magic_numbers.png next to this script.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from meltlab import barrier_vs_n, joules_to_millikelvin, trap_for_ratio

trap = trap_for_ratio(1.18)

sizes = range(6, 16)
pairs = barrier_vs_n(sizes, trap, pin_inner=True, seed=0, restarts=5)
for n, v_b in pairs:
    print(f"N = {n:2d}   V_B = {joules_to_millikelvin(v_b):8.3f} mK")

fig, ax = plt.subplots(figsize=(6, 4))
ns = [n for n, _ in pairs]
vbs = [joules_to_millikelvin(v) for _, v in pairs]
colors = ["tab:red" if n in (7, 14) else "tab:blue" for n in ns]
ax.bar(ns, vbs, color=colors)
ax.set_yscale("log")
ax.set_xlabel("ion number N")
ax.set_ylabel("outer-shell barrier V_B (mK)")
ax.set_title("Magic numbers at frequency ratio 1.18 (inner shell pinned)")
fig.tight_layout()
fig.savefig(__file__.replace(".py", ".png"), dpi=120)
print("wrote", __file__.replace(".py", ".png"))
