"""Geometry of the orthogonal trust-region projection.

The correction vector g is split into a component parallel to the denoising
velocity v (kept in full) and a perpendicular component (clipped to radius
rho * ||v||).  The projection preserves <g, v>, never exceeds the radius,
and is idempotent.
"""

import numpy as np

from guidedflow import otr_project

rng = np.random.default_rng(0)
v = rng.standard_normal(6)
g = rng.standard_normal(6) * 4.0

v_norm = np.linalg.norm(v)
g_par = (g @ v / v_norm**2) * v
g_perp = g - g_par

print(f"||v|| = {v_norm:.3f}   ||g_par|| = {np.linalg.norm(g_par):.3f}   "
      f"||g_perp|| = {np.linalg.norm(g_perp):.3f}")
print()
print(f"{'rho':>6} {'||gf - g_par||':>15} {'radius':>8} {'<gf,v>':>8} {'<g,v>':>8} {'idem':>10}")
for rho in (0.1, 0.5, 1.0, 2.0, np.inf):
    gf = otr_project(g, v, rho)
    gff = otr_project(gf, v, rho)
    radius = rho * v_norm
    print(
        f"{rho:6} {np.linalg.norm(gf - g_par):15.4f} {radius:8.3f} "
        f"{gf @ v:8.4f} {g @ v:8.4f} {np.linalg.norm(gff - gf):10.2e}"
    )

print()
print("Hand-checkable case: g = (2, 3), v = (1, 0), rho = 0.5")
print("  ->", otr_project(np.array([2.0, 3.0]), np.array([1.0, 0.0]), 0.5))
print("The parallel part (2, 0) is untouched; the perpendicular part 3 is")
print("clipped to the radius 0.5 * ||v|| = 0.5.")
