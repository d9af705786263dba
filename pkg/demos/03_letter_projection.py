"""Project a letter onto the far-field plane.

The target lives on the square [-0.3, 0.3]^2 of the plane z = 0.5: a bitmap
of the letter A over a faint floor.  The plane density is lifted onto the
sphere with the central-projection area factor (the lifted mass equals the
plane mass), the reflector is solved against the lifted density, and rays
are pushed back down to the plane to render the achieved illumination.
"""

import os

import numpy as np

from reflector_ot import intensity, io, raytrace, solver, sphere

OUT = os.path.join(os.path.dirname(__file__), "out", "letter_projection")
os.makedirs(OUT, exist_ok=True)

EZ = np.array([0.0, 0.0, 1.0])
HALF = 0.30

plane = intensity.letter_a_target(size=96, half_side=HALF)
ghat = intensity.stereographic_lift(plane)
print(f"plane mass {plane.total_mass():.5f}, lifted mass {ghat.total_mass(600, 600):.5f}")

t = np.linspace(-HALF, HALF, 64, endpoint=False)
square = np.concatenate(
    [
        np.stack([t, np.full_like(t, -HALF)], 1),
        np.stack([np.full_like(t, HALF), t], 1),
        np.stack([-t, np.full_like(t, HALF)], 1),
        np.stack([np.full_like(t, -HALF), -t], 1),
    ]
)
boundary = intensity.Polyline(sphere.plane_to_direction(square))

cfg = solver.SolverConfig(
    source=intensity.UniformCap(-EZ, np.pi / 4),
    target=ghat,
    target_boundary=boundary,
    cost_sign=-1,
    tau=0.3,
    n_radial=40,
    max_iter=30,
    stop_mode="residual_increase",
)
problem = solver.ReflectorProblem(cfg)
u, report = solver.run(cfg, space=problem.space)
print(f"{report.termination}; residual {report.residuals[0]:.3e} -> {report.residuals.min():.3e}")

rng = np.random.default_rng(2)
samples = cfg.source.sample(2 * 10**6, rng)
hits, ok = raytrace.trace(problem.space, u, -1, samples)
XY, vis = raytrace.to_plane(hits)
grid = raytrace.PlaneGrid((-HALF, HALF, -HALF, HALF), 128, 128)
result = raytrace.bin_hits(XY, grid, len(samples))
ref = raytrace.reference_image(plane, grid)
err = raytrace.compare(result.image, ref, grid)
print(f"plane image: miss fraction {result.miss_fraction:.2%}, L1 vs target {err['L1']:.3f}")

io.write_pgm(os.path.join(OUT, "target.pgm"), ref)
io.write_pgm(os.path.join(OUT, "achieved.pgm"), result.image)
io.write_pgm(os.path.join(OUT, "error.pgm"), err["error_map"])
io.write_csv(
    os.path.join(OUT, "convergence.csv"),
    ("k", "residual", "theta", "J", "min_det", "ms"),
    report.csv_rows(),
)
print(f"outputs in {OUT} (target / achieved / error as PGM images)")
