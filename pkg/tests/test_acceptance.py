"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one pass/fail line (collected again in the terminal
summary).  The off-axis exact-solution study (criteria 1, 2, 5, 9, 10)
shares one set of solves; the plane-image run (criterion 4) is the long one.
"""

import numpy as np
import pytest

from conftest import record_criterion
from reflector_ot import build_cap_mesh, fem, intensity, raytrace, solver, sphere

EZ = np.array([0.0, 0.0, 1.0])
Q = np.array([0.0, -np.sin(np.pi / 8), np.cos(np.pi / 8)])
P_MIRROR = (Q + EZ) / np.linalg.norm(Q + EZ)

# descent budget for the warm-started exact-solution study: the transient
# decays within ~8 steps at tau = 0.5 independently of the mesh, after which
# the iterates sit at the discretisation floor
STUDY_STEPS = 12


def exact_errors(space, u):
    phi = np.log(1.0 / np.abs(space.qp_unit @ P_MIRROR))
    phi -= space.integrate_qp(phi) / space.integrate_qp(np.ones_like(phi))
    xp = space.qp_unit @ P_MIRROR
    gphi = -(P_MIRROR[None, None, :] - xp[..., None] * space.qp_unit) / xp[..., None]
    l2 = np.sqrt(space.integrate_qp((space.at_qp(u) - phi) ** 2))
    h1 = np.sqrt(space.integrate_qp(np.sum((space.grad_at_qp(u) - gphi) ** 2, -1)))
    return float(l2), float(h1)


@pytest.fixture(scope="module")
def off_axis_study():
    """Off-axis cap target, +log cost, N in {10, 20, 40}, 12 descent steps."""
    out = {}
    for n in (10, 20, 40):
        cfg = solver.SolverConfig(
            source=intensity.UniformCap(-EZ, np.pi / 4),
            target=intensity.off_axis_cap_target(),
            target_boundary=intensity.CapCircle(Q, np.pi / 4),
            cost_sign=+1,
            tau=0.5,
            n_radial=n,
            max_iter=STUDY_STEPS,
            stop_mode="max_iter_only",
            u0="log_axis",
            diagnostics_every=1 if n <= 20 else 0,
        )
        problem = solver.ReflectorProblem(cfg)
        u, report = solver.run(cfg, space=problem.space)
        l2, h1 = exact_errors(problem.space, u)
        out[n] = {
            "problem": problem,
            "u": u,
            "report": report,
            "h": cfg.theta / n,
            "l2": l2,
            "h1": h1,
        }
    return out


@pytest.fixture(scope="module")
def letter_run():
    """Plane letter target lifted to the sphere, N = 80, tau = 0.3."""
    half = 0.30
    plane = intensity.letter_a_target(96, half)
    t = np.linspace(-half, half, 64, endpoint=False)
    sides = [
        np.stack([t, np.full_like(t, -half)], 1),
        np.stack([np.full_like(t, half), t], 1),
        np.stack([-t, np.full_like(t, half)], 1),
        np.stack([np.full_like(t, -half), -t], 1),
    ]
    boundary = intensity.Polyline(sphere.plane_to_direction(np.concatenate(sides)))
    cfg = solver.SolverConfig(
        source=intensity.UniformCap(-EZ, np.pi / 4),
        target=intensity.stereographic_lift(plane),
        target_boundary=boundary,
        cost_sign=-1,
        tau=0.3,
        n_radial=80,
        max_iter=30,
        stop_mode="residual_increase",
    )
    u, report = solver.run(cfg)
    return cfg, u, report


def test_criterion_1_exact_solution_convergence(off_axis_study):
    hs = np.array([off_axis_study[n]["h"] for n in (10, 20, 40)])
    l2 = np.array([off_axis_study[n]["l2"] for n in (10, 20, 40)])
    h1 = np.array([off_axis_study[n]["h1"] for n in (10, 20, 40)])
    slope = np.polyfit(np.log(hs), np.log(l2), 1)[0]
    ok = bool(np.all(np.diff(l2) < 0) and np.all(np.diff(h1) < 0) and slope >= 1.5)
    assert record_criterion(
        1,
        ok,
        f"exact-solution errors L2={l2.round(7).tolist()} H1={h1.round(6).tolist()}, "
        f"L2 slope {slope:.2f} >= 1.5",
    )


def test_criterion_2_consistency_residual(off_axis_study):
    norms, hs = [], []
    for n in (10, 20, 40):
        problem = off_axis_study[n]["problem"]
        space = problem.space
        phi = space.zero_mean(
            space.interpolate(lambda x: np.log(1.0 / np.abs(x @ P_MIRROR)))
        )
        _, diag = problem.residual(phi)
        norms.append(diag["residual_norm"])
        hs.append(off_axis_study[n]["h"])
    slope = np.polyfit(np.log(hs), np.log(norms), 1)[0]
    ok = bool(norms[0] > norms[1] > norms[2] and slope >= 0.8)
    assert record_criterion(
        2,
        ok,
        f"interpolant residual {np.array(norms).round(5).tolist()}, slope {slope:.2f} >= 0.8",
    )


def test_criterion_3_iteration_band():
    source = intensity.UniformCap(-EZ, np.pi / 4)
    target = intensity.high_contrast_target(12.0)
    cfg = solver.SolverConfig(
        source=source,
        target=target.scaled(source.total_mass() / target.total_mass()),
        target_boundary=intensity.CapCircle(EZ, np.pi / 4),
        cost_sign=-1,
        tau=0.5,
        n_radial=20,
        max_iter=60,
        stop_mode="residual_increase",
        u0="zero",
    )
    u, report = solver.run(cfg)
    res = report.residuals
    stopped = report.termination.startswith("residual stopped")
    k_stop = report.rows[-1].k
    monotone = bool(np.all(np.diff(res[:-1]) < 0.0) and res[-1] >= res[-2])
    ok = stopped and 5 <= k_stop <= 40 and monotone
    assert record_criterion(
        3,
        ok,
        f"smooth contrast-12 target stalls at iteration {k_stop} in [5, 40], "
        f"history strictly decreasing until then ({res[0]:.2e} -> {res.min():.2e})",
    )


def test_iteration_counts_grow_under_refinement():
    """Companion to criterion 3: the stop rule fires later on finer meshes."""
    source = intensity.UniformCap(-EZ, np.pi / 4)
    target = intensity.high_contrast_target(12.0)
    target = target.scaled(source.total_mass() / target.total_mass())
    stalls = []
    for n in (20, 40):
        cfg = solver.SolverConfig(
            source=source,
            target=target,
            target_boundary=intensity.CapCircle(EZ, np.pi / 4),
            cost_sign=-1,
            tau=0.5,
            n_radial=n,
            max_iter=80,
            stop_mode="residual_increase",
        )
        _, report = solver.run(cfg)
        stalls.append(report.rows[-1].k)
    assert stalls[1] >= stalls[0]


def test_criterion_4_letter_image_residual_band(letter_run):
    cfg, u, report = letter_run
    best = float(report.residuals.min())
    ok = report.iterations <= 30 and 1e-2 <= best <= 1e-1
    assert record_criterion(
        4,
        ok,
        f"lifted letter image at N=80: residual {best:.3e} in [1e-2, 1e-1] "
        f"after {report.iterations} iterations (<= 30)",
    )


def test_criterion_5_dual_descent(off_axis_study):
    worst = -np.inf
    for n in (10, 20):
        duals = np.array([row.dual for row in off_axis_study[n]["report"].rows])
        assert not np.any(np.isnan(duals))
        slack = 1e-4 * abs(duals[0])
        worst = max(worst, float(np.max(np.diff(duals) - slack)))
    ok = worst <= 0.0
    assert record_criterion(
        5,
        ok,
        f"dual value non-increasing along iterates within slack (margin {-worst:.2e})",
    )


def test_criterion_6_gradient_identity():
    space = fem.FESpace(build_cap_mesh(np.pi / 4, 10, order=2), degree=2)
    f = intensity.UniformCap(-EZ, np.pi / 4).normalized()
    g = intensity.SmoothBump(EZ, 0.5, base=1.0, peak=3.0, support_halfangle=np.pi / 4).normalized()
    cfg = solver.SolverConfig(
        source=f,
        target=g,
        target_boundary=intensity.CapCircle(EZ, np.pi / 4),
        cost_sign=-1,
        n_radial=10,
        dual_grid_factor=8,
    )
    problem = solver.ReflectorProblem(cfg, space=space)
    u0 = np.zeros(space.n_dofs)
    T = solver.map_field(space, u0, -1)
    sig = fem.recover_sigma(space, T)
    D = solver.MAP_ORIENTATION * solver.jacobian_det(
        space.qp_unit, space.at_qp(sig), space.at_qp(T)
    )
    gT = g.eval(sphere.unit(space.at_qp(T).reshape(-1, 3))).reshape(space.warea.shape)
    grad_qp = problem.f_qp / problem.f_total - gT * D  # unit masses, no rescaling
    grid = problem.dual_quadrature()
    J0 = problem.dual_value(u0, grid=grid)
    eps = 1e-4
    rels = []
    for seed in range(5):
        r = np.random.default_rng(200 + seed)
        a = r.standard_normal(3)
        B = r.standard_normal((3, 3))
        B = 0.5 * (B + B.T)
        v = space.zero_mean(
            space.dof_coords @ a
            + np.einsum("ni,ij,nj->n", space.dof_coords, B, space.dof_coords)
        )
        v /= np.abs(v).max()
        fd = (problem.dual_value(u0 + eps * v, grid=grid) - J0) / eps
        exact = space.integrate_qp(grad_qp * space.at_qp(v))
        rels.append(abs(fd - exact) / abs(exact))
    ok = max(rels) < 2e-2
    assert record_criterion(
        6,
        ok,
        f"finite-difference dual derivative matches the density mismatch "
        f"integral for 5 directions (worst rel {max(rels):.2e} < 2e-2)",
    )


def test_criterion_7_jacobian_oracle():
    def tangent_field(seed):
        r = np.random.default_rng(seed)
        a = 0.12 * r.standard_normal(3)
        B = r.standard_normal((3, 3))
        B = 0.5 * (B + B.T)
        B *= 0.08 / np.abs(np.linalg.eigvalsh(B)).max()
        return lambda x: sphere.tangent_project(x, a[None, :] + 2.0 * (x @ B))

    def fd_sigma(Tfun, x, delta=1e-5):
        e1, e2 = sphere.tangent_basis(x)
        sig = np.zeros((len(x), 3, 3))
        for e in (e1, e2):
            dT = (Tfun(sphere.exp_map(x, delta * e)) - Tfun(sphere.exp_map(x, -delta * e))) / (
                2.0 * delta
            )
            sig += np.einsum("ni,nj->nij", dT, e)
        return sig

    def area_ratio(Tfun, x, delta=1e-3):
        e1, e2 = sphere.tangent_basis(x)
        v1, v2 = sphere.exp_map(x, delta * e1), sphere.exp_map(x, delta * e2)
        dom = 0.5 * np.linalg.norm(np.cross(v1 - x, v2 - x), axis=1)
        y, y1, y2 = Tfun(x), Tfun(v1), Tfun(v2)
        return 0.5 * np.linalg.norm(np.cross(y1 - y, y2 - y), axis=1) / dom

    worst = 0.0
    for seed in (1, 2, 3):
        grad = tangent_field(seed)
        for s in (-1, +1):
            Tfun = lambda x: sphere.reflector_map(x, grad(x), s)
            x = intensity.UniformCap(-EZ, np.pi / 4).sample(20, np.random.default_rng(40 + seed))
            det = solver.jacobian_det(x, fd_sigma(Tfun, x), Tfun(x))
            rel = np.abs(np.abs(det) - area_ratio(Tfun, x)) / area_ratio(Tfun, x)
            worst = max(worst, float(rel.max()))
    ok = worst < 1e-2
    assert record_criterion(
        7,
        ok,
        f"projected determinant matches the geodesic area-ratio oracle "
        f"(worst rel {worst:.2e} < 1e-2 over 3 fields x 2 costs x 20 points)",
    )


def test_criterion_8_trivial_fixed_point():
    cfg = solver.SolverConfig(
        source=intensity.UniformCap(-EZ, np.pi / 4),
        target=intensity.UniformCap(EZ, np.pi / 4),
        target_boundary=intensity.CapCircle(EZ, np.pi / 4),
        cost_sign=-1,
        n_radial=40,
        max_iter=5,
        stop_mode="residual_tol",
        residual_tol=1e-6,
    )
    u, report = solver.run(cfg)
    res = float(report.residuals.min())
    ok = report.iterations <= 2 and res < 1e-6 and float(np.abs(u).max()) < 1e-8
    assert record_criterion(
        8,
        ok,
        f"antipodal balanced problem: residual {res:.2e} < 1e-6 in "
        f"{report.iterations} iteration(s), max|u| = {np.abs(u).max():.1e} < 1e-8",
    )


def test_criterion_9_raytrace_conservation_and_fidelity(off_axis_study):
    # rim-aligned polar grid: 28 rows inside the target cap, 4 rows of pad
    n_in, n_pad = 28, 4
    delta = (np.pi / 4) / n_in
    grid = raytrace.SphereGrid(Q, (n_in + n_pad) * delta, n_in + n_pad, 64)
    ref = raytrace.reference_image(intensity.off_axis_cap_target(), grid)
    l1 = {}
    conserved = True
    for n in (20, 40):
        problem = off_axis_study[n]["problem"]
        rng = np.random.default_rng(11)
        samples = problem.config.source.sample(10**6, rng)
        hits, ok_mask = raytrace.trace(problem.space, off_axis_study[n]["u"], +1, samples)
        res = raytrace.bin_hits(hits, grid, len(samples))
        conserved &= abs(res.in_grid_mass + res.miss_fraction - 1.0) < 1e-12
        l1[n] = raytrace.compare(res.image, ref, grid)["L1"]
    ok = conserved and l1[20] < 0.1 and l1[40] < l1[20]
    assert record_criterion(
        9,
        ok,
        f"mass + misses = 1 exactly; L1 vs target {l1[20]:.4f} (N=20) -> "
        f"{l1[40]:.4f} (N=40), both < 0.1 and decreasing",
    )


def test_criterion_10_boundary_condition(off_axis_study):
    worst_ratio = 0.0
    for n in (10, 20, 40):
        problem = off_axis_study[n]["problem"]
        space = problem.space
        T = solver.map_field(space, off_axis_study[n]["u"], +1)
        dist = sphere.signed_distance_to_cap_boundary(T[space.boundary_dofs], Q, np.pi / 4)
        worst_ratio = max(worst_ratio, float(np.abs(dist).max() / off_axis_study[n]["h"]))
    ok = worst_ratio < 5.0
    assert record_criterion(
        10,
        ok,
        f"rim image stays within {worst_ratio:.2f} h of the target rim (< 5 h)",
    )
