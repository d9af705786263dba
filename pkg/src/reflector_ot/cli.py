"""Command-line front end: solve / study / raytrace driven by a TOML config.

Exit codes: 0 success, 2 solver failure, 3 configuration error, 4 missing
artifact.  Thread counts are exported to the BLAS pools before numpy loads,
so --threads (or REFLECTOR_OT_THREADS) must be handled first.
"""

import argparse
import os
import sys


def _apply_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _parse_args(argv):
    ap = argparse.ArgumentParser(prog="reflector-ot", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "study", "raytrace"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", default=None, help="output directory (default from config)")
        p.add_argument("--seed", type=int, default=None, help="rng seed override")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread count")
        if name == "study":
            p.add_argument("--n-list", default=None, help="comma-separated mesh levels")
        if name == "raytrace":
            p.add_argument("--artifact", default=None, help="saved solve artifact (u_h.npz)")
    return ap.parse_args(argv)


def main(argv=None):
    args = _parse_args(sys.argv[1:] if argv is None else argv)
    threads = args.threads or os.environ.get("REFLECTOR_OT_THREADS")
    if threads:
        _apply_threads(int(threads))

    import numpy as np

    from . import fem, intensity, io, raytrace, solver
    from .capmesh import build_cap_mesh
    from .errors import ConfigError, InvalidParameter, ReflectorOTError

    # -- config -> objects -------------------------------------------------

    def build_source(cfg):
        src = cfg.get("source", {})
        kind = src.get("type", "uniform_cap")
        if kind != "uniform_cap":
            raise ConfigError(f"unsupported source type '{kind}'")
        axis = np.array(src.get("axis", [0.0, 0.0, -1.0]), float)
        return intensity.UniformCap(axis, src.get("halfangle", np.pi / 4), src.get("height", 1.0))

    def build_target(cfg, source):
        tgt = cfg.get("target", {})
        kind = tgt.get("type", "antipodal_cap")
        if kind in ("uniform_cap", "cap_indicator"):
            axis = np.array(tgt.get("axis", [0.0, 0.0, 1.0]), float)
            half = tgt.get("halfangle", np.pi / 4)
            g = intensity.UniformCap(axis, half, tgt.get("height", 1.0))
            boundary = intensity.CapCircle(g.axis, half)
        elif kind == "off_axis_cap":
            g = intensity.off_axis_cap_target()
            boundary = intensity.CapCircle(g.axis, g.halfangle)
        elif kind == "antipodal_cap":
            sax, shalf = source.support_cap()
            g = intensity.UniformCap(-sax, shalf, tgt.get("height", 1.0))
            boundary = intensity.CapCircle(-sax, shalf)
        elif kind == "smooth_bump":
            axis = np.array(tgt.get("axis", [0.0, 0.0, 1.0]), float)
            g = intensity.SmoothBump(
                axis, tgt.get("width", 0.26), tgt.get("base", 1.0), tgt.get("peak", 12.0)
            )
            boundary = intensity.CapCircle(g.support_axis, g.support_halfangle)
        elif kind == "high_contrast":
            g = intensity.high_contrast_target(tgt.get("contrast", 12.0))
            boundary = intensity.CapCircle(g.support_axis, g.support_halfangle)
        elif kind in ("letter_a", "plane_raster"):
            half_side = tgt.get("half_side", 0.30)
            if kind == "letter_a":
                plane = intensity.letter_a_target(
                    tgt.get("size", 96), half_side, tgt.get("floor", 1e-3)
                )
            else:
                plane = intensity.raster_from_image(
                    tgt["image"],
                    (-half_side, half_side, -half_side, half_side),
                    tgt.get("threshold", 0.0),
                    tgt.get("floor", "auto"),
                )
            g = intensity.stereographic_lift(plane)
            boundary = intensity.Polyline(_lifted_square(half_side))
        else:
            raise ConfigError(f"unsupported target type '{kind}'")
        if tgt.get("normalize_to_source", False):
            g = g.scaled(source.total_mass() / g.total_mass())
        return g, boundary

    def _lifted_square(half_side, per_side=64):
        t = np.linspace(-half_side, half_side, per_side, endpoint=False)
        sides = [
            np.stack([t, np.full_like(t, -half_side)], 1),
            np.stack([np.full_like(t, half_side), t], 1),
            np.stack([-t, np.full_like(t, half_side)], 1),
            np.stack([np.full_like(t, -half_side), -t], 1),
        ]
        XY = np.concatenate(sides)
        from . import sphere as sph

        return sph.plane_to_direction(XY)

    def build_solver_config(cfg, n_override=None):
        source = build_source(cfg)
        target, boundary = build_target(cfg, source)
        mesh = cfg.get("mesh", {})
        sol = cfg.get("solver", {})
        return solver.SolverConfig(
            source=source,
            target=target,
            target_boundary=boundary,
            cost_sign=sol.get("cost_sign", -1),
            tau=sol.get("tau", 0.5),
            theta=mesh.get("theta", np.pi / 4),
            n_radial=n_override or mesh.get("n", 40),
            mesh_order=mesh.get("order", 2),
            fe_degree=cfg.get("fem", {}).get("degree", 2),
            max_iter=sol.get("max_iter", 100),
            stop_mode=sol.get("stop_mode", "residual_increase"),
            residual_tol=sol.get("residual_tol", 0.0),
            u0=sol.get("u0", "zero"),
            diagnostics_every=sol.get("diagnostics_every", 0),
            cg_tol=sol.get("cg_tol", 1e-10),
            preconditioner=sol.get("preconditioner", "jacobi"),
        )

    def write_solve_outputs(out_dir, cfg, scfg, problem, u, report):
        os.makedirs(out_dir, exist_ok=True)
        space = problem.space
        mesh = space.mesh
        tag = f"config sha256:{cfg['_hash']}"
        rho = np.exp(-u) if scfg.cost_sign == -1 else np.exp(u)
        io.write_vtk(
            os.path.join(out_dir, "u_h.vtk"),
            mesh,
            point_data={"u": _to_mesh_nodes(space, u), "rho": _to_mesh_nodes(space, rho)},
            comment=tag,
        )
        io.write_obj(
            os.path.join(out_dir, "surface.obj"),
            mesh,
            _to_mesh_nodes(space, rho),
            comment=tag,
        )
        io.write_csv(
            os.path.join(out_dir, "convergence.csv"),
            ("k", "residual", "theta", "J", "min_det", "ms"),
            report.csv_rows(),
            comment=tag,
        )
        np.savez(
            os.path.join(out_dir, "u_h.npz"),
            u=u,
            theta=scfg.theta,
            n_radial=scfg.n_radial,
            mesh_order=scfg.mesh_order,
            fe_degree=scfg.fe_degree,
            cost_sign=scfg.cost_sign,
            center=np.asarray(scfg.center, float),
            config_hash=cfg["_hash"],
        )

    def _to_mesh_nodes(space, vals):
        """Map dof values onto mesh geometric nodes for export."""
        mesh = space.mesh
        n_nodes = len(mesh.vertices)
        if len(vals) == n_nodes:
            return vals
        out = np.zeros(n_nodes)
        out[: mesh.n_corners] = vals[: mesh.n_corners]
        if mesh.order == 2 and space.degree == 1:
            a = mesh.vertices[mesh.triangles]
            for t, mids in enumerate(mesh.tri_midnodes):
                tri = mesh.triangles[t]
                for loc, mid in enumerate(mids):
                    i, j = tri[loc], tri[(loc + 1) % 3]
                    out[mid] = 0.5 * (vals[i] + vals[j])
        return out

    # -- commands -----------------------------------------------------------

    def cmd_solve(cfg, out_dir, seed):
        scfg = build_solver_config(cfg)
        problem = solver.ReflectorProblem(scfg)
        u, report = solver.run(scfg, space=problem.space)
        write_solve_outputs(out_dir, cfg, scfg, problem, u, report)
        print(f"solve: {report.termination}; {report.iterations} residual evaluations")
        print(f"solve: final residual {report.rows[report.best_k].residual:.4e}")
        return 0

    def cmd_study(cfg, out_dir, seed, n_list):
        study = cfg.get("study", {})
        levels = n_list or study.get("n_list", [10, 20, 40])
        exact = study.get("exact_solution", "")
        rows = []
        for n in levels:
            scfg = build_solver_config(cfg, n_override=int(n))
            problem = solver.ReflectorProblem(scfg)
            u, report = solver.run(scfg, space=problem.space)
            sub = os.path.join(out_dir, f"N{n}")
            write_solve_outputs(sub, cfg, scfg, problem, u, report)
            h = scfg.theta / int(n)
            final_res = report.rows[report.best_k].residual
            if exact == "off_axis_plane":
                l2, h1 = _off_axis_errors(problem.space, u)
                rows.append((h, repr(l2), repr(h1), repr(final_res)))
            else:
                rows.append((h, "", "", repr(final_res)))
        io.write_csv(
            os.path.join(out_dir, "errors.csv"),
            ("h", "l2_error", "h1_error", "final_residual"),
            rows,
            comment=f"config sha256:{cfg['_hash']}",
        )
        print(f"study: levels {list(levels)} done")
        return 0

    def _off_axis_errors(space, u):
        q = np.array([0.0, -np.sin(np.pi / 8), np.cos(np.pi / 8)])
        p = (q + np.array([0.0, 0.0, 1.0])) / np.linalg.norm(q + np.array([0.0, 0.0, 1.0]))
        phi_qp = np.log(1.0 / np.abs(space.qp_unit @ p))
        phi_qp -= space.integrate_qp(phi_qp) / space.integrate_qp(np.ones_like(phi_qp))
        xp = space.qp_unit @ p
        gphi = -(p[None, None, :] - xp[..., None] * space.qp_unit) / xp[..., None]
        l2 = np.sqrt(space.integrate_qp((space.at_qp(u) - phi_qp) ** 2))
        h1 = np.sqrt(space.integrate_qp(np.sum((space.grad_at_qp(u) - gphi) ** 2, -1)))
        return float(l2), float(h1)

    def cmd_raytrace(cfg, out_dir, seed, artifact):
        artifact = artifact or os.path.join(out_dir, "u_h.npz")
        if not os.path.exists(artifact):
            print(f"raytrace: artifact not found: {artifact}", file=sys.stderr)
            return 4
        data = np.load(artifact)
        mesh = build_cap_mesh(
            float(data["theta"]),
            int(data["n_radial"]),
            order=int(data["mesh_order"]),
            center=data["center"],
        )
        space = fem.FESpace(mesh, degree=int(data["fe_degree"]))
        source = build_source(cfg)
        target, _ = build_target(cfg, source)
        rt = cfg.get("raytrace", {})
        rays = int(rt.get("rays", 10**6))
        rng = np.random.default_rng(seed if seed is not None else cfg.get("run", {}).get("seed", 0))
        samples = source.sample(rays, rng)
        hits, ok = raytrace.trace(space, data["u"], int(data["cost_sign"]), samples)
        mode = rt.get("mode", "sphere")
        gn = int(rt.get("grid_n", 64))
        if mode == "plane":
            XY, vis = raytrace.to_plane(hits)
            half = cfg.get("target", {}).get("half_side", 0.30)
            grid = raytrace.PlaneGrid((-half, half, -half, half), gn, gn)
            result = raytrace.bin_hits(XY, grid, rays, rt.get("smoothing", 0.0))
            ref = raytrace.reference_image(target.plane, grid)
        else:
            axis, half = target.support_cap()
            grid = raytrace.SphereGrid(axis, rt.get("polar_max", half), gn, 2 * gn)
            result = raytrace.bin_hits(hits, grid, rays, rt.get("smoothing", 0.0))
            ref = raytrace.reference_image(target, grid)
        errors = raytrace.compare(result.image, ref, grid)
        os.makedirs(out_dir, exist_ok=True)
        tag = f"config sha256:{cfg['_hash']}"
        io.write_pgm(os.path.join(out_dir, "image.pgm"), result.image, comment=tag)
        io.write_csv(
            os.path.join(out_dir, "image.csv"),
            [f"c{j}" for j in range(result.image.shape[1])],
            [tuple(repr(v) for v in row) for row in result.image],
            comment=tag,
        )
        io.write_csv(
            os.path.join(out_dir, "raytrace_metrics.csv"),
            ("L1", "L2", "Linf", "in_grid_mass", "miss_fraction"),
            [
                (
                    repr(errors["L1"]),
                    repr(errors["L2"]),
                    repr(errors["Linf"]),
                    repr(result.in_grid_mass),
                    repr(result.miss_fraction),
                )
            ],
            comment=tag,
        )
        print(
            f"raytrace: {rays} rays, miss fraction {result.miss_fraction:.2%}, "
            f"L1 = {errors['L1']:.4f}"
        )
        return 0

    # -- dispatch -----------------------------------------------------------

    try:
        cfg = io.load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    out_dir = args.out or cfg.get("run", {}).get("out_dir", "out")
    seed = args.seed if args.seed is not None else cfg.get("run", {}).get("seed", 0)
    try:
        if args.command == "solve":
            return cmd_solve(cfg, out_dir, seed)
        if args.command == "study":
            n_list = None
            if getattr(args, "n_list", None):
                n_list = [int(t) for t in args.n_list.split(",")]
            return cmd_study(cfg, out_dir, seed, n_list)
        if args.command == "raytrace":
            return cmd_raytrace(cfg, out_dir, seed, getattr(args, "artifact", None))
    except (ConfigError, InvalidParameter, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except ReflectorOTError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
