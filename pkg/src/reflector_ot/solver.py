"""Sobolev gradient descent on the Kantorovich dual of the reflector problem.

One iteration, given the zero-mean potential u^k:

  1. interpolate the optical map T into the vector FE space (nodal gradients),
  2. recover the ambient Jacobian sigma^k by the mixed L2 identity,
  3. evaluate the transported density g(T) times the surface Jacobian
     determinant at quadrature points, normalise masses with theta^k and
     project the residual r^k into the scalar space,
  4. project the boundary image onto the target rim and derive the Neumann
     data h^{k+1},
  5. one Poisson step: K u^{k+1} = K u^k + tau M r^k + boundary load of
     (h^{k+1} - h^k), solved on the zero-mean subspace.

Iteration stops when the residual norm fails to decrease (the best iterate
is returned), when it reaches ``residual_tol``, or at ``max_iter``.

Orientation note.  The projected-frame determinant
det(sigma (I - x x^T) + T x^T) is NEGATIVE for every admissible reflector
map: reflection reverses orientation, already visible at u = 0 where the map
is the antipode and the determinant is exactly -1.  The solver therefore
uses D = -det(...) as the surface Jacobian in the residual and in theta^k;
D < 0 anywhere signals a c-convexity violation and is reported.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import fem, sphere
from .capmesh import build_cap_mesh
from .errors import InvalidParameter, NonpositiveTheta, SolverError

# reflector maps reverse orientation; see module docstring
MAP_ORIENTATION = -1.0


def jacobian_det(x, sigma_at_x, T_at_x):
    """Projected-frame determinant det(sigma (I - x x^T) + T x^T).

    Raw (signed) value; broadcasting over leading axes.  The absolute value
    is the surface Jacobian |det grad_S T|; the sign is negative for
    orientation-reversing maps such as every reflector map.
    """
    x = np.asarray(x, float)
    P = np.eye(3) - x[..., :, None] * x[..., None, :]
    A = np.einsum("...ij,...jk->...ik", np.asarray(sigma_at_x, float), P)
    A = A + np.asarray(T_at_x, float)[..., :, None] * x[..., None, :]
    return np.linalg.det(A)


def map_field(space, u, cost_sign):
    """Nodal interpolant of x -> reflector_map(x, grad u(x)).

    The tangential gradient at each dof is the arithmetic mean over the
    elements sharing it; the result is a unit vector per dof.
    """
    grad = space.dof_gradient(u)
    return sphere.reflector_map(space.dof_coords, grad, cost_sign)


@dataclass
class SolverConfig:
    """Descent parameters plus the problem data.

    ``source``/``target`` are Intensity objects; ``target_boundary`` exposes
    project()/signed_distance().  ``u0`` is "zero", a coefficient array, or a
    callable interpolated at the dofs (zero-meaned either way).
    """

    source: object
    target: object
    target_boundary: object
    cost_sign: int = -1
    tau: float = 0.5
    theta: float = np.pi / 4.0
    n_radial: int = 40
    mesh_order: int = 2
    fe_degree: int = 2
    center: tuple = (0.0, 0.0, -1.0)
    max_iter: int = 100
    stop_mode: str = "residual_increase"
    residual_tol: float = 0.0
    u0: object = "zero"
    diagnostics_every: int = 0
    dual_grid_factor: int = 4
    cg_tol: float = 1e-10
    preconditioner: str = "jacobi"
    continuation_targets: tuple = ()

    def __post_init__(self):
        if self.tau <= 0.0:
            raise InvalidParameter("step size tau must be positive")
        if self.max_iter < 1:
            raise InvalidParameter("max_iter must be at least 1")
        if self.stop_mode not in ("residual_increase", "residual_tol", "max_iter_only"):
            raise InvalidParameter(f"unknown stop_mode {self.stop_mode!r}")
        self.cost_sign = sphere.check_cost_sign(self.cost_sign)


@dataclass
class IterationRow:
    k: int
    residual: float
    theta: float
    dual: float  # nan when diagnostics are off for this iteration
    min_det: float
    neg_fraction: float
    wall_ms: float


@dataclass
class SolveReport:
    rows: list = field(default_factory=list)
    termination: str = ""
    best_k: int = -1
    warnings: list = field(default_factory=list)

    @property
    def residuals(self):
        return np.array([r.residual for r in self.rows])

    @property
    def iterations(self):
        return len(self.rows)

    def csv_rows(self):
        return [
            (r.k, repr(r.residual), repr(r.theta), repr(r.dual), repr(r.min_det), f"{r.wall_ms:.1f}")
            for r in self.rows
        ]


class ReflectorProblem:
    """One solve: owns the space, matrices and per-iteration machinery."""

    def __init__(self, config, space=None):
        self.config = config
        if space is None:
            mesh = build_cap_mesh(
                config.theta, config.n_radial, order=config.mesh_order, center=config.center
            )
            space = fem.FESpace(mesh, degree=config.fe_degree)
        self.space = space
        self.K = space.stiffness()
        self.M = space.mass()
        self.f_qp = config.source.eval(space.qp_unit.reshape(-1, 3)).reshape(space.warea.shape)
        self.f_total = space.integrate_qp(self.f_qp)
        if self.f_total <= 0.0:
            raise NonpositiveTheta("source mass vanishes on the computational cap")
        self._dual_cache = None

    # -- pieces of one iteration ------------------------------------------

    def initial_u(self):
        cfg = self.config
        space = self.space
        if isinstance(cfg.u0, str):
            if cfg.u0 == "zero":
                return np.zeros(space.n_dofs)
            if cfg.u0 == "log_axis":
                # log(b / (x . e_z)) with b < 0; the zero-mean gauge removes b
                vals = -np.log(-np.clip(space.dof_coords[:, 2], None, -1e-9))
                return space.zero_mean(vals)
            raise InvalidParameter(f"unknown u0 spec {cfg.u0!r}")
        if callable(cfg.u0):
            return space.zero_mean(space.interpolate(cfg.u0))
        return space.zero_mean(np.asarray(cfg.u0, float))

    def residual(self, u, target=None):
        """(r_coeffs, diagnostics dict) for the current potential."""
        cfg = self.config
        space = self.space
        target = target or cfg.target
        T = map_field(space, u, cfg.cost_sign)
        sig = fem.recover_sigma(space, T)
        D = MAP_ORIENTATION * jacobian_det(space.qp_unit, space.at_qp(sig), space.at_qp(T))
        gT = target.eval(sphere.unit(space.at_qp(T).reshape(-1, 3))).reshape(space.warea.shape)
        transported = gT * D
        theta_k = space.integrate_qp(transported) / self.f_total
        if theta_k <= 0.0:
            raise NonpositiveTheta(f"theta = {theta_k:.3e} <= 0; map is badly folded")
        r_qp = transported - theta_k * self.f_qp
        r = space.l2_project_qp(r_qp)
        diag = {
            "T": T,
            "theta": theta_k,
            "min_det": float(D.min()),
            "neg_fraction": float(np.mean(D <= 0.0)),
            "residual_norm": space.norm_l2(r),
        }
        return r, diag

    def neumann_update(self, T):
        """Boundary data h^{k+1} from projecting the rim image onto the target rim."""
        cfg = self.config
        space = self.space
        bd = space.boundary_dofs
        pk = cfg.target_boundary.project(T[bd])
        h = np.zeros((space.n_dofs, 3))
        h[bd] = sphere.inverse_map(space.dof_coords[bd], pk, cfg.cost_sign)
        return h

    def initial_h(self, u):
        """h^0 = tangential gradient of u^0 at the boundary dofs."""
        space = self.space
        h = np.zeros((space.n_dofs, 3))
        bd = space.boundary_dofs
        h[bd] = space.dof_gradient(u)[bd]
        return h

    def descent_step(self, u, r, h_old, h_new):
        """One Poisson step of the Sobolev descent on the zero-mean subspace."""
        cfg = self.config
        rhs = self.K @ u + cfg.tau * (self.M @ r) + self.space.boundary_load(h_new - h_old)
        u_new, _ = fem.solve_zero_mean(
            self.K, rhs, self.M, tol=cfg.cg_tol, precond=cfg.preconditioner
        )
        return u_new

    # -- dual diagnostics ---------------------------------------------------

    def dual_quadrature(self, target=None):
        """Fixed quadrature grid over the target support for the dual value."""
        from .intensity import cap_quadrature

        target = target or self.config.target
        axis, half = target.support_cap()
        npts = self.config.dual_grid_factor * self.space.n_dofs
        n_polar = max(int(np.ceil(np.sqrt(npts / 2.0))), 16)
        pts, w = cap_quadrature(axis, half, n_polar, 2 * n_polar)
        g = target.eval(pts)
        keep = g > 0.0
        return pts[keep], (w * g)[keep]

    def dual_value(self, u, target=None, grid=None):
        """J(u) = int u fhat + int u^c ghat with unit-mass densities."""
        space = self.space
        if grid is None:
            if self._dual_cache is None:
                self._dual_cache = self.dual_quadrature(target)
            grid = self._dual_cache
        pts, gw = grid
        uc = discrete_c_transform(space, u, self.config.cost_sign, pts)
        g_mass = float(gw.sum())
        term_f = space.integrate_qp(space.at_qp(u) * self.f_qp) / self.f_total
        return term_f + float(uc @ gw) / g_mass


def discrete_c_transform(space, u, cost_sign, points, chunk=2048):
    """u^c(y) = max over the dof cloud of (-c(x, y) - u(x)).

    Brute-force maximisation, chunked over the target points so the pairwise
    cost matrix never materialises in full.
    """
    X = space.dof_coords
    u = np.asarray(u, float)
    pts = np.atleast_2d(np.asarray(points, float))
    out = np.empty(len(pts))
    for i in range(0, len(pts), chunk):
        block = pts[i : i + chunk]
        one_minus = np.clip(1.0 - block @ X.T, sphere.SINGULARITY_GUARD, None)
        vals = (-cost_sign) * np.log(one_minus) - u[None, :]
        out[i : i + chunk] = vals.max(axis=1)
    return out


def c_convexity_monitor(problem, u):
    """Min oriented surface Jacobian and the fraction of wrong-sign points."""
    _, diag = problem.residual(u)
    return {"min_det": diag["min_det"], "neg_fraction": diag["neg_fraction"]}


def run(config, space=None):
    """Drive the descent per the stop rule; returns (u, SolveReport).

    With continuation targets configured, each intermediate target is solved
    to its stop rule and warm-starts the next; rows accumulate across stages.
    """
    problem = ReflectorProblem(config, space=space)
    report = SolveReport()
    u = problem.initial_u()
    targets = list(config.continuation_targets) + [config.target]
    k_offset = 0
    for stage, target in enumerate(targets):
        problem._dual_cache = None
        u = _descend(problem, u, target, report, k_offset, final=stage == len(targets) - 1)
        k_offset = report.rows[-1].k + 1 if report.rows else 0
    return u, report


def _descend(problem, u, target, report, k_offset, final):
    cfg = problem.config
    space = problem.space
    h_old = None
    best_u, best_r, best_k = u, np.inf, k_offset
    prev_r = None
    t0 = time.perf_counter()
    for k in range(k_offset, k_offset + cfg.max_iter):
        try:
            r, diag = problem.residual(u, target=target)
        except NonpositiveTheta as exc:
            raise SolverError(f"iteration {k}: {exc}", iteration=k) from exc
        rn = diag["residual_norm"]
        if not np.isfinite(rn):
            raise SolverError(f"iteration {k}: residual diverged", iteration=k)
        dual = np.nan
        if cfg.diagnostics_every and (k - k_offset) % cfg.diagnostics_every == 0:
            dual = problem.dual_value(u, target=target)
        if diag["neg_fraction"] > 0.0:
            report.warnings.append(
                f"k={k}: {diag['neg_fraction']:.1%} of quadrature points have a "
                "wrong-sign Jacobian (c-convexity violated)"
            )
        report.rows.append(
            IterationRow(
                k=k,
                residual=rn,
                theta=diag["theta"],
                dual=dual,
                min_det=diag["min_det"],
                neg_fraction=diag["neg_fraction"],
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
        )
        if rn < best_r:
            best_u, best_r, best_k = u, rn, k
        if cfg.stop_mode == "residual_tol" and cfg.residual_tol > 0.0 and rn <= cfg.residual_tol:
            report.termination = f"residual tolerance reached at k={k}"
            report.best_k = k
            return u
        if (
            cfg.stop_mode == "residual_increase"
            and prev_r is not None
            and rn >= prev_r
        ):
            report.termination = f"residual stopped decreasing at k={k}"
            report.best_k = best_k
            return best_u
        prev_r = rn
        try:
            if h_old is None:
                h_old = problem.initial_h(u)
            h_new = problem.neumann_update(diag["T"])
            u = problem.descent_step(u, r, h_old, h_new)
            h_old = h_new
        except Exception as exc:
            raise SolverError(f"iteration {k}: {exc}", iteration=k) from exc
    report.termination = f"max_iter = {cfg.max_iter} reached"
    report.best_k = best_k if cfg.stop_mode == "residual_increase" else report.rows[-1].k
    return best_u if cfg.stop_mode == "residual_increase" else u
