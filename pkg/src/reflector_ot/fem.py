"""Isoparametric Lagrange finite elements on the curved cap mesh.

Surface gradients are computed through the chart pseudo-inverse, so no local
coordinate system ever appears: fields live as coefficient vectors over dofs
on the sphere, gradients are ambient 3-vectors tangent to the chart.  The
module provides stiffness/mass/boundary assembly, curved quadrature,
the zero-mean-constrained Poisson solve (deflated CG, matching a Krylov
solver with a constant null space), and the mixed L2 recovery of the ambient
Jacobian of a mapped vector field.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import capmesh, reference, sphere
from .errors import InvalidParameter, NoConvergence


class FESpace:
    """Continuous Lagrange space of degree 1 or 2 on a CapMesh.

    Precomputes per-element quadrature data: chart Jacobians, physical
    quadrature weights, tangential basis gradients, and the boundary-edge
    trace tables used for line integrals.
    """

    def __init__(self, mesh, degree=2, quad_degree=None):
        if degree not in (1, 2):
            raise InvalidParameter(f"FE degree must be 1 or 2, got {degree}")
        self.mesh = mesh
        self.degree = degree
        # curved metric factors are not polynomial; 2*degree + 2 keeps the
        # geometric error below the interpolation error
        self.quad_degree = quad_degree or (2 * degree + 2)
        self._build_dofs()
        self._build_volume_tables()
        self._build_boundary_tables()
        self._mass = None
        self._mass_lu = None
        self._stiffness = None

    # -- dof layout ----------------------------------------------------------

    def _build_dofs(self):
        mesh = self.mesh
        if self.degree == 1:
            self.elements = mesh.triangles.copy()
            self.dof_coords = mesh.vertices[: mesh.n_corners].copy()
            self.boundary_edge_dofs = mesh.boundary_edges.copy()
        elif mesh.order == 2:
            # isoparametric: dofs coincide with the geometric nodes
            self.elements = mesh.geometry_nodes()
            self.dof_coords = mesh.vertices.copy()
            self.boundary_edge_dofs = np.concatenate(
                [mesh.boundary_edges, mesh.boundary_edge_mid[:, None]], axis=1
            )
        else:
            # degree-2 field on a flat (order-1) mesh: build edge dofs
            nc = mesh.n_corners
            rim_keys = {
                tuple(sorted(e)): k for k, e in enumerate(map(tuple, mesh.boundary_edges))
            }
            edge_ids = {}
            mids = []
            elem = np.empty((mesh.n_triangles, 6), dtype=np.int64)
            elem[:, :3] = mesh.triangles
            rim_mid = np.empty(len(mesh.boundary_edges), dtype=np.int64)
            for t, (a, b, c) in enumerate(mesh.triangles):
                for loc, (i, j) in enumerate(((a, b), (b, c), (c, a))):
                    key = (min(i, j), max(i, j))
                    if key not in edge_ids:
                        mid = sphere.unit(mesh.vertices[i] + mesh.vertices[j])
                        if key in rim_keys:
                            mid = capmesh._push_to_rim(mid, mesh.center, mesh.theta)
                            rim_mid[rim_keys[key]] = nc + len(mids)
                        edge_ids[key] = nc + len(mids)
                        mids.append(mid)
                    elem[t, 3 + loc] = edge_ids[key]
            self.elements = elem
            self.dof_coords = np.concatenate([mesh.vertices[:nc], np.array(mids)])
            self.boundary_edge_dofs = np.concatenate(
                [mesh.boundary_edges, rim_mid[:, None]], axis=1
            )
        self.n_dofs = len(self.dof_coords)
        self.boundary_dofs = np.unique(self.boundary_edge_dofs.ravel())
        interior = np.ones(self.n_dofs, bool)
        interior[self.boundary_dofs] = False
        self.interior_dofs = np.nonzero(interior)[0]

    # -- volume tables -------------------------------------------------------

    def _build_volume_tables(self):
        mesh = self.mesh
        gval_fn, ggrad_fn, _ = reference.basis(mesh.order)
        fval_fn, fgrad_fn, self.n_local = reference.basis(self.degree)
        pts, w = reference.triangle_quadrature(self.quad_degree)
        self.qref = pts
        nodes = mesh.vertices[mesh.geometry_nodes()]
        J = reference.chart_jacobian(nodes, ggrad_fn(pts))
        G, detG, self.warea = reference.metric_and_weights(J, w)
        self.basis_qp = fval_fn(pts)  # (nq, nb)
        self.grad_qp = reference.surface_gradients(J, G, detG, fgrad_fn(pts))
        qp = np.einsum("qn,enk->eqk", gval_fn(pts), nodes)
        self.qp = qp
        self.qp_unit = sphere.unit(qp)

        # the same machinery at the local dof positions, for nodal gradients
        dref = reference.VERTEX_REF if self.degree == 1 else reference.P2_REF
        Jd = reference.chart_jacobian(nodes, ggrad_fn(dref))
        Gd = np.einsum("eqki,eqkj->eqij", Jd, Jd)
        detGd = Gd[..., 0, 0] * Gd[..., 1, 1] - Gd[..., 0, 1] * Gd[..., 1, 0]
        self._grad_at_dofs = reference.surface_gradients(Jd, Gd, detGd, fgrad_fn(dref))

    def _build_boundary_tables(self):
        mesh = self.mesh
        nbe = len(mesh.boundary_edges)
        if mesh.order == 1:
            geom_dofs = mesh.boundary_edges
        else:
            geom_dofs = np.concatenate(
                [mesh.boundary_edges, mesh.boundary_edge_mid[:, None]], axis=1
            )
        t, wt = reference.gauss_1d(4)
        gb = reference.edge_basis(mesh.order, t)  # (nt, ng)
        gd = reference.edge_basis_deriv(mesh.order, t)
        nodes = mesh.vertices[geom_dofs]  # (nbe, ng, 3)
        pts = np.einsum("tn,enk->etk", gb, nodes)
        tang = np.einsum("tn,enk->etk", gd, nodes)
        ds = np.linalg.norm(tang, axis=-1) * wt[None, :]  # (nbe, nt)
        self.bq_points = sphere.unit(pts)
        self.bq_ds = ds
        self.bq_conormal = capmesh.conormal_at(mesh.center, self.bq_points)
        self.bq_trace = reference.edge_basis(self.degree, t)  # (nt, nd_edge)
        assert self.boundary_edge_dofs.shape[1] == self.bq_trace.shape[1]
        self.boundary_length = float(ds.sum())

    # -- field evaluation ----------------------------------------------------

    def interpolate(self, fn):
        """Nodal interpolant of a callable on unit points, as coefficients."""
        return np.asarray(fn(self.dof_coords), float)

    def at_qp(self, coeffs):
        """Evaluate a coefficient field at the volume quadrature points.

        Accepts (ndof,), (ndof, k) or (ndof, k, l) coefficient arrays and
        returns matching (ntri, nq, ...) values.
        """
        c = np.asarray(coeffs, float)[self.elements]  # (ntri, nb, ...)
        return np.einsum("qb,eb...->eq...", self.basis_qp, c)

    def grad_at_qp(self, coeffs):
        """Tangential gradient of a scalar field at quadrature points."""
        return np.einsum(
            "eqbk,eb->eqk", self.grad_qp, np.asarray(coeffs, float)[self.elements]
        )

    def dof_gradient(self, coeffs):
        """Tangential gradient at every dof, averaged over adjacent elements.

        The element-local gradient is evaluated at the dof position from each
        element sharing the dof and the arithmetic mean is projected onto the
        tangent plane of the dof.
        """
        loc = np.einsum(
            "elbk,eb->elk", self._grad_at_dofs, np.asarray(coeffs, float)[self.elements]
        )
        acc = np.zeros((self.n_dofs, 3))
        cnt = np.zeros(self.n_dofs)
        np.add.at(acc, self.elements, loc)
        np.add.at(cnt, self.elements, 1.0)
        avg = acc / cnt[:, None]
        return sphere.tangent_project(self.dof_coords, avg)

    def integrate_qp(self, values):
        """Integrate values sampled at the quadrature points, (ntri, nq)."""
        return float(np.sum(self.warea * values))

    def integrate(self, f):
        """Integrate a coefficient field or a callable over the cap."""
        if callable(f):
            vals = f(self.qp_unit.reshape(-1, 3)).reshape(self.warea.shape)
        else:
            vals = self.at_qp(f)
        return self.integrate_qp(vals)

    # -- assembly ------------------------------------------------------------

    def _scatter(self, local):
        nb = self.n_local
        rows = np.repeat(self.elements, nb, axis=1).ravel()
        cols = np.tile(self.elements, (1, nb)).ravel()
        A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs))
        return A.tocsr()

    def stiffness(self):
        """Surface stiffness K[i,j] = int grad phi_i . grad phi_j dA."""
        if self._stiffness is None:
            local = np.einsum("eqak,eqbk,eq->eab", self.grad_qp, self.grad_qp, self.warea)
            self._stiffness = self._scatter(local)
        return self._stiffness

    def mass(self):
        """Mass matrix M[i,j] = int phi_i phi_j dA."""
        if self._mass is None:
            local = np.einsum("qa,qb,eq->eab", self.basis_qp, self.basis_qp, self.warea)
            self._mass = self._scatter(local)
        return self._mass

    def mass_solve(self, rhs):
        """Solve M x = rhs (rhs may have trailing axes), cached factorisation."""
        if self._mass_lu is None:
            self._mass_lu = spla.splu(self.mass().tocsc())
        r = np.asarray(rhs, float)
        flat = r.reshape(self.n_dofs, -1)
        out = self._mass_lu.solve(flat)
        return out.reshape(r.shape)

    def l2_project_qp(self, values):
        """L2 projection into the space of values given at quadrature points."""
        load = np.zeros(self.n_dofs)
        loc = np.einsum("eq,qb,eq->eb", values, self.basis_qp, self.warea)
        np.add.at(load, self.elements, loc)
        return self.mass_solve(load)

    def mean(self, coeffs):
        """Area-weighted mean of a field."""
        Mo = self.mass() @ np.ones(self.n_dofs)
        return float(Mo @ coeffs) / float(Mo.sum())

    def zero_mean(self, coeffs):
        """Shift a field to zero area-weighted mean."""
        return coeffs - self.mean(coeffs)

    def norm_l2(self, coeffs):
        """L2 norm of a coefficient field."""
        return float(np.sqrt(max(coeffs @ (self.mass() @ coeffs), 0.0)))

    # -- boundary integrals ----------------------------------------------------

    def boundary_values(self, dof_values):
        """Trace of per-dof data on the boundary quadrature points.

        dof_values has shape (ndof, ...); only boundary dofs are read.
        """
        vals = np.asarray(dof_values, float)[self.boundary_edge_dofs]  # (nbe, nd, ...)
        return np.einsum("td,ed...->et...", self.bq_trace, vals)

    def boundary_load(self, w):
        """Assemble b[i] = loop_boundary phi_i (w . nu) ds.

        ``w`` is a callable mapping unit points to vectors, or an (ndof, 3)
        array of per-dof vectors interpolated along each edge.
        """
        if callable(w):
            wq = w(self.bq_points.reshape(-1, 3)).reshape(self.bq_points.shape)
        else:
            wq = self.boundary_values(w)
        wnu = np.einsum("etk,etk->et", wq, self.bq_conormal)
        loc = np.einsum("et,td,et->ed", self.bq_ds, self.bq_trace, wnu)
        b = np.zeros(self.n_dofs)
        np.add.at(b, self.boundary_edge_dofs, loc)
        return b


def assemble_stiffness(space):
    return space.stiffness()


def assemble_mass(space):
    return space.mass()


def assemble_boundary_load(space, w):
    return space.boundary_load(w)


def integrate(space, f):
    return space.integrate(f)


@dataclass
class SolveInfo:
    iterations: int
    residual: float


def solve_zero_mean(K, rhs, M, tol=1e-10, maxiter=None, precond="jacobi"):
    """Solve the singular Neumann system K u = rhs on the zero-mean subspace.

    Conjugate gradients with the constant mode deflated from the right-hand
    side and from every iterate; the returned field has zero area-weighted
    mean.  ``precond`` selects "jacobi" (default), "ilu" or None.
    """
    n = K.shape[0]
    rhs = np.asarray(rhs, float)
    ones = np.ones(n)
    Mones = M @ ones
    wsum = float(Mones @ ones)
    # remove the constant-function component so the singular system is consistent
    b = rhs - (float(ones @ rhs) / wsum) * Mones
    b = b - b.mean()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveInfo(0, 0.0)

    if precond == "jacobi":
        dinv = 1.0 / K.diagonal()
        apply_m = lambda r: dinv * r
    elif precond == "ilu":
        shift = 1e-12 * float(np.mean(K.diagonal()))
        ilu = spla.spilu((K + shift * sp.eye(n)).tocsc(), drop_tol=1e-5, fill_factor=15)
        apply_m = ilu.solve
    elif precond is None:
        apply_m = lambda r: r
    else:
        raise InvalidParameter(f"unknown preconditioner {precond!r}")

    maxiter = maxiter or 10 * n
    x = np.zeros(n)
    r = b.copy()
    z = apply_m(r)
    z -= z.mean()
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < maxiter:
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        Kp = K @ p
        alpha = rz / float(p @ Kp)
        x += alpha * p
        r -= alpha * Kp
        it += 1
        if it % 50 == 0:
            x -= x.mean()
            r = b - K @ x
            r -= r.mean()
        z = apply_m(r)
        z -= z.mean()
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        raise NoConvergence(
            f"CG stalled at relative residual {np.linalg.norm(r) / bnorm:.3e} "
            f"after {it} iterations",
            residual=float(np.linalg.norm(r) / bnorm),
            iterations=it,
        )
    x -= float(Mones @ x) / wsum
    return x, SolveInfo(it, float(np.linalg.norm(r) / bnorm))


def recover_sigma(space, T_dofs):
    """Mixed L2 recovery of the ambient Jacobian of a vector field.

    Solves, componentwise against the mass matrix,
        <sigma, chi> = -<div chi, T> + <T, chi nu>_boundary
    for all chi in the degree-matched tensor space; sigma approximates the
    tangential part of grad T plus a radial rank-one term that the downstream
    projected determinant annihilates.
    """
    T_dofs = np.asarray(T_dofs, float)
    Tq = space.at_qp(T_dofs)  # (ntri, nq, 3)
    loc = -np.einsum("eq,eqi,eqbj->ebij", space.warea, Tq, space.grad_qp)
    load = np.zeros((space.n_dofs, 3, 3))
    np.add.at(load, space.elements, loc)

    Tb = space.boundary_values(T_dofs)  # (nbe, nt, 3)
    locb = np.einsum("et,td,eti,etj->edij", space.bq_ds, space.bq_trace, Tb, space.bq_conormal)
    np.add.at(load, space.boundary_edge_dofs, locb)
    return space.mass_solve(load)
