"""Surface finite elements: assembly oracles, the zero-mean solve, the mixed
Jacobian recovery."""

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from reflector_ot import capmesh, fem, solver, sphere
from reflector_ot.errors import NoConvergence

EZ = np.array([0.0, 0.0, 1.0])


@pytest.fixture(scope="module")
def space40():
    return fem.FESpace(capmesh.build_cap_mesh(np.pi / 4, 40, order=2), degree=2)


class TestAssembly:
    def test_stiffness_annihilates_constants(self, space20):
        K = space20.stiffness()
        assert np.abs(K @ np.ones(space20.n_dofs)).max() < 1e-10

    def test_stiffness_psd_with_constant_kernel(self, space20):
        K = space20.stiffness()
        assert abs(K - K.T).max() < 1e-12
        vals = spla.eigsh(K, k=3, sigma=-1e-3, return_eigenvectors=False)
        vals = np.sort(vals)
        assert vals[0] > -1e-10  # no negative mode
        assert vals[0] < 1e-10 < vals[1]  # exactly one (constant) kernel vector

    def test_mass_total_is_cap_area(self, space40):
        M = space40.mass()
        one = np.ones(space40.n_dofs)
        assert abs(one @ (M @ one) - capmesh.cap_area(np.pi / 4)) < 1e-6
        assert abs(M - M.T).max() < 1e-12

    def test_mass_positive_definite_small_mesh(self):
        V = fem.FESpace(capmesh.build_cap_mesh(np.pi / 4, 3, order=2), degree=2)
        dense = V.mass().toarray()
        np.linalg.cholesky(dense)  # raises if not SPD

    def test_unit_field_mass(self, space20):
        one = np.ones(space20.n_dofs)
        assert one @ (space20.mass() @ one) == pytest.approx(space20.integrate(one), rel=1e-12)

    def test_energy_of_height_field(self, space40):
        # int |grad_S x3|^2 = int (1 - x3^2) over the cap, by 1d quadrature
        u = space40.interpolate(lambda x: x[:, 2])
        exact = 2.0 * np.pi * (2.0 / 3.0 - 5.0 * np.sqrt(2.0) / 12.0)
        assert abs(u @ (space40.stiffness() @ u) - exact) < 1e-4

    def test_integrate_height(self, space40):
        assert space40.integrate(lambda x: x[:, 2]) == pytest.approx(-np.pi / 2, abs=1e-6)

    def test_integrate_linearity(self, space20, rng):
        p = rng.standard_normal(space20.n_dofs)
        q = rng.standard_normal(space20.n_dofs)
        lhs = space20.integrate(2.5 * p - 1.5 * q)
        assert lhs == pytest.approx(2.5 * space20.integrate(p) - 1.5 * space20.integrate(q))


class TestBoundaryLoad:
    def test_zero_field(self, space20):
        assert np.allclose(space20.boundary_load(lambda p: np.zeros_like(p)), 0.0)

    def test_conormal_gives_rim_length(self, space20):
        b = space20.boundary_load(lambda p: capmesh.conormal_at(space20.mesh.center, p))
        assert abs(b.sum() - 2.0 * np.pi * np.sin(np.pi / 4)) < 1e-6

    def test_rim_tangent_gives_zero(self, space20):
        center = space20.mesh.center

        def w(p):
            t = np.cross(p, np.broadcast_to(center, p.shape))
            return t / np.linalg.norm(t, axis=-1, keepdims=True)

        assert np.abs(space20.boundary_load(w)).max() < 1e-10

    def test_interior_dofs_untouched(self, space20):
        b = space20.boundary_load(lambda p: capmesh.conormal_at(space20.mesh.center, p))
        assert np.allclose(b[space20.interior_dofs], 0.0)


class TestZeroMeanSolve:
    def test_zero_rhs(self, space20):
        u, info = fem.solve_zero_mean(space20.stiffness(), np.zeros(space20.n_dofs), space20.mass())
        assert np.allclose(u, 0.0) and info.iterations == 0

    def test_consistency_with_interpolant(self, space20):
        ustar = space20.zero_mean(space20.interpolate(lambda x: x[:, 0]))
        K, M = space20.stiffness(), space20.mass()
        u, _ = fem.solve_zero_mean(K, K @ ustar, M, tol=1e-12)
        assert space20.norm_l2(u - ustar) < 1e-8

    def test_mean_is_zero_even_for_biased_rhs(self, space20):
        K, M = space20.stiffness(), space20.mass()
        rhs = M @ np.ones(space20.n_dofs) + K @ space20.interpolate(lambda x: x[:, 1])
        u, _ = fem.solve_zero_mean(K, rhs, M)
        assert abs(space20.mean(u)) < 1e-10 * capmesh.cap_area(np.pi / 4)

    def test_no_convergence_raises(self, space20):
        K, M = space20.stiffness(), space20.mass()
        rhs = K @ space20.zero_mean(space20.interpolate(lambda x: x[:, 0]))
        with pytest.raises(NoConvergence):
            fem.solve_zero_mean(K, rhs, M, tol=1e-14, maxiter=3)

    def test_ilu_preconditioner_agrees(self, space20):
        K, M = space20.stiffness(), space20.mass()
        rhs = K @ space20.zero_mean(space20.interpolate(lambda x: x[:, 0] * x[:, 2]))
        u1, _ = fem.solve_zero_mean(K, rhs, M, precond="jacobi")
        u2, _ = fem.solve_zero_mean(K, rhs, M, precond="ilu")
        assert space20.norm_l2(u1 - u2) < 1e-8

    @pytest.mark.parametrize("degree", [1, 2])
    def test_manufactured_neumann_convergence(self, degree):
        # exact solution x3^2 with surface Laplacian 2 - 6 x3^2
        errs, hs = [], []
        for n in (10, 20, 40):
            mesh = capmesh.build_cap_mesh(np.pi / 4, n, order=2)
            V = fem.FESpace(mesh, degree=degree)
            load = np.zeros(V.n_dofs)
            f_qp = 6.0 * V.qp_unit[..., 2] ** 2 - 2.0
            np.add.at(
                load, V.elements, np.einsum("eq,qb,eq->eb", f_qp, V.basis_qp, V.warea)
            )

            def flux(p):
                return 2.0 * p[:, 2:3] * (EZ[None, :] - p[:, 2:3] * p)

            rhs = load + V.boundary_load(flux)
            u, _ = fem.solve_zero_mean(V.stiffness(), rhs, V.mass())
            exact = V.qp_unit[..., 2] ** 2
            exact -= V.integrate_qp(exact) / V.integrate_qp(np.ones_like(exact))
            errs.append(np.sqrt(V.integrate_qp((V.at_qp(u) - exact) ** 2)))
            hs.append(mesh.h)
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert slope >= degree + 0.8


class TestSigmaRecovery:
    def test_constant_field_gives_zero_jacobian(self, space20):
        T = np.tile(np.array([0.3, -0.4, 0.2]), (space20.n_dofs, 1))
        sig = fem.recover_sigma(space20, T)
        # only the projected part matters downstream
        P = np.eye(3)[None, None] - space20.qp_unit[..., :, None] * space20.qp_unit[..., None, :]
        proj = np.einsum("eqij,eqjk->eqik", space20.at_qp(sig), P)
        assert np.abs(proj).max() < 5e-3

    def test_identity_map_unit_jacobian(self, space20):
        T = space20.dof_coords.copy()
        sig = fem.recover_sigma(space20, T)
        det = solver.jacobian_det(space20.qp_unit, space20.at_qp(sig), space20.at_qp(T))
        assert np.abs(det - 1.0).max() < 5e-4

    def test_antipodal_map_minus_one(self, space20):
        T = -space20.dof_coords
        sig = fem.recover_sigma(space20, T)
        det = solver.jacobian_det(space20.qp_unit, space20.at_qp(sig), space20.at_qp(T))
        assert np.abs(det + 1.0).max() < 5e-4
        assert np.abs(np.abs(det) - 1.0).max() < 5e-4


class TestGradients:
    def test_dof_gradient_of_coordinate(self, space20):
        u = space20.interpolate(lambda x: x[:, 0])
        g = space20.dof_gradient(u)
        x = space20.dof_coords
        exact = np.zeros_like(x)
        exact[:, 0] = 1.0
        exact = sphere.tangent_project(x, exact)
        assert np.abs(g - exact).max() < 5e-3

    def test_grad_at_qp_matches_energy(self, space20):
        u = space20.zero_mean(space20.interpolate(lambda x: x[:, 2] ** 2))
        g = space20.grad_at_qp(u)
        energy_qp = space20.integrate_qp(np.sum(g * g, axis=-1))
        assert energy_qp == pytest.approx(float(u @ (space20.stiffness() @ u)), rel=1e-12)
