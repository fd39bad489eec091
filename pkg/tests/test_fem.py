import numpy as np
import pytest
from hypothesis import given, strategies as st

from rrbto import benchmarks, fem, filters

from conftest import central_difference, fixed_left_edge, rel_err


def q4_stiffness_by_gauss(nu):
    """Unit-square Q4 plane-stress stiffness integrated with 2x2 Gauss points."""
    D = np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]]) / (1 - nu**2)
    corners = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    K = np.zeros((8, 8))
    g = 1 / np.sqrt(3)
    for xi in (-g, g):
        for eta in (-g, g):
            dN_dxi = np.array([c[0] * (1 + c[1] * eta) / 4 for c in corners])
            dN_deta = np.array([c[1] * (1 + c[0] * xi) / 4 for c in corners])
            # x = (xi + 1) / 2 on a unit element: d/dx = 2 d/dxi, det J = 1/4
            dx, dy = 2 * dN_dxi, 2 * dN_deta
            B = np.zeros((3, 8))
            B[0, 0::2] = dx
            B[1, 1::2] = dy
            B[2, 0::2] = dy
            B[2, 1::2] = dx
            K += B.T @ D @ B * 0.25
    return K


class TestElementStiffness:
    def test_symmetric_with_three_rigid_modes(self):
        k0 = fem.element_stiffness(0.3)
        assert np.allclose(k0, k0.T, atol=0)
        eig = np.linalg.eigvalsh(k0)
        assert np.sum(np.abs(eig) < 1e-12) == 3
        assert np.linalg.matrix_rank(k0, tol=1e-10) == 5
        assert eig.min() > -1e-14

    def test_translation_gives_zero_forces(self):
        k0 = fem.element_stiffness(0.3)
        # zero up to rounding of the eight-term sums
        assert np.abs(k0 @ np.tile([1.0, 0.0], 4)).max() < 1e-15
        assert np.abs(k0 @ np.tile([0.0, 1.0], 4)).max() < 1e-15

    @pytest.mark.parametrize("nu", [0.0, 0.3, 0.45])
    def test_matches_gauss_integration(self, nu):
        assert np.allclose(fem.element_stiffness(nu), q4_stiffness_by_gauss(nu), atol=1e-14)

    def test_diagonal_entry(self):
        assert fem.element_stiffness(0.3)[0, 0] == pytest.approx(q4_stiffness_by_gauss(0.3)[0, 0],
                                                                 rel=1e-14)

    @pytest.mark.parametrize("nu", [-0.1, 0.5, 0.7])
    def test_rejects_bad_poisson(self, nu):
        with pytest.raises(ValueError):
            fem.element_stiffness(nu)


class TestProblemDef:
    def test_rejects_empty_supports(self):
        with pytest.raises(ValueError):
            fem.ProblemDef(nelx=2, nely=2, fixed_dofs=[], loads=((3, 1.0),), monitored_dof=3)

    def test_rejects_monitored_fixed_dof(self):
        with pytest.raises(ValueError):
            fem.ProblemDef(nelx=2, nely=2, fixed_dofs=[0, 1], loads=((3, 1.0),), monitored_dof=1)

    @pytest.mark.parametrize("gamma", [0.0, -0.1, 1.2])
    def test_rejects_volume_fraction(self, gamma):
        with pytest.raises(ValueError):
            fem.ProblemDef(nelx=2, nely=2, fixed_dofs=[0, 1], loads=((3, 1.0),), monitored_dof=3,
                           gamma=gamma)

    def test_rejects_nonpositive_u0(self):
        with pytest.raises(ValueError):
            fem.ProblemDef(nelx=2, nely=2, fixed_dofs=[0, 1], loads=((3, 1.0),), monitored_dof=3,
                           u0=0.0)


def one_element_cantilever():
    fixed = fixed_left_edge(1, 1)
    b = fem.dof_y(1, 1, 1)  # bottom-right corner
    return fem.ProblemDef(nelx=1, nely=1, fixed_dofs=fixed, loads=((b, -1.0),), monitored_dof=b)


class TestAssembleAndSolve:
    def test_single_element_matches_dense_solve(self):
        p = one_element_cantilever()
        res = fem.assemble_and_solve(p, np.array([1.0]))
        # Element DOFs are LL, LR, UR, UL; LL and UL are clamped.
        K = q4_stiffness_by_gauss(0.3)
        free = [2, 3, 4, 5]
        f = np.zeros(8)
        f[3] = -1.0
        u = np.linalg.solve(K[np.ix_(free, free)], f[free])
        assert res.u_B == pytest.approx(u[1], rel=1e-12)
        assert res.compliance == pytest.approx(f[free] @ u, rel=1e-12)

    def test_zero_load_gives_zero_response(self):
        p = fem.ProblemDef(nelx=3, nely=2, fixed_dofs=fixed_left_edge(3, 2), loads=(),
                           monitored_dof=fem.dof_y(2, 3, 2))
        res = fem.assemble_and_solve(p, np.ones(p.nel))
        assert np.all(res.u == 0) and res.compliance == 0

    @given(st.floats(0.01, 100.0))
    def test_modulus_scaling(self, s):
        p = benchmarks.cantilever(nelx=6, nely=3, u0=1.0)
        E = np.linspace(0.5, 1.5, p.nel)
        r1 = fem.assemble_and_solve(p, E)
        r2 = fem.assemble_and_solve(p, s * E)
        assert np.allclose(r2.u, r1.u / s, rtol=1e-9, atol=1e-14 * np.abs(r1.u).max())
        assert r2.compliance == pytest.approx(r1.compliance / s, rel=1e-9)

    def test_equilibrium_and_supports(self, small_cantilever, rng):
        p = small_cantilever
        E = rng.uniform(0.2, 1.0, p.nel) ** 3
        res = fem.assemble_and_solve(p, E)
        assert res.residual <= 1e-10
        assert np.all(res.u[p.fixed_dofs] == 0)
        assert res.compliance > 0
        assert res.compliance == pytest.approx(p.load_vector() @ res.u)

    def test_ill_conditioned_design_still_in_equilibrium(self, small_cantilever, rng):
        p = small_cantilever
        rho = np.where(rng.random(p.nel) < 0.3, filters.RHO_MIN, 1.0)
        rho[fem.element_centroids(p.nelx, p.nely)[:, 1] < 1] = 1.0  # keep the bottom row solid
        res = fem.assemble_and_solve(p, rho**3)
        assert res.residual <= 1e-10

    def test_mechanism_raises(self):
        p = fem.ProblemDef(nelx=2, nely=1, fixed_dofs=[0], loads=((5, -1.0),), monitored_dof=5)
        with pytest.raises(fem.FeaError):
            fem.assemble_and_solve(p, np.ones(p.nel))

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
    def test_rejects_bad_moduli(self, small_cantilever, bad):
        E = np.ones(small_cantilever.nel)
        E[3] = bad
        with pytest.raises(ValueError):
            fem.assemble_and_solve(small_cantilever, E)


class TestSensitivities:
    def test_compliance_gradient_nonpositive(self, small_cantilever, rng):
        p = small_cantilever
        rho = rng.uniform(0.2, 1.0, p.nel)
        E0 = rng.uniform(1.0, 1.5, p.nel)
        res = fem.assemble_and_solve(p, rho**3 * E0)
        assert np.all(fem.compliance_sensitivity(p, E0, rho, 3.0, res.u) <= 0)

    def test_linear_penalty_unit_density(self, small_cantilever, rng):
        p = small_cantilever
        E0 = rng.uniform(1.0, 1.5, p.nel)
        res = fem.assemble_and_solve(p, E0)
        k0 = fem.element_stiffness()
        ue = res.u[fem.element_dofs(p.nelx, p.nely)]
        expected = -E0 * np.einsum("ei,ij,ej->e", ue, k0, ue)
        got = fem.compliance_sensitivity(p, E0, np.ones(p.nel), 1.0, res.u)
        assert np.allclose(got, expected, rtol=1e-12)

    def test_compliance_gradient_finite_difference(self, small_cantilever, rng):
        p = small_cantilever
        rho = rng.uniform(0.2, 1.0, p.nel)
        E0 = rng.uniform(1.0, 1.5, p.nel)
        res = fem.assemble_and_solve(p, rho**3 * E0)
        grad = fem.compliance_sensitivity(p, E0, rho, 3.0, res.u)
        C = lambda r: fem.assemble_and_solve(p, r**3 * E0).compliance  # noqa: E731
        idx = np.arange(0, p.nel, 5)
        fd = [central_difference(C, rho, i, 1e-6) for i in idx]
        assert rel_err(grad[idx], fd) <= 1e-5

    def test_displacement_gradient_finite_difference(self, small_cantilever, rng):
        p = small_cantilever
        rho = rng.uniform(0.2, 1.0, p.nel)
        E0 = rng.uniform(1.0, 1.5, p.nel)
        res = fem.assemble_and_solve(p, rho**3 * E0)
        grad = fem.displacement_sensitivity(p, E0, rho, 3.0, res.u, factor=res.factor)
        uB = lambda r: fem.assemble_and_solve(p, r**3 * E0).u_B  # noqa: E731
        idx = np.arange(0, p.nel, 5)
        fd = [central_difference(uB, rho, i, 1e-6) for i in idx]
        assert rel_err(grad[idx], fd) <= 1e-5
        # refactorizing gives the same adjoint
        assert np.allclose(fem.displacement_sensitivity(p, E0, rho, 3.0, res.u), grad, rtol=1e-10)

    def test_self_adjoint_when_monitoring_the_unit_load(self, rng):
        nelx, nely = 6, 3
        b = fem.dof_y(nely, nelx, nely)
        p = fem.ProblemDef(nelx=nelx, nely=nely, fixed_dofs=fixed_left_edge(nelx, nely),
                           loads=((b, 1.0),), monitored_dof=b)
        rho = rng.uniform(0.3, 1.0, p.nel)
        E0 = np.ones(p.nel)
        res = fem.assemble_and_solve(p, rho**3)
        dc = fem.compliance_sensitivity(p, E0, rho, 3.0, res.u)
        du = fem.displacement_sensitivity(p, E0, rho, 3.0, res.u)
        assert np.allclose(du, dc, rtol=1e-10)

    def test_gradient_respects_mirror_symmetry(self):
        # Clamped on both ends, loaded and monitored at the bottom middle.
        nelx, nely = 6, 2
        fixed = fixed_left_edge(nelx, nely) + [d for iy in range(nely + 1) for d in
                                               (fem.dof_x(nely, nelx, iy), fem.dof_y(nely, nelx, iy))]
        mid = fem.dof_y(nely, nelx // 2, nely)
        p = fem.ProblemDef(nelx=nelx, nely=nely, fixed_dofs=fixed, loads=((mid, -1.0),),
                           monitored_dof=mid)
        rho = np.full(p.nel, 0.5)
        res = fem.assemble_and_solve(p, rho**3)
        du = fem.displacement_sensitivity(p, np.ones(p.nel), rho, 3.0, res.u).reshape(nelx, nely)
        assert np.allclose(du, du[::-1], rtol=1e-10)

    def test_length_mismatch(self, small_cantilever):
        p = small_cantilever
        res = fem.assemble_and_solve(p, np.ones(p.nel))
        with pytest.raises(ValueError):
            fem.compliance_sensitivity(p, np.ones(p.nel - 1), np.ones(p.nel), 3.0, res.u)


class TestBatchedSolver:
    def test_matches_direct_solves(self, small_cantilever, rng):
        p = small_cantilever
        rho = rng.uniform(0.2, 1.0, p.nel) ** 3
        E = rho * rng.uniform(1.0, 1.5, (7, p.nel))
        snaps = rho * rng.uniform(1.0, 1.5, (3, p.nel))
        for snapshots in (None, snaps):
            solver = fem.BatchedSolver(p, rho * 1.25, snapshot_moduli=snapshots)
            U, resid, failed = solver.solve(E)
            assert not failed.any() and np.all(resid <= 1e-10)
            for j in range(E.shape[0]):
                assert np.allclose(U[:, j], fem.assemble_and_solve(p, E[j]).u, rtol=1e-8,
                                   atol=1e-9 * np.abs(U[:, j]).max())
