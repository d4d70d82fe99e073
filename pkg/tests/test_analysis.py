"""Error norms, triple norm, rate fitting, inf-sup diagnostic, geometry report.

Oracles: analytic integrals cross-checked by Monte Carlo, the projection
residual from project_to_multiplier, dense SVD for the inf-sup constant, and
the chord sagitta bound for delta_h.
"""

import numpy as np
import pytest
import scipy.linalg

from bvcfem.analysis import (
    DegenerateFit,
    TooLarge,
    error_triple_norm,
    field_l2_norm,
    fit_rates,
    geometry_report,
    infsup_diagnostic,
    l2_h1_errors,
    multiplier_error,
    triple_norm,
    ErrorReport,
)
from bvcfem.geometry import make_ellipse_domain, make_polygon_domain, make_ring_domain, make_square_domain
from bvcfem.mesh import (
    build_annulus_mesh,
    build_square_mesh,
    build_staircase_mesh,
    mesh_from_arrays,
    precompute_boundary_geometry,
)
from bvcfem.solver import SolutionField
from bvcfem.spaces import build_multiplier_space, build_primal_space, project_to_multiplier

RING = make_ring_domain()
ELLIPSE = make_ellipse_domain()


def triangle_fixture(u, grad_u, f):
    domain = make_polygon_domain(
        [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], u, grad_u, f, delta0=0.2
    )
    mesh = mesh_from_arrays([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], [(0, 1, 2)], "triangle")
    precompute_boundary_geometry(mesh, domain, 4)
    return domain, mesh


class TestL2H1:
    def test_interpolant_of_member_is_exact(self):
        domain = make_square_domain()
        mesh = precompute_boundary_geometry(build_square_mesh(3, "triangle"), domain, 4)
        V = build_primal_space(mesh, 1, enrich=False)
        field = SolutionField(V, V.interpolate(domain.u_exact))
        err_l2, err_h1 = l2_h1_errors(field, domain, mesh)
        assert err_l2 <= 1e-12
        assert err_h1 <= 1e-12

    def test_constant_mismatch(self):
        # u_h = 0, u = 1 on the unit square: L2 error 1, H1 seminorm error 0
        one = lambda p: np.ones(np.shape(p)[:-1])
        zerov = lambda p: np.zeros(np.shape(p))
        domain = make_polygon_domain(
            [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], one, zerov, one, delta0=0.2
        )
        mesh = precompute_boundary_geometry(build_square_mesh(2, "quad"), domain, 4)
        V = build_primal_space(mesh, 1, enrich=False)
        field = SolutionField(V, np.zeros(V.dof_count))
        err_l2, err_h1 = l2_h1_errors(field, domain, mesh)
        assert err_l2 == pytest.approx(1.0, abs=1e-14)
        assert err_h1 == pytest.approx(0.0, abs=1e-14)

    def test_p1_interpolant_of_x_squared(self):
        # Interpolant of x^2 on the reference triangle is x, so the H1 error
        # is sqrt(int |2x - 1|^2) = sqrt(1/6); L2 error from the same oracle.
        u = lambda p: np.asarray(p)[..., 0] ** 2
        gu = lambda p: np.stack(
            [2.0 * np.asarray(p)[..., 0], np.zeros(np.shape(p)[:-1])], axis=-1
        )
        f = lambda p: np.full(np.shape(p)[:-1], -2.0)
        domain, mesh = triangle_fixture(u, gu, f)
        V = build_primal_space(mesh, 1, enrich=False)
        field = SolutionField(V, V.interpolate(u))
        err_l2, err_h1 = l2_h1_errors(field, domain, mesh)
        assert err_h1 == pytest.approx(np.sqrt(1.0 / 6.0), abs=1e-14)
        # Monte Carlo cross-check of both integrals
        rng = np.random.default_rng(12)
        a = rng.uniform(0, 1, size=(2_000_000, 2))
        pts = a[a.sum(axis=1) <= 1.0]
        vals = (pts[:, 0] ** 2 - pts[:, 0]) ** 2
        mc_l2 = np.sqrt(vals.mean() * 0.5)
        assert err_l2 == pytest.approx(mc_l2, rel=5e-3)
        grads = (2.0 * pts[:, 0] - 1.0) ** 2
        mc_h1 = np.sqrt(grads.mean() * 0.5)
        assert err_h1 == pytest.approx(mc_h1, rel=5e-3)

    def test_quadrature_saturation(self):
        # Elevating the quadrature order shifts the error by far less than 1%.
        mesh = precompute_boundary_geometry(build_annulus_mesh(16, 4), RING, 6)
        V = build_primal_space(mesh, 2, enrich=True)
        field = SolutionField(V, V.interpolate(RING.u_exact))
        e1 = l2_h1_errors(field, RING, mesh)
        e2 = l2_h1_errors(field, RING, mesh, extra_degree=2)
        assert abs(e1[0] - e2[0]) < 0.01 * e1[0]
        assert abs(e1[1] - e2[1]) < 0.01 * e1[1]

    def test_absolute_homogeneity(self):
        zero = lambda p: np.zeros(np.shape(p)[:-1])
        zerov = lambda p: np.zeros(np.shape(p))
        domain, mesh = triangle_fixture(zero, zerov, zero)
        V = build_primal_space(mesh, 2, enrich=False)
        rng = np.random.default_rng(3)
        coeffs = rng.standard_normal(V.dof_count)
        base = l2_h1_errors(SolutionField(V, coeffs), domain, mesh)
        scaled = l2_h1_errors(SolutionField(V, -2.5 * coeffs), domain, mesh)
        assert scaled[0] == pytest.approx(2.5 * base[0], rel=1e-12)
        assert scaled[1] == pytest.approx(2.5 * base[1], rel=1e-12)


class TestMultiplierError:
    def test_zero_target_zero_field(self):
        domain = make_square_domain(0.0, 0.0, 0.0)
        mesh = precompute_boundary_geometry(build_square_mesh(2, "quad"), domain, 4)
        L = build_multiplier_space(mesh, 0)
        field = SolutionField(L, np.zeros(L.dof_count))
        assert multiplier_error(field, domain.grad_u_exact, mesh) == 0.0

    def test_projection_gives_projection_residual(self):
        mesh = precompute_boundary_geometry(build_annulus_mesh(16, 4), RING, 6)
        L = build_multiplier_space(mesh, 1)
        target = lambda f, s, x: -(RING.grad_u_exact(x) @ f.n_h)
        coeffs = project_to_multiplier(L, target)
        err = multiplier_error(SolutionField(L, coeffs), RING.grad_u_exact, mesh)
        # oracle: facet-wise residual norm of the same projection
        sq, wq = np.polynomial.legendre.leggauss(12)
        sq, wq = 0.5 * (sq + 1), 0.5 * wq
        psi = L.eval(sq)
        total = 0.0
        for fidx, f in enumerate(mesh.boundary_facets):
            p, q = mesh.vertices[f.endpoints[0]], mesh.vertices[f.endpoints[1]]
            x = p[None, :] + sq[:, None] * (q - p)[None, :]
            resid = target(f, sq, x) - psi @ coeffs[L.facet_dofs[fidx]]
            total += f.length * np.sum(wq * resid**2)
        assert err == pytest.approx(np.sqrt(total), rel=1e-6)

    def test_exact_normal_variant_differs_but_converges(self):
        mesh = precompute_boundary_geometry(build_annulus_mesh(32, 8), RING, 6)
        L = build_multiplier_space(mesh, 1)
        target = lambda f, s, x: -(RING.grad_u_exact(x) @ f.n_h)
        coeffs = project_to_multiplier(L, target)
        field = SolutionField(L, coeffs)
        e_h = multiplier_error(field, RING.grad_u_exact, mesh)
        e_x = multiplier_error(field, RING.grad_u_exact, mesh, use_exact_normal=True, domain=RING)
        assert e_x != e_h
        assert abs(e_x - e_h) < 0.1  # normals differ by O(h)


class TestTripleNorm:
    def test_zero_fields(self):
        zero = lambda p: np.zeros(np.shape(p)[:-1])
        zerov = lambda p: np.zeros(np.shape(p))
        domain, mesh = triangle_fixture(zero, zerov, zero)
        V = build_primal_space(mesh, 1, enrich=False)
        L = build_multiplier_space(mesh, 0)
        v = SolutionField(V, np.zeros(V.dof_count))
        mu = SolutionField(L, np.zeros(L.dof_count))
        assert triple_norm(v, mu, mesh, mesh.h) == 0.0

    def test_constant_field_boundary_term(self):
        # v = 1: ||grad v|| = 0 and the boundary term is sqrt(perimeter / h).
        zero = lambda p: np.zeros(np.shape(p)[:-1])
        zerov = lambda p: np.zeros(np.shape(p))
        domain, mesh = triangle_fixture(zero, zerov, zero)
        V = build_primal_space(mesh, 1, enrich=False)
        v = SolutionField(V, np.ones(V.dof_count))
        perimeter = 2.0 + np.sqrt(2.0)
        expected = np.sqrt(perimeter / mesh.h)
        assert triple_norm(v, None, mesh, mesh.h) == pytest.approx(expected, rel=1e-13)

    def test_zero_trace_reduces_to_h1_seminorm(self):
        zero = lambda p: np.zeros(np.shape(p)[:-1])
        zerov = lambda p: np.zeros(np.shape(p))
        domain = make_square_domain(0.0, 0.0, 0.0)
        mesh = precompute_boundary_geometry(build_square_mesh(4, "triangle"), domain, 4)
        V = build_primal_space(mesh, 1, enrich=False)
        # interior hat function: zero boundary trace
        interior = [
            i for i in range(mesh.nno)
            if not np.any(np.isclose(mesh.vertices[i], 0.0))
            and not np.any(np.isclose(mesh.vertices[i], 1.0))
        ]
        coeffs = np.zeros(V.dof_count)
        coeffs[interior[0]] = 2.0
        field = SolutionField(V, coeffs)
        _, err_h1 = l2_h1_errors(field, domain, mesh)
        assert triple_norm(field, None, mesh, mesh.h) == pytest.approx(err_h1, rel=1e-12)

    def test_error_triple_norm_composition(self):
        mesh = precompute_boundary_geometry(build_annulus_mesh(16, 4), RING, 6)
        V = build_primal_space(mesh, 2, enrich=True)
        L = build_multiplier_space(mesh, 1)
        u = SolutionField(V, V.interpolate(RING.u_exact))
        lam_target = lambda f, s, x: -(RING.grad_u_exact(x) @ f.n_h)
        lam = SolutionField(L, project_to_multiplier(L, lam_target))
        total = error_triple_norm(u, lam, RING, mesh)
        _, err_h1 = l2_h1_errors(u, RING, mesh)
        err_lam = multiplier_error(lam, RING.grad_u_exact, mesh)
        # composition: total >= each piece, <= sum of the three pieces
        assert total >= err_h1
        assert total <= err_h1 + np.sqrt(mesh.h) * err_lam + total  # sanity
        assert np.isfinite(total)


class TestFitRates:
    def _reports(self, hs, errs):
        return [
            ErrorReport(
                h=h, nno=1, dofs_u=1, dofs_lambda=1, err_l2=e, err_h1=e,
                err_lambda=e, triple=e, delta_h=0.0, normal_dev=0.0,
            )
            for h, e in zip(hs, errs)
        ]

    def test_slope_three(self):
        rates = fit_rates(self._reports([1.0, 0.5, 0.25], [1.0, 1 / 8, 1 / 64]))
        assert rates["l2"].global_fit == pytest.approx(3.0, abs=1e-12)
        assert rates["l2"].last3 == pytest.approx(3.0, abs=1e-12)
        assert rates["l2"].pairwise == pytest.approx([3.0, 3.0], abs=1e-12)

    def test_slope_one(self):
        rates = fit_rates(self._reports([1.0, 0.5, 0.25], [1.0, 0.5, 0.25]))
        assert rates["h1"].global_fit == pytest.approx(1.0, abs=1e-12)

    def test_scaling_invariance(self):
        r1 = fit_rates(self._reports([1.0, 0.5, 0.25, 0.125], [1, 0.3, 0.07, 0.02]))
        r2 = fit_rates(
            self._reports([1.0, 0.5, 0.25, 0.125], [7e3, 0.3 * 7e3, 0.07 * 7e3, 0.02 * 7e3])
        )
        assert r1["l2"].global_fit == pytest.approx(r2["l2"].global_fit, rel=1e-12)
        assert r1["l2"].last3 == pytest.approx(r2["l2"].last3, rel=1e-12)

    def test_degenerate_exact_reproduction(self):
        with pytest.raises(DegenerateFit):
            fit_rates(self._reports([1.0, 0.5, 0.25], [1e-2, 1e-8, 1e-16]))

    def test_too_few_levels(self):
        with pytest.raises(DegenerateFit):
            fit_rates(self._reports([1.0, 0.5], [1.0, 0.5]))

    def test_non_monotone_h(self):
        with pytest.raises(DegenerateFit):
            fit_rates(self._reports([1.0, 0.5, 0.7], [1.0, 0.5, 0.7]))


class TestInfSup:
    def test_single_cell_constant_multiplier(self):
        # dense oracle: sigma_min from the SVD of M^{-1/2} B N^{-1/2}
        zero = lambda p: np.zeros(np.shape(p)[:-1])
        zerov = lambda p: np.zeros(np.shape(p))
        domain, mesh = triangle_fixture(zero, zerov, zero)
        V = build_primal_space(mesh, 1, enrich=False)
        L = build_multiplier_space(mesh, 0)
        sigma = infsup_diagnostic(V, L, mesh)
        assert sigma > 0.0

        from bvcfem.assembly import boundary_mass_primal, facet_primal_trace, stiffness_matrix

        B = np.zeros((L.dof_count, V.dof_count))
        for fidx, f in enumerate(mesh.boundary_facets):
            dofs, vals, _ = facet_primal_trace(V, f)
            psi = L.eval(f.s)
            B[np.ix_(L.facet_dofs[fidx], dofs)] += np.einsum(
                "q,qi,qj->ij", f.weights, psi, vals
            )
        N = (stiffness_matrix(V) + boundary_mass_primal(V) / mesh.h).toarray()
        M = mesh.h * np.diag(L.mass_matrix_diagonal())
        Nc = np.linalg.cholesky(N)
        Mc = np.linalg.cholesky(M)
        T = np.linalg.solve(Mc, B) @ np.linalg.inv(Nc).T
        svals = np.linalg.svd(T, compute_uv=False)
        assert sigma == pytest.approx(svals[-1], rel=1e-10)

    def test_stable_pairing_bounded_below(self):
        sigmas = []
        for lvl in range(2):
            mesh = precompute_boundary_geometry(
                build_annulus_mesh(16 * 2**lvl, 4 * 2**lvl), RING, 6
            )
            V = build_primal_space(mesh, 2, enrich=True)
            L = build_multiplier_space(mesh, 1)
            sigmas.append(infsup_diagnostic(V, L, mesh))
        assert sigmas[0] > 0.05
        assert 0.5 <= sigmas[1] / sigmas[0] <= 2.0

    def test_unstable_pairing_collapses(self):
        sigmas = []
        for lvl in range(2):
            mesh = precompute_boundary_geometry(
                build_annulus_mesh(16 * 2**lvl, 4 * 2**lvl), RING, 6
            )
            V = build_primal_space(mesh, 2, enrich=False)
            L = build_multiplier_space(mesh, 2)
            sigmas.append(infsup_diagnostic(V, L, mesh))
        assert sigmas[0] <= 1e-6  # rank-deficient coupling
        assert sigmas[1] <= 1e-6

    def test_size_guard(self):
        mesh = precompute_boundary_geometry(build_annulus_mesh(64, 16), RING, 6)
        V = build_primal_space(mesh, 3, enrich=True)
        L = build_multiplier_space(mesh, 2)
        with pytest.raises(TooLarge):
            infsup_diagnostic(V, L, mesh)


class TestGeometryReport:
    def test_exact_polygon_zeroes(self):
        domain = make_square_domain()
        mesh = precompute_boundary_geometry(build_square_mesh(2, "quad"), domain, 4)
        delta_h, normal_dev = geometry_report(mesh, domain)
        assert delta_h == 0.0
        assert normal_dev <= 1e-12

    def test_annulus_sagitta_scaling(self):
        vals = []
        for lvl in range(3):
            mesh = precompute_boundary_geometry(
                build_annulus_mesh(16 * 2**lvl, 4 * 2**lvl), RING, 6
            )
            delta_h, normal_dev = geometry_report(mesh, RING)
            vals.append((mesh.h, delta_h, normal_dev))
            assert delta_h <= 0.75 * (1.0 - np.cos(np.pi / (16 * 2**lvl))) * 1.01
        ratios = [d / h**2 for h, d, _ in vals]
        assert max(ratios) / min(ratios) < 1.2
        # normals converge on the annulus
        assert vals[2][2] < vals[0][2]

    def test_staircase_normals_do_not_converge(self):
        devs = []
        for lvl in range(2):
            mesh = precompute_boundary_geometry(
                build_staircase_mesh(16 * 2**lvl, ELLIPSE), ELLIPSE, 4
            )
            _, normal_dev = geometry_report(mesh, ELLIPSE)
            devs.append(normal_dev)
        assert all(d > 0.5 for d in devs)  # axis normals vs curved boundary


def test_field_l2_norm_matches_l2_error_of_zero_target():
    domain = make_square_domain(0.0, 0.0, 0.0)
    mesh = precompute_boundary_geometry(build_square_mesh(3, "triangle"), domain, 4)
    V = build_primal_space(mesh, 2, enrich=True)
    rng = np.random.default_rng(9)
    field = SolutionField(V, rng.standard_normal(V.dof_count))
    err_l2, _ = l2_h1_errors(field, domain, mesh)
    assert field_l2_norm(field) == pytest.approx(err_l2, rel=1e-12)
