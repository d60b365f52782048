import numpy as np
import pytest

from rbflab import advection as adv
from rbflab import analysis as an
from rbflab.errors import ConfigurationError
from rbflab.geometry import star_domain


class TestRk4Region:
    def test_amplification_values(self):
        assert an.rk4_amplification(0.0) == pytest.approx(1.0)
        assert an.rk4_amplification(-2.5) == pytest.approx(0.6484375)
        assert an.rk4_amplification(-3.0) == pytest.approx(1.375)

    def test_real_axis_bound(self):
        assert an.rk4_real_axis_bound() == pytest.approx(2.785293563405282,
                                                         rel=1e-10)

    def test_region_boundary_on_unit_amplification(self):
        pts = an.rk4_region_boundary(n=360)
        assert np.allclose(pts[0], pts[-1])
        z = pts[:-1, ...]
        r = np.abs(z)
        on_curve = r > 1e-8
        assert np.allclose(an.rk4_amplification(z[on_curve]), 1.0, atol=1e-8)
        # along the negative real axis the boundary sits at ~2.785
        k = np.argmin(np.abs(np.angle(z) - np.pi))
        assert abs(z[k]) == pytest.approx(an.rk4_real_axis_bound(), rel=1e-3)
        # the region bulges beyond the real-axis bound off-axis but stays
        # inside |z| < 3
        assert an.rk4_real_axis_bound() < np.max(r) < 3.0


@pytest.fixture(scope="module")
def small_system(star):
    return adv.build_semidiscrete("fd", star, 0.1, 4, 3, penalty=True, seed=0)


class TestOdeMatrix:
    def test_shape_excludes_inflow(self, small_system):
        A, keep = an.ode_matrix(small_system, t_star=0.0)
        bc = small_system.classify(0.0)
        assert A.shape == (small_system.n - len(bc.inflow),) * 2
        assert len(np.intersect1d(keep, bc.inflow)) == 0

    def test_matches_rhs_action(self, small_system):
        rng = np.random.default_rng(3)
        A, keep = an.ode_matrix(small_system, t_star=0.0, keep_inflow=True)
        u = rng.standard_normal(small_system.n)
        direct = small_system.rhs(u, 0.0)
        assert np.max(np.abs(A @ u - direct)) < 1e-7 * max(
            1.0, np.max(np.abs(direct)))

    def test_annihilates_constants(self, small_system):
        A, _ = an.ode_matrix(small_system, keep_inflow=True)
        h = small_system.nodes.h
        assert np.max(np.abs(A @ np.ones(small_system.n))) < 1e-6 / h

    def test_unpenalized_zero_velocity_is_zero(self, star):
        system = adv.build_semidiscrete("fd", star, 0.12, 2, 2, penalty=False,
                                        seed=0, velocity=adv.zero_field())
        A, _ = an.ode_matrix(system, keep_inflow=True)
        assert np.max(np.abs(A)) < 1e-12

    def test_dense_size_guard(self, small_system, monkeypatch):
        monkeypatch.setattr(an, "_MAX_DENSE_EIG", 10)
        with pytest.raises(ConfigurationError):
            an.ode_matrix(small_system)


class TestSpectrum:
    def test_synthetic_eigenvalues_classified(self, rng):
        lam_true = np.array([-1.0, -2.0, -30.0])
        Q = rng.standard_normal((3, 3))
        A = Q @ np.diag(lam_true) @ np.linalg.inv(Q)
        rep = an.spectrum(A, dt=0.1)
        assert rep.n_total == 3
        assert np.allclose(np.sort(rep.eigenvalues.real), lam_true[::-1],
                           atol=1e-8)
        # -30 * 0.1 is outside the region, the others inside
        assert rep.n_unstable == 1
        assert not rep.is_stable

    def test_suite_penalized_fd_is_stable(self, star):
        reports = an.run_spectrum_suite("fd", star, 0.12, 2, (2, 3), 0.2,
                                        penalty=True)
        assert set(reports) == {2, 3}
        for rep in reports.values():
            assert rep.is_stable
            assert rep.dt == pytest.approx(adv.timestep(
                0.2, 0.12, adv.rotational_field()))


class TestLoglogFit:
    def test_exact_power_law(self):
        x = np.array([0.1, 0.05, 0.025, 0.0125])
        slope, r2 = an.fit_loglog_slope(x, 3.0 * x**2)
        assert slope == pytest.approx(2.0, abs=1e-12)
        assert r2 == pytest.approx(1.0, abs=1e-12)


class TestConvergenceStudy:
    def test_projection_only_table(self, star):
        tabs = an.convergence_study("fd", star, [2], [0.16, 0.12, 0.09, 0.07],
                                    4, 0.2, 0.0)
        tab = tabs[2]
        assert tab.errors.shape == (4, 3)
        assert np.all(tab.errors > 0.0)
        assert np.all(np.diff(tab.n_values) > 0)
        # t_final = 0 measures the oversampled projection error of the bump
        assert set(tab.slopes) == {1, 2, "inf"}
        assert tab.slopes[2] > 1.0


class TestQuadrature:
    def test_reference_integral_of_one_is_area(self, star):
        val = an.reference_integral(star, lambda y: np.ones(len(np.atleast_2d(y))))
        assert val == pytest.approx(star.area(), rel=1e-9)

    def test_study_report_structure(self, star):
        rep = an.quadrature_study(star, integrands=("cubic",),
                                  kinds=("cartesian",),
                                  h_y_values=(0.12, 0.09, 0.07, 0.05))
        entry = rep.entries[("cubic", "cartesian")]
        assert len(entry["errors"]) == 4
        assert np.all(entry["errors"] > 0.0)
        assert entry["slope"] > 0.3
        assert rep.area == pytest.approx(star.area(), rel=1e-9)
        assert "cubic" in rep.references


class TestMaxCfl:
    def test_positive_real_eigenvalue_reports_unstable(self):
        res = an.max_cfl_from_eigenvalues(np.array([1e-3, -1.0]), 0.1)
        assert res.cfl == 0.0
        assert not res.stable

    def test_zero_matrix_unbounded(self):
        res = an.max_cfl_from_eigenvalues(np.array([0.0]), 0.1)
        assert res.cfl == np.inf
        assert res.stable

    def test_single_real_eigenvalue_closed_form(self):
        h = 0.1
        res = an.max_cfl_from_eigenvalues(np.array([-1.0 + 0.0j]), h)
        # dt = 2 cfl h for the rotational field; |lambda| dt hits the
        # real-axis bound at cfl = bound / (2h)
        expect = an.rk4_real_axis_bound() / (2.0 * h)
        assert res.cfl == pytest.approx(expect, rel=1e-3)
        assert res.stable
