import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbflab import local_interp as li
from rbflab.errors import ConfigurationError, UnisolvencyError


def _random_stencil(rng, n):
    return rng.uniform(-1.0, 1.0, size=(n, 2))


class TestPhs:
    def test_values(self):
        assert li.phs_value(0.0) == 0.0
        assert li.phs_value(2.0) == 8.0

    def test_gradient_analytic(self):
        g = li.phs_gradient(np.array([1.0, 0.0]))
        assert np.allclose(g, [3.0, 0.0])

    def test_gradient_matches_finite_differences(self):
        x = np.array([0.7, -0.3])
        g = li.phs_gradient(x)
        eps = 1e-6
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = eps
            fd = (li.phs_value(np.linalg.norm(x + e)) -
                  li.phs_value(np.linalg.norm(x - e))) / (2 * eps)
            assert abs(g[axis] - fd) < 1e-5


class TestMonomialBasis:
    def test_count_closed_form(self):
        for p in range(0, 7):
            assert li.monomial_count(p) == (p + 2) * (p + 1) // 2

    def test_ordering(self):
        assert li.monomial_exponents(2) == [
            (0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


class TestAssembleLocal:
    def test_saddle_symmetric(self, rng):
        sys = li.assemble_local(_random_stencil(rng, 14), 2)
        assert np.max(np.abs(sys.matrix - sys.matrix.T)) == 0.0

    def test_collinear_points_unisolvency_error(self):
        pts = np.column_stack([np.linspace(0, 1, 6), np.linspace(0, 2, 6)])
        with pytest.raises(UnisolvencyError):
            li.assemble_local(pts, 2)

    def test_too_few_points(self, rng):
        with pytest.raises(ConfigurationError):
            li.assemble_local(_random_stencil(rng, 5), 2)

    def test_identical_points(self):
        with pytest.raises(ConfigurationError):
            li.assemble_local(np.zeros((8, 2)), 1)

    def test_trial_space_reproduction(self, rng):
        # a function of the constrained trial space (PHS combination whose
        # coefficients annihilate the monomials, plus a polynomial) is
        # reproduced exactly by the value weights
        pts = _random_stencil(rng, 12)
        p = 2
        sys = li.assemble_local(pts, p)
        z = sys.scaled_points
        P = np.column_stack([z[:, 0] ** ex * z[:, 1] ** ey
                             for ex, ey in li.monomial_exponents(p)])
        c = rng.standard_normal(len(pts))
        c -= P @ np.linalg.lstsq(P, c, rcond=None)[0]  # P^T c = 0

        def s(q):
            q = np.atleast_2d(q)
            r = np.linalg.norm(q[:, None, :] - z[None, :, :], axis=-1)
            return (r**3) @ c + 0.7 + 0.2 * q[:, 0] - 0.5 * q[:, 1] ** 2

        y = np.array([0.1, 0.2])
        zy = (y - sys.center) / sys.scale
        w = li.weight_vector(sys, li.VALUE, y)
        assert abs(w @ s(z) - s(zy)[0]) < 1e-9


class TestWeights:
    def test_cardinal_property(self, rng):
        pts = _random_stencil(rng, 12)
        sys = li.assemble_local(pts, 2)
        for j in range(len(pts)):
            w = li.weight_vector(sys, li.VALUE, pts[j])
            e = np.zeros(len(pts))
            e[j] = 1.0
            assert np.max(np.abs(w - e)) < 1e-10

    def test_constant_reproduction(self, rng):
        sys = li.assemble_local(_random_stencil(rng, 15), 3)
        w = li.weight_vector(sys, li.VALUE, np.array([0.25, -0.4]))
        assert abs(np.sum(w) - 1.0) < 1e-12

    def test_derivative_of_x1_squared(self, rng):
        pts = _random_stencil(rng, 12)
        sys = li.assemble_local(pts, 2)
        y = np.array([0.3, 0.1])
        w = li.weight_vector(sys, li.DX, y)
        assert abs(w @ pts[:, 0] ** 2 - 0.6) < 1e-8

    def test_dy_derivative(self, rng):
        pts = _random_stencil(rng, 12)
        sys = li.assemble_local(pts, 2)
        y = np.array([-0.2, 0.5])
        w = li.weight_vector(sys, li.DY, y)
        g = pts[:, 0] * pts[:, 1]
        assert abs(w @ g - (-0.2)) < 1e-8

    def test_rigid_motion_invariance(self, rng):
        pts = _random_stencil(rng, 12)
        y = np.array([0.15, -0.35])
        w0 = li.weight_vector(li.assemble_local(pts, 2), li.VALUE, y)
        ang = 0.83
        rot = np.array([[np.cos(ang), -np.sin(ang)],
                        [np.sin(ang), np.cos(ang)]])
        shift = np.array([3.2, -1.7])
        w1 = li.weight_vector(li.assemble_local(pts @ rot.T + shift, 2),
                              li.VALUE, rot @ y + shift)
        assert np.max(np.abs(w0 - w1)) < 1e-9

    def test_unsupported_operator(self, rng):
        sys = li.assemble_local(_random_stencil(rng, 12), 2)
        with pytest.raises(ConfigurationError):
            li.weight_vector(sys, "laplacian", np.zeros(2))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000),
           p=st.integers(min_value=1, max_value=4))
    def test_property_polynomial_exactness(self, seed, p):
        rng = np.random.default_rng(seed)
        m = li.monomial_count(p)
        pts = rng.uniform(-1.0, 1.0, size=(2 * m, 2))
        try:
            sys = li.assemble_local(pts, p)
        except (UnisolvencyError, ConfigurationError):
            return
        y = rng.uniform(-0.8, 0.8, size=2)
        for ex, ey in li.monomial_exponents(p):
            g = pts[:, 0] ** ex * pts[:, 1] ** ey
            val = li.weight_vector(sys, li.VALUE, y) @ g
            exact = y[0] ** ex * y[1] ** ey
            assert abs(val - exact) < 1e-8 * max(1.0, abs(exact))
            dx = li.weight_vector(sys, li.DX, y) @ g
            exact_dx = ex * y[0] ** max(ex - 1, 0) * y[1] ** ey if ex else 0.0
            assert abs(dx - exact_dx) < 1e-7 * max(1.0, abs(exact_dx))
