import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from gyronet import ball
from gyronet.ball import DEFAULT_SAFETY, Hyperplane, SafetyConfig
from gyronet.props import rand_ball

X = np.array([0.5, 0.0])


def points(dim=3, radius=0.9):
    coords = st.lists(st.floats(-1, 1, allow_nan=False), min_size=dim, max_size=dim)
    return coords.map(lambda v: np.array(v) * radius / max(1.0, math.sqrt(dim)))


class TestMetric:
    def test_conformal_factor(self):
        assert ball.conformal_factor(np.zeros(2), 1.0) == 2.0
        assert ball.conformal_factor(np.ones(2) * 7, 0.0) == 2.0
        assert_allclose(ball.conformal_factor(X, 1.0), [8 / 3])


class TestMobiusAdd:
    def test_zero_is_identity(self):
        x = np.array([0.3, -0.2, 0.1])
        assert_allclose(ball.mobius_add(x, np.zeros(3), 1.0), x)
        assert_allclose(ball.mobius_add(np.zeros(3), x, 1.0), x)

    def test_inverse(self):
        x = np.array([0.3, -0.2, 0.1])
        assert_allclose(ball.mobius_add(-x, x, 1.0), np.zeros(3), atol=1e-16)

    def test_euclidean_branch(self):
        assert_allclose(ball.mobius_add(np.array([1.0, 2.0]), np.array([3.0, 4.0]), 0.0), [4.0, 6.0])

    @settings(max_examples=200, deadline=None)
    @given(points(), points())
    def test_left_cancellation(self, x, y):
        assert_allclose(ball.mobius_add(-x, ball.mobius_add(x, y, 1.0), 1.0), y, atol=1e-9)

    def test_not_commutative(self):
        x, y = np.array([0.5, 0.1]), np.array([-0.2, 0.6])
        assert not np.allclose(ball.mobius_add(x, y, 1.0), ball.mobius_add(y, x, 1.0))
        # but the norms agree
        assert_allclose(np.linalg.norm(ball.mobius_add(x, y, 1.0)), np.linalg.norm(ball.mobius_add(y, x, 1.0)))

    def test_chain_is_left_associative(self):
        x, y, z = np.array([0.5, 0.1]), np.array([-0.2, 0.6]), np.array([0.3, 0.3])
        expected = ball.mobius_add(ball.mobius_add(x, y, 1.0), z, 1.0)
        assert np.array_equal(ball.mobius_add_chain([x, y, z], 1.0), expected)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ball.mobius_add(np.zeros(2), np.zeros(3), 1.0)

    def test_negative_curvature_parameter_rejected(self):
        with pytest.raises(ValueError):
            ball.project_to_ball(np.zeros(2), -1.0)


class TestMobiusSub:
    def test_self(self):
        x = np.array([0.3, -0.2])
        assert_allclose(ball.mobius_sub(x, x, 1.0), 0.0, atol=1e-16)

    def test_zero(self):
        x = np.array([0.3, -0.2])
        assert_allclose(ball.mobius_sub(x, np.zeros(2), 1.0), x)

    def test_euclidean(self):
        assert_allclose(ball.mobius_sub(np.array([4.0, 6.0]), np.array([3.0, 4.0]), 0.0), [1.0, 2.0])


class TestMobiusScalar:
    def test_one(self):
        x = np.array([0.3, -0.2])
        assert_allclose(ball.mobius_scalar(1.0, x, 1.0), x)

    def test_double(self):
        # tanh(2 atanh(0.5)) = 2(0.5)/(1 + 0.25) = 0.8
        assert_allclose(ball.mobius_scalar(2.0, X, 1.0), [0.8, 0.0], rtol=1e-15)

    def test_zero(self):
        assert_allclose(ball.mobius_scalar(0.0, X, 1.0), [0.0, 0.0])

    def test_zero_vector(self):
        assert_allclose(ball.mobius_scalar(3.0, np.zeros(2), 1.0), [0.0, 0.0])

    @settings(max_examples=100, deadline=None)
    @given(points(), st.floats(-2, 2), st.floats(-2, 2))
    def test_distributive(self, x, r, s):
        lhs = ball.mobius_scalar(r + s, x, 1.0)
        rhs = ball.mobius_add(ball.mobius_scalar(r, x, 1.0), ball.mobius_scalar(s, x, 1.0), 1.0)
        assert_allclose(lhs, rhs, atol=1e-9)

    def test_matches_maps(self):
        rng = np.random.default_rng(3)
        x = rand_ball(rng, 100, 4, 0.9)
        r = rng.uniform(-3, 3, (100, 1))
        assert_allclose(ball.mobius_scalar(r, x, 1.0), ball.exp0(r * ball.log0(x, 1.0), 1.0), atol=1e-12)


class TestDistance:
    def test_self(self):
        x = np.array([0.3, -0.2])
        assert_allclose(ball.distance(x, x, 1.0), [0.0], atol=1e-15)

    def test_from_origin(self):
        assert_allclose(ball.distance(np.zeros(2), X, 1.0), [math.log(3.0)], rtol=1e-15)

    def test_cosh_oracle(self):
        rng = np.random.default_rng(4)
        x, y = rand_ball(rng, 1000, 5, 0.9), rand_ball(rng, 1000, 5, 0.9)
        assert np.max(np.abs(ball.distance(x, y, 1.0) - ball.distance_cosh(x, y))) < 1e-9

    def test_euclidean_branch(self):
        assert_allclose(ball.distance(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.0), [2 * math.sqrt(2)])

    def test_curvature_scaling(self):
        # d_c(x, y) = d_1(sqrt(c) x, sqrt(c) y) / sqrt(c)
        rng = np.random.default_rng(5)
        c = 2.5
        x, y = rand_ball(rng, 50, 3, 0.9, c), rand_ball(rng, 50, 3, 0.9, c)
        sc = math.sqrt(c)
        assert_allclose(ball.distance(x, y, c), ball.distance(sc * x, sc * y, 1.0) / sc, rtol=1e-12)


class TestMaps:
    def test_exp_zero(self):
        x = np.array([0.3, -0.2])
        assert_allclose(ball.exp_map(x, np.zeros(2), 1.0), x)

    def test_exp_origin(self):
        assert_allclose(ball.exp_map(np.zeros(2), np.array([math.atanh(0.5), 0.0]), 1.0), X, rtol=1e-15)

    def test_log_coincident(self):
        x = np.array([0.3, -0.2])
        assert_allclose(ball.log_map(x, x, 1.0), [0.0, 0.0])

    def test_log_origin(self):
        assert_allclose(ball.log_map(np.zeros(2), X, 1.0), [math.atanh(0.5), 0.0], rtol=1e-15)

    def test_exp0_log0_zero(self):
        assert_allclose(ball.exp0(np.zeros(3), 1.0), 0.0)
        assert_allclose(ball.log0(np.zeros(3), 1.0), 0.0)

    def test_exp0_euclidean(self):
        v = np.array([3.0, -4.0])
        assert_allclose(ball.exp0(v, 0.0), v)

    def test_log0_value(self):
        assert_allclose(ball.log0(np.array([0.8, 0.0]), 1.0), [math.atanh(0.8), 0.0], rtol=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(points(), points())
    def test_round_trips(self, x, y):
        v = ball.log_map(x, y, 1.0)
        assert_allclose(ball.exp_map(x, v, 1.0), y, atol=1e-8)
        assert_allclose(ball.log_map(x, ball.exp_map(x, v, 1.0), 1.0), v, atol=1e-8 * max(1, np.linalg.norm(v)))

    def test_log_metric_norm_is_distance(self):
        rng = np.random.default_rng(6)
        x, y = rand_ball(rng, 200, 4, 0.9), rand_ball(rng, 200, 4, 0.9)
        v = ball.log_map(x, y, 1.0)
        assert_allclose(np.sqrt(ball.inner(x, v, v, 1.0)), ball.distance(x, y, 1.0), rtol=1e-10)


class TestParallelTransport:
    def test_origin(self):
        v = np.array([1.0, 2.0])
        assert_allclose(ball.parallel_transport_from_origin(np.zeros(2), v, 1.0), v)

    def test_value(self):
        assert_allclose(ball.parallel_transport_from_origin(X, np.array([1.0, 0.0]), 1.0), [0.75, 0.0])

    def test_isometry(self):
        rng = np.random.default_rng(7)
        x = rand_ball(rng, 500, 4, 0.9)
        v = rng.normal(size=x.shape)
        pv = ball.parallel_transport_from_origin(x, v, 1.0)
        assert_allclose(ball.inner(x, pv, pv, 1.0), ball.inner(np.zeros_like(x), v, v, 1.0), rtol=1e-12)


class TestGeodesics:
    def test_endpoints(self):
        x, y = np.array([0.2, 0.4]), np.array([-0.5, 0.1])
        assert_allclose(ball.geodesic(x, y, 0.0, 1.0), x, atol=1e-16)
        assert_allclose(ball.geodesic(x, y, 1.0, 1.0), y, atol=1e-15)

    def test_exp_log_form(self):
        rng = np.random.default_rng(8)
        x, y = rand_ball(rng, 200, 3, 0.9), rand_ball(rng, 200, 3, 0.9)
        t = rng.uniform(0, 1, (200, 1))
        assert_allclose(ball.geodesic(x, y, t, 1.0), ball.exp_map(x, t * ball.log_map(x, y, 1.0), 1.0), atol=1e-10)

    def test_midpoint(self):
        rng = np.random.default_rng(9)
        x, y = rand_ball(rng, 200, 3, 0.9), rand_ball(rng, 200, 3, 0.9)
        m = ball.geodesic(x, y, 0.5, 1.0)
        d = ball.distance(x, y, 1.0)
        assert_allclose(ball.distance(x, m, 1.0), d / 2, atol=1e-10)
        assert_allclose(ball.distance(m, y, 1.0), d / 2, atol=1e-10)

    def test_unit_speed(self):
        x = np.array([0.1, -0.3, 0.2])
        v = np.array([1.0, 2.0, -1.0])
        v = v / math.sqrt(float(ball.inner(x, v, v, 1.0)[0]))
        assert_allclose(ball.unit_speed_geodesic(x, v, 0.0, 1.0), x)
        for t in (0.1, 0.5, 1.0):
            assert_allclose(ball.distance(x, ball.unit_speed_geodesic(x, v, t, 1.0), 1.0), [t], rtol=1e-12)

    def test_unit_speed_euclidean_limit(self):
        # unit metric speed means Euclidean speed 1/2 near c = 0, and the curve is x + t v
        c = 1e-8
        x = np.array([0.1, -0.3])
        v = np.array([0.3, 0.4])
        v = v / math.sqrt(float(ball.inner(x, v, v, c)[0]))
        assert_allclose(np.linalg.norm(v), 0.5, rtol=1e-7)
        for t in (0.5, 1.0, 2.0):
            assert_allclose(ball.unit_speed_geodesic(x, v, t, c), x + t * v, rtol=1e-5)

    def test_unit_speed_requires_unit_norm(self):
        with pytest.raises(ValueError):
            ball.unit_speed_geodesic(np.zeros(2), np.array([1.0, 0.0]), 1.0, 1.0)


class TestGyroangle:
    def test_coincident(self):
        with pytest.raises(ValueError):
            ball.gyroangle(X, X, np.zeros(2), 1.0)

    def test_at_origin_is_euclidean(self):
        b, c = np.array([0.5, 0.0]), np.array([0.0, 0.3])
        assert_allclose(ball.gyroangle(np.zeros(2), b, c, 1.0), math.pi / 2)

    def test_matches_tangent_angle(self):
        rng = np.random.default_rng(10)
        a, b, c = (rand_ball(rng, 100, 3, 0.9) for _ in range(3))
        u, w = ball.log_map(a, b, 1.0), ball.log_map(a, c, 1.0)
        cos = np.sum(u * w, 1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        assert_allclose(ball.gyroangle(a, b, c, 1.0), np.arccos(np.clip(cos, -1, 1)), atol=1e-8)


class TestHyperplanes:
    def test_on_plane_distance_zero(self):
        h = Hyperplane(np.array([0.2, 0.1]), np.array([1.0, 1.0]))
        assert_allclose(ball.hyperplane_distance(h.p, h, 1.0), [0.0], atol=1e-15)

    def test_euclidean_limit(self):
        rng = np.random.default_rng(11)
        x, a = rng.uniform(-0.5, 0.5, (50, 3)), rng.normal(size=3)
        h = Hyperplane(np.zeros(3), a)
        expected = 2 * np.abs(x @ a) / np.linalg.norm(a)
        assert_allclose(ball.hyperplane_distance(x, h, 1e-8)[:, 0], expected, rtol=1e-5)

    def test_contains(self):
        rng = np.random.default_rng(12)
        p = rand_ball(rng, 1, 3, 0.6)[0]
        h = Hyperplane(p, rng.normal(size=3))
        a = h.normal(1.0)
        z = rng.normal(size=(20, 3))
        z -= np.outer(z @ a, a) / (a @ a)
        z *= 0.5
        assert ball.hyperplane_contains(p, h, 1.0)
        assert np.all(ball.hyperplane_contains(ball.exp_map(p, z, 1.0), h, 1.0, tol=1e-12))
        assert not ball.hyperplane_contains(ball.exp_map(p, a / np.linalg.norm(a), 1.0), h, 1.0)

    def test_brute_force_lower_bound(self):
        from gyronet.props import hyperplane_brute_force

        gaps = hyperplane_brute_force(0, n_cases=20)
        assert np.all(gaps >= -1e-9)
        assert np.all(gaps < 1e-3)

    def test_zero_normal_rejected(self):
        with pytest.raises(ValueError):
            Hyperplane(np.zeros(2), np.zeros(2)).normal(1.0)


class TestMobiusLinear:
    def test_identity(self):
        x = np.array([0.3, -0.2, 0.5])
        assert_allclose(ball.mobius_matvec(np.eye(3), x, 1.0), x, rtol=1e-14)

    def test_rotation(self):
        th = 0.7
        m = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        x = np.array([0.3, -0.6])
        assert_allclose(ball.mobius_matvec(m, x, 1.0), m @ x, rtol=1e-13)

    def test_associativity(self):
        rng = np.random.default_rng(13)
        m1, m2 = rng.normal(size=(4, 3)), rng.normal(size=(3, 5))
        x = rand_ball(rng, 50, 5, 0.9)
        lhs = ball.mobius_matvec(m1 @ m2, x, 1.0)
        rhs = ball.mobius_matvec(m1, ball.mobius_matvec(m2, x, 1.0), 1.0)
        assert_allclose(lhs, rhs, atol=1e-10)

    def test_zero_matrix(self):
        assert_allclose(ball.mobius_matvec(np.zeros((2, 2)), X, 1.0), [0.0, 0.0])

    def test_diag_matches_dense(self):
        rng = np.random.default_rng(14)
        d = rng.uniform(0, 1, 3)
        x = rand_ball(rng, 20, 3, 0.9)
        assert_allclose(ball.mobius_diag(d, x, 1.0), ball.mobius_matvec(np.diag(d), x, 1.0), rtol=1e-13)

    def test_fn_identity(self):
        x = np.array([0.3, -0.2])
        assert_allclose(ball.mobius_fn_apply(lambda v: v, x, 1.0), x, rtol=1e-14)

    def test_fn_morphism(self):
        rng = np.random.default_rng(15)
        a1, b1, a2, b2 = rng.normal(size=(3, 3)), rng.normal(size=3), rng.normal(size=(3, 3)), rng.normal(size=3)

        def f(v):
            return v @ a1.T + b1

        def g(v):
            return v @ a2.T + b2

        x = rand_ball(rng, 20, 3, 0.5)
        lhs = ball.mobius_fn_apply(lambda v: f(g(v)), x, 1.0)
        rhs = ball.mobius_fn_apply(f, ball.mobius_fn_apply(g, x, 1.0), 1.0)
        assert_allclose(lhs, rhs, atol=1e-9)

    def test_fn_direction_preserving(self):
        rng = np.random.default_rng(16)
        m = rng.normal(size=(3, 3))
        x = rand_ball(rng, 20, 3, 0.9)
        out = ball.mobius_fn_apply(lambda v: v @ m.T, x, 1.0)
        mx = x @ m.T
        assert_allclose(out / np.linalg.norm(out, axis=1, keepdims=True),
                        mx / np.linalg.norm(mx, axis=1, keepdims=True), atol=1e-12)


class TestGyroderivative:
    def test_constant_curve(self):
        x = np.array([0.3, 0.2])
        assert_allclose(ball.gyroderivative_numeric(lambda t: x, 0.3, 1.0), [0.0, 0.0], atol=1e-9)

    def test_geodesic_at_zero(self):
        x, y = np.array([0.3, 0.2]), np.array([-0.4, 0.5])
        g = ball.gyroderivative_numeric(lambda t: ball.geodesic(x, y, t, 1.0), 0.0, 1.0)
        assert_allclose(g, ball.mobius_add(-x, y, 1.0), rtol=1e-6)

    def test_chain_rule(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            x, y = rand_ball(rng, 1, 3, 0.8)[0], rand_ball(rng, 1, 3, 0.8)[0]
            t = rng.uniform(0.2, 0.9)

            def h(s, x=x, y=y):
                return ball.geodesic(x, y, s, 1.0)

            lhs = ball.gyroderivative_numeric(lambda s: h(s * s), t, 1.0)
            rhs = ball.mobius_scalar(2 * t, ball.gyroderivative_numeric(h, t * t, 1.0), 1.0)
            assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-3


class TestSafety:
    def test_interior_unchanged(self):
        x = np.array([0.3, 0.2])
        assert np.array_equal(ball.project_to_ball(x, 1.0), x)

    def test_projection_radius(self):
        out = ball.project_to_ball(np.array([2.0, 0.0]), 1.0)
        assert_allclose(np.linalg.norm(out), 1 - 1e-5, rtol=1e-15)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ball.project_to_ball(np.array([np.nan, 0.0]), 1.0)

    def test_perturb_origin(self):
        out = ball.perturb_origin(np.zeros((2, 3)))
        assert np.all(out[:, 0] == 1e-15) and np.all(out[:, 1:] == 0)
        x = np.array([0.1, 0.0])
        assert np.array_equal(ball.perturb_origin(x), x)

    def test_safe_tanh_atanh(self):
        assert ball.safe_tanh(0.0) == 0.0
        assert ball.safe_tanh(100.0) == np.tanh(15.0)
        assert ball.safe_atanh(1.0) == np.arctanh(1 - 1e-5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SafetyConfig(ball_eps=0.0)
        with pytest.raises(ValueError):
            SafetyConfig(atanh_clamp=1.0)

    def test_outputs_stay_in_ball(self):
        x = np.array([0.999999, 0.0])
        y = np.array([0.9999, 0.001])
        out = ball.mobius_add(x, y, 1.0)
        assert ball.in_ball(out, 1.0, DEFAULT_SAFETY)
