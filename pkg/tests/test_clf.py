import math

import numpy as np
import pytest
from scipy.linalg import solve_continuous_are

from tvcbf.barrier import BarrierFn, Dynamics, GridSpec, InputSet, ShiftableCbf
from tvcbf.catalog import get_example
from tvcbf.classk import certify_class_ke, linear
from tvcbf.clf import (
    Clf,
    clarke_gamma,
    clarke_nonholonomic_clf,
    clf_to_shiftable,
    estimate_lambda_max,
    least_conservative_linear_alpha,
    lqr_clf,
)
from tvcbf.errors import NotACbfError, SynthesisError


def quad_V(n):
    return BarrierFn.smooth(lambda x: (x**2).sum(-1), lambda x: 2.0 * x, "|x|^2")


def integrator_1d(bound=1.0):
    return Dynamics.control_affine(
        1, InputSet.symmetric(bound, 1), lambda x: np.zeros(np.shape(x)), lambda x: np.ones(np.shape(x) + (1,))
    )


class TestShiftable:
    def test_pendulum(self):
        ex = get_example("pendulum")
        cbf = ex.cbf()
        x = np.array([0.3, -0.2])
        assert cbf.barrier(x) == pytest.approx(-ex.clf().V(x))
        assert cbf.Lambda == 2.0
        assert cbf.alpha(-1.0) == pytest.approx(-1.97)

    def test_linear_unbounded(self):
        cbf = clf_to_shiftable(Clf(quad_V(2), linear(0.7, (0.0, math.inf))))
        assert math.isinf(cbf.Lambda)
        xs = np.linspace(-5, 5, 11)
        assert np.allclose(cbf.alpha(xs), 0.7 * xs)

    def test_offset(self):
        cbf = clf_to_shiftable(Clf(quad_V(2), linear(1.0, (0.0, math.inf))), b_c=0.5, Lambda_max=2.0)
        assert cbf.barrier(np.zeros(2)) == pytest.approx(0.5)
        assert cbf.Lambda == pytest.approx(1.5)

    def test_quadcopter(self):
        cbf = get_example("quadcopter").cbf()
        assert cbf.Lambda == 100.0
        assert cbf.alpha(-2.0) == pytest.approx(-0.2)


class TestLambdaMax:
    def test_unbounded(self):
        assert math.isinf(estimate_lambda_max(Clf(quad_V(2), linear(1.0, (0, math.inf)))))

    def test_unit_ball(self):
        clf = Clf(quad_V(2), linear(1.0, (0, math.inf)), domain=lambda x: (x**2).sum(-1) <= 1.0)
        est = estimate_lambda_max(clf, GridSpec.box([-1.5, -1.5], [1.5, 1.5], 301))
        assert 0.98 <= est <= 1.0

    def test_pendulum(self):
        ex = get_example("pendulum")
        est = estimate_lambda_max(ex.clf(), GridSpec.box([-3, -5], [3, 5], 301))
        assert 1.95 <= est <= 2.0 + 1e-9


class TestLqr:
    def test_scalar(self):
        d = lqr_clf([[0.0]], [[1.0]], [[1.0]], [[1.0]])
        assert d.P[0, 0] == pytest.approx(1.0, abs=1e-10)
        assert d.Qtilde[0, 0] == pytest.approx(2.0, abs=1e-10)
        assert d.c_gamma == pytest.approx(2.0, abs=1e-10)

    def test_lyapunov_case(self):
        d = lqr_clf(-np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(1))
        assert np.allclose(d.P, 0.5 * np.eye(2), atol=1e-12)

    def test_not_stabilizable(self):
        with pytest.raises(SynthesisError):
            lqr_clf(np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(1))

    def test_quadcopter_against_scipy(self):
        d = get_example("quadcopter").lqr()
        P_ref = solve_continuous_are(d.A, d.B, d.Q, d.R)
        assert d.residual <= 1e-8
        assert np.allclose(d.P, P_ref, rtol=1e-9, atol=1e-9)
        assert np.all(np.real(d.closed_loop_eigs) < 0)

    def test_decay_bound_random_states(self):
        d = get_example("quadcopter").lqr()
        x = np.random.default_rng(7).normal(size=(100, 6)) * 3
        xdot = x @ (d.A - d.B @ d.K).T
        Vdot = 2 * np.einsum("ki,ij,kj->k", x, d.P, xdot)
        V = np.einsum("ki,ij,kj->k", x, d.P, x)
        assert np.all(Vdot <= -d.c_gamma * V + 1e-9)

    def test_input_bound_closed_form(self):
        d = get_example("quadcopter").lqr()
        level = 100.0
        z = np.random.default_rng(1).normal(size=(20000, 6))
        z /= np.sqrt(np.einsum("ki,ij,kj->k", z, d.P, z))[:, None]
        sampled = np.abs((math.sqrt(level) * z) @ d.K.T).max()
        assert sampled <= d.input_bound(level) + 1e-9
        assert sampled >= 0.95 * d.input_bound(level)


class TestLinearAlpha:
    def test_single_integrator(self):
        V = BarrierFn.smooth(lambda x: x[..., 0] ** 2, lambda x: 2.0 * x)
        cbf = ShiftableCbf(V.affine_map(-1.0, 0.0), linear(1.0), 1.0)
        grid = GridSpec.box([-1.0], [1.0], 2001)
        c = least_conservative_linear_alpha(cbf, integrator_1d(), grid, refine=0)
        xs = grid.points()[:, 0]
        xs = xs[xs != 0]
        oracle = np.min(2 * np.abs(xs) / xs**2)
        assert oracle == pytest.approx(2.0)
        assert oracle - 0.01 <= c <= oracle

    def test_no_authority(self):
        V = BarrierFn.smooth(lambda x: x[..., 0] ** 2, lambda x: 2.0 * x)
        cbf = ShiftableCbf(V.affine_map(-1.0, 0.0), linear(1.0), 1.0)
        with pytest.raises(NotACbfError):
            least_conservative_linear_alpha(cbf, integrator_1d(0.0), GridSpec.box([-1.0], [1.0], 101))

    def test_quadcopter_fit(self):
        c = get_example("quadcopter").fit_c_alpha()
        assert 0.6 <= c <= 0.8


class TestClarke:
    def test_values(self):
        V = clarke_nonholonomic_clf().V
        assert V(np.zeros(3)) == 0.0
        assert V(np.array([1.0, 0.0, 0.0])) == pytest.approx(1.0)

    def test_gamma(self):
        g = clarke_gamma()
        assert g(1.0) == pytest.approx(1 / math.sqrt(3))
        assert g(4.0) == pytest.approx(2.6)

    def test_gamma_jump_reported(self):
        cert = certify_class_ke(clarke_gamma(), interval=(0.0, 6.0))
        assert not cert.continuous
        assert cert.jumps[0]["magnitude"] == pytest.approx(1.3 * math.sqrt(3) - math.sqrt(3))

    def test_continuity_fix(self):
        cert = certify_class_ke(clarke_gamma(continuity_fix=True), interval=(0.0, 6.0))
        assert cert.continuous and cert.passed

    def test_positive_definite(self):
        x = np.random.default_rng(2).uniform(-3, 3, (10_000, 3))
        V = clarke_nonholonomic_clf().V(x)
        assert np.all(V > 0)
