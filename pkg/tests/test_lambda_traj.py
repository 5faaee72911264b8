import math

import numpy as np
import pytest

from tvcbf.barrier import BarrierFn, ShiftableCbf
from tvcbf.catalog import get_example
from tvcbf.classk import Linear, SignedSqrt, linear, piecewise, signed_sqrt
from tvcbf.errors import AssumptionViolationError, CompositionRefusedError, DomainError, InvalidInputError, RangeError
from tvcbf.lambda_traj import (
    LambdaTrajectory,
    Segment,
    check_rate_condition,
    compose_tv_cbf,
    concat,
    deadline_parabola,
    dominated_by,
    max_rate_descent,
    piecewise_linear,
)

INF = math.inf


def const(v, t0=0.0, t1=1.0, Lambda=INF):
    return LambdaTrajectory((Segment(t0, t1, "constant", {"value": v}),), Lambda)


def disk_cbf(Lambda=2.0):
    b = BarrierFn.smooth(lambda x: 1.0 - (x**2).sum(-1), lambda x: -2.0 * x)
    return ShiftableCbf(b, linear(1.0), Lambda)


class TestTrajectory:
    def test_right_continuous_jump(self):
        tr = piecewise_linear([(0, 0.2), (1, 0.2), (1, 0.9), (2, 0.9)], jumps=[1.0])
        assert tr.value(1.0) == pytest.approx(0.9)
        assert tr.left_limit(1.0) == pytest.approx(0.2)
        assert tr.jumps() == [(1.0, 0.2, 0.9)]

    def test_downward_jump_rejected(self):
        with pytest.raises(AssumptionViolationError):
            piecewise_linear([(0, 0.9), (1, 0.9), (1, 0.2), (2, 0.2)], jumps=[1.0])

    def test_downward_jump_between_segments_rejected(self):
        with pytest.raises(AssumptionViolationError):
            concat([const(1.0), const(0.5, 1.0, 2.0)])

    def test_undeclared_jump(self):
        with pytest.raises(InvalidInputError):
            piecewise_linear([(0, 0.2), (1, 0.2), (1, 0.9)])

    def test_range(self):
        with pytest.raises(RangeError):
            piecewise_linear([(0, 0.0), (1, 3.0)], Lambda=2.0)

    def test_gap_rejected(self):
        with pytest.raises(InvalidInputError):
            LambdaTrajectory((Segment(0, 1, "constant", {"value": 0.1}), Segment(1.5, 2, "constant", {"value": 0.1})))

    def test_hold_after_end_and_before_start(self):
        tr = piecewise_linear([(0, 1.0), (2, 0.5)])
        assert tr.value(10.0) == pytest.approx(0.5)
        assert tr.rate(10.0) == 0.0
        with pytest.raises(DomainError):
            tr.value(-1.0)

    def test_scalar_matches_vector(self):
        tr = get_example("pendulum").trajectory()
        ts = np.linspace(0, 20, 401)
        assert np.allclose(tr.value(ts), [tr.value(float(t)) for t in ts], rtol=0, atol=1e-13)
        assert np.allclose(tr.rate(ts), [tr.rate(float(t)) for t in ts], rtol=0, atol=1e-13)


class TestConstructors:
    def test_exponential(self):
        tr = max_rate_descent(linear(1.0, (0.0, INF)), 1.0, 0.0, 5.0)
        assert tr.segments[0].kind == "exponential"
        assert tr.value(1.0) == pytest.approx(math.exp(-1.0))

    def test_sqrt_zero_time(self):
        lam0, k = 2.0, 3.0
        tr = max_rate_descent(signed_sqrt(k, (0.0, INF)), lam0, 0.0, 5.0)
        t_star = 2 * math.sqrt(lam0) / k
        assert tr.segments[0].t1 == pytest.approx(t_star, rel=1e-4)
        assert tr.value(t_star) == pytest.approx(0.0, abs=1e-12)
        assert tr.value(t_star / 2) > 0

    def test_sqrt_zero_time_numeric_path(self):
        # two identical sqrt pieces force the RK4 path
        lam0, k = 2.0, 3.0
        a = piecewise([(0.0, SignedSqrt(k)), (0.5, SignedSqrt(k))], (0.0, INF), "concave")
        tr = max_rate_descent(a, lam0, 0.0, 5.0, dt=1e-5)
        assert tr.segments[0].kind == "ode"
        t_star = 2 * math.sqrt(lam0) / k
        assert tr.segments[0].t1 == pytest.approx(t_star, rel=1e-4)

    def test_pendulum_descent_on_ode(self):
        ex = get_example("pendulum")
        tr = max_rate_descent(ex.alpha_lambda(), 1.5, 4.0, 10.0)
        # slope 2 above 0.03, slope 1 below
        t_break = 4.0 + 0.5 * math.log((1.5 - 0.015) / (0.03 - 0.015))
        assert tr.value(t_break) == pytest.approx(0.03, rel=2e-3)
        rep = check_rate_condition(tr, ex.alpha_lambda())
        assert rep.passed

    def test_bad_lambda0(self):
        with pytest.raises(RangeError):
            max_rate_descent(linear(1.0, (0.0, INF)), 3.0, 0.0, 1.0, Lambda=2.0)

    def test_deadline_parabola(self):
        tr = deadline_parabola(0.02, 12.0, 5.0)
        assert tr.value(0.0) == pytest.approx(1.44)
        assert tr.value(2.5) == pytest.approx(0.36)
        assert tr.value(5.0) == 0.0

    def test_dominated_by(self):
        tr = piecewise_linear([(0, 1.0), (1, 0.0)])
        assert dominated_by(tr, lambda t: 1.0, np.linspace(0, 1, 11))
        assert not dominated_by(tr, lambda t: 0.5, np.linspace(0, 1, 11))


class TestRate:
    def test_constant_passes(self):
        assert check_rate_condition(const(0.5), linear(1.0, (0.0, INF))).passed

    def test_exponential_equality(self):
        tr = max_rate_descent(linear(2.0, (0.0, INF)), 1.0, 0.0, 3.0)
        rep = check_rate_condition(tr, linear(2.0, (0.0, INF)))
        assert rep.passed
        assert abs(rep.worst_margin) < 1e-12

    def test_linear_too_fast(self):
        tr = piecewise_linear([(0, 1.0), (1, 0.0)])
        rep = check_rate_condition(tr, linear(0.5, (0.0, INF)))
        assert not rep.passed
        # the final instant holds the value, so the worst sample is the last one before it
        assert rep.worst_margin == pytest.approx(-1.0, abs=1e-3)
        assert rep.worst_time == pytest.approx(1.0, abs=1e-3)

    def test_matches_bruteforce_oracle(self):
        ex = get_example("pendulum")
        tr, al = ex.trajectory(), ex.alpha_lambda()
        ts = np.linspace(0, 20, 10_000)
        rep = check_rate_condition(tr, al, time_grid=ts)
        oracle = []
        for t in ts:
            seg = [s for s in tr.segments if s.t0 <= t < s.t1]
            if seg:
                oracle.append(float(seg[0].rate(t)) + float(al(float(seg[0].value(t)))))
            else:
                # held constant from the end on
                oracle.append(float(al(float(tr.segments[-1].value(t)))))
        oracle = np.array(oracle)
        m = dict(zip(rep.times.tolist(), rep.margins.tolist()))
        assert np.allclose([m[t] for t in ts], oracle, atol=1e-10)
        assert rep.passed == bool(np.all(oracle >= -1e-9))


class TestCompose:
    def test_linear_equality_case(self):
        al = linear(1.0, (0.0, 2.0))
        tv = compose_tv_cbf(disk_cbf(), max_rate_descent(linear(1.0, (0.0, INF)), 1.0, 0.0, 3.0, Lambda=2.0), al)
        assert tv.certified
        assert tv.B(0.0, [0.0, 0.0]) == pytest.approx(2.0)

    def test_domination_refused(self):
        al = linear(2.0, (0.0, 2.0))
        tr = const(0.5, Lambda=2.0)
        with pytest.raises(CompositionRefusedError) as err:
            compose_tv_cbf(disk_cbf(), tr, al)
        assert err.value.step == "(1)"

    def test_rate_refused(self):
        tr = piecewise_linear([(0, 1.0), (1, 0.0)], Lambda=2.0)
        with pytest.raises(CompositionRefusedError) as err:
            compose_tv_cbf(disk_cbf(), tr, linear(0.5, (0.0, 2.0)))
        assert err.value.step == "(2)"

    def test_budget_refused(self):
        with pytest.raises(CompositionRefusedError) as err:
            compose_tv_cbf(disk_cbf(Lambda=0.2), const(0.5, Lambda=2.0), linear(1.0, (0.0, 2.0)))
        assert err.value.step == "(1)"

    def test_pendulum(self):
        (tv,) = get_example("pendulum").compose()
        assert tv.certified
        assert tv.certificate["product_grid"]["passed"]

    def test_omni(self):
        tvs = get_example("omni").compose()
        assert len(tvs) == 4
        assert all(tv.certified for tv in tvs)
        assert tvs[0].beta.construction == "shifted-difference"

    def test_unshifted(self):
        tv = compose_tv_cbf(disk_cbf(), const(0.0), linear(1.0, (0.0, 2.0)))
        assert tv.B(0.3, [0.5, 0.0]) == pytest.approx(0.75)
