"""Acceptance criteria; each test prints one PASS/FAIL line before asserting."""

import math
import time

import numpy as np
import pytest

from tvcbf.barrier import GridSpec, sup_directional_batch, verify_shiftable
from tvcbf.catalog import example_catalog, get_example
from tvcbf.classk import Linear, Power, certify_class_ke, compose_beta_concave, compose_beta_convex, linear, piecewise, polynomial, rational
from tvcbf.clf import clarke_gamma, clarke_nonholonomic_clf, lqr_clf
from tvcbf.errors import AssumptionViolationError, CompositionInfeasibleError, CompositionRefusedError
from tvcbf.lambda_traj import LambdaTrajectory, Segment, check_rate_condition, compose_tv_cbf, max_rate_descent, piecewise_linear
from tvcbf.classk import SignedSqrt, signed_sqrt

INF = math.inf
PAIRS = 100_000


def emit(capsys, k, title, ok, detail=""):
    with capsys.disabled():
        print(f"\nCRITERION {k:2d} [{title}]: {'PASS' if ok else 'FAIL'}  {detail}")


def sum_bound_violations(a1, a2, comp, x1, x2):
    lhs = a1(x1) + a2(x2)
    return int(np.count_nonzero(lhs > comp.beta(x1 + x2) + 1e-9))


def convex_triple(rng):
    A = rng.uniform(0.2, 5.0)
    if rng.random() < 0.5:
        c1, q, r = rng.uniform(0.1, 3.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 0.5)
        a2 = polynomial([0.0, c1, q, r], (0.0, INF), "convex")
    else:
        br, s1 = rng.uniform(0.01, 1.0), rng.uniform(0.1, 2.0)
        s2 = s1 + rng.uniform(0.0, 3.0)
        a2 = piecewise([(0.0, Linear(s1)), (br, Linear(s2, (s1 - s2) * br))], (0.0, INF), "convex")
    s_neg = float(a2(A)) / A * (1.0 + rng.uniform(0.0, 0.5))
    if rng.random() < 0.5:
        pos = Linear(rng.uniform(0.1, 5.0))
    else:
        pos = Power(rng.uniform(0.1, 5.0), rng.uniform(0.5, 3.0))
    a1 = piecewise([(-INF, Linear(s_neg)), (0.0, pos)], (-INF, INF))
    return a1, a2, A


def concave_triple(rng, A=None):
    kind = rng.integers(3)
    if A is None:
        A = rng.uniform(0.2, 5.0)
    e = 1.0 + rng.uniform(0.0, 0.5)
    if kind == 0 or math.isinf(A):
        c, s = rng.uniform(0.2, 3.0), rng.uniform(0.2, 5.0)
        a2 = rational(c, s, (0.0, INF))
        neg = Linear(c * e)
    elif kind == 1:
        k, p = rng.uniform(0.2, 3.0), rng.uniform(0.3, 0.9)
        a2 = piecewise([(0.0, Power(k, p))], (0.0, INF), "concave")
        neg = Power(k * e, p)
    else:
        k = rng.uniform(0.2, 3.0)
        a2 = signed_sqrt(k, (0.0, INF))
        neg = SignedSqrt(k * e)
    pos = Linear(rng.uniform(0.1, 5.0)) if rng.random() < 0.5 else Power(rng.uniform(0.1, 5.0), rng.uniform(0.3, 2.0))
    a1 = piecewise([(-INF, neg), (0.0, pos)], (-INF, INF))
    return a1, a2, A


def test_criterion_01_convex_sum_bound(capsys):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    bad = 0
    for _ in range(20):
        a1, a2, A = convex_triple(rng)
        comp = compose_beta_convex(a1, a2, A)
        hi = min(comp.x1_max, 10 * A)
        x1 = rng.uniform(-A, hi, PAIRS)
        x2 = rng.uniform(0, A, PAIRS)
        x1[:100], x2[:100] = -A, A
        bad += sum_bound_violations(a1, a2, comp, x1, x2)
    elapsed = time.perf_counter() - start
    ok = bad == 0 and elapsed < 30
    emit(capsys, 1, "convex sum bound", ok, f"violations={bad} over 20x{PAIRS} pairs, {elapsed:.1f}s (< 30s)")
    assert bad == 0
    assert elapsed < 30


def test_criterion_02_concave_sum_bound(capsys):
    rng = np.random.default_rng(7)
    bad, constructions = 0, set()
    for i in range(20):
        a1, a2, A = concave_triple(rng, INF if i == 0 else None)
        comp = compose_beta_concave(a1, a2, A)
        constructions.add(comp.construction)
        if math.isinf(A):
            x1 = rng.uniform(-1e3, 1e3, PAIRS)
            x2 = rng.uniform(0, 1e3, PAIRS)
            x1[:PAIRS // 2] = -np.exp(rng.uniform(-8, 8, PAIRS // 2))
        else:
            x1 = rng.uniform(-A, 10 * A, PAIRS)
            x2 = rng.uniform(0, A, PAIRS)
            x1[:100], x2[:100] = -A, A
        bad += sum_bound_violations(a1, a2, comp, x1, x2)
    ok = bad == 0
    emit(capsys, 2, "concave sum bound", ok, f"violations={bad}; one unbounded instance; constructions={sorted(constructions)}")
    assert ok


def test_criterion_03_domination_is_necessary(capsys):
    a1 = piecewise([(-INF, Linear(2.0)), (0.0, Linear(1.0))], (-INF, INF))
    a2 = polynomial([0.0, 1.0, 1.0], (0.0, INF), "convex")
    A = 2.0
    with pytest.raises(CompositionInfeasibleError) as err:
        compose_beta_convex(a1, a2, A)
    xs = err.value.witness
    direct = float(a1(-xs) + a2(xs))
    # any class-K_e beta has beta(-x* + x*) = beta(0) = 0
    refused_tv = False
    try:
        traj = LambdaTrajectory((Segment(0.0, 1.0, "constant", {"value": 1.0}),), A)
        from tvcbf.barrier import BarrierFn, ShiftableCbf

        b = BarrierFn.smooth(lambda x: -x[..., 0] ** 2, lambda x: -2.0 * x)
        compose_tv_cbf(ShiftableCbf(b, a1, A), traj, a2)
    except CompositionRefusedError as exc:
        refused_tv = exc.step == "(1)"
    ok = direct > 0 and refused_tv and 0 < xs <= A
    emit(capsys, 3, "domination necessity", ok, f"witness x*={xs:.4g}, alpha1(-x*)+alpha2(x*)={direct:.4g} > beta(0)=0, refused at step (1)={refused_tv}")
    assert ok


def test_criterion_04_counterexample(capsys):
    start = time.perf_counter()
    grid = GridSpec.box([-1, -1], [1, 1], 201)
    ex0 = get_example("counterexample")
    r0 = verify_shiftable(ex0.cbf(), ex0.dynamics(), grid, tol=1e-6)
    ex3 = get_example("counterexample", Lambda=0.3)
    r3 = verify_shiftable(ex3.cbf(), ex3.dynamics(), grid, tol=1e-6)
    elapsed = time.perf_counter() - start
    quadrant = [v["x"] for v in r3.violations if v["x"][0] * v["x"][1] > 0]
    ok = r0.passed and not r3.passed and bool(quadrant) and elapsed < 10
    near = min(quadrant, key=lambda p: (p[0] - 0.8) ** 2 + (p[1] - 0.8) ** 2) if quadrant else None
    emit(
        capsys, 4, "non-shiftable counterexample", ok,
        f"Lambda=0 passed={r0.passed} (worst {r0.worst_margin:.2e}); Lambda=0.3 passed={r3.passed} "
        f"with {len(quadrant)} witnesses in x1x2>0 (nearest to (0.8,0.8): {near}); {elapsed:.1f}s",
    )
    assert r0.passed and not r3.passed and quadrant
    assert elapsed < 10


def test_criterion_05_pendulum(capsys):
    ex = get_example("pendulum")
    clf, dyn = ex.clf(), ex.dynamics()
    pts = GridSpec.box([-1.5, -3.0], [1.5, 3.0], 401).points()
    V = clf.V(pts)
    pts, V = pts[V <= 2.0], V[V <= 2.0]
    # sup_u -dV = sup_u d(-V); the cbf barrier is -V
    sup = sup_directional_batch(ex.cbf().barrier, dyn, pts)[0]
    margin = sup - clf.gamma(V)
    i = int(np.argmin(margin))
    decay_ok = margin[i] >= -1e-4
    res = ex.simulate()
    min_B = min(float(np.min(p.traj.B)) for p in res.phases)
    sim_ok = min_B >= -1e-6
    ok = decay_ok and sim_ok
    emit(
        capsys, 5, "pendulum decay and closed loop", ok,
        f"decay margin min {margin[i]:.4g} at x={pts[i].round(4).tolist()} V={V[i]:.4g} "
        f"({int(np.sum(margin < -1e-4))}/{len(pts)} grid points below -1e-4); closed-loop min B={min_B:.3g}",
    )
    assert sim_ok
    assert decay_ok


def test_criterion_06_lqr(capsys):
    d1 = lqr_clf([[0.0]], [[1.0]], [[1.0]], [[1.0]])
    scalar_ok = abs(d1.P[0, 0] - 1.0) <= 1e-10 and abs(d1.c_gamma - 2.0) <= 1e-10
    ex = get_example("quadcopter")
    d = ex.lqr()
    stable = bool(np.all(np.real(d.closed_loop_eigs) < 0))
    x = np.random.default_rng(11).normal(size=(100, 6))
    Vdot = 2 * np.einsum("ki,ij,kj->k", x, d.P, x @ (d.A - d.B @ d.K).T)
    V = np.einsum("ki,ij,kj->k", x, d.P, x)
    decay = bool(np.all(Vdot <= -d.c_gamma * V + 1e-9))
    c_fit = ex.fit_c_alpha()
    fast = get_example("quadcopter", c_alpha=0.7).simulate().meta["time_to_threshold"]
    slow = ex.simulate().meta["time_to_threshold"]
    ok = scalar_ok and d.residual <= 1e-8 and stable and decay and 0.6 <= c_fit <= 0.8 and fast < slow
    emit(
        capsys, 6, "LQR barrier", ok,
        f"scalar P={d1.P[0, 0]:.12g} c_gamma={d1.c_gamma:.12g}; residual={d.residual:.2e}; stable={stable}; "
        f"decay at 100 states={decay}; fitted c_alpha={c_fit:.2f}; time to waypoint 0.7 vs 0.1: {fast:.2f}s vs {slow:.2f}s",
    )
    assert ok


def test_criterion_07_omni(capsys):
    ex = get_example("omni")
    lam0 = float(ex.deadline_lambda(0.0, ex.spec["T"]).value(0.0))
    res = ex.simulate()
    u_max = max(float(np.max(np.abs(p.traj.u))) for p in res.phases)
    min_B = min(float(np.min(p.traj.B)) for p in res.phases)
    b_T = [float(p.traj.b[-1]) for p in res.phases]
    ok = abs(lam0 - 1.44) < 1e-12 and u_max <= 12 + 1e-9 and min_B >= -1e-6 and min(b_T) >= -1e-6
    emit(capsys, 7, "omni deadlines", ok, f"lambda(0)={lam0:.12g}; max|u|={u_max:.6g}; min B={min_B:.3g}; b(x(T_i))={[round(v, 7) for v in b_T]}")
    assert ok


def test_criterion_08_lambda_machinery(capsys):
    lam0, k = 2.0, 3.0
    t_star = 2 * math.sqrt(lam0) / k
    closed = max_rate_descent(signed_sqrt(k, (0.0, INF)), lam0, 0.0, 5.0).segments[0].t1
    split = piecewise([(0.0, SignedSqrt(k)), (0.5, SignedSqrt(k))], (0.0, INF), "concave")
    numeric = max_rate_descent(split, lam0, 0.0, 5.0, dt=1e-5).segments[0].t1
    rel = max(abs(closed - t_star), abs(numeric - t_star)) / t_star
    up = piecewise_linear([(0, 0.2), (1, 0.2), (1, 0.9), (2, 0.9)], jumps=[1.0])
    try:
        piecewise_linear([(0, 0.9), (1, 0.9), (1, 0.2), (2, 0.2)], jumps=[1.0])
        down_rejected = False
    except AssumptionViolationError:
        down_rejected = True
    ex = get_example("pendulum")
    tr, al = ex.trajectory(), ex.alpha_lambda()
    ts = np.linspace(0, 20, 10_000)
    rep = check_rate_condition(tr, al, time_grid=ts)
    got = dict(zip(rep.times.tolist(), rep.margins.tolist()))
    worst_gap = 0.0
    for t in ts:
        seg = [s for s in tr.segments if s.t0 <= t < s.t1]
        if seg:
            o = float(seg[0].rate(t)) + float(al(float(seg[0].value(t))))
        else:
            o = float(al(float(tr.segments[-1].value(t))))
        worst_gap = max(worst_gap, abs(got[t] - o))
    ok = rel <= 1e-4 and len(up.jumps()) == 1 and down_rejected and worst_gap <= 1e-10
    emit(
        capsys, 8, "shift trajectories", ok,
        f"zero time rel err {rel:.1e} (closed form and RK4); upward jump accepted; downward rejected={down_rejected}; "
        f"rate report vs pointwise oracle max gap {worst_gap:.1e} on 10^4 times",
    )
    assert ok


def _invariance_runs(name, n=10, seed=0):
    ex = get_example(name)
    try:
        ex.compose()  # certification of the catalog configuration
    except CompositionRefusedError as exc:
        return [], f"compose refused: {exc}"
    x0s = ex.sample_x0(np.random.default_rng(seed), n)
    out = []
    for x0 in x0s:
        try:
            res = ex.simulate(x0=x0)
        except CompositionRefusedError:
            out.append((x0, False, False))
            continue
        ok = all(p.report.passed for p in res.phases)
        retry = None
        if not ok:
            fine = ex.simulate(x0=x0, dt=res.meta["dt"] / 10)
            retry = all(p.report.passed for p in fine.phases)
        out.append((x0, ok, retry))
    return out, None


@pytest.mark.slow
def test_criterion_09_forward_invariance(capsys):
    summary, breaches = [], []
    for spec in example_catalog():
        runs, refused = _invariance_runs(spec.name)
        if refused:
            breaches.append((spec.name, refused))
            summary.append(f"{spec.name} refused")
            continue
        first = sum(ok for _, ok, _ in runs)
        fixed = sum(1 for _, ok, r in runs if not ok and r)
        breaches += [(spec.name, x0.tolist()) for x0, ok, r in runs if not ok and not r]
        summary.append(f"{spec.name} {first}/{len(runs)}" + (f" (+{fixed} at dt/10)" if fixed else ""))
    ok = not breaches
    emit(capsys, 9, "forward invariance", ok, "; ".join(summary) + (f"; breaches {breaches}" if breaches else ""))
    assert ok


def test_criterion_10_clarke(capsys):
    x = np.random.default_rng(3).uniform(-3, 3, (10_000, 3))
    posdef = bool(np.all(clarke_nonholonomic_clf().V(x) > 0))
    g = clarke_gamma()
    printed = {1.0: 1.0 / math.sqrt(3), 2.99: 2.99 / math.sqrt(3), 3.01: 1.3 * math.sqrt(3.01), 4.0: 1.3 * 2.0}
    gamma_gap = max(abs(float(g(xi)) - v) for xi, v in printed.items())
    cert = certify_class_ke(g, interval=(0.0, 6.0))
    jump = cert.jumps[0]["magnitude"] if cert.jumps else 0.0
    expected = abs(1.3 * math.sqrt(3) - math.sqrt(3))
    ok = posdef and gamma_gap <= 1e-12 and not cert.continuous and abs(jump - expected) <= 1e-9
    emit(capsys, 10, "nonsmooth CLF", ok, f"V>0 on 10^4 samples={posdef}; gamma max gap {gamma_gap:.1e}; jump at 3 reported with magnitude {jump:.6f} (|1.3 sqrt3 - sqrt3| = {expected:.6f})")
    assert ok
