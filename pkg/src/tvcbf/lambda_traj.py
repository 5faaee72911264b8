"""Shift trajectories lambda(t) and their composition into time-varying CBFs.

A trajectory is a tiling of ``[start, end]`` by analytic segments. Values
are right-continuous; a discontinuity between adjacent segments is a jump
and must go upward. Past the last segment the final value is held.
"""

from __future__ import annotations

import bisect
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .barrier import Dynamics, GridSpec, ShiftableCbf, VERIFY_TOL, sup_directional_batch
from .classk import (
    BetaComposition,
    ClassKeFn,
    Linear,
    Power,
    SignedSqrt,
    _num,
    certify_class_ke,
    check_domination,
    compose_beta_concave,
    compose_beta_convex,
    infer_shape,
)
from .errors import (
    AssumptionViolationError,
    CompositionInfeasibleError,
    CompositionRefusedError,
    DegenerateExtensionError,
    DomainError,
    InvalidInputError,
    RangeError,
)

log = logging.getLogger(__name__)

RATE_TOL = 1e-9
JUMP_TOL = 1e-12
CLAMP = 1e-12
DEFAULT_TIME_POINTS = 101
RATE_GRID = 10_001


@dataclass(frozen=True, eq=False)
class Segment:
    """One smooth piece of a shift trajectory on ``[t0, t1]``.

    Kinds and parameters:

    * ``constant``: ``value``
    * ``linear``: ``v0 + slope (t - t0)``
    * ``parabola``: ``a (t - T)^2``
    * ``exponential``: ``v0 exp(-c (t - t0))``
    * ``table``: linear interpolation through ``ts``, ``vs``
    * ``ode``: RK4 solution of ``lambda' = -alpha(lambda)`` through nodes
      ``ts``, ``vs``; in-between values are RK4 substeps from the last node
    """

    t0: float
    t1: float
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise InvalidInputError(f"segment [{self.t0}, {self.t1}] is empty")
        if self.kind not in ("constant", "linear", "parabola", "exponential", "table", "ode"):
            raise InvalidInputError(f"unknown segment kind {self.kind!r}")

    def value(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        k = self.kind
        if k == "constant":
            return np.full(t.shape, float(p["value"]))
        if k == "linear":
            return p["v0"] + p["slope"] * (t - self.t0)
        if k == "parabola":
            return p["a"] * (t - p["T"]) ** 2
        if k == "exponential":
            return p["v0"] * np.exp(-p["c"] * (t - self.t0))
        if k == "table":
            return np.interp(t, p["ts"], p["vs"])
        return self._ode_value(t)

    def rate(self, t):
        """Forward derivative at ``t``."""
        t = np.asarray(t, dtype=float)
        p = self.params
        k = self.kind
        if k == "constant":
            return np.zeros(t.shape)
        if k == "linear":
            return np.full(t.shape, float(p["slope"]))
        if k == "parabola":
            return 2.0 * p["a"] * (t - p["T"])
        if k == "exponential":
            return -p["c"] * self.value(t)
        if k == "table":
            ts, vs = np.asarray(p["ts"]), np.asarray(p["vs"])
            i = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2)
            return (vs[i + 1] - vs[i]) / (ts[i + 1] - ts[i])
        return -p["alpha"](np.maximum(self._ode_value(t), 0.0))

    def _ode_value(self, t):
        p = self.params
        ts, vs = p["ts"], p["vs"]
        i = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 1)
        h = t - ts[i]
        return _rk4_step(p["alpha"], vs[i], h)

    def to_dict(self) -> dict:
        p = dict(self.params)
        if self.kind == "ode":
            p = {"alpha": p["alpha"].to_dict(), "dt": p["dt"], "v0": float(p["vs"][0])}
        elif self.kind == "table":
            p = {"ts": list(map(float, p["ts"])), "vs": list(map(float, p["vs"]))}
        return {"t0": self.t0, "t1": self.t1, "kind": self.kind, **p}


def _rk4_step(alpha: ClassKeFn, v, h):
    def f(y):
        return -alpha(np.maximum(y, 0.0))

    v = np.asarray(v, dtype=float)
    k1 = f(v)
    k2 = f(v + 0.5 * h * k1)
    k3 = f(v + 0.5 * h * k2)
    k4 = f(v + h * k3)
    out = v + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return np.where(out < CLAMP, 0.0, out)


@dataclass(frozen=True, eq=False)
class LambdaTrajectory:
    """Piecewise-smooth shift trajectory with range bound ``Lambda``."""

    segments: tuple
    Lambda: float = math.inf

    def __post_init__(self):
        segs = self.segments
        if not segs:
            raise InvalidInputError("trajectory needs at least one segment")
        for a, b in zip(segs, segs[1:]):
            if abs(a.t1 - b.t0) > 1e-12:
                raise InvalidInputError(f"segments leave a gap or overlap at t={a.t1}")
        for a, b in zip(segs, segs[1:]):
            left = float(a.value(b.t0))
            right = float(b.value(b.t0))
            if right < left - JUMP_TOL:
                raise AssumptionViolationError(
                    f"downward jump at t={b.t0} from {left:.6g} to {right:.6g}; only upward jumps are admissible"
                )
        for s in segs:
            v = s.value(np.linspace(s.t0, s.t1, 201))
            if np.min(v) < -CLAMP or np.max(v) > self.Lambda + CLAMP:
                raise RangeError(f"segment on [{s.t0}, {s.t1}] leaves [0, {self.Lambda}]")
        object.__setattr__(self, "_starts", [s.t0 for s in segs])

    def _scalar(self, t: float, what: str) -> float:
        if t < self.start - 1e-12:
            raise DomainError(f"time before trajectory start {self.start}")
        if what == "rate":
            if t >= self.end:
                return 0.0
            i = bisect.bisect_right(self._starts, t) - 1
            return float(self.segments[max(i, 0)].rate(t))
        tt = min(t, self.end)
        find = bisect.bisect_right if what == "value" else bisect.bisect_left
        i = find(self._starts, tt) - 1
        return max(float(self.segments[max(i, 0)].value(tt)), 0.0)

    @property
    def start(self) -> float:
        return self.segments[0].t0

    @property
    def end(self) -> float:
        return self.segments[-1].t1

    @property
    def breakpoints(self) -> list:
        return [s.t0 for s in self.segments] + [self.end]

    def _index(self, t, right=True):
        starts = np.array([s.t0 for s in self.segments])
        side = "right" if right else "left"
        return np.clip(np.searchsorted(starts, t, side=side) - 1, 0, len(self.segments) - 1)

    def _check(self, t):
        if np.any(t < self.start - 1e-12):
            raise DomainError(f"time before trajectory start {self.start}")

    def __call__(self, t):
        return self.value(t)

    def value(self, t):
        """Right-continuous value; holds the final value after ``end``."""
        if np.ndim(t) == 0:
            return self._scalar(float(t), "value")
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        self._check(t)
        tt = np.minimum(t, self.end)
        idx = self._index(tt)
        out = np.empty(t.shape)
        for i, s in enumerate(self.segments):
            m = idx == i
            if m.any():
                out[m] = s.value(tt[m])
        out = np.clip(out, 0.0, None)
        return float(out[0]) if scalar else out

    def left_limit(self, t):
        if np.ndim(t) == 0:
            return self._scalar(float(t), "left_limit")
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        self._check(t)
        tt = np.minimum(t, self.end)
        idx = self._index(tt, right=False)
        out = np.empty(t.shape)
        for i, s in enumerate(self.segments):
            m = idx == i
            if m.any():
                out[m] = s.value(tt[m])
        out = np.clip(out, 0.0, None)
        return float(out[0]) if scalar else out

    def rate(self, t):
        """Forward derivative ``d lambda(t; 1)``; 0 after ``end``."""
        if np.ndim(t) == 0:
            return self._scalar(float(t), "rate")
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        self._check(t)
        idx = self._index(t)
        out = np.zeros(t.shape)
        for i, s in enumerate(self.segments):
            m = (idx == i) & (t < self.end)
            if m.any():
                out[m] = s.rate(t[m])
        return float(out[0]) if scalar else out

    def jumps(self) -> list:
        """``[(t, left, right), ...]`` for every discontinuity."""
        out = []
        for a, b in zip(self.segments, self.segments[1:]):
            left, right = float(a.value(b.t0)), float(b.value(b.t0))
            if right - left > JUMP_TOL:
                out.append((b.t0, left, right))
        return out

    def max_value(self) -> float:
        return float(max(np.max(s.value(np.linspace(s.t0, s.t1, 201))) for s in self.segments))

    def with_Lambda(self, Lambda: float) -> "LambdaTrajectory":
        return LambdaTrajectory(self.segments, float(Lambda))

    def to_dict(self) -> dict:
        return {"Lambda": _num(self.Lambda), "segments": [s.to_dict() for s in self.segments]}


def concat(trajs: Sequence[LambdaTrajectory], Lambda: float | None = None) -> LambdaTrajectory:
    """Join trajectories whose time ranges abut; validated like any trajectory."""
    segs = tuple(s for tr in trajs for s in tr.segments)
    lam = min(tr.Lambda for tr in trajs) if Lambda is None else Lambda
    return LambdaTrajectory(segs, lam)


# ---------------------------------------------------------------------------
# rate condition


@dataclass
class RateReport:
    passed: bool
    worst_margin: float
    worst_time: float
    violation_times: list
    jump_checks: list
    times: np.ndarray
    margins: np.ndarray

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "worst_margin": _num(self.worst_margin),
            "worst_time": self.worst_time,
            "n_times": int(self.times.size),
            "violation_times": self.violation_times[:100],
            "jumps": [{"t": t, "left": l, "right": r, "upward": ok} for t, l, r, ok in self.jump_checks],
        }


def _time_grid(traj: LambdaTrajectory, time_grid, n: int) -> np.ndarray:
    if time_grid is None:
        g = np.linspace(traj.start, traj.end, n)
    else:
        g = np.asarray(time_grid, dtype=float)
    return np.unique(np.concatenate([g, [s.t0 for s in traj.segments]]))


def check_rate_condition(
    traj: LambdaTrajectory,
    alpha_lambda: ClassKeFn,
    time_grid=None,
    tol: float = RATE_TOL,
) -> RateReport:
    """Check ``d lambda(t; 1) >= -alpha_lambda(lambda(t))`` on a time grid.

    Segment starts are always included. The derivative is the forward one,
    taken from the segment active at ``t``; jump instants are checked for
    the upward direction instead.
    """
    t = _time_grid(traj, time_grid, RATE_GRID)
    lam = traj.value(t)
    margin = traj.rate(t) + alpha_lambda(lam)
    jumps = [(tj, l, r, r > l) for tj, l, r in traj.jumps()]
    bad = np.flatnonzero(margin < -tol)
    i = int(np.argmin(margin))
    return RateReport(
        passed=bad.size == 0 and all(j[3] for j in jumps),
        worst_margin=float(margin[i]),
        worst_time=float(t[i]),
        violation_times=t[bad].tolist(),
        jump_checks=jumps,
        times=t,
        margins=margin,
    )


# ---------------------------------------------------------------------------
# constructors


def _sole_piece(f: ClassKeFn):
    return f.pieces[0] if len(f.pieces) == 1 else None


def max_rate_descent(
    alpha_lambda: ClassKeFn,
    lambda0: float,
    t0: float,
    horizon: float,
    dt: float | None = None,
    Lambda: float = math.inf,
) -> LambdaTrajectory:
    """Fastest admissible decrease: ``lambda' = -alpha_lambda(lambda)`` from ``lambda0``.

    Linear ``alpha_lambda`` gives an exponential, ``k sqrt`` a parabola
    reaching 0 at ``t0 + 2 sqrt(lambda0) / k``; anything else is integrated
    with fixed-step RK4 (default step ``1e-3 (horizon - t0)``) and clamped
    to 0 once it drops below 1e-12.
    """
    lambda0 = float(lambda0)
    if not lambda0 > 0 or lambda0 > Lambda:
        raise RangeError(f"lambda0={lambda0} must lie in (0, {Lambda}]")
    if not horizon > t0:
        raise InvalidInputError("horizon must exceed t0")
    cert = certify_class_ke(alpha_lambda, 2001, interval=(0.0, lambda0))
    if not (cert.zero_at_zero and cert.monotone) or alpha_lambda.domain[0] > 0:
        raise InvalidInputError("alpha_lambda is not a class-K function on [0, lambda0]")

    piece = _sole_piece(alpha_lambda)
    if isinstance(piece, Linear) and piece.intercept == 0.0:
        seg = Segment(t0, horizon, "exponential", {"v0": lambda0, "c": piece.slope})
        return LambdaTrajectory((seg,), Lambda)
    k = None
    if isinstance(piece, SignedSqrt):
        k = piece.coef
    elif isinstance(piece, Power) and piece.exponent == 0.5:
        k = piece.coef
    if k is not None:
        T = t0 + 2.0 * math.sqrt(lambda0) / k
        segs = [Segment(t0, min(T, horizon), "parabola", {"a": k * k / 4.0, "T": T})]
        if T < horizon:
            segs.append(Segment(T, horizon, "constant", {"value": 0.0}))
        return LambdaTrajectory(tuple(segs), Lambda)

    dt = 1e-3 * (horizon - t0) if dt is None else float(dt)
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    n = int(math.ceil((horizon - t0) / dt - 1e-9))
    ts = t0 + dt * np.arange(n + 1)
    ts[-1] = horizon
    vs = np.empty(n + 1)
    vs[0] = lambda0
    zero_at = None
    for i in range(n):
        vs[i + 1] = _rk4_step(alpha_lambda, vs[i], ts[i + 1] - ts[i])
        if vs[i + 1] == 0.0:
            zero_at = i + 1
            break
    if zero_at is None:
        return LambdaTrajectory((Segment(t0, horizon, "ode", {"alpha": alpha_lambda, "ts": ts, "vs": vs, "dt": dt}),), Lambda)
    tz = ts[zero_at]
    segs = [Segment(t0, tz, "ode", {"alpha": alpha_lambda, "ts": ts[: zero_at + 1], "vs": vs[: zero_at + 1], "dt": dt})]
    if tz < horizon:
        segs.append(Segment(tz, horizon, "constant", {"value": 0.0}))
    return LambdaTrajectory(tuple(segs), Lambda)


def deadline_parabola(R: float, u_max: float, T: float, horizon: float | None = None, Lambda: float = math.inf) -> LambdaTrajectory:
    """``(R u_max)^2 (t - T)^2`` on ``[0, T]``, then 0 up to ``horizon``."""
    if not (R > 0 and u_max > 0 and T > 0):
        raise RangeError("R, u_max and T must be positive")
    segs = [Segment(0.0, T, "parabola", {"a": (R * u_max) ** 2, "T": T})]
    if horizon is not None and horizon > T:
        segs.append(Segment(T, horizon, "constant", {"value": 0.0}))
    return LambdaTrajectory(tuple(segs), Lambda)


def piecewise_linear(knots, jumps=(), Lambda: float = math.inf) -> LambdaTrajectory:
    """Linear interpolation through ``(t, value)`` knots.

    A jump at ``t`` is written as two knots with the same time (left value
    first) and must be listed in ``jumps``.
    """
    knots = [(float(t), float(v)) for t, v in knots]
    jumps = {float(t) for t in jumps}
    if len(knots) < 2:
        raise InvalidInputError("need at least two knots")
    if any(t2 < t1 for (t1, _), (t2, _) in zip(knots, knots[1:])):
        raise InvalidInputError("knots must be time-sorted")
    for t, v in knots:
        if v < 0 or v > Lambda:
            raise RangeError(f"knot value {v} at t={t} outside [0, {Lambda}]")
    segs = []
    seen = set()
    for (t1, v1), (t2, v2) in zip(knots, knots[1:]):
        if t2 == t1:
            if t1 not in jumps:
                raise InvalidInputError(f"repeated knot time {t1} is not a declared jump")
            if v2 < v1:
                raise AssumptionViolationError(f"downward jump at t={t1} from {v1} to {v2}")
            seen.add(t1)
            continue
        slope = (v2 - v1) / (t2 - t1)
        if slope == 0.0:
            segs.append(Segment(t1, t2, "constant", {"value": v1}))
        else:
            segs.append(Segment(t1, t2, "linear", {"v0": v1, "slope": slope}))
    missing = jumps - seen
    if missing:
        raise InvalidInputError(f"declared jumps {sorted(missing)} have no matching repeated knot")
    return LambdaTrajectory(tuple(segs), Lambda)


def dominated_by(traj: LambdaTrajectory, lambda_h: Callable, time_grid) -> bool:
    """True iff ``traj(t) <= lambda_h(t) + 1e-12`` on every grid time."""
    t = np.asarray(time_grid, dtype=float)
    h = np.asarray([lambda_h(s) for s in t], dtype=float)
    return bool(np.all(traj.value(t) <= h + 1e-12))


# ---------------------------------------------------------------------------
# composition


@dataclass(frozen=True, eq=False)
class TimeVaryingCbf:
    """``B(t, x) = b(x) + lambda(t)`` with its certified comparison bound ``beta``."""

    shiftable: ShiftableCbf
    traj: LambdaTrajectory
    alpha_lambda: ClassKeFn
    beta: BetaComposition
    certified: bool
    certificate: dict

    def B(self, t, x):
        return self.shiftable.barrier(x) + self.traj.value(t)

    def b(self, x):
        return self.shiftable.barrier(x)

    def lam(self, t):
        return self.traj.value(t)


def _shape_of(f: ClassKeFn, A: float) -> str:
    span = A if math.isfinite(A) else 10.0
    if f.shape in ("linear", "convex", "concave"):
        cert = certify_class_ke(f, interval=(0.0, span))
        if cert.passed:
            return f.shape
    return infer_shape(f, 0.0, span)


def compose_tv_cbf(
    cbf: ShiftableCbf,
    traj: LambdaTrajectory,
    alpha_lambda: ClassKeFn,
    dyn: Dynamics | None = None,
    state_grid: GridSpec | None = None,
    time_grid=None,
    tol: float = VERIFY_TOL,
) -> TimeVaryingCbf:
    """Compose ``b + lambda`` into a time-varying CBF, refusing on any failed step.

    The bound ``A`` is the smaller of the trajectory's and the barrier's
    budgets. With dynamics and a state grid, both inequality chains

    ``sup db - alpha_lambda(lambda) >= -beta(b + lambda)`` and
    ``sup db + d lambda >= -beta(b + lambda)``

    are audited on the product of the time grid (101 points by default)
    and the grid points with ``b >= -A``.
    """
    A = min(float(traj.Lambda), float(cbf.Lambda))
    top = traj.max_value()
    if top == 0.0:
        return _compose_unshifted(cbf, traj, alpha_lambda, dyn, state_grid, time_grid, tol)
    if not A > 0:
        raise CompositionRefusedError("(1)", "shift budget is zero")
    if top > A + CLAMP:
        raise CompositionRefusedError("(1)", f"trajectory reaches {top:.6g} above the budget {A:.6g}")
    cert_al = certify_class_ke(alpha_lambda, interval=(0.0, A if math.isfinite(A) else 10.0))
    if not (cert_al.zero_at_zero and cert_al.monotone):
        raise CompositionRefusedError("(1)", f"alpha_lambda is not class K ({cert_al.violation_kind})")
    shape = _shape_of(alpha_lambda, A)
    if shape not in ("linear", "convex", "concave"):
        raise CompositionRefusedError("(1)", "alpha_lambda is neither convex nor concave; supply another")
    dom = check_domination(cbf.alpha, alpha_lambda, A)
    if not dom.holds:
        raise CompositionRefusedError(
            "(1)", f"alpha(-xi) <= -alpha_lambda(xi) fails at xi={dom.worst_xi:.6g} (margin {dom.margin:.3g})"
        )
    rate = check_rate_condition(traj, alpha_lambda)
    if not rate.passed:
        raise CompositionRefusedError(
            "(2)", f"rate condition fails at t={rate.worst_time:.6g} (margin {rate.worst_margin:.3g})"
        )
    try:
        if shape == "convex" or (shape == "linear" and math.isfinite(A)):
            beta = compose_beta_convex(cbf.alpha, alpha_lambda, A)
        else:
            beta = compose_beta_concave(cbf.alpha, alpha_lambda, A)
    except (CompositionInfeasibleError, DegenerateExtensionError, InvalidInputError) as exc:
        raise CompositionRefusedError("(1)", str(exc)) from exc

    certificate = {
        "A": _num(A),
        "alpha_lambda_shape": shape,
        "domination_margin": dom.margin,
        "rate": rate.to_dict(),
        "beta": beta.to_dict(),
    }
    if dyn is not None and state_grid is not None:
        certificate["product_grid"] = _audit_product_grid(cbf, traj, alpha_lambda, beta, dyn, state_grid, time_grid, A, tol)
        if not certificate["product_grid"]["passed"]:
            pg = certificate["product_grid"]
            raise CompositionRefusedError(
                "certification",
                f"inequality chain fails on the product grid (worst margin {pg['worst_margin']:.3g} at t={pg['worst_t']}, x={pg['worst_x']})",
            )
    return TimeVaryingCbf(cbf, traj, alpha_lambda, beta, True, certificate)


def _compose_unshifted(cbf, traj, alpha_lambda, dyn, state_grid, time_grid, tol):
    # lambda == 0: B = b and alpha itself bounds the condition
    beta = BetaComposition(beta=cbf.alpha, case="none", A=0.0, alpha2_extended=alpha_lambda, construction="identity")
    certificate = {"A": 0.0, "alpha_lambda_shape": "n/a", "domination_margin": 0.0, "beta": beta.to_dict()}
    if dyn is not None and state_grid is not None:
        pg = _audit_product_grid(cbf, traj, alpha_lambda, beta, dyn, state_grid, time_grid, 0.0, tol)
        certificate["product_grid"] = pg
        if not pg["passed"]:
            raise CompositionRefusedError("certification", f"condition fails on the state grid (worst margin {pg['worst_margin']:.3g})")
    return TimeVaryingCbf(cbf, traj, alpha_lambda, beta, True, certificate)


def _audit_product_grid(cbf, traj, alpha_lambda, beta, dyn, grid, time_grid, A, tol):
    t_start = time.perf_counter()
    pts = grid.points()
    b = cbf.barrier(pts)
    keep = b >= -A
    if cbf.domain is not None:
        keep &= np.asarray(cbf.domain(pts), dtype=bool)
    pts, b = pts[keep], b[keep]
    sup = sup_directional_batch(cbf.barrier, dyn, pts)[0] if len(pts) else np.zeros(0)
    ts = np.linspace(traj.start, traj.end, DEFAULT_TIME_POINTS) if time_grid is None else np.asarray(time_grid, float)
    lam = traj.value(ts)
    dlam = traj.rate(ts)
    worst1 = worst2 = math.inf
    where = (None, None)
    for k, t in enumerate(ts):
        rhs = beta.beta(b + lam[k])
        m1 = sup - alpha_lambda(lam[k]) + rhs
        m2 = sup + dlam[k] + rhs
        if m1.size:
            i1 = int(np.argmin(m1))
            worst1 = min(worst1, float(m1[i1]))
            i2 = int(np.argmin(m2))
            if m2[i2] < worst2:
                worst2 = float(m2[i2])
                where = (float(t), pts[i2].tolist())
    worst = min(worst1, worst2)
    return {
        "passed": bool(len(pts)) and worst >= -tol,
        "worst_margin": _num(worst),
        "worst_margin_alpha_lambda_chain": _num(worst1),
        "worst_margin_rate_chain": _num(worst2),
        "worst_t": where[0],
        "worst_x": where[1],
        "n_times": int(ts.size),
        "n_states": int(len(pts)),
        "tol": tol,
        "elapsed_s": round(time.perf_counter() - t_start, 3),
    }
