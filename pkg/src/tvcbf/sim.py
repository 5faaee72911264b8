"""Min-norm safety filter, fixed-step RK4 closed-loop simulation and invariance audits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .barrier import Dynamics, dini_derivative_batch
from .errors import DivergenceError, FilterInfeasibleError, InvalidInputError
from .lambda_traj import TimeVaryingCbf

log = logging.getLogger(__name__)

FEAS_TOL = 1e-12
SOFT_BISECT = 200


@dataclass(frozen=True, eq=False)
class FilterProblem:
    """Pointwise min-norm filter ``min |u - u_nom|^2`` subject to the time-varying CBF condition.

    ``mode`` is ``"hard"`` or ``"soft"``; soft mode penalizes the constraint
    slack ``s`` with ``weight * s^2 / 2`` and never raises.
    """

    nominal: Callable
    tv: TimeVaryingCbf
    dyn: Dynamics
    mode: str = "hard"
    weight: float = 1e4

    def __post_init__(self):
        if self.mode not in ("hard", "soft"):
            raise InvalidInputError("mode must be 'hard' or 'soft'")
        if self.mode == "hard" and not self.tv.certified:
            raise InvalidInputError("hard mode needs a certified time-varying CBF")


@dataclass
class FilterResult:
    u: np.ndarray
    margin: float
    active: bool
    method: str
    violation: float = 0.0


def _box_halfspace(u0, lo, hi, a, c):
    """Project ``u0`` onto ``{lo <= u <= hi, a.u >= c}``.

    The KKT point is ``clip(u0 + mu a)`` for the smallest ``mu >= 0`` with
    ``a.u >= c``; ``a.u(mu)`` is piecewise linear and nondecreasing, so the
    root is found exactly between sorted breakpoints. Returns ``None`` when
    the set is empty.
    """
    u = np.minimum(np.maximum(u0, lo), hi)
    if a @ u >= c:
        return u, 0.0
    nz = a != 0
    with np.errstate(divide="ignore", invalid="ignore"):
        bps = np.concatenate([(lo - u0)[nz] / a[nz], (hi - u0)[nz] / a[nz]])
    bps = np.unique(bps[bps > 0])
    prev_mu, prev_g = 0.0, float(a @ u)
    for mu in bps:
        g = float(a @ np.clip(u0 + mu * a, lo, hi))
        if g >= c:
            mu_star = prev_mu + (c - prev_g) * (mu - prev_mu) / (g - prev_g) if g > prev_g else mu
            return np.clip(u0 + mu_star * a, lo, hi), mu_star
        prev_mu, prev_g = mu, g
    return None, math.inf


def _soft_box_halfspace(u0, lo, hi, a, c, w):
    """Minimize ``|u - u0|^2/2 + w s^2/2`` with ``s >= c - a.u``, ``s >= 0`` over the box."""
    u = np.clip(u0, lo, hi)
    if a @ u >= c:
        return u
    # mu = w * max(0, c - a.u(mu)) has a unique root since a.u(mu) is nondecreasing
    lo_mu, hi_mu = 0.0, w * (c - float(a @ u))
    for _ in range(SOFT_BISECT):
        mid = 0.5 * (lo_mu + hi_mu)
        r = mid - w * max(0.0, c - float(a @ np.clip(u0 + mid * a, lo, hi)))
        lo_mu, hi_mu = (mid, hi_mu) if r < 0 else (lo_mu, mid)
    return np.clip(u0 + hi_mu * a, lo, hi)


def filter_step(prob: FilterProblem, t: float, x) -> FilterResult:
    """Filtered input at ``(t, x)`` with diagnostics."""
    x = np.asarray(x, dtype=float)
    tv, dyn = prob.tv, prob.dyn
    U = dyn.input_set
    u0 = np.atleast_1d(np.asarray(prob.nominal(t, x), dtype=float))
    bar = tv.shiftable.barrier
    b = float(bar(x))
    lam = float(tv.traj.value(t))
    dlam = float(tv.traj.rate(t))
    rhs = -float(tv.beta.beta(b + lam)) - dlam
    grad, count = bar.gradient(x[None])

    if dyn.affine and U.kind == "box" and count[0] == 1:
        g = grad[0]
        a = dyn.input_matrix(x).T @ g
        c = rhs - float(g @ dyn.drift(x))
        u, mu = _box_halfspace(u0, U.lower, U.upper, a, c)
        if u is None:
            if prob.mode == "hard":
                raise FilterInfeasibleError(t, x, "no input in U satisfies the barrier condition")
            u = _soft_box_halfspace(u0, U.lower, U.upper, a, c, prob.weight)
            margin = float(a @ u - c)
            return FilterResult(u, margin, True, "affine-soft", max(0.0, -margin))
        return FilterResult(u, float(a @ u - c), mu > 0, "affine")

    cands = U.candidates()
    vals = dini_derivative_batch(bar, np.broadcast_to(x, (len(cands), x.size)), dyn.f(np.broadcast_to(x, (len(cands), x.size)), cands))
    margins = vals - rhs
    u_nom = U.clip(u0)
    nom_margin = float(dini_derivative_batch(bar, x[None], dyn.f(x[None], u_nom[None]))[0] - rhs)
    if nom_margin >= -FEAS_TOL:
        return FilterResult(u_nom, nom_margin, False, "sampled")
    ok = margins >= -FEAS_TOL
    if np.any(ok):
        dist = np.linalg.norm(cands - u0, axis=1)
        dist[~ok] = np.inf
        k = int(np.argmin(dist))
        return FilterResult(cands[k], float(margins[k]), True, "sampled")
    if prob.mode == "hard":
        raise FilterInfeasibleError(t, x, "no sampled input satisfies the barrier condition")
    k = int(np.argmax(margins))
    return FilterResult(cands[k], float(margins[k]), True, "sampled-soft", float(-margins[k]))


def safety_filter(prob: FilterProblem, t: float, x) -> np.ndarray:
    """Input closest to the nominal one that satisfies the barrier condition."""
    return filter_step(prob, t, x).u


def filtered_controller(prob: FilterProblem) -> Callable:
    return lambda t, x: safety_filter(prob, t, x)


# ---------------------------------------------------------------------------
# integration


@dataclass
class Trajectory:
    """Sampled closed-loop record. ``b``, ``lam`` and ``B`` are NaN without a barrier."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    b: np.ndarray
    lam: np.ndarray
    B: np.ndarray
    dt: float
    dt_ctrl: float | None
    jump_records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    def header(self) -> list:
        return ["t", *(f"x{i + 1}" for i in range(self.n)), *(f"u{j + 1}" for j in range(self.m)), "b", "lambda", "B"]

    def rows(self):
        for k in range(len(self.t)):
            yield [self.t[k], *self.x[k], *self.u[k], self.b[k], self.lam[k], self.B[k]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([f"{v:.17g}" for v in row])

    def summary(self, u_bound: float | None = None) -> dict:
        out = {
            "n_samples": int(len(self.t)),
            "t_end": float(self.t[-1]),
            "min_B": float(np.nanmin(self.B)) if np.any(np.isfinite(self.B)) else None,
            "max_abs_u": float(np.max(np.abs(self.u))) if self.u.size else 0.0,
        }
        if u_bound is not None:
            out["u_within_bound"] = bool(out["max_abs_u"] <= u_bound + 1e-9)
        return out


def _rk4(f, t, x, h, t_last):
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t_last, x + h * k3)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _time_grid(t0, t1, dt, events):
    n = int(math.ceil((t1 - t0) / dt - 1e-9))
    grid = t0 + dt * np.arange(n + 1)
    grid[-1] = t1
    ev = [e for e in events if t0 < e < t1]
    grid = np.unique(np.concatenate([grid, ev]))
    # drop slivers created by events landing next to a regular node
    keep = np.concatenate([[True], np.diff(grid) > 1e-12])
    return grid[keep]


def integrate(
    dyn: Dynamics,
    controller: Callable,
    x0,
    t_span,
    dt: float,
    dt_ctrl: float | None = None,
    tv: TimeVaryingCbf | None = None,
    events=(),
    max_abs: float = 1e8,
) -> Trajectory:
    """Fixed-step RK4 simulation of ``x' = f(x, controller(t, x))``.

    With ``dt_ctrl=None`` the controller is evaluated at every RK4 stage
    (continuous state feedback); otherwise its output is held for
    ``dt_ctrl``. Trajectory breakpoints and ``events`` are inserted into
    the step grid so jumps are applied exactly; the last stage of a step
    is evaluated just before the step end, so it sees the pre-jump
    trajectory value.
    """
    t0, t1 = map(float, t_span)
    if not (dt > 0 and t1 > t0):
        raise InvalidInputError("need dt > 0 and a nonempty time span")
    if dt_ctrl is not None and dt_ctrl < dt - 1e-15:
        raise InvalidInputError("dt_ctrl must be >= dt")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (dyn.n,) or not np.all(np.isfinite(x)):
        raise InvalidInputError("x0 must be a finite state vector of the system dimension")
    ev = list(events)
    if tv is not None:
        ev += tv.traj.breakpoints
    if dt_ctrl is not None:
        ev += list(np.arange(t0, t1, dt_ctrl))
    grid = _time_grid(t0, t1, dt, ev)

    held = {"t": -math.inf, "u": None, "step": None}

    def control(t, xs):
        if dt_ctrl is None:
            return np.atleast_1d(np.asarray(controller(t, xs), dtype=float))
        # inside a step the slot is fixed by the step start; slot times are grid nodes
        ref = t if held["step"] is None else held["step"]
        slot = t0 + math.floor((ref - t0) / dt_ctrl + 1e-9) * dt_ctrl
        if slot != held["t"]:
            held["t"], held["u"] = slot, np.atleast_1d(np.asarray(controller(slot, xs), dtype=float))
        return held["u"]

    def rhs(t, xs):
        return np.asarray(dyn.f(xs, control(t, xs)), dtype=float)

    ts, xs, us = [grid[0]], [x.copy()], [control(grid[0], x)]
    for k in range(len(grid) - 1):
        t, h = grid[k], grid[k + 1] - grid[k]
        held["step"] = t
        x = _rk4(rhs, t, x, h, np.nextafter(grid[k + 1], -np.inf))
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > max_abs:
            part = _finish(dyn, ts, xs, us, tv, dt, dt_ctrl)
            raise DivergenceError(f"state diverged at t={grid[k + 1]:.6g}", part)
        held["step"] = None
        ts.append(grid[k + 1])
        xs.append(x.copy())
        us.append(control(grid[k + 1], x))
    return _finish(dyn, ts, xs, us, tv, dt, dt_ctrl)


def _finish(dyn, ts, xs, us, tv, dt, dt_ctrl) -> Trajectory:
    t = np.asarray(ts)
    X = np.asarray(xs)
    U = np.asarray(us).reshape(len(t), -1)
    jumps = []
    if tv is not None:
        b = np.asarray(tv.b(X), dtype=float)
        lam = tv.traj.value(t)
        for tj, left, right in tv.traj.jumps():
            idx = np.flatnonzero(t == tj)
            if idx.size:
                bj = float(b[idx[0]])
                jumps.append({"t": tj, "b": bj, "lambda_left": left, "lambda_right": right, "B_left": bj + left, "B_right": bj + right})
    else:
        b = lam = np.full(len(t), np.nan)
    return Trajectory(t, X, U, b, lam, b + lam, dt, dt_ctrl, jumps)


# ---------------------------------------------------------------------------
# auditing


@dataclass
class InvarianceReport:
    passed: bool
    min_B: float
    min_B_time: float
    initial_B: float
    first_violation: float | None
    tol: float
    jumps_upward: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def invariance_report(traj: Trajectory, tv: TimeVaryingCbf, tol: float | None = None) -> InvarianceReport:
    """Audit ``B(t, x(t)) >= -tol`` at every sample, including ``x0 in C(0)``.

    ``B`` is recomputed from the states; the default tolerance is
    ``1e-6 max(1, Lambda)``.
    """
    if tol is None:
        lam_bound = tv.traj.Lambda if math.isfinite(tv.traj.Lambda) else tv.traj.max_value()
        tol = 1e-6 * max(1.0, lam_bound)
    B = np.asarray(tv.b(traj.x), dtype=float) + tv.traj.value(traj.t)
    lefts = [j["B_left"] for j in traj.jump_records]
    bad = np.flatnonzero(B < -tol)
    first = float(traj.t[bad[0]]) if bad.size else None
    if first is None and any(v < -tol for v in lefts):
        first = float(next(j["t"] for j in traj.jump_records if j["B_left"] < -tol))
    i = int(np.argmin(B))
    upward = all(r > l for _, l, r in tv.traj.jumps())
    return InvarianceReport(
        passed=first is None and upward,
        min_B=float(B[i]),
        min_B_time=float(traj.t[i]),
        initial_B=float(B[0]),
        first_violation=first,
        tol=tol,
        jumps_upward=upward,
    )
