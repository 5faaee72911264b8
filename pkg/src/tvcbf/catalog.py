"""Example systems: parameters, barrier construction and closed-loop runs.

Every parameter carries a source tag: ``reference`` for the values that
define the example systems, ``default`` for choices made here (waypoints,
deadlines, step sizes, initial states) and ``override`` for user values.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .barrier import (
    BarrierFn,
    Dynamics,
    GridSpec,
    InputSet,
    ShiftableCbf,
    precompose_affine,
    verify_shiftable,
)
from .classk import Linear, SignedSqrt, linear, piecewise, signed_sqrt
from .clf import Clf, clarke_nonholonomic_clf, clf_to_shiftable, least_conservative_linear_alpha, lqr_clf
from .errors import InvalidInputError
from .lambda_traj import (
    LambdaTrajectory,
    Segment,
    TimeVaryingCbf,
    compose_tv_cbf,
    concat,
    max_rate_descent,
    piecewise_linear,
)
from .sim import FilterProblem, Trajectory, filtered_controller, integrate, invariance_report

log = logging.getLogger(__name__)

REFERENCE = "reference"
DEFAULT = "default"
OVERRIDE = "override"


@dataclass(frozen=True)
class Param:
    value: object
    source: str


@dataclass(frozen=True)
class ExampleSpec:
    """Named example with tagged parameters."""

    name: str
    description: str
    params: dict

    def __getitem__(self, key):
        return self.params[key].value

    def source(self, key) -> str:
        return self.params[key].source

    def with_overrides(self, **kw) -> "ExampleSpec":
        unknown = set(kw) - set(self.params)
        if unknown:
            raise InvalidInputError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        params = dict(self.params)
        for k, v in kw.items():
            if v is not None:
                params[k] = Param(v, OVERRIDE)
        return replace(self, params=params)

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if callable(v):
                return getattr(v, "__name__", "callable")
            return v

        return {
            "name": self.name,
            "description": self.description,
            "params": {k: {"value": plain(p.value), "source": p.source} for k, p in self.params.items()},
        }


def _p(value):
    return Param(value, REFERENCE)


def _t(value):
    return Param(value, DEFAULT)


def example_catalog() -> list:
    """All five example definitions with default parameters."""
    return [
        ExampleSpec(
            "omni",
            "three-wheeled omnidirectional robot tracking waypoints by deadlines",
            {
                "L": _p(0.2),
                "R": _p(0.02),
                "u_max": _p(12.0),
                "q": _p(1.0),
                "alpha_mode": _t("tight"),
                "waypoints": _t([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]),
                "T": _t(5.0),
                "point_of_interest": _t([0.5, 0.5]),
                "heading_gain": _t(2.0),
                "nominal": _t("baseline"),
                "x0": _t([0.0, 0.0, 0.0]),
                "dt": _t(2e-3),
                "grid": _t(41),
            },
        ),
        ExampleSpec(
            "pendulum",
            "pendulum with destabilizing damping; barrier from its CLF",
            {
                "g": _p(9.81),
                "l": _p(1.0),
                "d_coef": _p(5.0),
                "u_max": _p(20.0),
                "Lambda": _p(2.0),
                "gamma_break": _p(0.03),
                "gamma_slopes": _p([1.0, 2.0]),
                "horizon": _p(20.0),
                "lambda_knots": _t(
                    {"start": 1.8, "t1": 4.0, "lam1": 1.5, "t2": 10.0, "t3": 14.0, "lam3": 0.4, "jump_to": 1.0, "end": 0.8}
                ),
                "traj_Lambda": _t(1.8),
                "x0": _t([0.6, 0.3]),
                "dt": _t(2e-3),
                "grid": _t(201),
            },
        ),
        ExampleSpec(
            "quadcopter",
            "3-D double integrator under gravity with an LQR barrier",
            {
                "m": _p(1.3),
                "g": _p(9.81),
                "Q": _p(np.eye(6)),
                "R": _p(6.0 * np.eye(3)),
                "Lambda": _p(100.0),
                "du_max": _p(6.5),
                "c_alpha": _p(0.1),
                "c_alpha_fit": _p(0.7),
                "waypoint": _t([1.5, -1.0, 1.0]),
                "x0": _t([0.0] * 6),
                "lambda0": _t(None),
                "threshold": _t(0.05),
                "horizon": _t(40.0),
                "dt": _t(1e-2),
                "grid": _t(20000),
                "seed": _t(0),
            },
        ),
        ExampleSpec(
            "unicycle",
            "waypoint tracking for the nonholonomic integrator with a nonsmooth CLF barrier",
            {
                "u_max": _t(1.0),
                "continuity_fix": _t(False),
                "waypoints": _t([[1.0, 1.0, 0.5], [0.0, 2.0, 0.0], [-1.0, 1.0, -0.5]]),
                "T": _t(10.0),
                "x0": _t([0.0, 0.0, 0.0]),
                "coordinate_map": _t(None),
                "dt": _t(5e-3),
                "grid": _t(31),
            },
        ),
        ExampleSpec(
            "counterexample",
            "planar system whose barrier is a CBF but not shiftable",
            {
                "alpha_slope": _p(4.0),
                "u_max": _p(1.0),
                "Lambda": _p(0.0),
                "horizon": _t(5.0),
                "x0": _t([0.5, -0.3]),
                "dt": _t(1e-3),
                "grid": _t(201),
            },
        ),
    ]


def get_spec(name: str, **overrides) -> ExampleSpec:
    for spec in example_catalog():
        if spec.name == name:
            return spec.with_overrides(**overrides)
    raise InvalidInputError(f"unknown example {name!r}; choose from {[s.name for s in example_catalog()]}")


# ---------------------------------------------------------------------------
# results


@dataclass
class Phase:
    tv: TimeVaryingCbf
    traj: Trajectory
    report: object
    label: str = ""


@dataclass
class SimulationResult:
    name: str
    phases: list
    checks: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(p.report.passed for p in self.phases) and all(bool(v) for v in self.checks.values())

    def combined(self) -> Trajectory:
        """All phases in one record; duplicated phase-start samples are dropped."""
        parts = [self.phases[0].traj]
        for ph in self.phases[1:]:
            parts.append(ph.traj)
        keep = [np.ones(len(parts[0].t), dtype=bool)] + [np.arange(len(p.t)) > 0 for p in parts[1:]]

        def cat(attr):
            return np.concatenate([getattr(p, attr)[k] for p, k in zip(parts, keep)])

        tr = Trajectory(cat("t"), cat("x"), cat("u"), cat("b"), cat("lam"), cat("B"), parts[0].dt, parts[0].dt_ctrl)
        tr.jump_records = [j for p in parts for j in p.jump_records]
        return tr

    def summary(self) -> dict:
        return {
            "example": self.name,
            "passed": self.passed,
            "phases": [
                {"label": p.label, "t0": float(p.traj.t[0]), "t1": float(p.traj.t[-1]), "invariance": p.report.to_dict()}
                for p in self.phases
            ],
            "checks": {k: bool(v) for k, v in self.checks.items()},
            "meta": self.meta,
            "elapsed_s": round(self.elapsed, 3),
        }


# ---------------------------------------------------------------------------
# base example


class Example:
    """Builder shared by the catalog examples."""

    def __init__(self, spec: ExampleSpec):
        self.spec = spec

    @property
    def name(self) -> str:
        return self.spec.name

    def dynamics(self) -> Dynamics:
        raise NotImplementedError

    def cbf(self) -> ShiftableCbf:
        raise NotImplementedError

    def grid(self, resolution=None) -> GridSpec:
        raise NotImplementedError

    def verify(self, grid=None, tol: float = 1e-6):
        return verify_shiftable(self.cbf(), self.dynamics(), grid or self.grid(), tol=tol)

    def compose(self, x0=None, certify: bool = True) -> list:
        """Certified time-varying CBFs, one per phase, for the run from ``x0``."""
        raise NotImplementedError

    def sample_x0(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def nominal(self, phase_index: int) -> Callable:
        m = self.dynamics().m
        return lambda t, x: np.zeros(m)

    def simulate(self, x0=None, dt=None, dt_ctrl=None, certify: bool = False, mode: str = "hard") -> SimulationResult:
        t_start = time.perf_counter()
        x0 = np.asarray(self.spec["x0"] if x0 is None else x0, dtype=float)
        dt = float(self.spec["dt"] if dt is None else dt)
        dyn = self.dynamics()
        phases = []
        x = x0
        for i, (tv, label) in enumerate(self._phase_plan(x0, certify)):
            if tv is None:
                tv = self._phase_cbf(i, x, certify)
            prob = FilterProblem(self.nominal(i), tv, dyn, mode=mode)
            tr = integrate(dyn, filtered_controller(prob), x, (tv.traj.start, tv.traj.end), dt, dt_ctrl, tv=tv)
            phases.append(Phase(tv, tr, invariance_report(tr, tv), label))
            x = tr.x[-1]
        res = SimulationResult(self.name, phases, meta={"dt": dt, "dt_ctrl": dt_ctrl, "x0": x0.tolist()})
        self._post_checks(res)
        res.elapsed = time.perf_counter() - t_start
        return res

    def _phase_plan(self, x0, certify):
        return [(tv, f"phase {i + 1}") for i, tv in enumerate(self.compose(x0, certify))]

    def _phase_cbf(self, i, x, certify):
        raise NotImplementedError

    def _post_checks(self, res: SimulationResult) -> None:
        pass


# ---------------------------------------------------------------------------
# counterexample


class Counterexample(Example):
    def dynamics(self):
        def drift(x):
            r2 = x[..., 0] ** 2 + x[..., 1] ** 2
            return np.stack([r2 * x[..., 1], r2 * x[..., 0]], axis=-1)

        def G(x):
            return np.stack([-x[..., 1], -x[..., 0]], axis=-1)[..., None]

        return Dynamics.control_affine(2, InputSet.symmetric(self.spec["u_max"], 1), drift, G, "counterexample")

    def cbf(self):
        b = BarrierFn.smooth(lambda x: 1.0 - x[..., 0] ** 2 - x[..., 1] ** 2, lambda x: -2.0 * x, "1-r^2")
        return ShiftableCbf(b, linear(self.spec["alpha_slope"], name="alpha"), float(self.spec["Lambda"]), name="counterexample")

    def grid(self, resolution=None):
        return GridSpec.box([-1.0, -1.0], [1.0, 1.0], resolution or self.spec["grid"])

    def alpha_lambda(self):
        return linear(self.spec["alpha_slope"], (0.0, math.inf))

    def compose(self, x0=None, certify=True):
        traj = LambdaTrajectory((Segment(0.0, self.spec["horizon"], "constant", {"value": 0.0}),), 0.0)
        kw = {"dyn": self.dynamics(), "state_grid": self.grid(101)} if certify else {}
        return [compose_tv_cbf(self.cbf(), traj, self.alpha_lambda(), **kw)]

    def sample_x0(self, rng, n):
        out = []
        while len(out) < n:
            p = rng.uniform(-1, 1, 2)
            if p @ p <= 1.0:
                out.append(p)
        return np.array(out)


# ---------------------------------------------------------------------------
# pendulum


class Pendulum(Example):
    def dynamics(self):
        g, l, d = self.spec["g"], self.spec["l"], self.spec["d_coef"]

        def drift(x):
            return np.stack([x[..., 1], -(g / l) * np.sin(x[..., 0]) + d * l * x[..., 1]], axis=-1)

        def G(x):
            out = np.zeros(np.shape(x)[:-1] + (2, 1))
            out[..., 1, 0] = 1.0
            return out

        return Dynamics.control_affine(2, InputSet.symmetric(self.spec["u_max"], 1), drift, G, "pendulum")

    def gamma(self):
        br = self.spec["gamma_break"]
        s1, s2 = self.spec["gamma_slopes"]
        return piecewise([(0.0, Linear(s1)), (br, Linear(s2, (s1 - s2) * br))], (0.0, math.inf), "convex", "gamma")

    def clf(self) -> Clf:
        V = BarrierFn.smooth(
            lambda x: 2 * x[..., 0] ** 2 + x[..., 1] ** 2 + 2 * x[..., 0] * x[..., 1],
            lambda x: np.stack([4 * x[..., 0] + 2 * x[..., 1], 2 * x[..., 1] + 2 * x[..., 0]], axis=-1),
            "V",
        )
        lam = self.spec["Lambda"]
        return Clf(V, self.gamma(), domain=lambda x: V(x) <= lam + 1e-12, name="pendulum")

    def cbf(self):
        return clf_to_shiftable(self.clf(), 0.0, self.spec["Lambda"])

    def grid(self, resolution=None):
        return GridSpec.box([-1.5, -3.0], [1.5, 3.0], resolution or self.spec["grid"])

    def alpha_lambda(self):
        g = self.gamma()
        return piecewise(list(zip(g.breakpoints, g.pieces)), (0.0, self.spec["Lambda"]), "convex", "alpha_lambda")

    def trajectory(self) -> LambdaTrajectory:
        k = self.spec["lambda_knots"]
        cap = self.spec["traj_Lambda"]
        first = piecewise_linear([(0.0, k["start"]), (k["t1"], k["lam1"])], Lambda=cap)
        descent = max_rate_descent(self.alpha_lambda(), k["lam1"], k["t1"], k["t2"], Lambda=cap)
        low = float(descent.value(k["t2"]))
        rise = piecewise_linear([(k["t2"], low), (k["t3"], k["lam3"])], Lambda=cap)
        last = piecewise_linear([(k["t3"], k["jump_to"]), (self.spec["horizon"], k["end"])], Lambda=cap)
        return concat([first, descent, rise, last], cap)

    def compose(self, x0=None, certify=True):
        kw = {"dyn": self.dynamics(), "state_grid": self.grid(101)} if certify else {}
        return [compose_tv_cbf(self.cbf(), self.trajectory(), self.alpha_lambda(), **kw)]

    def sample_x0(self, rng, n):
        V = self.clf().V
        lam0 = float(self.trajectory().value(0.0))
        out = []
        while len(out) < n:
            p = rng.uniform([-1.5, -3.0], [1.5, 3.0])
            if V(p) <= lam0:
                out.append(p)
        return np.array(out)


# ---------------------------------------------------------------------------
# omni robot


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


class Omni(Example):
    def wheel_matrix(self):
        L = self.spec["L"]
        c, s = math.cos(math.pi / 6), math.sin(math.pi / 6)
        return np.array([[0.0, c, -c], [-1.0, s, s], [L, L, L]])

    def dynamics(self):
        R = self.spec["R"]
        BinvT = np.linalg.inv(self.wheel_matrix().T)

        def G(x):
            rho = x[..., 2]
            cr, sr = np.cos(rho), np.sin(rho)
            Gam = np.zeros(np.shape(x)[:-1] + (3, 3))
            Gam[..., 0, 0], Gam[..., 0, 1] = cr, -sr
            Gam[..., 1, 0], Gam[..., 1, 1] = sr, cr
            Gam[..., 2, 2] = 1.0
            return R * Gam @ BinvT

        return Dynamics.control_affine(3, InputSet.symmetric(self.spec["u_max"], 3), lambda x: np.zeros(np.shape(x)), G, "omni")

    def alpha_coef(self) -> float:
        R, u, q = self.spec["R"], self.spec["u_max"], self.spec["q"]
        if self.spec["alpha_mode"] == "sqrt2":
            return math.sqrt(2.0) * R * u * math.sqrt(q)
        return 2.0 * R * u * math.sqrt(q)

    def barrier(self, w=(0.0, 0.0)) -> BarrierFn:
        q = self.spec["q"]
        base = BarrierFn.smooth(
            lambda x: -q * (x[..., 0] ** 2 + x[..., 1] ** 2),
            lambda x: np.stack([-2 * q * x[..., 0], -2 * q * x[..., 1], np.zeros(np.shape(x)[:-1])], axis=-1),
            "-|p|^2",
        )
        return precompose_affine(base, np.eye(3), [-w[0], -w[1], 0.0], f"-|p-{list(w)}|^2")

    def cbf(self, w=(0.0, 0.0)):
        return ShiftableCbf(self.barrier(w), signed_sqrt(self.alpha_coef(), name="alpha"), math.inf, name="omni")

    def grid(self, resolution=None):
        r = resolution or self.spec["grid"]
        return GridSpec.box([-2.0, -2.0, -math.pi], [2.0, 2.0, math.pi], r)

    def alpha_lambda(self, Lambda=math.inf):
        return signed_sqrt(self.alpha_coef(), (0.0, Lambda), "alpha_lambda")

    def deadline_lambda(self, t0, t1) -> LambdaTrajectory:
        a = (self.spec["R"] * self.spec["u_max"]) ** 2
        lam0 = a * (t1 - t0) ** 2
        return LambdaTrajectory((Segment(t0, t1, "parabola", {"a": a, "T": t1}),), lam0)

    def phase_times(self):
        T = self.spec["T"]
        return [(i * T, (i + 1) * T) for i in range(len(self.spec["waypoints"]))]

    def compose(self, x0=None, certify=True):
        out = []
        for (t0, t1), w in zip(self.phase_times(), self.spec["waypoints"]):
            traj = self.deadline_lambda(t0, t1)
            kw = {"dyn": self.dynamics(), "state_grid": self._local_grid(w)} if certify else {}
            out.append(compose_tv_cbf(self.cbf(w), traj, self.alpha_lambda(traj.Lambda), **kw))
        return out

    def _local_grid(self, w):
        return GridSpec.box([w[0] - 1.5, w[1] - 1.5, -math.pi], [w[0] + 1.5, w[1] + 1.5, math.pi], (31, 31, 9))

    def nominal(self, phase_index):
        R = self.spec["R"]
        Bt = self.wheel_matrix().T
        poi = np.asarray(self.spec["point_of_interest"], dtype=float)
        k = self.spec["heading_gain"]
        mode = self.spec["nominal"]
        w = np.asarray(self.spec["waypoints"][phase_index], dtype=float)
        coef = self.alpha_coef()

        def ctrl(t, x):
            d = poi - x[:2]
            omega = k * _wrap(math.atan2(d[1], d[0]) - x[2])
            body = np.array([0.0, 0.0, omega])
            if mode == "feedback":
                e = x[:2] - w
                r2 = float(e @ e)
                if r2 > 0:
                    # drives b at exactly the rate alpha(b) allows
                    cr, sr = math.cos(x[2]), math.sin(x[2])
                    speed = -coef * math.sqrt(r2) / (2.0 * r2)
                    body[:2] = speed * np.array([cr * e[0] + sr * e[1], -sr * e[0] + cr * e[1]])
            return Bt @ body / R

        return ctrl

    def sample_x0(self, rng, n):
        w = np.asarray(self.spec["waypoints"][0], dtype=float)
        radius = self.spec["R"] * self.spec["u_max"] * self.spec["T"]
        out = []
        while len(out) < n:
            p = w + rng.uniform(-radius, radius, 2)
            if np.sum((p - w) ** 2) <= radius**2:
                out.append([p[0], p[1], rng.uniform(-math.pi, math.pi)])
        return np.array(out)

    def _post_checks(self, res):
        u_max = self.spec["u_max"]
        res.checks["input_bound"] = all(np.max(np.abs(p.traj.u)) <= u_max + 1e-9 for p in res.phases)
        res.checks["deadlines_met"] = all(p.traj.b[-1] >= -1e-6 for p in res.phases)
        res.meta["terminal_b"] = [float(p.traj.b[-1]) for p in res.phases]
        res.meta["max_abs_u"] = float(max(np.max(np.abs(p.traj.u)) for p in res.phases))


# ---------------------------------------------------------------------------
# quadcopter


class Quadcopter(Example):
    def lqr(self):
        m = self.spec["m"]
        A = np.zeros((6, 6))
        A[:3, 3:] = np.eye(3)
        B = np.zeros((6, 3))
        B[3:] = np.eye(3) / m
        return lqr_clf(A, B, self.spec["Q"], self.spec["R"])

    def dynamics(self):
        design = self.lqr()
        A, B = design.A, design.B
        return Dynamics.control_affine(
            6,
            InputSet.symmetric(self.spec["du_max"], 3),
            lambda x: x @ A.T,
            lambda x: np.broadcast_to(B, np.shape(x)[:-1] + B.shape),
            "double-integrator",
        )

    def target(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.spec["waypoint"], dtype=float), np.zeros(3)])

    def cbf(self, c_alpha=None, centered=False):
        design = self.lqr()
        clf = design.clf()
        c = self.spec["c_alpha"] if c_alpha is None else c_alpha
        clf = Clf(clf.V, linear(c, (0.0, math.inf)), name="lqr")
        cbf = clf_to_shiftable(clf, 0.0, self.spec["Lambda"])
        if centered:
            return cbf
        b = precompose_affine(cbf.barrier, np.eye(6), -self.target(), "-|x-w|_P^2")
        return replace(cbf, barrier=b)

    def grid(self, resolution=None, centered=True):
        n = int(resolution or self.spec["grid"])
        rng = np.random.default_rng(self.spec["seed"])
        P = self.lqr().P
        lam = self.spec["Lambda"]
        z = rng.normal(size=(n, 6))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = rng.uniform(0, 1, n) ** (1 / 6)
        r[: n // 4] = 1.0
        Linv = np.linalg.inv(np.linalg.cholesky(P))
        pts = math.sqrt(lam) * (z * r[:, None]) @ Linv
        if not centered:
            pts = pts + self.target()
        return GridSpec.from_points(pts)

    def fit_c_alpha(self, grid=None) -> float:
        cbf = self.cbf(c_alpha=1.0, centered=True)
        return least_conservative_linear_alpha(cbf, self.dynamics(), grid or self.grid())

    def lambda0(self, x0) -> float:
        lam0 = self.spec["lambda0"]
        if lam0 is None:
            lam0 = -float(self.cbf().barrier(np.asarray(x0, dtype=float)))
            # states sampled on {V = Lambda} can land a rounding error outside
            if lam0 <= self.spec["Lambda"] * (1 + 1e-9):
                lam0 = min(max(0.0, lam0), self.spec["Lambda"])
        return float(lam0)

    def compose(self, x0=None, certify=True):
        x0 = np.asarray(self.spec["x0"] if x0 is None else x0, dtype=float)
        c = self.spec["c_alpha"]
        lam0 = self.lambda0(x0)
        if lam0 > 0:
            traj = max_rate_descent(linear(c, (0.0, math.inf)), lam0, 0.0, self.spec["horizon"], Lambda=self.spec["Lambda"])
        else:
            traj = LambdaTrajectory((Segment(0.0, self.spec["horizon"], "constant", {"value": 0.0}),), self.spec["Lambda"])
        kw = {"dyn": self.dynamics(), "state_grid": self.grid(4000, centered=False), "time_grid": np.linspace(0, self.spec["horizon"], 41)} if certify else {}
        return [compose_tv_cbf(self.cbf(), traj, linear(c, (0.0, self.spec["Lambda"])), **kw)]

    def sample_x0(self, rng, n):
        pts = self.grid(max(n * 4, 64), centered=False).points()
        return pts[rng.choice(len(pts), n, replace=False)]

    def _post_checks(self, res):
        tr = res.phases[0].traj
        err = np.linalg.norm(tr.x[:, :3] - self.target()[:3], axis=1)
        inside = np.flatnonzero(err <= self.spec["threshold"])
        res.meta["time_to_threshold"] = float(tr.t[inside[0]]) if inside.size else math.inf
        res.meta["final_position_error"] = float(err[-1])
        res.checks["input_bound"] = bool(np.max(np.abs(tr.u)) <= self.spec["du_max"] + 1e-9)


# ---------------------------------------------------------------------------
# unicycle (nonholonomic integrator coordinates)


def heisenberg_error_map(w):
    """Affine map ``x -> w^-1 . x`` of the nonholonomic-integrator group law."""
    w1, w2, w3 = map(float, w)
    M = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [w2, -w1, 1.0]])
    c = np.array([-w1, -w2, -w3])
    return M, c


class Unicycle(Example):
    def dynamics(self):
        def drift(x):
            return np.zeros(np.shape(x))

        def G(x):
            out = np.zeros(np.shape(x)[:-1] + (3, 2))
            out[..., 0, 0] = 1.0
            out[..., 1, 1] = 1.0
            out[..., 2, 0] = -x[..., 1]
            out[..., 2, 1] = x[..., 0]
            return out

        return Dynamics.control_affine(3, InputSet.symmetric(self.spec["u_max"], 2), drift, G, "nonholonomic-integrator")

    def clf(self):
        return clarke_nonholonomic_clf(self.spec["continuity_fix"])

    def cbf(self, w=(0.0, 0.0, 0.0)):
        base = clf_to_shiftable(self.clf(), 0.0, math.inf)
        M, c = heisenberg_error_map(w)
        return replace(base, barrier=precompose_affine(base.barrier, M, c, "-V(w^-1 x)"))

    def grid(self, resolution=None):
        return GridSpec.box([-3.0] * 3, [3.0] * 3, resolution or self.spec["grid"])

    def alpha_lambda(self):
        """Concave, continuous and below gamma: ``xi/sqrt(3)`` up to 3, then ``sqrt(xi)``."""
        return piecewise([(0.0, Linear(1.0 / math.sqrt(3.0))), (3.0, SignedSqrt(1.0))], (0.0, math.inf), "concave", "alpha_lambda")

    def phase_times(self):
        T = self.spec["T"]
        return [(i * T, (i + 1) * T) for i in range(len(self.spec["waypoints"]))]

    def _phase_plan(self, x0, certify):
        return [(None, f"waypoint {i + 1}") for i in range(len(self.spec["waypoints"]))]

    def _phase_cbf(self, i, x, certify):
        t0, t1 = self.phase_times()[i]
        w = self.spec["waypoints"][i]
        cbf = self.cbf(w)
        lam0 = float(-cbf.barrier(x))
        if lam0 <= 0:
            traj = LambdaTrajectory((Segment(t0, t1, "constant", {"value": 0.0}),))
        else:
            traj = max_rate_descent(self.alpha_lambda(), lam0, t0, t1, dt=1e-3, Lambda=lam0)
        kw = {}
        if certify:
            lo = np.asarray(w) - 3.0
            kw = {"dyn": self.dynamics(), "state_grid": GridSpec.box(lo, lo + 6.0, 21), "time_grid": np.linspace(t0, t1, 21)}
        return compose_tv_cbf(cbf, traj, self.alpha_lambda(), **kw)

    def compose(self, x0=None, certify=True):
        x0 = np.asarray(self.spec["x0"] if x0 is None else x0, dtype=float)
        return [self._phase_cbf(0, x0, certify)]

    def sample_x0(self, rng, n):
        return rng.uniform(-2.0, 2.0, (n, 3))

    def _post_checks(self, res):
        cmap = self.spec["coordinate_map"]
        if cmap is not None:
            res.meta["mapped_final_state"] = np.asarray(cmap(res.phases[-1].traj.x[-1])).tolist()
        res.meta["terminal_V"] = [float(-p.traj.b[-1]) for p in res.phases]


_CLASSES = {"omni": Omni, "pendulum": Pendulum, "quadcopter": Quadcopter, "unicycle": Unicycle, "counterexample": Counterexample}


def get_example(name: str, **overrides) -> Example:
    """Example builder with the given parameter overrides."""
    return _CLASSES[name](get_spec(name, **overrides))
