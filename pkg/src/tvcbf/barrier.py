"""Barrier functions, Dini derivatives and grid certification of shiftability.

Callables passed to :class:`Dynamics` and :class:`BarrierFn` must be
vectorized over leading axes: a state batch has shape ``(..., n)``, an
input batch ``(..., m)``, ``b`` returns shape ``(...)`` and an input matrix
returns ``(..., n, m)``. Plain ``x[..., i]`` indexing gives this for free.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .classk import ClassKeFn, _num
from .errors import InvalidInputError, NumericError, RangeError

log = logging.getLogger(__name__)

EPS_SCHEDULE = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
N_INTERIOR = 64
MAX_INTERIOR = 1024
REFINE_TOL = 1e-8
VERIFY_TOL = 1e-6
PROBE_FRACTION = 0.05
AFFINE_TOL = 1e-10


@lru_cache(maxsize=16)
def _halton(m: int, n: int) -> np.ndarray:
    # skip the first point, which is the origin corner of the unit cube
    return qmc.Halton(d=m, scramble=False).random(n + 1)[1:]


@dataclass(frozen=True, eq=False)
class InputSet:
    """Admissible inputs: an axis-aligned box or a finite list."""

    kind: str
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    points: np.ndarray | None = None

    @classmethod
    def box(cls, lower, upper) -> "InputSet":
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidInputError("box bounds must be vectors of equal length")
        if np.any(lo > hi):
            raise InvalidInputError("box lower bound exceeds upper bound")
        return cls("box", lo, hi)

    @classmethod
    def symmetric(cls, bound, m: int = 1) -> "InputSet":
        hi = np.broadcast_to(np.asarray(bound, dtype=float), (m,)).copy()
        return cls.box(-hi, hi)

    @classmethod
    def finite(cls, points) -> "InputSet":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.size == 0:
            raise InvalidInputError("finite input set is empty")
        return cls("finite", points=pts)

    @property
    def m(self) -> int:
        return self.lower.size if self.kind == "box" else self.points.shape[1]

    def vertices(self) -> np.ndarray:
        if self.kind == "finite":
            return self.points
        return np.array(list(itertools.product(*zip(self.lower, self.upper))))

    def candidates(self, n_interior: int = N_INTERIOR) -> np.ndarray:
        """Vertices, center, face centers and low-discrepancy interior points."""
        if self.kind == "finite":
            return self.points
        mid = 0.5 * (self.lower + self.upper)
        faces = []
        for i in range(self.m):
            for end in (self.lower[i], self.upper[i]):
                p = mid.copy()
                p[i] = end
                faces.append(p)
        inner = self.lower + _halton(self.m, n_interior) * (self.upper - self.lower)
        return np.vstack([self.vertices(), mid[None], np.array(faces), inner])

    def contains(self, u, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        if self.kind == "box":
            return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))
        return bool(np.any(np.all(np.abs(self.points - u) <= tol, axis=1)))

    def clip(self, u):
        if self.kind == "box":
            return np.clip(u, self.lower, self.upper)
        return u

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        return {"kind": "finite", "points": self.points.tolist()}


@dataclass(frozen=True, eq=False)
class Dynamics:
    """Control system ``x' = f(x, u)`` with input set ``U``.

    ``drift`` and ``input_matrix`` are set when ``f(x, u) = g0(x) + G(x) u``;
    they enable the closed-form input maximization.
    """

    n: int
    input_set: InputSet
    f: Callable
    drift: Callable | None = None
    input_matrix: Callable | None = None
    name: str = ""

    @property
    def m(self) -> int:
        return self.input_set.m

    @property
    def affine(self) -> bool:
        return self.drift is not None and self.input_matrix is not None

    @classmethod
    def control_affine(cls, n, input_set, drift, input_matrix, name="") -> "Dynamics":
        def f(x, u):
            return drift(x) + np.einsum("...ij,...j->...i", input_matrix(x), u)

        return cls(n, input_set, f, drift, input_matrix, name)

    def __call__(self, x, u):
        return self.f(np.asarray(x, dtype=float), np.asarray(u, dtype=float))

    def check_affine(self, samples: int = 50, seed: int = 0, scale: float = 1.0) -> float:
        """Max deviation between ``f`` and its affine decomposition at random (x, u)."""
        if not self.affine:
            return 0.0
        rng = np.random.default_rng(seed)
        x = rng.uniform(-scale, scale, (samples, self.n))
        u = self.input_set.candidates()[rng.integers(0, len(self.input_set.candidates()), samples)]
        lhs = self.f(x, u)
        rhs = self.drift(x) + np.einsum("...ij,...j->...i", self.input_matrix(x), u)
        err = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))))
        if err > AFFINE_TOL:
            raise InvalidInputError(f"affine decomposition does not reproduce f (error {err:.3g})")
        return err


@dataclass(frozen=True, eq=False)
class GradientPiece:
    """Gradient field valid on the open region where ``region(x)`` is true."""

    region: Callable
    gradient: Callable


def _everywhere(x):
    return np.ones(np.shape(x)[:-1], dtype=bool)


@dataclass(frozen=True, eq=False)
class BarrierFn:
    """``b(x) = scale * fn(x) + offset`` with optional piecewise gradients.

    Regions should be open sets. Where no region or more than one region
    claims a point, derivatives fall back to the difference-quotient
    schedule.
    """

    fn: Callable
    pieces: tuple = ()
    scale: float = 1.0
    offset: float = 0.0
    name: str = ""

    @classmethod
    def smooth(cls, fn, gradient, name="") -> "BarrierFn":
        return cls(fn, (GradientPiece(_everywhere, gradient),), name=name)

    @property
    def is_smooth(self) -> bool:
        return len(self.pieces) == 1 and self.pieces[0].region is _everywhere

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.scale * self.fn(x) + self.offset

    def gradient(self, x):
        """Return ``(grad, count)``: gradient of the unique active piece and the number of active pieces."""
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        if self.is_smooth:
            return self.scale * np.asarray(self.pieces[0].gradient(x), dtype=float), np.ones(lead, dtype=int)
        if not self.pieces:
            return np.full(x.shape, np.nan), np.zeros(lead, dtype=int)
        masks = np.stack([np.broadcast_to(p.region(x), lead) for p in self.pieces])
        count = masks.sum(axis=0)
        grad = np.full(x.shape, np.nan)
        for k, p in enumerate(self.pieces):
            sel = masks[k] & (count == 1)
            if np.any(sel):
                grad[sel] = self.scale * np.asarray(p.gradient(x[sel]), dtype=float)
        return grad, count

    def shifted(self, lam: float) -> "BarrierFn":
        return replace(self, offset=self.offset + float(lam))

    def affine_map(self, scale: float, offset: float) -> "BarrierFn":
        """``scale * b + offset``."""
        return replace(self, scale=self.scale * scale, offset=self.offset * scale + offset)


def dini_derivative_batch(phi: BarrierFn, x, v) -> np.ndarray:
    """Lower Dini derivative of ``phi`` at each row of ``x`` along the matching row of ``v``."""
    x = np.asarray(x, dtype=float)
    v = np.broadcast_to(np.asarray(v, dtype=float), x.shape)
    grad, count = phi.gradient(x)
    out = np.einsum("...i,...i->...", np.nan_to_num(grad), v)
    rough = count != 1
    if np.any(rough):
        xr, vr = x[rough], v[rough]
        base = phi(xr)
        q = np.min([(phi(xr + eps * vr) - base) / eps for eps in EPS_SCHEDULE], axis=0)
        out = np.array(out, dtype=float)
        out[rough] = q
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite directional derivative")
    return out


def dini_derivative(phi: BarrierFn, x, v) -> float:
    """Dini derivative ``d phi(x; v)``.

    Exact ``grad . v`` where a single gradient piece is active, otherwise the
    minimum forward difference quotient over ``EPS_SCHEDULE``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if x.shape != v.shape:
        raise InvalidInputError(f"state {x.shape} and direction {v.shape} differ in shape")
    return float(dini_derivative_batch(phi, x[None], v[None])[0])


def _sup_sampled(b: BarrierFn, dyn: Dynamics, x: np.ndarray):
    """Max of the Dini derivative over input candidates, refining interior samples."""
    U = dyn.input_set
    n_int = N_INTERIOR

    def scan(cands):
        xs = np.broadcast_to(x[:, None, :], (x.shape[0], len(cands), x.shape[1]))
        us = np.broadcast_to(cands[None], (x.shape[0],) + cands.shape)
        vals = dini_derivative_batch(b, xs.reshape(-1, x.shape[1]), dyn.f(xs, us).reshape(-1, x.shape[1]))
        vals = vals.reshape(x.shape[0], len(cands))
        k = np.argmax(vals, axis=1)
        return vals[np.arange(len(k)), k], cands[k]

    best, arg = scan(U.candidates(n_int))
    while U.kind == "box" and n_int < MAX_INTERIOR:
        n_int *= 2
        val, u = scan(U.candidates(n_int))
        gain = float(np.max(val - best))
        better = val > best
        best = np.where(better, val, best)
        arg = np.where(better[:, None], u, arg)
        if gain < REFINE_TOL:
            break
    return best, arg


def sup_directional_batch(b: BarrierFn, dyn: Dynamics, x):
    """Vectorized :func:`sup_directional` over rows of ``x``; returns ``(values, maximizers)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    U = dyn.input_set
    values = np.empty(len(x))
    arg = np.empty((len(x), U.m))
    grad, count = b.gradient(x)
    fast = count == 1 if (dyn.affine and U.kind == "box") else np.zeros(len(x), dtype=bool)
    if np.any(fast):
        xf, g = x[fast], grad[fast]
        coef = np.einsum("ki,kij->kj", g, dyn.input_matrix(xf))
        mid = 0.5 * (U.lower + U.upper)
        u = np.where(coef > 0, U.upper, np.where(coef < 0, U.lower, mid))
        values[fast] = np.einsum("ki,ki->k", g, dyn.drift(xf)) + np.einsum("kj,kj->k", coef, u)
        arg[fast] = u
    slow = ~fast
    if np.any(slow):
        values[slow], arg[slow] = _sup_sampled(b, dyn, x[slow])
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite supremum")
    return values, arg


def sup_directional(b: BarrierFn, dyn: Dynamics, x):
    """``sup_u db(x; f(x, u))`` and a maximizing input.

    Closed form for control-affine dynamics with a box input set at points
    where ``b`` is smooth; candidate sampling otherwise.
    """
    v, u = sup_directional_batch(b, dyn, np.atleast_1d(np.asarray(x, dtype=float))[None])
    return float(v[0]), u[0]


@dataclass(frozen=True, eq=False)
class ShiftableCbf:
    """Barrier ``b`` with comparison function ``alpha`` and shift budget ``Lambda``.

    ``domain`` optionally restricts the region where the condition is
    claimed (a vectorized predicate on states).
    """

    barrier: BarrierFn
    alpha: ClassKeFn
    Lambda: float
    domain: Callable | None = None
    verification: "CertificationReport | None" = None
    name: str = ""

    def __post_init__(self):
        if not self.Lambda >= 0:
            raise RangeError("Lambda must be nonnegative")

    @property
    def shiftable(self) -> bool:
        return self.Lambda > 0

    def with_verification(self, report) -> "ShiftableCbf":
        return replace(self, verification=report)


def shift_cbf(cbf: ShiftableCbf, lam: float) -> ShiftableCbf:
    """Shift the barrier up by ``lam``; the remaining budget is ``Lambda - lam``."""
    lam = float(lam)
    if not 0.0 <= lam <= cbf.Lambda:
        raise RangeError(f"shift {lam} outside [0, {cbf.Lambda}]")
    return replace(cbf, barrier=cbf.barrier.shifted(lam), Lambda=cbf.Lambda - lam, verification=None)


@dataclass(frozen=True)
class GridSpec:
    """Uniform axis-aligned grid, or an explicit point cloud."""

    lower: tuple = ()
    upper: tuple = ()
    resolution: tuple = ()
    explicit: np.ndarray | None = None

    @classmethod
    def box(cls, lower, upper, resolution) -> "GridSpec":
        lo = tuple(float(v) for v in np.atleast_1d(lower))
        hi = tuple(float(v) for v in np.atleast_1d(upper))
        res = np.broadcast_to(np.asarray(resolution, dtype=int), (len(lo),))
        if len(lo) != len(hi) or np.any(res < 2):
            raise InvalidInputError("grid needs matching bounds and resolution >= 2 per axis")
        return cls(lo, hi, tuple(int(r) for r in res))

    @classmethod
    def from_points(cls, points) -> "GridSpec":
        return cls(explicit=np.atleast_2d(np.asarray(points, dtype=float)))

    def refined(self) -> "GridSpec":
        """Double the density (``r -> 2r - 1`` keeps every old node)."""
        if self.explicit is not None:
            return self
        return replace(self, resolution=tuple(2 * r - 1 for r in self.resolution))

    def points(self) -> np.ndarray:
        if self.explicit is not None:
            return self.explicit
        axes = [np.linspace(lo, hi, r) for lo, hi, r in zip(self.lower, self.upper, self.resolution)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))

    def on_boundary(self, pts: np.ndarray) -> np.ndarray:
        if self.explicit is not None:
            return np.zeros(len(pts), dtype=bool)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return np.any(np.isclose(pts, lo) | np.isclose(pts, hi), axis=1)


@dataclass
class CertificationReport:
    """Outcome of :func:`verify_shiftable`.

    ``passed`` only looks at points inside ``C_Lambda``; the probe band just
    below it is reported separately.
    """

    passed: bool
    worst_margin: float
    worst_point: list | None
    n_grid: int
    n_checked: int
    n_probe: int
    probe_worst_margin: float
    violations: list
    warnings: list
    tol: float
    Lambda: float
    elapsed: float

    def to_dict(self, max_violations: int = 100) -> dict:
        return {
            "passed": self.passed,
            "worst_margin": _num(self.worst_margin),
            "worst_point": self.worst_point,
            "n_grid": self.n_grid,
            "n_checked": self.n_checked,
            "n_probe": self.n_probe,
            "probe_worst_margin": _num(self.probe_worst_margin),
            "n_violations": len(self.violations),
            "violations": self.violations[:max_violations],
            "warnings": self.warnings,
            "tol": self.tol,
            "Lambda": _num(self.Lambda),
            "elapsed_s": round(self.elapsed, 4),
        }

    def violation_rows(self):
        """Rows ``(*x, b, sup, margin)`` for delimited export."""
        return [(*v["x"], v["b"], v["sup"], v["margin"]) for v in self.violations]


def verify_shiftable(
    cbf: ShiftableCbf,
    dyn: Dynamics,
    grid: GridSpec,
    tol: float = VERIFY_TOL,
    probe: float = PROBE_FRACTION,
    chunk: int = 20_000,
) -> CertificationReport:
    """Check ``sup_u db(x; f(x,u)) + alpha(b(x)) >= -tol`` on grid points of ``C_Lambda``."""
    t0 = time.perf_counter()
    pts = grid.points()
    if pts.shape[1] != dyn.n:
        raise InvalidInputError(f"grid dimension {pts.shape[1]} does not match dynamics dimension {dyn.n}")
    bvals = cbf.barrier(pts)
    Lam = cbf.Lambda
    lo_alpha = cbf.alpha.domain[0]
    if math.isinf(Lam):
        inside = np.ones(len(pts), dtype=bool)
        band = np.zeros(len(pts), dtype=bool)
    else:
        inside = bvals >= -Lam
        band = (~inside) & (bvals >= -Lam - probe * Lam) & (bvals >= lo_alpha)
    if cbf.domain is not None:
        dom = np.asarray(cbf.domain(pts), dtype=bool)
        inside &= dom
        band &= dom
    inside &= bvals >= lo_alpha
    sel = inside | band
    idx = np.flatnonzero(sel)
    sup = np.empty(len(idx))
    for s in range(0, len(idx), chunk):
        part = idx[s : s + chunk]
        sup[s : s + chunk] = sup_directional_batch(cbf.barrier, dyn, pts[part])[0]
    margin = sup + cbf.alpha(bvals[idx])
    in_mask = inside[idx]

    warnings = []
    if not np.any(inside):
        warnings.append("no grid point lies in C_Lambda")
    touching = (bvals >= 0) & grid.on_boundary(pts)
    if np.any(touching):
        warnings.append("C = {b >= 0} touches the grid bounding box; compactness is not established")

    m_in = margin[in_mask]
    worst = float(m_in.min()) if m_in.size else math.inf
    worst_pt = pts[idx[in_mask][int(np.argmin(m_in))]].tolist() if m_in.size else None
    bad = np.flatnonzero(in_mask & (margin < -tol))
    order = sorted(bad, key=lambda k: (margin[k], tuple(pts[idx[k]])))
    violations = [
        {"x": pts[idx[k]].tolist(), "b": float(bvals[idx[k]]), "sup": float(sup[k]), "margin": float(margin[k])}
        for k in order
    ]
    m_band = margin[~in_mask]
    report = CertificationReport(
        passed=bool(m_in.size) and worst >= -tol,
        worst_margin=worst,
        worst_point=worst_pt,
        n_grid=len(pts),
        n_checked=int(in_mask.sum()),
        n_probe=int((~in_mask).sum()),
        probe_worst_margin=float(m_band.min()) if m_band.size else math.inf,
        violations=violations,
        warnings=warnings,
        tol=tol,
        Lambda=Lam,
        elapsed=time.perf_counter() - t0,
    )
    log.debug("verify_shiftable: %d points, worst margin %.3g", report.n_checked, worst)
    return report


def precompose_affine(b: BarrierFn, M, c, name: str = "") -> BarrierFn:
    """``x -> b(M x + c)`` with gradients pulled back by ``M^T``.

    Used to re-center a barrier at a waypoint through a group translation
    that is affine in the state.
    """
    M = np.asarray(M, dtype=float)
    c = np.asarray(c, dtype=float)

    def to_local(x):
        return np.asarray(x, dtype=float) @ M.T + c

    def fn(x):
        return b.scale * b.fn(to_local(x)) + b.offset

    pieces = tuple(
        GradientPiece(
            (lambda p: lambda x: p.region(to_local(x)))(p),
            (lambda p: lambda x: b.scale * np.asarray(p.gradient(to_local(x))) @ M)(p),
        )
        for p in b.pieces
    )
    if b.is_smooth:
        pieces = (GradientPiece(_everywhere, pieces[0].gradient),)
    return BarrierFn(fn, pieces, name=name or b.name)
