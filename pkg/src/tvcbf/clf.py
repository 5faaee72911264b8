"""Control Lyapunov functions and their conversion to shiftable CBFs.

A CLF ``V`` with decay ``gamma`` yields the barrier ``b = -V + b_c`` with the
odd comparison function ``alpha = sgn(x) gamma(|x|)``; the shift budget is
the largest sublevel value of ``V`` that fits in the CLF's domain, minus
``b_c``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_continuous_lyapunov
from scipy.optimize import minimize

from .barrier import (
    BarrierFn,
    Dynamics,
    GradientPiece,
    GridSpec,
    ShiftableCbf,
    VERIFY_TOL,
    sup_directional_batch,
)
from .classk import ClassKeFn, Linear, Shift, SignedSqrt, linear, negate_reflect, piecewise
from .errors import InvalidInputError, NotACbfError, RangeError, SynthesisError

log = logging.getLogger(__name__)

NK_TOL = 1e-10
NK_MAX_ITER = 200
ALPHA_RESOLUTION = 0.01


@dataclass(frozen=True, eq=False)
class Clf:
    """Lyapunov candidate ``V`` with decay comparison function ``gamma``.

    ``domain`` is a vectorized predicate for the region D where the decay
    condition is claimed; ``None`` means all of R^n. ``decay`` optionally
    holds a closed-form lower bound on ``sup_u -dV``.
    """

    V: BarrierFn
    gamma: ClassKeFn
    domain: Callable | None = None
    decay: Callable | None = None
    name: str = ""

    def __call__(self, x):
        return self.V(x)


def clf_to_shiftable(clf: Clf, b_c: float = 0.0, Lambda_max: float = math.inf) -> ShiftableCbf:
    """Barrier ``-V + b_c`` with ``alpha = negate_reflect(gamma)`` and budget ``Lambda_max - b_c``."""
    b_c = float(b_c)
    Lambda_max = float(Lambda_max)
    if b_c < 0 or not b_c < Lambda_max:
        raise RangeError(f"b_c={b_c} must lie in [0, Lambda_max={Lambda_max})")
    return ShiftableCbf(
        barrier=clf.V.affine_map(-1.0, b_c),
        alpha=negate_reflect(clf.gamma),
        Lambda=Lambda_max - b_c,
        domain=clf.domain,
        name=f"cbf({clf.name})" if clf.name else "",
    )


def estimate_lambda_max(clf: Clf, bounds: GridSpec | None = None) -> float:
    """Largest sampled level ``lam`` with ``{V <= lam}`` inside the domain.

    Points outside D and points on the bounding box count as blocking; the
    result is the largest V value of an admissible grid point below the
    smallest blocking V value, so it never exceeds the sampled truth.
    """
    if clf.domain is None:
        return math.inf
    if bounds is None:
        raise InvalidInputError("a bounding grid is required when the CLF has a domain")
    pts = bounds.points()
    v = clf.V(pts)
    ok = np.asarray(clf.domain(pts), dtype=bool) & ~bounds.on_boundary(pts)
    block = v[~ok]
    limit = float(block.min()) if block.size else math.inf
    good = v[ok & (v < limit)]
    if good.size == 0:
        log.warning("no sublevel set of V fits in the domain on this grid")
        return 0.0
    return float(good.max())


# ---------------------------------------------------------------------------
# LQR


@dataclass(frozen=True, eq=False)
class LqrDesign:
    """Infinite-horizon LQR solution and the quadratic CLF it induces."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    K: np.ndarray
    Qtilde: np.ndarray
    c_gamma: float
    residual: float
    iterations: int
    closed_loop_eigs: np.ndarray

    def clf(self, name: str = "lqr") -> Clf:
        P = self.P
        V = BarrierFn.smooth(
            lambda x: np.einsum("...i,ij,...j->...", x, P, x),
            lambda x: 2.0 * x @ P,
            name="xPx",
        )
        return Clf(V, linear(self.c_gamma, (0.0, math.inf), "gamma"), name=name)

    def control(self, x):
        """Optimal feedback ``-K x``."""
        return -np.asarray(x, dtype=float) @ self.K.T

    def input_bound(self, level: float) -> float:
        """Max of ``|u*_i|`` over the ellipsoid ``{x' P x <= level}`` (closed form)."""
        Pinv = np.linalg.inv(self.P)
        return float(math.sqrt(level) * np.sqrt(np.einsum("ij,jk,ik->i", self.K, Pinv, self.K)).max())

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "K": self.K.tolist(),
            "Qtilde": self.Qtilde.tolist(),
            "c_gamma": self.c_gamma,
            "residual": self.residual,
            "iterations": self.iterations,
            "closed_loop_real_parts": np.real(self.closed_loop_eigs).tolist(),
        }


def _hurwitz(M: np.ndarray) -> bool:
    return bool(np.all(np.real(np.linalg.eigvals(M)) < 0))


def _initial_gain(A, B) -> np.ndarray:
    """Stabilizing gain by Bass's eigenvalue-shift method."""
    n, m = B.shape
    if _hurwitz(A):
        return np.zeros((m, n))
    beta = float(np.max(np.abs(np.linalg.eigvals(A)))) + 1.0
    As = A + beta * np.eye(n)
    Z = solve_continuous_lyapunov(-As, -2.0 * B @ B.T)
    try:
        K = B.T @ np.linalg.inv(Z)
    except np.linalg.LinAlgError:
        K = B.T @ np.linalg.pinv(Z)
    if not _hurwitz(A - B @ K):
        raise SynthesisError("(A, B) is not stabilizable: no stabilizing initial gain found")
    return K


def lqr_clf(A, B, Q, R) -> LqrDesign:
    """Solve the continuous ARE by Newton-Kleinman iteration.

    ``c_gamma = lambda_min(Qtilde) / lambda_max(P)`` with
    ``Qtilde = Q + P B R^-1 B' P`` bounds the decay of ``V = x' P x`` under
    the optimal feedback.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or Q.shape != (n, n) or R.shape != (B.shape[1],) * 2:
        raise InvalidInputError("inconsistent matrix shapes")
    try:
        np.linalg.cholesky(0.5 * (R + R.T))
    except np.linalg.LinAlgError as exc:
        raise InvalidInputError("R must be positive definite") from exc
    if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12:
        raise InvalidInputError("Q must be positive semidefinite")

    Rinv = np.linalg.inv(R)
    K = _initial_gain(A, B)
    P = np.zeros((n, n))
    for it in range(1, NK_MAX_ITER + 1):
        Ak = A - B @ K
        P_new = solve_continuous_lyapunov(Ak.T, -(Q + K.T @ R @ K))
        P_new = 0.5 * (P_new + P_new.T)
        K = Rinv @ B.T @ P_new
        done = np.linalg.norm(P_new - P) <= NK_TOL * max(1.0, np.linalg.norm(P_new))
        P = P_new
        if done:
            break
    else:
        raise SynthesisError(f"Newton-Kleinman did not converge in {NK_MAX_ITER} iterations")

    eigP = np.linalg.eigvalsh(P)
    if eigP.min() <= 0:
        raise SynthesisError("ARE solution is not positive definite; check detectability of (A, Q)")
    PB = P @ B
    residual = float(np.linalg.norm(P @ A + A.T @ P - PB @ Rinv @ PB.T + Q))
    Qt = Q + PB @ Rinv @ PB.T
    Qt = 0.5 * (Qt + Qt.T)
    c_gamma = float(np.linalg.eigvalsh(Qt).min() / eigP.max())
    return LqrDesign(A, B, Q, R, P, K, Qt, c_gamma, residual, it, np.linalg.eigvals(A - B @ K))


# ---------------------------------------------------------------------------
# linear alpha search


def _margin_data(cbf: ShiftableCbf, dyn: Dynamics, grid: GridSpec):
    pts = grid.points()
    b = cbf.barrier(pts)
    keep = np.ones(len(pts), dtype=bool) if math.isinf(cbf.Lambda) else b >= -cbf.Lambda
    if cbf.domain is not None:
        keep &= np.asarray(cbf.domain(pts), dtype=bool)
    sup = sup_directional_batch(cbf.barrier, dyn, pts[keep])[0]
    return b[keep], sup


def least_conservative_linear_alpha(
    cbf: ShiftableCbf,
    dyn: Dynamics,
    grid: GridSpec,
    resolution: float = ALPHA_RESOLUTION,
    tol: float = VERIFY_TOL,
    c_cap: float = 1e6,
    refine: int = 16,
) -> float:
    """Largest ``c`` (to ``resolution``) such that ``alpha(b) = c b`` certifies ``cbf`` on ``grid``.

    The input supremum is computed once per grid point; each bisection step
    is then the same pointwise test ``sup + c b >= -tol`` that
    verification applies.

    Sampled grids in higher dimensions tend to miss the thin sets where the
    input has no authority, so the ``refine`` grid points with the smallest
    ratio ``sup / -b`` seed a local minimization of that ratio; a lower
    ratio found there caps the result.
    """
    b, sup = _margin_data(cbf, dyn, grid)

    def ok(c):
        return bool(np.all(sup + c * b >= -tol))

    lo = resolution * 1e-3
    if not ok(lo):
        raise NotACbfError("no positive linear comparison function certifies this barrier on the grid")
    hi = 1.0
    while ok(hi):
        lo = hi
        hi *= 2.0
        if hi > c_cap:
            return math.inf
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    if refine:
        r = _refined_ratio(cbf, dyn, grid, b, sup, refine, tol)
        if r < lo:
            lo = math.floor(r / resolution) * resolution
    return lo


def _refined_ratio(cbf, dyn, grid, b, sup, k, tol) -> float:
    pts = grid.points()
    keep = np.ones(len(pts), dtype=bool) if math.isinf(cbf.Lambda) else cbf.barrier(pts) >= -cbf.Lambda
    if cbf.domain is not None:
        keep &= np.asarray(cbf.domain(pts), dtype=bool)
    pts = pts[keep]
    neg = b < -1e-9
    if not np.any(neg):
        return math.inf
    ratio = np.full(len(b), math.inf)
    ratio[neg] = (sup[neg] + tol) / -b[neg]
    best = float(np.min(ratio))
    seeds = pts[np.argsort(ratio)[:k]]

    def f(x):
        bx = float(cbf.barrier(x))
        if bx >= -1e-9 or (not math.isinf(cbf.Lambda) and bx < -cbf.Lambda):
            return best
        if cbf.domain is not None and not bool(np.all(cbf.domain(x))):
            return best
        sx = float(sup_directional_batch(cbf.barrier, dyn, x[None])[0][0])
        return (sx + tol) / -bx

    for x0 in seeds:
        res = minimize(f, x0, method="Nelder-Mead", options={"maxiter": 4000, "xatol": 1e-9, "fatol": 1e-12})
        best = min(best, float(res.fun))
    return best


# ---------------------------------------------------------------------------
# nonholonomic integrator


CLARKE_BREAK = 3.0
CLARKE_SLOPE = 1.0 / math.sqrt(3.0)
CLARKE_SQRT_COEF = 1.3
CLARKE_JUMP = CLARKE_SQRT_COEF * math.sqrt(3.0) - math.sqrt(3.0)
KINK_TOL = 1e-12


def clarke_gamma(continuity_fix: bool = False) -> ClassKeFn:
    """Decay comparison function of the nonholonomic-integrator CLF.

    Linear with slope 1/sqrt(3) below 3 and ``1.3 sqrt(xi)`` from 3 on, which
    jumps by ``0.3 sqrt(3)`` at 3. ``continuity_fix`` lowers the second piece
    by that amount.
    """
    tail = SignedSqrt(CLARKE_SQRT_COEF)
    if continuity_fix:
        sq = piecewise([(0.0, tail)], (0.0, math.inf), "concave")
        tail = Shift(sq, 0.0, -CLARKE_JUMP)
    return piecewise(
        [(0.0, Linear(CLARKE_SLOPE)), (CLARKE_BREAK, tail)],
        (0.0, math.inf),
        "general",
        "gamma-clarke",
    )


def _clarke_parts(x):
    s = np.hypot(x[..., 0], x[..., 1])
    d = s - np.abs(x[..., 2])
    return s, d


def clarke_V(x):
    x = np.asarray(x, dtype=float)
    _, d = _clarke_parts(x)
    return d**2 + x[..., 2] ** 2


def clarke_W(x):
    """Closed-form decay bound ``2 max{|s - |x3||, s |s sgn(x3) - 2 x3|}``."""
    x = np.asarray(x, dtype=float)
    s, d = _clarke_parts(x)
    return 2.0 * np.maximum(np.abs(d), s * np.abs(s * np.sign(x[..., 2]) - 2.0 * x[..., 2]))


def _clarke_grad(sign3):
    def grad(x):
        s, d = _clarke_parts(x)
        g = np.empty(x.shape)
        g[..., 0] = 2.0 * d * x[..., 0] / s
        g[..., 1] = 2.0 * d * x[..., 1] / s
        g[..., 2] = -2.0 * d * sign3 + 2.0 * x[..., 2]
        return g

    return grad


def _clarke_region(sign3, sign_d):
    def region(x):
        s, d = _clarke_parts(x)
        return (s > KINK_TOL) & (sign3 * x[..., 2] > 0) & (sign_d * d > 0)

    return region


def clarke_nonholonomic_clf(continuity_fix: bool = False) -> Clf:
    """CLF ``V = (s - |x3|)^2 + x3^2``, ``s = |(x1, x2)|``, for the nonholonomic integrator.

    Four gradient pieces split by the signs of ``x3`` and ``s - |x3|``; on
    the loci ``x3 = 0``, ``s = |x3|`` and ``s = 0`` derivatives come from
    the difference-quotient schedule.
    """
    pieces = tuple(
        GradientPiece(_clarke_region(s3, sd), _clarke_grad(s3)) for s3 in (1.0, -1.0) for sd in (1.0, -1.0)
    )
    V = BarrierFn(clarke_V, pieces, name="V-clarke")
    return Clf(V, clarke_gamma(continuity_fix), None, clarke_W, "clarke")
