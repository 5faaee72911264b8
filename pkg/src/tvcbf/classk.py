"""Class-K and extended class-K_e comparison functions.

A :class:`ClassKeFn` is a piecewise function on a real interval built from
analytic piece descriptors. Besides evaluation it provides sampled
certification (zero at zero, strict monotonicity, claimed shape), the odd
reflection used to turn a class-K decay rate into an extended comparison
function, and the two constructions of an extended class-K_e upper bound
``beta`` with ``alpha1(x1) + alpha2(x2) <= beta(x1 + x2)`` for convex and
concave ``alpha2``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np

from .errors import (
    CompositionInfeasibleError,
    DegenerateExtensionError,
    DomainError,
    InvalidInputError,
    RangeError,
)

INF = math.inf
SHAPES = ("linear", "convex", "concave", "general")

CERT_GRID = 10_000
SHAPE_TOL = 1e-9
CONT_RTOL = 1e-12
DOMINATION_TOL = 1e-9
# finite window used to sample functions on unbounded domains
DEFAULT_SPAN = 10.0
# exponential grid bound for A = infinity
INF_GRID_MAX = 1e6


def _num(x: float) -> Any:
    """Serialize a float; infinities become strings so JSON stays valid."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _flip(side: str) -> str:
    return "left" if side == "right" else "right"


# ---------------------------------------------------------------------------
# piece descriptors


class Piece:
    """Analytic descriptor evaluated on numpy arrays."""

    kind: ClassVar[str] = ""

    def __call__(self, x):
        raise NotImplementedError

    def deriv(self, x, side="right"):
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Linear(Piece):
    slope: float
    intercept: float = 0.0
    kind: ClassVar[str] = "linear"

    def __call__(self, x):
        return self.slope * x + self.intercept

    def deriv(self, x, side="right"):
        return np.full(np.shape(x), float(self.slope))

    def params(self):
        return {"slope": self.slope, "intercept": self.intercept}


@dataclass(frozen=True)
class Power(Piece):
    """``coef * sgn(x) * |x|**exponent`` (odd extension of a power law)."""

    coef: float
    exponent: float
    kind: ClassVar[str] = "power"

    def __call__(self, x):
        return self.coef * np.sign(x) * np.abs(x) ** self.exponent

    def deriv(self, x, side="right"):
        ax = np.abs(np.asarray(x, dtype=float))
        with np.errstate(divide="ignore", invalid="ignore"):
            d = self.coef * self.exponent * ax ** (self.exponent - 1.0)
        if self.exponent == 1.0:
            d = np.full(np.shape(x), float(self.coef))
        return d

    def params(self):
        return {"coef": self.coef, "exponent": self.exponent}


@dataclass(frozen=True)
class SignedSqrt(Piece):
    """``coef * sgn(x) * sqrt(|x|)``."""

    coef: float
    kind: ClassVar[str] = "sqrt"

    def __call__(self, x):
        return self.coef * np.sign(x) * np.sqrt(np.abs(x))

    def deriv(self, x, side="right"):
        with np.errstate(divide="ignore"):
            return self.coef / (2.0 * np.sqrt(np.abs(np.asarray(x, dtype=float))))

    def params(self):
        return {"coef": self.coef}


@dataclass(frozen=True)
class Rational(Piece):
    """``coef * x / (1 + |x| / scale)``; equals ``x/(1+x)`` on x >= 0 for unit parameters."""

    coef: float = 1.0
    scale: float = 1.0
    kind: ClassVar[str] = "rational"

    def __call__(self, x):
        return self.coef * x / (1.0 + np.abs(x) / self.scale)

    def deriv(self, x, side="right"):
        return self.coef / (1.0 + np.abs(np.asarray(x, dtype=float)) / self.scale) ** 2

    def params(self):
        return {"coef": self.coef, "scale": self.scale}


@dataclass(frozen=True)
class Polynomial(Piece):
    """Polynomial with ascending coefficients ``c0 + c1 x + c2 x^2 + ...``."""

    coeffs: tuple
    kind: ClassVar[str] = "poly"

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(x, self.coeffs)

    def deriv(self, x, side="right"):
        dc = np.polynomial.polynomial.polyder(self.coeffs)
        return np.asarray(np.polynomial.polynomial.polyval(x, dc), dtype=float) + np.zeros(np.shape(x))

    def params(self):
        return {"coeffs": [float(c) for c in self.coeffs]}


@dataclass(frozen=True)
class Table(Piece):
    """Lookup table with linear (monotone-preserving) interpolation.

    Outside the table range the end segments are extended linearly.
    """

    xs: tuple
    ys: tuple
    kind: ClassVar[str] = "table"

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise InvalidInputError("table abscissae must be strictly increasing, length >= 2")
        if len(self.ys) != xs.size:
            raise InvalidInputError("table xs and ys differ in length")

    def _slopes(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        return xs, ys, np.diff(ys) / np.diff(xs)

    def __call__(self, x):
        xs, ys, sl = self._slopes()
        x = np.asarray(x, dtype=float)
        out = np.interp(x, xs, ys)
        out = np.where(x < xs[0], ys[0] + sl[0] * (x - xs[0]), out)
        return np.where(x > xs[-1], ys[-1] + sl[-1] * (x - xs[-1]), out)

    def deriv(self, x, side="right"):
        xs, _, sl = self._slopes()
        how = "right" if side == "right" else "left"
        idx = np.clip(np.searchsorted(xs, x, side=how) - 1, 0, sl.size - 1)
        return sl[idx]

    def params(self):
        return {"xs": [float(v) for v in self.xs], "ys": [float(v) for v in self.ys]}


@dataclass(frozen=True)
class Odd(Piece):
    """``sgn(x) * fn(|x|)``: odd reflection of a class-K function."""

    fn: "ClassKeFn"
    kind: ClassVar[str] = "odd"

    def __call__(self, x):
        return np.sign(x) * self.fn(np.abs(x))

    def deriv(self, x, side="right"):
        x = np.asarray(x, dtype=float)
        pos = self.fn.derivative(np.abs(x), side)
        neg = self.fn.derivative(np.abs(x), _flip(side))
        return np.where(x > 0, pos, np.where(x < 0, neg, self.fn.derivative(0.0 * x, "right")))

    def params(self):
        return {"fn": self.fn.to_dict()}


@dataclass(frozen=True)
class Reflect(Piece):
    """``-fn(-x)``."""

    fn: "ClassKeFn"
    kind: ClassVar[str] = "reflect"

    def __call__(self, x):
        return -self.fn(-np.asarray(x, dtype=float))

    def deriv(self, x, side="right"):
        return self.fn.derivative(-np.asarray(x, dtype=float), _flip(side))

    def params(self):
        return {"fn": self.fn.to_dict()}


@dataclass(frozen=True)
class Shift(Piece):
    """``y_shift + fn(x - x_shift)``."""

    fn: "ClassKeFn"
    x_shift: float = 0.0
    y_shift: float = 0.0
    kind: ClassVar[str] = "shift"

    def __call__(self, x):
        return self.y_shift + self.fn(np.asarray(x, dtype=float) - self.x_shift)

    def deriv(self, x, side="right"):
        return self.fn.derivative(np.asarray(x, dtype=float) - self.x_shift, side)

    def params(self):
        return {"fn": self.fn.to_dict(), "x_shift": _num(self.x_shift), "y_shift": _num(self.y_shift)}


@dataclass(frozen=True)
class Sum(Piece):
    fns: tuple
    kind: ClassVar[str] = "sum"

    def __call__(self, x):
        return sum(f(x) for f in self.fns)

    def deriv(self, x, side="right"):
        return sum(f.derivative(x, side) for f in self.fns)

    def params(self):
        return {"fns": [f.to_dict() for f in self.fns]}


@dataclass(frozen=True)
class Max(Piece):
    """Pointwise maximum; one-sided derivatives follow the active branch."""

    fns: tuple
    kind: ClassVar[str] = "max"

    def __call__(self, x):
        return np.max(np.stack([np.asarray(f(x), dtype=float) for f in self.fns]), axis=0)

    def deriv(self, x, side="right"):
        vals = np.stack([np.asarray(f(x), dtype=float) for f in self.fns])
        ders = np.stack([np.asarray(f.derivative(x, side), dtype=float) for f in self.fns])
        top = vals.max(axis=0)
        tied = vals >= top - 1e-12 * np.maximum(1.0, np.abs(top))
        if side == "right":
            return np.where(tied, ders, -np.inf).max(axis=0)
        return np.where(tied, ders, np.inf).min(axis=0)

    def params(self):
        return {"fns": [f.to_dict() for f in self.fns]}


_PIECES = {cls.kind: cls for cls in (Linear, Power, SignedSqrt, Rational, Polynomial, Table, Odd, Reflect, Shift, Sum, Max)}


def _piece_from_dict(d: dict) -> Piece:
    d = dict(d)
    kind = d.pop("kind", None)
    d.pop("start", None)
    cls = _PIECES.get(kind)
    if cls is None:
        raise InvalidInputError(f"unknown piece kind {kind!r}; expected one of {sorted(_PIECES)}")
    try:
        if "fn" in d:
            d["fn"] = from_dict(d["fn"])
        if "fns" in d:
            d["fns"] = tuple(from_dict(f) for f in d["fns"])
        for key in ("coeffs", "xs", "ys"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        for key in ("slope", "intercept", "coef", "exponent", "scale", "x_shift", "y_shift"):
            if key in d:
                d[key] = float(d[key])
        return cls(**d)
    except TypeError as exc:
        raise InvalidInputError(f"bad parameters for piece kind {kind!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# the function type


@dataclass(frozen=True, eq=False)
class ClassKeFn:
    """Piecewise scalar comparison function.

    ``pieces[i]`` is active on ``[breakpoints[i], breakpoints[i+1])``; the
    last piece extends to the upper end of ``domain``. ``shape`` is the
    claimed shape on ``domain`` and is checked by :func:`certify_class_ke`,
    never trusted blindly.
    """

    breakpoints: tuple
    pieces: tuple
    domain: tuple = (-INF, INF)
    shape: str = "general"
    name: str = ""

    def __post_init__(self):
        if len(self.breakpoints) != len(self.pieces) or not self.pieces:
            raise InvalidInputError("need one breakpoint per piece and at least one piece")
        if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
            raise InvalidInputError("breakpoints must be strictly increasing")
        lo, hi = self.domain
        if not lo <= 0.0 <= hi or lo >= hi:
            raise InvalidInputError(f"domain {self.domain} must be an interval containing 0")
        if self.breakpoints[0] > lo:
            raise InvalidInputError("first breakpoint must not exceed the domain's lower end")
        if self.shape not in SHAPES:
            raise InvalidInputError(f"shape must be one of {SHAPES}")

    @property
    def extended(self) -> bool:
        return self.domain[0] < 0.0

    def _check_domain(self, arr):
        lo, hi = self.domain
        if np.any(np.isnan(arr)):
            raise DomainError(f"{self.name or 'function'}: NaN argument")
        if np.any(arr < lo) or np.any(arr > hi):
            bad = arr[(arr < lo) | (arr > hi)]
            raise DomainError(f"{self.name or 'function'}: argument {float(np.ravel(bad)[0])!r} outside domain {self.domain}")

    def __call__(self, x):
        if np.ndim(x) == 0:
            xf = float(x)
            if not self.domain[0] <= xf <= self.domain[1]:
                self._check_domain(np.asarray(xf))
            i = max(bisect.bisect_right(self.breakpoints, xf) - 1, 0)
            return float(self.pieces[i](np.float64(xf)))
        arr = np.asarray(x, dtype=float)
        self._check_domain(arr)
        idx = np.clip(np.searchsorted(self.breakpoints, arr, side="right") - 1, 0, None)
        out = np.empty(arr.shape)
        for i, piece in enumerate(self.pieces):
            mask = idx == i
            if mask.any():
                out[mask] = piece(arr[mask])
        return out

    def derivative(self, x, side: str = "right"):
        """One-sided derivative from the active piece's analytic form."""
        arr = np.asarray(x, dtype=float)
        how = "right" if side == "right" else "left"
        idx = np.clip(np.searchsorted(self.breakpoints, arr, side=how) - 1, 0, None)
        out = np.empty(arr.shape)
        for i, piece in enumerate(self.pieces):
            mask = idx == i
            if mask.any():
                out[mask] = piece.deriv(arr[mask], side)
        return float(out) if arr.ndim == 0 else out

    def with_name(self, name: str) -> "ClassKeFn":
        return ClassKeFn(self.breakpoints, self.pieces, self.domain, self.shape, name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "domain": [_num(self.domain[0]), _num(self.domain[1])],
            "shape": self.shape,
            "pieces": [
                {"start": _num(b), "kind": p.kind, **p.params()} for b, p in zip(self.breakpoints, self.pieces)
            ],
        }


def from_dict(d: dict) -> ClassKeFn:
    """Inverse of :meth:`ClassKeFn.to_dict`."""
    if not isinstance(d, dict) or "pieces" not in d:
        raise InvalidInputError("comparison function needs a 'pieces' list")
    pieces = d["pieces"]
    if not isinstance(pieces, list) or not pieces:
        raise InvalidInputError("'pieces' must be a non-empty list")
    dom = d.get("domain", ["-inf", "inf"])
    domain = (float(dom[0]), float(dom[1]))
    starts = [float(p.get("start", domain[0])) for p in pieces]
    return ClassKeFn(
        breakpoints=tuple(starts),
        pieces=tuple(_piece_from_dict(p) for p in pieces),
        domain=domain,
        shape=d.get("shape", "general"),
        name=d.get("name", ""),
    )


def evaluate(f: ClassKeFn, x):
    """Evaluate ``f`` at ``x`` (scalar or array); raises DomainError outside the domain."""
    return f(x)


# ---------------------------------------------------------------------------
# constructors


def piecewise(pieces, domain=(-INF, INF), shape="general", name="") -> ClassKeFn:
    """Build from ``[(start, piece), ...]``."""
    starts, ps = zip(*pieces)
    return ClassKeFn(tuple(float(s) for s in starts), tuple(ps), (float(domain[0]), float(domain[1])), shape, name)


def linear(slope: float, domain=(-INF, INF), name="") -> ClassKeFn:
    return piecewise([(domain[0], Linear(float(slope)))], domain, "linear", name)


def power(coef: float, exponent: float, domain=(0.0, INF), name="") -> ClassKeFn:
    if exponent == 1.0:
        shape = "linear"
    elif domain[0] < 0:
        shape = "general"
    else:
        shape = "convex" if exponent > 1.0 else "concave"
    return piecewise([(domain[0], Power(float(coef), float(exponent)))], domain, shape, name)


def signed_sqrt(coef: float, domain=(-INF, INF), name="") -> ClassKeFn:
    shape = "concave" if domain[0] >= 0 else "general"
    return piecewise([(domain[0], SignedSqrt(float(coef)))], domain, shape, name)


def rational(coef: float = 1.0, scale: float = 1.0, domain=(0.0, INF), name="") -> ClassKeFn:
    shape = "concave" if domain[0] >= 0 else "general"
    return piecewise([(domain[0], Rational(float(coef), float(scale)))], domain, shape, name)


def polynomial(coeffs, domain=(0.0, INF), shape="general", name="") -> ClassKeFn:
    return piecewise([(domain[0], Polynomial(tuple(float(c) for c in coeffs)))], domain, shape, name)


def table(xs, ys, shape="general", name="") -> ClassKeFn:
    t = Table(tuple(float(v) for v in xs), tuple(float(v) for v in ys))
    return piecewise([(t.xs[0], t)], (t.xs[0], t.xs[-1]), shape, name)


# ---------------------------------------------------------------------------
# certification


@dataclass
class ClassKCertificate:
    """Sampled certification outcome for one comparison function."""

    passed: bool
    zero_at_zero: bool
    monotone: bool
    shape_ok: bool
    continuous: bool
    interval: tuple
    grid_resolution: int
    claimed_shape: str
    inferred_shape: str
    first_violation: float | None = None
    violation_kind: str | None = None
    jumps: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["interval"] = [_num(v) for v in self.interval]
        return d


def _sample_interval(f: ClassKeFn, interval, span):
    lo, hi = interval if interval is not None else f.domain
    return max(lo, f.domain[0], -span), min(hi, f.domain[1], span)


def _classify(d2: np.ndarray, tol: float) -> str:
    if d2.size == 0 or np.all(np.abs(d2) <= tol):
        return "linear"
    if np.all(d2 >= -tol):
        return "convex"
    if np.all(d2 <= tol):
        return "concave"
    return "general"


def infer_shape(f: ClassKeFn, lo: float, hi: float, n: int = 2001, tol: float = SHAPE_TOL) -> str:
    """Classify ``f`` on ``[lo, hi]`` from sampled second differences."""
    lo, hi = max(lo, f.domain[0]), min(hi, f.domain[1])
    x = np.linspace(lo, hi, n)
    v = f(x)
    return _classify(v[2:] - 2.0 * v[1:-1] + v[:-2], tol)


def certify_class_ke(
    f: ClassKeFn,
    grid_resolution: int = CERT_GRID,
    interval=None,
    span: float = DEFAULT_SPAN,
    shape_tol: float = SHAPE_TOL,
) -> ClassKCertificate:
    """Sampled class-K(_e) certification on a uniform grid.

    Checks ``f(0) = 0``, strict increase between consecutive grid points and
    the claimed shape via second differences. Jumps at breakpoints are
    reported with their magnitude but do not fail the certificate: the
    class-K definition used here only asks for strict increase and a zero
    at zero.
    """
    if int(grid_resolution) < 2:
        raise InvalidInputError("grid_resolution must be >= 2")
    lo, hi = _sample_interval(f, interval, span)
    x = np.linspace(lo, hi, int(grid_resolution))
    v = f(x)
    violations = []

    zero_ok = True
    if lo <= 0.0 <= hi:
        zero_ok = abs(f(0.0)) <= 1e-12
        if not zero_ok:
            violations.append((0.0, "zero-at-zero"))

    dv = np.diff(v)
    bad = np.flatnonzero(~(dv > 0.0))
    monotone = bad.size == 0
    if not monotone:
        violations.append((float(x[bad[0]]), "monotonicity"))

    d2 = v[2:] - 2.0 * v[1:-1] + v[:-2]
    inferred = _classify(d2, shape_tol)
    claimed = f.shape
    if claimed == "convex":
        sbad = np.flatnonzero(d2 < -shape_tol)
    elif claimed == "concave":
        sbad = np.flatnonzero(d2 > shape_tol)
    elif claimed == "linear":
        sbad = np.flatnonzero(np.abs(d2) > shape_tol)
    else:
        sbad = np.array([], dtype=int)
    shape_ok = sbad.size == 0
    if not shape_ok:
        violations.append((float(x[sbad[0] + 1]), "shape"))

    jumps = []
    for i in range(1, len(f.breakpoints)):
        bp = f.breakpoints[i]
        if not lo <= bp <= hi:
            continue
        left = float(f.pieces[i - 1](np.float64(bp)))
        right = float(f.pieces[i](np.float64(bp)))
        mag = abs(right - left)
        if mag > CONT_RTOL * max(1.0, abs(left)):
            jumps.append({"at": bp, "left": left, "right": right, "magnitude": mag})

    first = min(violations, key=lambda t: t[0]) if violations else (None, None)
    return ClassKCertificate(
        passed=zero_ok and monotone and shape_ok,
        zero_at_zero=zero_ok,
        monotone=monotone,
        shape_ok=shape_ok,
        continuous=not jumps,
        interval=(lo, hi),
        grid_resolution=int(grid_resolution),
        claimed_shape=claimed,
        inferred_shape=inferred,
        first_violation=first[0],
        violation_kind=first[1],
        jumps=jumps,
    )


# ---------------------------------------------------------------------------
# domination and reflection


@dataclass
class DominationResult:
    holds: bool
    margin: float
    worst_xi: float

    def __bool__(self):
        return self.holds


def _xi_grid(Lambda: float, grid: int) -> np.ndarray:
    if Lambda == 0.0:
        return np.zeros(1)
    if math.isinf(Lambda):
        return np.concatenate([[0.0], np.geomspace(1e-6, INF_GRID_MAX, grid)])
    return np.linspace(0.0, Lambda, grid)


def check_domination(
    alpha: ClassKeFn,
    alpha_lambda: ClassKeFn,
    Lambda: float,
    grid: int = 1001,
    tol: float = DOMINATION_TOL,
) -> DominationResult:
    """Check ``alpha(-xi) <= -alpha_lambda(xi)`` on a grid over ``[0, Lambda]``.

    Returns the minimum of ``-alpha_lambda(xi) - alpha(-xi)`` as the margin.
    """
    Lambda = float(Lambda)
    if Lambda < 0:
        raise RangeError("Lambda must be nonnegative")
    if Lambda > alpha_lambda.domain[1]:
        raise DomainError(f"Lambda={Lambda} exceeds the domain of alpha_lambda {alpha_lambda.domain}")
    xi = _xi_grid(Lambda, grid)
    gap = -alpha_lambda(xi) - alpha(-xi)
    i = int(np.argmin(gap))
    margin = float(gap[i])
    return DominationResult(margin >= -tol, margin, float(xi[i]))


def negate_reflect(gamma: ClassKeFn, grid_resolution: int = CERT_GRID) -> ClassKeFn:
    """Odd extension ``x -> sgn(x) gamma(|x|)`` of a class-K function."""
    if gamma.domain[0] != 0.0:
        raise InvalidInputError("gamma must be a class-K function with domain starting at 0")
    cert = certify_class_ke(gamma, grid_resolution)
    if not (cert.zero_at_zero and cert.monotone):
        raise InvalidInputError(f"gamma fails class-K certification ({cert.violation_kind} at {cert.first_violation})")
    hi = gamma.domain[1]
    shape = "linear" if gamma.shape == "linear" else "general"
    return piecewise([(-hi, Odd(gamma))], (-hi, hi), shape, f"odd({gamma.name})" if gamma.name else "")


def reflect_negative(alpha: ClassKeFn, Lambda: float) -> ClassKeFn:
    """``xi -> -alpha(-xi)`` on ``[0, Lambda]``, the direct shift-rate choice."""
    hi = min(float(Lambda), -alpha.domain[0])
    f = piecewise([(0.0, Reflect(alpha))], (0.0, hi), "general", "reflect")
    span = hi if math.isfinite(hi) else DEFAULT_SPAN
    return ClassKeFn(f.breakpoints, f.pieces, f.domain, infer_shape(f, 0.0, span), f.name)


def right_derivative_at_zero(f: ClassKeFn) -> float:
    return float(f.derivative(0.0, "right"))


# ---------------------------------------------------------------------------
# beta compositions


@dataclass
class BetaComposition:
    """Upper bound ``beta`` with ``alpha1(x1) + alpha2(x2) <= beta(x1 + x2)``.

    Valid for ``x1 in [-A, x1_max]`` and ``x2 in [0, A]``; ``x1_max`` is
    infinite unless the majorant of ``alpha1`` was fitted on a finite range.
    """

    beta: ClassKeFn
    case: str
    A: float
    alpha2_extended: ClassKeFn
    construction: str = "linear-continuation"
    alpha1_majorant: ClassKeFn | None = None
    continuation_slope: float = float("nan")
    continuation_strict: bool = True
    majorant_lifted: bool = False
    x1_max: float = INF
    certificate: ClassKCertificate | None = None

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "construction": self.construction,
            "A": _num(self.A),
            "x1_max": _num(self.x1_max),
            "continuation_slope": _num(self.continuation_slope),
            "continuation_strict": self.continuation_strict,
            "majorant_lifted": self.majorant_lifted,
            "beta": self.beta.to_dict(),
            "certificate": self.certificate.to_dict() if self.certificate else None,
        }


def _require_domination(alpha1, alpha2, A, grid):
    dom = check_domination(alpha1, alpha2, A, grid)
    if not dom.holds:
        raise CompositionInfeasibleError(
            f"alpha1(-x) <= -alpha2(x) fails at x={dom.worst_xi:.6g} (margin {dom.margin:.3g}); "
            "no extended class-K_e bound exists",
            witness=dom.worst_xi,
            margin=dom.margin,
        )
    return dom


def _below_continuation(alpha1, slope, A, grid):
    """Whether ``alpha1(x) <= slope * x`` on ``[-A, 0]``, with the worst point."""
    if math.isfinite(A):
        xs = -np.linspace(0.0, A, grid)[1:]
    else:
        xs = -np.logspace(-6, math.log10(INF_GRID_MAX), grid)
    gap = slope * xs - np.asarray(alpha1(xs), dtype=float)
    i = int(np.argmin(gap + DOMINATION_TOL * (1.0 + np.abs(xs))))
    ok = bool(gap[i] >= -DOMINATION_TOL * (1.0 + abs(xs[i])))
    return ok, float(xs[i]), float(gap[i])


def _convex_majorant(alpha1: ClassKeFn, A: float, x_max: float | None):
    """Convex class-K function above ``alpha1`` on x >= 0, plus its validity bound."""
    x_max = 10.0 * A if x_max is None else float(x_max)
    probe_hi = min(x_max, alpha1.domain[1])
    if infer_shape(alpha1, 0.0, probe_hi) in ("linear", "convex") and math.isinf(alpha1.domain[1]):
        return piecewise([(0.0, Shift(alpha1))], (0.0, INF), "convex", "alpha1"), INF
    xs = np.linspace(0.0, probe_hi, 10_001)[1:]
    slope = float(np.max(alpha1(xs) / xs))
    return linear(slope, (0.0, INF), "alpha1-majorant"), probe_hi


def _extend_convex(alpha2, alpha1, A, x_max=None, grid_resolution=CERT_GRID):
    A = float(A)
    if not (0.0 < A < INF):
        raise InvalidInputError("convex extension needs a finite A > 0")
    if alpha2.domain[0] > 0.0 or alpha2.domain[1] < A:
        raise DomainError(f"alpha2 must be defined on [0, {A}]")
    cert = certify_class_ke(
        ClassKeFn(alpha2.breakpoints, alpha2.pieces, alpha2.domain, "convex", alpha2.name),
        grid_resolution,
        interval=(0.0, A),
    )
    if not cert.passed:
        raise InvalidInputError(f"alpha2 is not a certified convex class-K function on [0, A]: {cert.violation_kind} at {cert.first_violation}")
    s0 = right_derivative_at_zero(alpha2)
    if not s0 > 0.0:
        raise DegenerateExtensionError(
            "right derivative of alpha2 at 0 is 0; no strictly increasing convex continuation "
            "exists below 0 (perturb alpha2, e.g. add eps*x)"
        )
    majorant, x1_max = _convex_majorant(alpha1, A, x_max)
    # the continuation above A must not bend down, else the extension stops being convex
    slope_A = float(alpha2.derivative(A, "left"))
    lifted = False
    if right_derivative_at_zero(majorant) < slope_A:
        majorant = piecewise(
            [(0.0, Max((majorant, linear(slope_A, (0.0, INF)))))], (0.0, INF), "convex", "alpha1-majorant"
        )
        lifted = True
    a2A = float(alpha2(A))
    ext = piecewise(
        [(-INF, Linear(s0)), (0.0, Shift(alpha2)), (A, Shift(majorant, A, a2A))],
        (-INF, INF),
        "convex",
        "alpha2-extended",
    )
    return ext, majorant, s0, lifted, x1_max


def extend_convex(alpha2: ClassKeFn, alpha1: ClassKeFn, A: float, x_max: float | None = None) -> ClassKeFn:
    """Convex extended class-K_e continuation of ``alpha2`` beyond ``[0, A]``.

    Below 0 the continuation is linear with the right derivative at 0;
    above ``A`` it follows ``alpha2(A) + alpha1'(x - A)`` for a convex
    majorant ``alpha1'`` of ``alpha1`` whose slope at 0 is at least the left
    slope of ``alpha2`` at ``A``.
    """
    return _extend_convex(alpha2, alpha1, A, x_max)[0]


def compose_beta_convex(
    alpha1: ClassKeFn,
    alpha2: ClassKeFn,
    A: float,
    grid: int = 1001,
    x_max: float | None = None,
) -> BetaComposition:
    """Upper bound for a convex class-K ``alpha2`` on ``[0, A]`` (A finite)."""
    A = float(A)
    if not (0.0 < A < INF):
        raise InvalidInputError("the convex case requires a finite A > 0")
    _require_domination(alpha1, alpha2, A, grid)
    ext, majorant, s0, lifted, x1_max = _extend_convex(alpha2, alpha1, A, x_max)
    eA = float(ext(A))
    beta = piecewise(
        [(-INF, Shift(ext)), (0.0, Shift(ext, -A, -eA))], (-INF, INF), "general", "beta-convex"
    )
    return BetaComposition(
        beta=beta,
        case="convex",
        A=A,
        alpha2_extended=ext,
        alpha1_majorant=majorant,
        continuation_slope=s0,
        majorant_lifted=lifted,
        x1_max=x1_max,
        certificate=certify_class_ke(beta, 2001, interval=(-2 * A, 2 * A)),
    )


def _extend_right(f: ClassKeFn) -> ClassKeFn:
    """Continue ``f`` linearly past a finite upper domain end."""
    hi = f.domain[1]
    if math.isinf(hi):
        return f
    slope = float(f.derivative(hi, "left"))
    return piecewise(
        [(f.domain[0], Shift(f)), (hi, Linear(slope, float(f(hi)) - slope * hi))],
        (f.domain[0], INF),
        f.shape,
        f.name,
    )


def compose_beta_concave(
    alpha1: ClassKeFn,
    alpha2: ClassKeFn,
    A: float = INF,
    grid: int = 1001,
) -> BetaComposition:
    """Upper bound for a concave class-K ``alpha2``; ``A`` may be infinite.

    On the negative side ``s = x1 + x2 < 0`` two bounds are valid:

    - the linear continuation ``s0 * s`` with ``s0`` the right derivative of
      ``alpha2`` at 0, provided ``alpha1(x1) <= s0 * x1`` on ``[-A, 0]``
      (then ``alpha2(x2) <= s0 * x2`` by concavity closes the bound);
    - for finite ``A``, the shifted difference ``alpha2(A + s) - alpha2(A)``.
      Domination alone gives ``alpha1(x1) + alpha2(x2) <= alpha2(x2) -
      alpha2(x2 - s)``, which grows with ``x2`` for concave ``alpha2`` and
      peaks at ``x2 = A + s``.

    Domination by itself does not make the linear continuation valid: with
    ``alpha1(x1) = -alpha2(-x1)`` and strictly concave ``alpha2`` the sum
    ``alpha2(x2) - alpha2(x2 - s)`` exceeds ``s0 * s``. With infinite ``A``
    and ``alpha1`` above the continuation no class-K_e bound is built and
    ``CompositionInfeasibleError`` is raised.
    """
    A = float(A)
    if not A > 0.0:
        raise InvalidInputError("A must be positive")
    _require_domination(alpha1, alpha2, A, grid)
    span = A if math.isfinite(A) else DEFAULT_SPAN
    cert = certify_class_ke(
        ClassKeFn(alpha2.breakpoints, alpha2.pieces, alpha2.domain, "concave", alpha2.name),
        CERT_GRID,
        interval=(0.0, min(span, alpha2.domain[1])),
    )
    if not cert.passed:
        raise InvalidInputError(f"alpha2 is not a certified concave class-K function: {cert.violation_kind} at {cert.first_violation}")
    a2 = _extend_right(alpha2)
    s0 = right_derivative_at_zero(alpha2)
    below = _below_continuation(alpha1, s0, A, grid) if math.isfinite(s0) and s0 > 0.0 else None
    if below is not None and below[0]:
        ext = piecewise([(-INF, Linear(s0)), (0.0, Shift(a2))], (-INF, INF), "concave", "alpha2-extended")
        construction = "linear-continuation"
        negative = Shift(ext)
    elif math.isfinite(A):
        a2A = float(a2(A))
        secant = a2A / A
        ext = piecewise(
            [(-INF, Linear(secant, -a2A + secant * A)), (-A, Shift(a2, -A, -a2A))],
            (-INF, 0.0),
            "general",
            "alpha2-shifted-difference",
        )
        construction = "shifted-difference"
        negative = Shift(ext)
        s0 = secant
    elif below is None:
        raise DegenerateExtensionError(
            "right derivative of alpha2 at 0 is infinite and A is infinite: no concave extended "
            "class-K_e continuation exists"
        )
    else:
        raise CompositionInfeasibleError(
            f"A is infinite and alpha1(x) > {s0:.6g} x at x={below[1]:.6g}: the linear continuation "
            "does not bound the sum and no finite A is available for the shifted difference",
            witness=below[1],
            margin=below[2],
        )
    beta = piecewise(
        [(-INF, negative), (0.0, Sum((alpha1, a2)))], (-INF, INF), "general", "beta-concave"
    )
    return BetaComposition(
        beta=beta,
        case="concave",
        A=A,
        alpha2_extended=ext,
        construction=construction,
        continuation_slope=s0,
        certificate=certify_class_ke(beta, 2001, interval=(-min(2 * span, A), 2 * span)),
    )


@dataclass
class SumBoundCheck:
    n: int
    violations: int
    worst_gap: float
    worst_pair: tuple


def sample_sum_bound(
    alpha1: ClassKeFn,
    alpha2: ClassKeFn,
    beta: ClassKeFn,
    A: float,
    n: int = 100_000,
    seed: int = 0,
    x1_max: float | None = None,
    tol: float = 1e-9,
) -> SumBoundCheck:
    """Randomized check of ``alpha1(x1) + alpha2(x2) <= beta(x1 + x2) + tol``.

    Samples ``x1 in [-A, x1_max]``, ``x2 in [0, A]``. For infinite ``A`` the
    magnitudes are drawn log-uniformly up to 1e6.
    """
    rng = np.random.default_rng(seed)
    if math.isfinite(A):
        hi = 10.0 * A if x1_max is None else min(float(x1_max), 10.0 * A)
        x1 = rng.uniform(-A, hi, n)
        x2 = rng.uniform(0.0, A, n)
        # the diagonal x1 = -x2 is where the bound is tightest
        k = n // 10
        x2[:k] = rng.uniform(0.0, A, k)
        x1[:k] = -x2[:k] * rng.uniform(0.9, 1.0, k)
    else:
        top = math.log10(INF_GRID_MAX)
        mag1 = 10.0 ** rng.uniform(-6, top, n)
        x1 = np.where(rng.random(n) < 0.5, -mag1, mag1)
        if x1_max is not None:
            x1 = np.minimum(x1, x1_max)
        x2 = 10.0 ** rng.uniform(-6, top, n)
    gap = beta(x1 + x2) - (alpha1(x1) + alpha2(x2))
    i = int(np.argmin(gap))
    return SumBoundCheck(n, int(np.sum(gap < -tol)), float(gap[i]), (float(x1[i]), float(x2[i])))
