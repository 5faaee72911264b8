"""Run configuration files.

A config is a YAML mapping. Every section is optional except that either
``example`` or ``barrier`` must be present::

    example: pendulum            # catalog name
    params:                      # overrides of the example's parameters
      dt: 1.0e-3
    verify:
      grid: 201                  # points per axis (or total, for point clouds)
      tol: 1.0e-6
    compose:
      certify: true              # run the product-grid audit
      alpha_lambda:              # optional replacement comparison function
        kind: linear             # linear | power | sqrt | full descriptor
        slope: 1.0
      lambda:                    # optional replacement shift trajectory
        knots: [[0, 1.0], [2, 0.5], [2, 0.8], [5, 0.0]]
        jumps: [2]
        Lambda: 1.0
    simulate:
      x0: [0.6, 0.3]
      dt: 2.0e-3
      dt_ctrl: null              # null: input re-evaluated at every RK4 stage
      mode: hard                 # hard | soft
      random_x0: 0               # extra runs from random initial states
      seed: 0
    output:
      dir: out
      plots: true

An externally synthesized barrier replaces ``example`` with a ``barrier``
section; see ``configs/external_table.yaml``. All quantities are SI.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .classk import ClassKeFn, Linear, Power, SignedSqrt, from_dict, piecewise
from .errors import AssumptionViolationError, CompositionRefusedError, ConfigError, InvalidInputError, RangeError
from .lambda_traj import LambdaTrajectory, Segment, max_rate_descent, piecewise_linear

SCHEMA = {
    "example": str,
    "params": dict,
    "barrier": dict,
    "verify": {"grid": (int, list), "tol": float},
    "compose": {"certify": bool, "alpha_lambda": dict, "lambda": dict},
    "simulate": {"x0": list, "dt": float, "dt_ctrl": (float, type(None)), "mode": str, "random_x0": int, "seed": int},
    "output": {"dir": str, "plots": bool},
}
BARRIER_KEYS = {"kind", "path", "dynamics", "params", "alpha", "Lambda", "grid"}


@dataclass
class RunConfig:
    example: str | None = None
    params: dict = field(default_factory=dict)
    barrier: dict | None = None
    verify: dict = field(default_factory=dict)
    compose: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    path: Path | None = None
    lines: dict = field(default_factory=dict)

    def line_of(self, key: str):
        return self.lines.get(key)


def _key_lines(node, prefix="", out=None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            name = f"{prefix}{k.value}"
            out[name] = k.start_mark.line + 1
            _key_lines(v, name + ".", out)
    return out


def _type_ok(value, expected) -> bool:
    kinds = expected if isinstance(expected, tuple) else (expected,)
    if float in kinds and isinstance(value, int) and not isinstance(value, bool):
        return True
    if int in kinds and isinstance(value, bool):
        return False
    return isinstance(value, kinds)


def parse_config(text: str, path=None) -> RunConfig:
    """Parse and validate config text; raises ConfigError with line and field."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"not valid YAML ({getattr(exc, 'problem', exc)})", line=line) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)
    lines = _key_lines(node)

    for key, value in data.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown section; expected one of {sorted(SCHEMA)}", str(key), lines.get(str(key)))
        spec = SCHEMA[key]
        if isinstance(spec, dict):
            if value is None:
                data[key] = value = {}
            if not isinstance(value, dict):
                raise ConfigError("must be a mapping", key, lines.get(key))
            for sub, v in value.items():
                name = f"{key}.{sub}"
                if sub not in spec:
                    raise ConfigError(f"unknown key; expected one of {sorted(spec)}", name, lines.get(name))
                if not _type_ok(v, spec[sub]):
                    raise ConfigError(f"has type {type(v).__name__}", name, lines.get(name))
        elif not _type_ok(value, spec):
            raise ConfigError(f"must be a {spec.__name__}", key, lines.get(key))

    if ("example" in data) == ("barrier" in data):
        raise ConfigError("give exactly one of 'example' or 'barrier'", line=1)
    if "example" in data:
        from .catalog import example_catalog

        names = [s.name for s in example_catalog()]
        if data["example"] not in names:
            raise ConfigError(f"unknown example {data['example']!r}; choose from {names}", "example", lines.get("example"))
    if "barrier" in data:
        bad = set(data["barrier"]) - BARRIER_KEYS
        if bad:
            name = f"barrier.{sorted(bad)[0]}"
            raise ConfigError(f"unknown key; expected one of {sorted(BARRIER_KEYS)}", name, lines.get(name))
    mode = data.get("simulate", {}).get("mode", "hard")
    if mode not in ("hard", "soft"):
        raise ConfigError("must be 'hard' or 'soft'", "simulate.mode", lines.get("simulate.mode"))

    return RunConfig(
        example=data.get("example"),
        params=dict(data.get("params") or {}),
        barrier=data.get("barrier"),
        verify=dict(data.get("verify") or {}),
        compose=dict(data.get("compose") or {}),
        simulate=dict(data.get("simulate") or {}),
        output=dict(data.get("output") or {}),
        path=Path(path) if path is not None else None,
        lines=lines,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path)


# ---------------------------------------------------------------------------
# builders for the compose section


def alpha_from_config(d: dict, Lambda: float = math.inf, where: str = "compose.alpha_lambda", lines=None) -> ClassKeFn:
    """Class-K function from a shorthand ``{kind, ...}`` or a full piece descriptor."""
    lines = lines or {}
    dom = (0.0, Lambda)
    try:
        if "pieces" in d:
            return from_dict(d)
        kind = d.get("kind")
        if kind == "linear":
            return piecewise([(0.0, Linear(float(d["slope"])))], dom, "linear", "alpha_lambda")
        if kind == "sqrt":
            return piecewise([(0.0, SignedSqrt(float(d["coef"])))], dom, "concave", "alpha_lambda")
        if kind == "power":
            p = float(d["exponent"])
            shape = "convex" if p > 1 else "concave" if p < 1 else "linear"
            return piecewise([(0.0, Power(float(d["coef"]), p))], dom, shape, "alpha_lambda")
    except KeyError as exc:
        raise ConfigError(f"missing parameter {exc.args[0]!r}", where, lines.get(where)) from None
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), where, lines.get(where)) from None
    raise ConfigError(f"unknown kind {d.get('kind')!r}; expected linear, sqrt, power or a 'pieces' list", where, lines.get(where))


def trajectory_from_config(d: dict, alpha_lambda: ClassKeFn | None = None, lines=None) -> LambdaTrajectory:
    """Shift trajectory from ``knots``/``jumps``, ``segments`` or ``max_rate``.

    A downward jump surfaces as a composition refusal naming the
    trajectory-continuity assumption.
    """
    where = "compose.lambda"
    lines = lines or {}
    Lambda = float(d.get("Lambda", math.inf))
    try:
        if "knots" in d:
            return piecewise_linear(d["knots"], d.get("jumps", ()), Lambda)
        if "segments" in d:
            segs = []
            for s in d["segments"]:
                s = dict(s)
                segs.append(Segment(float(s.pop("t0")), float(s.pop("t1")), s.pop("kind"), s))
            return LambdaTrajectory(tuple(segs), Lambda)
        if "max_rate" in d:
            if alpha_lambda is None:
                raise ConfigError("max_rate needs compose.alpha_lambda", where, lines.get(where))
            m = d["max_rate"]
            return max_rate_descent(alpha_lambda, float(m["lambda0"]), float(m.get("t0", 0.0)), float(m["horizon"]), Lambda=Lambda)
    except AssumptionViolationError as exc:
        raise CompositionRefusedError("assumption-1", str(exc)) from None
    except KeyError as exc:
        raise ConfigError(f"missing parameter {exc.args[0]!r}", where, lines.get(where)) from None
    except (InvalidInputError, RangeError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), where, lines.get(where)) from None
    raise ConfigError("give one of 'knots', 'segments' or 'max_rate'", where, lines.get(where))


# ---------------------------------------------------------------------------
# external barrier tables


def table_barrier(path):
    """Barrier from an ``.npz`` table with ``axes_0 .. axes_{n-1}`` and ``values``.

    Values are interpolated multilinearly; derivatives come from the
    difference-quotient schedule since the interpolant has kinks on every
    cell face.
    """
    from scipy.interpolate import RegularGridInterpolator

    from .barrier import BarrierFn

    with np.load(path) as data:
        values = np.asarray(data["values"], dtype=float)
        axes = [np.asarray(data[f"axes_{i}"], dtype=float) for i in range(values.ndim)]
    interp = RegularGridInterpolator(axes, values, bounds_error=False, fill_value=None)

    def fn(x):
        x = np.asarray(x, dtype=float)
        return interp(x.reshape(-1, x.shape[-1])).reshape(x.shape[:-1])

    return BarrierFn(fn, (), name=os.path.basename(str(path))), axes
