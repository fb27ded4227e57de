"""Scenario documents (flat TOML) and the built-in presets."""
from __future__ import annotations

import dataclasses
import hashlib
import math
import re
import sys
from dataclasses import dataclass, fields
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .kernels import KernelSpecError, format_kernel, parse_kernel

KINDS = ("riccati", "kinetic", "ibm", "pair", "occupation")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    # grid
    L: Optional[float] = None
    N: Optional[int] = None
    # rates and kernels, canonical text forms
    a_plus: Optional[str] = None
    a_minus: Optional[str] = None
    b_plus: Optional[str] = None
    b_minus: Optional[str] = None
    rho0: Optional[str] = None
    # time stepping
    t_end: Optional[float] = None
    dt: Optional[float] = None
    snapshot_times: Optional[tuple] = None
    method: Optional[str] = None
    adaptive: Optional[bool] = None
    tol: Optional[float] = None
    steady_tol: Optional[float] = None
    steady_absolute: Optional[bool] = None
    stop_at_steady: Optional[bool] = None
    # homogeneous Riccati model
    b: Optional[float] = None
    a: Optional[float] = None
    alpha: Optional[float] = None
    rho0_value: Optional[float] = None
    n_times: Optional[int] = None
    # pair dynamics
    closure: Optional[str] = None
    mode: Optional[str] = None
    # individual-based model
    seed: Optional[int] = None
    replicas: Optional[int] = None
    snapshot_interval: Optional[float] = None
    vessel: Optional[tuple] = None
    n0: Optional[int] = None
    burn_in: Optional[float] = None
    k_max: Optional[int] = None
    # occupation spectra
    kappa: Optional[float] = None
    n_max: Optional[int] = None

    def resolved(self) -> "Scenario":
        """Copy with every unset field of this kind filled from the defaults."""
        fill = {k: v for k, v in DEFAULTS[self.kind].items() if getattr(self, k) is None}
        return dataclasses.replace(self, **fill)

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()


_FIELDS = {f.name: f for f in fields(Scenario)}
_REAL = {"L", "t_end", "dt", "tol", "steady_tol", "b", "a", "alpha", "rho0_value",
         "snapshot_interval", "burn_in", "kappa"}
_INT = {"N", "n_times", "seed", "replicas", "n0", "k_max", "n_max"}
_BOOL = {"adaptive", "steady_absolute", "stop_at_steady"}
_STR = {"name", "kind", "method", "closure", "mode"}
_KERNEL = {"a_plus", "a_minus", "b_plus", "b_minus", "rho0"}
_LIST = {"snapshot_times", "vessel"}

_KINETIC_KEYS = ("L", "N", "a_plus", "a_minus", "b_plus", "b_minus", "rho0", "t_end")
REQUIRED = {
    "riccati": ("b", "a", "alpha", "rho0_value", "t_end"),
    "kinetic": _KINETIC_KEYS,
    "pair": _KINETIC_KEYS,
    "ibm": ("L", "a_plus", "a_minus", "b_plus", "b_minus", "t_end", "vessel"),
    "occupation": ("kappa", "vessel"),
}
ALLOWED = {
    "riccati": {"b", "a", "alpha", "rho0_value", "t_end", "n_times"},
    "kinetic": set(_KINETIC_KEYS) | {"dt", "snapshot_times", "method", "adaptive", "tol",
                                     "steady_tol", "steady_absolute", "stop_at_steady"},
    "pair": set(_KINETIC_KEYS) | {"dt", "snapshot_times", "closure", "mode"},
    "ibm": {"L", "a_plus", "a_minus", "b_plus", "b_minus", "t_end", "vessel", "seed",
            "replicas", "snapshot_interval", "n0", "burn_in", "k_max"},
    "occupation": {"kappa", "vessel", "n_max"},
}
DEFAULTS = {
    "riccati": {"n_times": 201},
    "kinetic": {"dt": 1e-3, "method": "auto", "adaptive": False, "tol": 1e-8,
                "steady_tol": 1e-6, "steady_absolute": True, "stop_at_steady": True},
    "pair": {"dt": 1e-3, "closure": "meanfield", "mode": "free"},
    "ibm": {"seed": 0, "replicas": 1, "snapshot_interval": 1.0, "n0": 0, "burn_in": 0.2,
            "k_max": 4},
    "occupation": {"n_max": 60},
}


def _line_of(text: str, key: str) -> int:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return i
    return 0


def _where(text, key):
    line = _line_of(text, key)
    return f"line {line}: " if line else ""


def _coerce(key, value, text):
    at = _where(text, key)
    if key in _BOOL:
        if not isinstance(value, bool):
            raise ScenarioError(f"{at}{key} must be true/false, got {value!r}")
        return value
    if key in _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"{at}{key} must be an integer, got {value!r}")
        return value
    if key in _REAL:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"{at}{key} must be a number, got {value!r}")
        return float(value)
    if key in _LIST:
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ScenarioError(f"{at}{key} must be a list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    if not isinstance(value, str):
        raise ScenarioError(f"{at}{key} must be a string, got {value!r}")
    if key in _KERNEL:
        try:
            return format_kernel(parse_kernel(value))
        except KernelSpecError as exc:
            raise ScenarioError(f"{at}{key}: {exc}") from None
    return value


def parse_scenario(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"malformed scenario document: {exc}") from None
    missing = [k for k in ("name", "kind") if k not in doc]
    if missing:
        raise ScenarioError(f"missing required field(s): {', '.join(missing)}")
    kind = doc["kind"]
    if kind not in KINDS:
        raise ScenarioError(f"{_where(text, 'kind')}unknown kind {kind!r}; expected one of {KINDS}")
    allowed = ALLOWED[kind] | {"name", "kind"}
    values = {}
    for key, value in doc.items():
        if key not in _FIELDS:
            raise ScenarioError(f"{_where(text, key)}unknown key {key!r}")
        if key not in allowed:
            raise ScenarioError(f"{_where(text, key)}key {key!r} does not apply to kind {kind!r}")
        values[key] = _coerce(key, value, text)
    missing = [k for k in REQUIRED[kind] if k not in values]
    if missing:
        raise ScenarioError(f"{kind} scenario missing required field(s): {', '.join(missing)}")
    s = Scenario(**values)
    validate(s)
    return s


def validate(s: Scenario) -> None:
    r = s.resolved()
    if r.vessel is not None and (len(r.vessel) != 2 or not r.vessel[1] > r.vessel[0]):
        raise ScenarioError(f"vessel must be [lo, hi] with hi > lo, got {list(r.vessel)}")
    if r.t_end is not None and r.t_end < 0:
        raise ScenarioError("t_end must be >= 0")
    if r.kind == "pair" and r.N is not None and r.N > 256:
        raise ScenarioError(f"pair scenarios need N <= 256, got {r.N}")
    if r.kind == "pair" and r.mode not in ("free", "reclose"):
        raise ScenarioError(f"mode must be 'free' or 'reclose', got {r.mode!r}")
    if r.kind == "pair" and r.closure not in ("meanfield", "kirkwood"):
        raise ScenarioError(f"closure must be 'meanfield' or 'kirkwood', got {r.closure!r}")


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, tuple):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize(s: Scenario) -> str:
    lines = []
    for f in fields(Scenario):
        v = getattr(s, f.name)
        if v is not None:
            lines.append(f"{f.name} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


def as_dict(s: Scenario) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v)
            for k, v in dataclasses.asdict(s).items() if v is not None}


# presets ------------------------------------------------------------------------------

_FIG_TIMES = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)


def _fig(name, L, a_plus, a_minus, b_plus, b_minus, rho0, t_end=100.0, times=_FIG_TIMES):
    return Scenario(name=name, kind="kinetic", L=L, N=512, a_plus=a_plus, a_minus=a_minus,
                    b_plus=b_plus, b_minus=b_minus, rho0=rho0, t_end=t_end, dt=1e-3,
                    snapshot_times=times, steady_tol=1e-6, steady_absolute=True,
                    stop_at_steady=True)


def _ric(name, a, b, alpha, rho0):
    return Scenario(name=name, kind="riccati", b=b, a=a, alpha=alpha, rho0_value=rho0,
                    t_end=5.0, n_times=201)


def _norm(s: Scenario) -> Scenario:
    return parse_scenario(serialize(s))


_PRESETS = [
    _ric("fig1a", 3.0, 1.0, -1.0, 0.0),
    _ric("fig1b", 3.0, 1.0, -1.0, 3.0),
    _ric("fig1c", 1.0, 2.0, 1.0, 0.0),
    _ric("fig1d", 1.0, 2.0, 1.0, 3.0),
    _fig("fig2L", 40.0, "gaussian(1,1)", "gaussian(1,1)", "pgaussian(10,1,5)",
         "pgaussian(10,5,-5)", "const(1)"),
    _fig("fig2R", 40.0, "gaussian(1,1)", "gaussian(1,1)", "pgaussian(10,5,5)",
         "pgaussian(10,1,-5)", "const(1)"),
    _fig("fig3L", 40.0, "gaussian(2,0.5)", "gaussian(2,5)", "const(0.1)", "const(0.1)",
         "pgaussian(20,3,5)"),
    _fig("fig3R", 40.0, "gaussian(2,5)", "gaussian(2,0.5)", "const(0.1)", "const(0.1)",
         "pgaussian(20,3,5)"),
    _fig("fig4L", 60.0, "gaussian(2,4)", "sgaussian(1,3,5)", "const(0.1)", "const(0.1)",
         "pgaussian(10,2,5)"),
    _fig("fig4R", 60.0, "gaussian(2,4)", "sgaussian(1,3,10)", "const(0.1)", "const(0.1)",
         "pgaussian(10,2,5)"),
    _fig("fig5", 60.0, "gaussian(1,1)", "sgaussian(1,2,10)", "const(0.1)", "const(0.1)",
         "pgaussian(20,10)"),
    Scenario(name="long-competition", kind="ibm", L=40.0, b_plus="const(1)",
             b_minus="const(0.5)", a_plus="gaussian(0.2,1)", a_minus="gaussian(0.5,3)",
             t_end=50.0, snapshot_interval=5.0, vessel=(0.0, 5.0), seed=7, replicas=1000,
             n0=0, burn_in=0.0, k_max=4),
    Scenario(name="weak-interaction", kind="ibm", L=50.0, b_plus="const(1)",
             b_minus="const(1)", a_plus="gaussian(0.1,1)", a_minus="gaussian(0.1,2)",
             t_end=5000.0, snapshot_interval=1.0, vessel=(0.0, 5.0), seed=11, replicas=1,
             n0=0, burn_in=0.2, k_max=4),
    Scenario(name="immigration-death", kind="ibm", L=50.0, b_plus="const(1)",
             b_minus="const(1)", a_plus="zero", a_minus="zero", t_end=25000.0,
             snapshot_interval=2.0, vessel=(0.0, 3.0), seed=3, replicas=1, n0=0,
             burn_in=0.2, k_max=4),
    Scenario(name="cox-occupation", kind="occupation", kappa=1.0, vessel=(0.0, 2.0 * math.e),
             n_max=60),
]
PRESETS = {s.name: _norm(s) for s in _PRESETS}
GROUPS = {"fig1": ("fig1a", "fig1b", "fig1c", "fig1d")}


def preset(name: str) -> Scenario:
    if name not in PRESETS:
        names = ", ".join(list(PRESETS) + list(GROUPS))
        raise ScenarioError(f"unknown preset {name!r}; available: {names}")
    return PRESETS[name]
