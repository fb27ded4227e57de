"""Gaussian-family kernels and rates: evaluation, integrals, grid sampling.

Text forms (used in scenario files)::

    zero | const(v) | gaussian(c,r) | sgaussian(c,r,s) | pgaussian(c,r[,s[,p]])

``G(x; c, r) = c / (r sqrt(2 pi)) exp(-x^2 / (2 r^2))`` has total mass ``c``.
A periodic Gaussian without an explicit period takes the torus length it is
evaluated on.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ._accel import kernel
from .grid import Field, Grid1D

TRUNCATION = 1e-14
# |x| beyond which a unit-width Gaussian term is below TRUNCATION * peak
_CUT_SIGMAS = math.sqrt(2.0 * math.log(1.0 / TRUNCATION))
_SQRT_2PI = math.sqrt(2.0 * math.pi)

KINDS = ("zero", "const", "gaussian", "sgaussian", "pgaussian")
_CODE = {name: i for i, name in enumerate(KINDS)}


class KernelSpecError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    c: float = 0.0
    r: float = 1.0
    s: float = 0.0
    period: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KernelSpecError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        for name in ("c", "r", "s"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise KernelSpecError(f"{self.kind}: {name} must be finite, got {v}")
        if self.c < 0:
            raise KernelSpecError(f"{self.kind}: amplitude must be >= 0, got {self.c}")
        if self.kind in ("gaussian", "sgaussian", "pgaussian") and not self.r > 0:
            raise KernelSpecError(f"{self.kind}: width r must be > 0, got {self.r}")
        if self.period is not None and not self.period > 0:
            raise KernelSpecError(f"{self.kind}: period must be > 0, got {self.period}")

    # constructors ---------------------------------------------------------
    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def const(cls, v):
        return cls("const", c=float(v))

    @classmethod
    def gaussian(cls, c, r):
        return cls("gaussian", c=float(c), r=float(r))

    @classmethod
    def shifted(cls, c, r, s):
        return cls("sgaussian", c=float(c), r=float(r), s=float(s))

    @classmethod
    def periodic(cls, c, r, s=0.0, period=None):
        return cls("pgaussian", c=float(c), r=float(r), s=float(s),
                   period=None if period is None else float(period))

    # ---------------------------------------------------------------------
    def resolved(self, length: float) -> "KernelSpec":
        """Fix the period of a periodic Gaussian to ``length`` unless already set."""
        if self.kind == "pgaussian" and self.period is None:
            return replace(self, period=float(length))
        return self

    @property
    def peak(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "const":
            return self.c
        return self.c / (self.r * _SQRT_2PI)

    @property
    def support(self) -> float:
        """Half-width outside which the kernel is below the truncation level."""
        if self.kind == "zero":
            return 0.0
        if self.kind in ("const", "pgaussian"):
            return math.inf
        cut = self.r * _CUT_SIGMAS
        return cut + (abs(self.s) if self.kind == "sgaussian" else 0.0)

    def __str__(self):
        return format_kernel(self)


def _num(v: float) -> str:
    return repr(float(v))


def format_kernel(spec: KernelSpec) -> str:
    k = spec.kind
    if k == "zero":
        return "zero"
    if k == "const":
        return f"const({_num(spec.c)})"
    if k == "gaussian":
        return f"gaussian({_num(spec.c)},{_num(spec.r)})"
    if k == "sgaussian":
        return f"sgaussian({_num(spec.c)},{_num(spec.r)},{_num(spec.s)})"
    args = [spec.c, spec.r, spec.s] + ([spec.period] if spec.period is not None else [])
    return "pgaussian(" + ",".join(_num(a) for a in args) + ")"


_TEXT = re.compile(r"^\s*([a-z]+)\s*(?:\((.*)\))?\s*$")
_ARITY = {"zero": (0, 0), "const": (1, 1), "gaussian": (2, 2), "sgaussian": (3, 3),
          "pgaussian": (2, 4)}


def parse_kernel(text: str) -> KernelSpec:
    m = _TEXT.match(text)
    if not m:
        raise KernelSpecError(f"malformed kernel text {text!r}")
    name, body = m.group(1), m.group(2)
    if name not in _ARITY:
        raise KernelSpecError(f"unknown kernel {name!r} in {text!r}; expected one of {KINDS}")
    try:
        args = [float(a) for a in body.split(",")] if body and body.strip() else []
    except ValueError:
        raise KernelSpecError(f"non-numeric argument in kernel text {text!r}") from None
    lo, hi = _ARITY[name]
    if not lo <= len(args) <= hi:
        raise KernelSpecError(f"{name} takes {lo}..{hi} arguments, got {len(args)} in {text!r}")
    if name == "zero":
        return KernelSpec.zero()
    if name == "const":
        return KernelSpec.const(args[0])
    if name == "gaussian":
        return KernelSpec.gaussian(*args)
    if name == "sgaussian":
        return KernelSpec.shifted(*args)
    return KernelSpec.periodic(*args)


# evaluation -------------------------------------------------------------------

def _gauss(x, c, r):
    return c / (r * _SQRT_2PI) * np.exp(-0.5 * (x / r) ** 2)


def evaluate(spec: KernelSpec, x, length: Optional[float] = None):
    """Pointwise value of the kernel at ``x`` (scalar or array)."""
    x = np.asarray(x, dtype=float)
    k = spec.kind
    if k == "zero":
        out = np.zeros_like(x)
    elif k == "const":
        out = np.full_like(x, spec.c)
    elif k == "gaussian":
        out = _gauss(x, spec.c, spec.r)
    elif k == "sgaussian":
        out = 0.5 * (_gauss(x + spec.s, spec.c, spec.r) + _gauss(x - spec.s, spec.c, spec.r))
    else:
        period = spec.period if spec.period is not None else length
        if period is None:
            raise KernelSpecError("periodic Gaussian needs a period (pass the torus length)")
        out = _lattice_sum(x, spec.c, spec.r, spec.s, period, spec.r * _CUT_SIGMAS)
    return out if out.ndim else float(out)


def _lattice_sum(x, c, r, s, p, cut):
    u = np.mod(x - s + 0.5 * p, p) - 0.5 * p
    m = int(math.ceil(cut / p)) + 1
    total = np.zeros_like(u)
    for n in range(-m, m + 1):
        z = u + n * p
        total += np.where(np.abs(z) <= cut, _gauss(z, c, r), 0.0)
    return total


def torus_evaluate(spec: KernelSpec, d, length: float):
    """Kernel wrapped onto the torus: sum of images ``a(d + nL)`` above truncation."""
    spec = spec.resolved(length)
    if spec.kind not in ("gaussian", "sgaussian"):
        return evaluate(spec, d, length)
    d = np.asarray(d, dtype=float)
    d = d - length * np.floor(d / length + 0.5)
    m = n_images(spec, length)
    out = np.zeros_like(d)
    for n in range(-m, m + 1):
        out = out + evaluate(spec, d + n * length)
    return out if out.ndim else float(out)


def n_images(spec: KernelSpec, length: float) -> int:
    sup = spec.support
    if spec.kind not in ("gaussian", "sgaussian") or sup <= 0.5 * length:
        return 0
    return int(math.ceil((sup - 0.5 * length) / length))


def analytic_integral(spec: KernelSpec) -> float:
    """Total mass over the line (one period for a periodic Gaussian)."""
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "const":
        raise KernelSpecError("integral requires a finite domain; multiply v by L at the call site")
    return spec.c


def torus_integral(spec: KernelSpec, length: float) -> float:
    """Mass of the torus-wrapped kernel over one circumference."""
    if spec.kind == "const":
        return spec.c * length
    spec = spec.resolved(length)
    if spec.kind == "pgaussian":
        return spec.c * length / spec.period
    return analytic_integral(spec)


def discretize(spec: KernelSpec, grid: Grid1D, centered: bool = False) -> Field:
    """Sample on the grid nodes.

    ``centered=True`` is for convolution kernels: node ``i`` holds the wrapped
    kernel at the signed displacement of ``x_i``, so ``a(x) = a(-x)`` shows up
    as symmetry under index reversal modulo ``N``.
    """
    meta = {"kernel": format_kernel(spec), "centered": centered}
    if centered:
        values = torus_evaluate(spec, grid.displacements(), grid.length)
        if spec.kind in ("gaussian", "sgaussian") and spec.support > 0.5 * grid.length:
            meta["warning"] = (
                f"kernel support {spec.support:.4g} exceeds L/2 = {0.5 * grid.length:.4g}; "
                f"{n_images(spec, grid.length)} torus image(s) summed (aliasing risk)"
            )
    else:
        values = evaluate(spec.resolved(grid.length), grid.nodes)
    return Field(grid, np.broadcast_to(values, (grid.n_points,)), meta)


# numba-side scalar evaluation --------------------------------------------------

def encode(spec: KernelSpec, length: float) -> np.ndarray:
    """Pack a kernel into ``[code, c, r, s, period, n_images]`` for the jitted kernels."""
    spec = spec.resolved(length)
    period = spec.period if spec.period is not None else length
    return np.array([_CODE[spec.kind], spec.c, spec.r, spec.s, period,
                     n_images(spec, length)], dtype=np.float64)


@kernel
def _gauss_scalar(x, c, r):
    return c / (r * 2.5066282746310002) * math.exp(-0.5 * (x / r) * (x / r))


@kernel
def point_value(params, x):
    code = int(params[0])
    c = params[1]
    r = params[2]
    s = params[3]
    if code == 0:
        return 0.0
    if code == 1:
        return c
    if code == 2:
        return _gauss_scalar(x, c, r)
    if code == 3:
        return 0.5 * (_gauss_scalar(x + s, c, r) + _gauss_scalar(x - s, c, r))
    p = params[4]
    cut = r * 8.029469634031459
    u = (x - s + 0.5 * p) % p - 0.5 * p
    m = int(math.ceil(cut / p)) + 1
    total = 0.0
    for n in range(-m, m + 1):
        z = u + n * p
        if abs(z) <= cut:
            total += _gauss_scalar(z, c, r)
    return total


@kernel
def torus_value(params, d, length):
    code = int(params[0])
    if code != 2 and code != 3:
        return point_value(params, d)
    d = d - length * math.floor(d / length + 0.5)
    m = int(params[5])
    total = 0.0
    for n in range(-m, m + 1):
        total += point_value(params, d + n * length)
    return total
