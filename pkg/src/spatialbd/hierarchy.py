"""Correlation-function chain truncated at order two.

The first two members are

    d rho1(x)/dt = b+(x) + (a+ * rho1)(x) - b-(x) rho1(x) - int a-(x-y) rho2(x,y) dy

    d rho2(x1,x2)/dt = [b+(x1) + a+(x1-x2)] rho1(x2) + [b+(x2) + a+(x2-x1)] rho1(x1)
                     + int a+(x1-y) rho2(y,x2) dy + int a+(x2-y) rho2(x1,y) dy
                     - [b-(x1) + b-(x2) + 2 a-(x1-x2)] rho2(x1,x2)
                     - int [a-(x1-y) + a-(x2-y)] rho3(x1,x2,y) dy

with rho3 supplied by a closure.  The factor 2 on a-(x1-x2) collects the
i != j terms of the death part for n = 2 (the kernel is even).  The a+ terms
in the first line come from the ``x_i -> y`` substitution in the birth part:
a new particle at x1 born from a parent at x2 (and vice versa).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._accel import NUMBA_ENABLED, kernel
from .grid import (Field, Grid1D, NegativeDensityError, NONNEG_BAND, _direct_circular,
                   direct_circular_numpy, require_same_grid)
from .kinetic import DIVERGENCE_CAP, KineticProblem, Precomputed, precompute_problem

MAX_PAIR_POINTS = 256
KIRKWOOD_GUARD = 1e-12
ASYMMETRY_TOL = 1e-10


class KirkwoodDensityError(ZeroDivisionError):
    pass


class ClosureRule(enum.Enum):
    MEAN_FIELD = "meanfield"
    KIRKWOOD = "kirkwood"


@dataclass(frozen=True, eq=False)
class PairField:
    """``values[i, j] = rho2(x_i, x_j)``; exactly symmetric."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        n = self.grid.n_points
        if v.shape != (n, n):
            raise ValueError(f"pair field has shape {v.shape}, grid {self.grid} needs ({n}, {n})")
        if not np.array_equal(v, v.T):
            raise ValueError("pair field is not symmetric; use PairField.symmetrized")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def symmetrized(cls, grid: Grid1D, values) -> "PairField":
        v = np.asarray(values, dtype=float)
        return cls(grid, 0.5 * (v + v.T))

    @classmethod
    def product(cls, rho1: Field) -> "PairField":
        v = rho1.values
        return cls(rho1.grid, np.multiply.outer(v, v))

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()

    def truncated(self, rho1: Field) -> np.ndarray:
        """``rho2(x, y) - rho1(x) rho1(y)``."""
        require_same_grid(self.grid, rho1.grid)
        return self.values - np.multiply.outer(rho1.values, rho1.values)

    def shifted(self, m: int) -> "PairField":
        return PairField(self.grid, np.roll(self.values, (m, m), axis=(0, 1)))

    def is_nonnegative(self, band: float = NONNEG_BAND) -> bool:
        scale = float(np.max(np.abs(self.values)))
        return bool(np.all(self.values >= -band * scale))


def circulant(kernel: Field) -> np.ndarray:
    """``K[i, j] = k[(i - j) mod N]``, the torus kernel between nodes i and j."""
    n = kernel.grid.n_points
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return kernel.values[idx]


# offset-ordered sums ---------------------------------------------------------------
# Every quadrature below runs over the kernel offset d (y = x_i - d) in the same
# order for all output nodes, so shifting the inputs by m nodes shifts the
# outputs bit for bit.

@kernel
def _rows_loop(k, r2):
    # out[i] = sum_d k[d] r2[i, i - d]
    n = r2.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for d in range(n):
            j = i - d
            if j < 0:
                j += n
            acc += k[d] * r2[i, j]
        out[i] = acc
    return out


@kernel
def _left_loop(k, r2):
    # out[i, j] = sum_d k[d] r2[i - d, j]
    n = r2.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for d in range(n):
            kd = k[d]
            if kd == 0.0:
                continue
            y = i - d
            if y < 0:
                y += n
            for j in range(n):
                out[i, j] += kd * r2[y, j]
    return out


@kernel
def _kirkwood_loop(k, p, qt):
    # out[i, j] = sum_d k[d] p[i, i - d] qt[i - d, j]
    n = p.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for d in range(n):
            kd = k[d]
            if kd == 0.0:
                continue
            y = i - d
            if y < 0:
                y += n
            a = kd * p[i, y]
            for j in range(n):
                out[i, j] += a * qt[y, j]
    return out


def _offset_index(n):
    # idx[i, d] = (i - d) mod n
    return (np.arange(n)[:, None] - np.arange(n)[None, :]) % n


def _rows_numpy(k, r2):
    n = r2.shape[0]
    idx = _offset_index(n)
    rows = np.arange(n)[:, None]
    out = np.zeros(n)
    for d in range(n):
        out += k[d] * r2[rows[:, 0], idx[:, d]]
    return out


def _left_numpy(k, r2):
    out = np.zeros_like(r2)
    for d in np.flatnonzero(k):
        out += k[d] * np.roll(r2, d, axis=0)
    return out


def _kirkwood_numpy(k, p, qt):
    n = p.shape[0]
    idx = _offset_index(n)
    rows = np.arange(n)
    out = np.zeros_like(p)
    for d in np.flatnonzero(k):
        y = idx[:, d]
        out += (k[d] * p[rows, y])[:, None] * qt[y, :]
    return out


if NUMBA_ENABLED:
    _rows, _left, _kirkwood, _circ = _rows_loop, _left_loop, _kirkwood_loop, _direct_circular
else:
    _rows, _left, _kirkwood, _circ = _rows_numpy, _left_numpy, _kirkwood_numpy, direct_circular_numpy


@dataclass(frozen=True, eq=False)
class PairOperator:
    """Kernel matrices and rate vectors for the order-1 and order-2 operators."""

    pre: Precomputed
    Kp: np.ndarray = field(repr=False)
    Km: np.ndarray = field(repr=False)

    @property
    def grid(self) -> Grid1D:
        return self.pre.grid

    @classmethod
    def from_precomputed(cls, pre: Precomputed) -> "PairOperator":
        if pre.grid.n_points > MAX_PAIR_POINTS:
            raise ValueError(
                f"pair dynamics limited to N <= {MAX_PAIR_POINTS}, got {pre.grid.n_points}"
            )
        return cls(pre, circulant(pre.A_plus), circulant(pre.A_minus))

    @property
    def kp(self) -> np.ndarray:
        return self.pre.A_plus.values

    @property
    def km(self) -> np.ndarray:
        return self.pre.A_minus.values


def _as_operator(ops) -> PairOperator:
    return ops if isinstance(ops, PairOperator) else PairOperator.from_precomputed(ops)


def chain_rhs_1(rho1: Field, rho2: PairField, ops) -> Field:
    op = _as_operator(ops)
    require_same_grid(rho1.grid, op.grid)
    require_same_grid(rho2.grid, op.grid)
    return Field(op.grid, _rhs1(rho1.values, rho2.values, op))


def _rhs1(r1, r2, op: PairOperator):
    pre = op.pre
    h = pre.grid.spacing
    cp = _circ(r1, op.kp, h)
    # row quadrature of a-(x - y) rho2(x, y)
    comp = h * _rows(op.km, r2)
    return pre.B_plus.values + cp - pre.B_minus.values * r1 - comp


def _third_order_term(r1, r2, closure: ClosureRule, op: PairOperator):
    """``int [a-(x1-y) + a-(x2-y)] rho3(x1, x2, y) dy`` on the node grid."""
    h = op.grid.spacing
    if closure is ClosureRule.MEAN_FIELD:
        c = _circ(r1, op.km, h)
        return np.multiply.outer(r1, r1) * (c[:, None] + c[None, :])
    if float(np.min(r1)) < KIRKWOOD_GUARD:
        raise KirkwoodDensityError("Kirkwood division by vanishing density")
    # W[i, j] = h sum_y a-(x_i - y) rho2[i, y] rho2[j, y] / rho1[y]
    w = h * _kirkwood(op.km, r2, r2 / r1[:, None])
    return r2 / np.multiply.outer(r1, r1) * (w + w.T)


def _rhs2(r1, r2, closure: ClosureRule, op: PairOperator):
    pre = op.pre
    h = pre.grid.spacing
    bp, bm = pre.B_plus.values, pre.B_minus.values
    src = (bp[:, None] + op.Kp) * r1[None, :]
    out = src + src.T
    # int a+(x1-y) rho2(y,x2) dy and its mirror; Kp is symmetric
    g = h * _left(op.kp, r2)
    out += g + g.T
    out -= (bm[:, None] + bm[None, :] + 2.0 * op.Km) * r2
    out -= _third_order_term(r1, r2, closure, op)
    asym = float(np.max(np.abs(out - out.T)))
    scale = 1.0 + float(np.max(np.abs(out)))
    if asym >= ASYMMETRY_TOL * scale:
        raise AssertionError(f"pair rhs asymmetry {asym:.3e} before symmetrisation")
    return 0.5 * (out + out.T)


def chain_rhs_2(rho1: Field, rho2: PairField, closure: ClosureRule, ops) -> PairField:
    op = _as_operator(ops)
    require_same_grid(rho1.grid, op.grid)
    require_same_grid(rho2.grid, op.grid)
    return PairField(op.grid, _rhs2(rho1.values, rho2.values, ClosureRule(closure), op))


def closure_eval(rule: ClosureRule, rho1: Field, rho2: PairField, i: int, j: int, k: int) -> float:
    r = rho1.values
    if ClosureRule(rule) is ClosureRule.MEAN_FIELD:
        return float(r[i] * r[j] * r[k])
    if min(r[i], r[j], r[k]) < KIRKWOOD_GUARD:
        raise KirkwoodDensityError("Kirkwood division by vanishing density")
    p = rho2.values
    return float(p[i, j] * p[i, k] * p[j, k] / (r[i] * r[j] * r[k]))


@dataclass(eq=False)
class PairTrajectory:
    times: np.ndarray
    rho1: list
    rho2: list
    diverged: bool = False
    blowup_time: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.rho1[-1], self.rho2[-1]


def _check(y, t, what):
    if not np.all(np.isfinite(y)):
        raise FloatingPointError(f"non-finite {what} at t={t:.6g}")
    lo = float(y.min())
    if lo < 0:
        if lo < -NONNEG_BAND * float(np.max(np.abs(y))):
            raise NegativeDensityError(f"{what} {lo:.3e} below roundoff band at t={t:.6g}")
        np.maximum(y, 0.0, out=y)


def integrate_pair_dynamics(prob: KineticProblem, closure: ClosureRule,
                            snapshot_times: Sequence[float],
                            rho2_0: Optional[PairField] = None,
                            mode: str = "free") -> PairTrajectory:
    """Classic RK4 on the coupled ``(rho1, rho2)`` system with step ``prob.dt``.

    ``mode="reclose"`` resets ``rho2`` to ``rho1 (x) rho1`` before every stage,
    which collapses the first equation onto the kinetic equation.  ``rho2_0``
    defaults to the product of the initial density.
    """
    if mode not in ("free", "reclose"):
        raise ValueError(f"mode must be 'free' or 'reclose', got {mode!r}")
    closure = ClosureRule(closure)
    op = PairOperator.from_precomputed(precompute_problem(prob))
    rho1_0 = prob.initial_field()
    if rho2_0 is None:
        rho2_0 = PairField.product(rho1_0)
    require_same_grid(rho2_0.grid, prob.grid)
    ts = sorted(float(t) for t in snapshot_times)
    if ts and (ts[0] < 0 or ts[-1] > prob.t_end * (1 + 1e-12)):
        raise ValueError(f"snapshot times must lie in [0, {prob.t_end}]")
    if not ts or ts[0] > 0:
        ts.insert(0, 0.0)

    def f(y1, y2):
        if mode == "reclose":
            y2 = np.multiply.outer(y1, y1)
            return _rhs1(y1, y2, op), None
        return _rhs1(y1, y2, op), _rhs2(y1, y2, closure, op)

    def rk4(y1, y2, dt):
        k1 = f(y1, y2)
        if mode == "reclose":
            k2 = f(y1 + 0.5 * dt * k1[0], None)
            k3 = f(y1 + 0.5 * dt * k2[0], None)
            k4 = f(y1 + dt * k3[0], None)
            n1 = y1 + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            return n1, np.multiply.outer(n1, n1)
        k2 = f(y1 + 0.5 * dt * k1[0], y2 + 0.5 * dt * k1[1])
        k3 = f(y1 + 0.5 * dt * k2[0], y2 + 0.5 * dt * k2[1])
        k4 = f(y1 + dt * k3[0], y2 + dt * k3[1])
        n1 = y1 + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        n2 = y2 + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        return n1, n2

    y1 = np.array(rho1_0.values, dtype=float)
    y2 = np.array(rho2_0.values, dtype=float)
    if mode == "reclose":
        y2 = np.multiply.outer(y1, y1)
    grid = prob.grid
    times, s1, s2 = [], [], []
    t, diverged, blowup = 0.0, False, None
    for target in ts:
        while t < target - 1e-12 * max(1.0, target):
            h = min(prob.dt, target - t)
            y1, y2 = rk4(y1, y2, h)
            t = t + h if target - (t + h) > 1e-12 * max(1.0, target) else target
            _check(y1, t, "density")
            _check(y2, t, "pair density")
            if max(float(y1.max()), float(y2.max())) > prob.divergence_cap:
                diverged, blowup = True, t
                break
        times.append(t)
        s1.append(Field(grid, y1.copy()))
        s2.append(PairField(grid, y2.copy()))
        if diverged:
            break
    meta = {"closure": closure.value, "mode": mode, "dt": prob.dt}
    return PairTrajectory(np.array(times), s1, s2, diverged, blowup, meta)
