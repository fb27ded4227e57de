"""Time integration of the nonlocal kinetic equation on the periodic grid.

    d rho/dt = B+ + A+ * rho - (B- + A- * rho) rho

where ``*`` is circular convolution and ``B+-`` are pointwise rates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ._accel import NUMBA_ENABLED, kernel
from .grid import Field, Grid1D, NegativeDensityError, NONNEG_BAND, require_same_grid
from .kernels import KernelSpec, discretize, torus_integral

log = logging.getLogger(__name__)

DIVERGENCE_CAP = 1e9
STABILITY_LIMIT = 0.5


@dataclass(frozen=True)
class KineticProblem:
    grid: Grid1D
    a_plus: KernelSpec
    a_minus: KernelSpec
    b_plus: KernelSpec
    b_minus: KernelSpec
    rho0: Union[KernelSpec, Field]
    t_end: float
    dt: float = 1e-3
    adaptive: bool = False
    tol: float = 1e-8
    method: str = "auto"
    divergence_cap: float = DIVERGENCE_CAP

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError(f"t_end must be > 0, got {self.t_end}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.method not in ("auto", "rk4", "etdrk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if isinstance(self.rho0, Field):
            require_same_grid(self.grid, self.rho0.grid)

    def initial_field(self) -> Field:
        if isinstance(self.rho0, Field):
            return self.rho0
        return discretize(self.rho0, self.grid)


@dataclass(frozen=True, eq=False)
class Precomputed:
    """Discretised kernels (centred) and rates, plus kernel transforms."""

    grid: Grid1D
    A_plus: Field
    A_minus: Field
    B_plus: Field
    B_minus: Field
    mass_plus: float
    mass_minus: float
    _hat: np.ndarray = field(repr=False)

    def conv(self, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(A+ * rho, A- * rho)`` by FFT."""
        n = self.grid.n_points
        both = np.fft.irfft(np.fft.rfft(rho) * self._hat, n=n, axis=-1)
        return both[0], both[1]


def precompute(grid: Grid1D, a_plus: KernelSpec, a_minus: KernelSpec,
               b_plus: KernelSpec, b_minus: KernelSpec) -> Precomputed:
    Ap = discretize(a_plus, grid, centered=True)
    Am = discretize(a_minus, grid, centered=True)
    for k in (Ap, Am):
        if "warning" in k.meta:
            log.warning(k.meta["warning"])
    hat = grid.spacing * np.fft.rfft(np.vstack([Ap.values, Am.values]), axis=-1)
    return Precomputed(grid, Ap, Am, discretize(b_plus, grid), discretize(b_minus, grid),
                       torus_integral(a_plus, grid.length), torus_integral(a_minus, grid.length),
                       hat)


def precompute_problem(prob: KineticProblem) -> Precomputed:
    return precompute(prob.grid, prob.a_plus, prob.a_minus, prob.b_plus, prob.b_minus)


def kinetic_rhs(rho: Field, pre: Precomputed) -> Field:
    require_same_grid(rho.grid, pre.grid)
    val, _ = _rhs(rho.values, pre)
    return Field(rho.grid, val)


def _rhs(rho, pre):
    cp, cm = pre.conv(rho)
    loss = pre.B_minus.values + cm
    return pre.B_plus.values + cp - loss * rho, loss


def _phi123(z):
    """``phi_1, phi_2, phi_3`` of ``z <= 0`` elementwise; Taylor series near 0."""
    small = np.abs(z) < 1.0
    zs = np.where(small, z, 0.0)
    p1 = np.zeros_like(z)
    p2 = np.zeros_like(z)
    p3 = np.zeros_like(z)
    term = np.ones_like(z)  # z^j / j!
    for j in range(20):
        # phi_k = sum_j z^j / (j + k)!
        p1 += term / (j + 1)
        p2 += term / ((j + 1) * (j + 2))
        p3 += term / ((j + 1) * (j + 2) * (j + 3))
        term = term * zs / (j + 1)
    zb = np.where(small, -1.0, z)
    em1 = np.expm1(zb)
    b1 = em1 / zb
    b2 = (em1 - zb) / (zb * zb)
    b3 = (em1 - zb - 0.5 * zb * zb) / (zb * zb * zb)
    return np.where(small, p1, b1), np.where(small, p2, b2), np.where(small, p3, b3)


def _etd_coeffs_numpy(z):
    e_half = np.exp(0.5 * z)
    q = _phi123(0.5 * z)[0]
    p1, p2, p3 = _phi123(z)
    return e_half, e_half * e_half, q, p1 - 3.0 * p2 + 4.0 * p3, p2 - 2.0 * p3, 4.0 * p3 - p2


@kernel
def _phi_scalar(z):
    if abs(z) < 1.0:
        p1 = 0.0
        p2 = 0.0
        p3 = 0.0
        term = 1.0
        for j in range(20):
            p1 += term / (j + 1)
            p2 += term / ((j + 1) * (j + 2))
            p3 += term / ((j + 1) * (j + 2) * (j + 3))
            term = term * z / (j + 1)
        return p1, p2, p3
    em1 = math.expm1(z)
    return em1 / z, (em1 - z) / (z * z), (em1 - z - 0.5 * z * z) / (z * z * z)


@kernel
def _etd_coeffs_loop(z):
    n = z.shape[0]
    out = np.empty((6, n))
    for i in range(n):
        eh = math.exp(0.5 * z[i])
        q, _, _ = _phi_scalar(0.5 * z[i])
        p1, p2, p3 = _phi_scalar(z[i])
        out[0, i] = eh
        out[1, i] = eh * eh
        out[2, i] = q
        out[3, i] = p1 - 3.0 * p2 + 4.0 * p3
        out[4, i] = p2 - 2.0 * p3
        out[5, i] = 4.0 * p3 - p2
    return out


def etd_coeffs(z):
    """Per-cell ETD-RK4 weights ``(e^{z/2}, e^z, phi1(z/2), f1, f2, f3)`` for ``z = -dt loss``."""
    if NUMBA_ENABLED:
        return _etd_coeffs_loop(z)
    return _etd_coeffs_numpy(z)


class _Stepper:
    """One-step schemes: classic RK4 and, for stiff loss rates, exponential time
    differencing RK4 with the loss rate frozen per step.  ETD-RK4 integrates the
    frozen linear part exactly, so fixed points of the equation are fixed points
    of the step."""

    def __init__(self, pre: Precomputed, method: str):
        self.pre = pre
        self.method = method
        self.n_rk4 = 0
        self.n_etd = 0

    def step(self, y, dt):
        f1, loss = _rhs(y, self.pre)
        use_etd = self.method == "etdrk4" or (
            self.method == "auto" and dt * (float(np.max(loss)) + self.pre.mass_plus) > STABILITY_LIMIT
        )
        if use_etd:
            self.n_etd += 1
            return self._etd(y, dt, f1, loss), f1
        self.n_rk4 += 1
        f = lambda z: _rhs(z, self.pre)[0]
        k2 = f(y + 0.5 * dt * f1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        return y + dt / 6.0 * (f1 + 2.0 * k2 + 2.0 * k3 + k4), f1

    def _etd(self, y, dt, f1, loss0):
        # rho' = -loss0 rho + N(rho); the residual N is non-stiff
        def n(z):
            val, _ = _rhs(z, self.pre)
            return val + loss0 * z

        e_half, e_full, q, g1, g2, g3 = etd_coeffs(-dt * loss0)
        q = 0.5 * dt * q
        na = f1 + loss0 * y
        a = e_half * y + q * na
        nb = n(a)
        b = e_half * y + q * nb
        nc = n(b)
        c = e_half * a + q * (2.0 * nc - na)
        nd = n(c)
        return e_full * y + dt * (g1 * na + 2.0 * g2 * (nb + nc) + g3 * nd)


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    snapshots: list
    rhs_sup: np.ndarray
    diverged: bool = False
    blowup_time: Optional[float] = None
    steady_time: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rhs_sup = np.asarray(self.rhs_sup, dtype=float)
        if len(self.times) != len(self.snapshots):
            raise ValueError("times and snapshots differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) < 0):
            raise ValueError("snapshot times must be nondecreasing")

    @property
    def final(self) -> Field:
        return self.snapshots[-1]

    def summary_rows(self):
        for t, snap, r in zip(self.times, self.snapshots, self.rhs_sup):
            v = snap.values
            yield t, snap.grid.spacing * float(np.sum(v)), float(v.min()), float(v.max()), r


def _check_values(y, t):
    if not np.all(np.isfinite(y)):
        raise FloatingPointError(f"non-finite density at t={t:.6g}")
    lo = float(y.min())
    if lo < 0:
        scale = float(np.max(np.abs(y)))
        if lo < -NONNEG_BAND * scale:
            raise NegativeDensityError(f"density {lo:.3e} below roundoff band at t={t:.6g}")
        np.maximum(y, 0.0, out=y)


def integrate_kinetic(prob: KineticProblem, snapshot_times: Sequence[float],
                      steady_tol: Optional[float] = None, stop_at_steady: bool = False,
                      absolute: bool = False) -> Trajectory:
    """Integrate to each requested time exactly, recording a snapshot there.

    With ``steady_tol`` the sup-norm of the right-hand side is monitored every
    step; ``stop_at_steady`` ends the run (with a final snapshot) once it falls
    below ``steady_tol * (1 + sup rho)`` (or ``steady_tol`` if ``absolute``).
    A run whose density exceeds ``prob.divergence_cap`` is returned flagged as
    diverged rather than raising.
    """
    ts = np.asarray(sorted(float(t) for t in snapshot_times), dtype=float)
    if ts.size and (ts[0] < 0 or ts[-1] > prob.t_end * (1 + 1e-12)):
        raise ValueError(f"snapshot times must lie in [0, {prob.t_end}]")
    pre = precompute_problem(prob)
    stepper = _Stepper(pre, prob.method)
    y = np.array(prob.initial_field().values, dtype=float)
    grid = prob.grid

    times, snaps, norms = [], [], []
    steady_time = None

    def threshold(v):
        return steady_tol if absolute else steady_tol * (1.0 + float(np.max(v)))

    def record(t, v, rhs_norm=None):
        if rhs_norm is None:
            rhs_norm = float(np.max(np.abs(_rhs(v, pre)[0])))
        times.append(t)
        snaps.append(Field(grid, v.copy()))
        norms.append(rhs_norm)

    t = 0.0
    targets = list(ts)
    if not targets or targets[0] > 0:
        targets.insert(0, 0.0)
    if steady_tol is not None:
        r0 = float(np.max(np.abs(_rhs(y, pre)[0])))
        if r0 < threshold(y):
            steady_time = 0.0
    diverged, blowup = False, None
    dt = prob.dt
    for target in targets:
        while t < target - 1e-12 * max(1.0, target):
            h = min(dt, target - t)
            if prob.adaptive:
                y_new, f_now, h_used, dt = _adaptive_step(stepper, y, h, prob.tol, dt)
            else:
                y_new, f_now = stepper.step(y, h)
                h_used = h
            if steady_tol is not None and steady_time is None:
                if float(np.max(np.abs(f_now))) < threshold(y):
                    steady_time = t
                    if stop_at_steady:
                        break
            t = t + h_used if target - (t + h_used) > 1e-12 * max(1.0, target) else target
            _check_values(y_new, t)
            y = y_new
            if float(y.max()) > prob.divergence_cap:
                diverged, blowup = True, t
                break
        if diverged or (stop_at_steady and steady_time is not None):
            record(t, y)
            break
        record(t, y)

    meta = {"rk4_steps": stepper.n_rk4, "etdrk4_steps": stepper.n_etd, "dt": prob.dt,
            "method": prob.method, "adaptive": prob.adaptive}
    return Trajectory(np.array(times), snaps, np.array(norms), diverged, blowup,
                      steady_time, meta)


def _adaptive_step(stepper, y, h, tol, dt_hint):
    """Step doubling: accept when the RK4 error estimate is below ``tol (1 + |y|)``."""
    while True:
        full, f_now = stepper.step(y, h)
        half, _ = stepper.step(y, 0.5 * h)
        two, _ = stepper.step(half, 0.5 * h)
        err = float(np.max(np.abs(two - full))) / 15.0
        scale = tol * (1.0 + float(np.max(np.abs(y))))
        if err <= scale or h < 1e-12:
            grow = 2.0 if err == 0 else min(2.0, 0.9 * (scale / err) ** 0.2)
            # a step clipped to land on a snapshot time must not shrink the next one
            nxt = h * grow if (h >= dt_hint or grow < 1.0) else dt_hint
            return two + (two - full) / 15.0, f_now, h, nxt
        h *= max(0.2, 0.9 * (scale / err) ** 0.2)


def detect_steady_state(traj: Trajectory, tol: float, absolute: bool = False):
    """First snapshot ``(time, Field)`` with ``sup|rhs| < tol (1 + sup rho)``, else ``None``."""
    if traj.diverged:
        return None
    for t, snap, r in zip(traj.times, traj.snapshots, traj.rhs_sup):
        bound = tol if absolute else tol * (1.0 + float(np.max(snap.values)))
        if r < bound:
            return float(t), snap
    return None


def stability_estimate(rho: Field, pre: Precomputed) -> float:
    """``max(B- + A- * rho) + int a+``: the rate the fixed-step guard compares to ``0.5/dt``."""
    _, cm = pre.conv(rho.values)
    return float(np.max(pre.B_minus.values + cm)) + pre.mass_plus
