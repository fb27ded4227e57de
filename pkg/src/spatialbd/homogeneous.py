"""Closed-form solutions for spatially homogeneous densities.

Two models:

* the local linear equation ``rho' = b+ - b- rho``;
* the Riccati reduction of the kinetic equation, ``rho' = b + alpha rho - a rho^2``
  with ``b = b+``, ``a = int a-`` and ``alpha = int a+ - b-``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateRiccatiError(ValueError):
    pass


class RiccatiPoleError(ArithmeticError):
    pass


def linear_solve(b_plus: float, b_minus: float, rho0: float, t):
    """``rho0 e^{-b- t} + (1 - e^{-b- t}) b+/b-``; ``rho0 + b+ t`` when ``b- = 0``."""
    t = np.asarray(t, dtype=float)
    if b_minus == 0:
        out = rho0 + b_plus * t
    else:
        decay = np.exp(-b_minus * t)
        # -expm1 keeps the growth factor accurate for b- t << 1
        out = rho0 * decay - np.expm1(-b_minus * t) * (b_plus / b_minus)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RiccatiParams:
    b: float
    a: float
    alpha: float

    def __post_init__(self):
        if not (self.b >= 0 and self.a >= 0):
            raise ValueError(f"need b >= 0 and a >= 0, got b={self.b}, a={self.a}")
        if not math.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite, got {self.alpha}")

    def rhs(self, rho):
        return self.b + self.alpha * rho - self.a * rho * rho


@dataclass(frozen=True)
class RiccatiSolution:
    lambda_plus: float
    lambda_minus: float
    omega: float
    delta: float


def riccati_derived(p: RiccatiParams) -> RiccatiSolution:
    """Roots ``lambda_pm``, rate ``omega = sqrt(alpha^2 + 4ab)`` and ``delta``.

    Whichever root would suffer cancellation is taken from the conjugate
    form ``lambda = -2b / (alpha -/+ omega)``.
    """
    if p.a == 0:
        raise DegenerateRiccatiError("degenerate Riccati; use linear_solve with effective rates")
    a, b, alpha = p.a, p.b, p.alpha
    omega = math.sqrt(alpha * alpha + 4.0 * a * b)
    if alpha >= 0:
        s = alpha + omega
        lam_p = s / (2.0 * a)
        lam_m = -2.0 * b / s if s > 0 else 0.0
        # delta = -l-/l+ = 4ab / (alpha + omega)^2, split to avoid underflow
        delta = (4.0 * a * b / s) / s if s > 0 else math.inf
    else:
        s = omega - alpha  # > 0
        lam_p = 2.0 * b / s
        lam_m = -s / (2.0 * a)
        delta = -lam_m / lam_p if lam_p > 0 else math.inf
    return RiccatiSolution(lam_p, lam_m, omega, delta)


def riccati_solve(p: RiccatiParams, rho0: float, t):
    """Density at time ``t`` from the closed form, using only ``e^{-omega t}``.

    With ``y = rho - l+`` the equation is Bernoulli, ``y' = -omega y - a y^2``, so
    ``y = y0 E / (1 + a y0 phi)`` where ``E = e^{-omega t}`` and
    ``phi = (1 - E) / omega``.  This equals the delta form but stays finite for
    ``l+ = 0`` and for the double root ``omega = 0``.
    """
    if rho0 < 0:
        raise ValueError(f"rho0 must be >= 0, got {rho0}")
    sol = riccati_derived(p)
    lp, w = sol.lambda_plus, sol.omega
    t = np.asarray(t, dtype=float)
    y0 = rho0 - lp
    e = np.exp(-w * t)
    phi = -np.expm1(-w * t) / w if w > 0 else t.copy()
    # 1 + a y0 phi rewritten as E + a (rho0 - l-) phi: a sum of non-negative terms
    den = e + p.a * (rho0 - sol.lambda_minus) * phi
    if np.any(den <= 0):
        raise RiccatiPoleError("Riccati pole")
    with np.errstate(invalid="ignore"):
        out = np.where(e == 0, lp, lp + y0 * e / den)
    return out if out.ndim else float(out)


def riccati_solve_delta_form(p: RiccatiParams, rho0: float, t):
    """The textbook ``lambda_+ (rho0 - l- - delta (l+ - rho0) E) / (rho0 - l- + (l+ - rho0) E)``."""
    sol = riccati_derived(p)
    lp, lm, d = sol.lambda_plus, sol.lambda_minus, sol.delta
    e = np.exp(-sol.omega * np.asarray(t, dtype=float))
    return lp * (rho0 - lm - d * (lp - rho0) * e) / (rho0 - lm + (lp - rho0) * e)
