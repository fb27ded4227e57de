"""Occupation probabilities of Poisson and Cox states, plus the exact
combinatorics behind the Cox tail (Bell numbers, Touchard polynomials).

For a vessel of volume ``V`` and a Poisson state of density ``kappa`` the
count is Poisson(kappa V).  The Cox state with generating function
``exp(kappa V (e^z - 1))`` at ``1 + z`` has

    p(n) = a T_n(b) / n!,   a = exp(-kappa V (1 - 1/e)),  b = kappa V / e,

a Neyman Type A law with mean ``kappa V`` and variance ``2 kappa V``.
"""
from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Integral, Rational
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

COMBINATORICS_CAP = 5000
DEFICIT_TOL = 1e-10
TAIL_NEGLIGIBLE = 1e-18


class CapExceededError(ValueError):
    pass


class BoundDomainError(ValueError):
    pass


@dataclass(frozen=True)
class Vessel:
    """Counting window ``[lo, lo + volume)``; only ``volume`` matters off the torus."""

    volume: float
    lo: float = 0.0

    def __post_init__(self):
        if not (self.volume > 0 and math.isfinite(self.volume)):
            raise ValueError(f"vessel volume must be positive and finite, got {self.volume}")

    @classmethod
    def interval(cls, lo: float, hi: float) -> "Vessel":
        return cls(float(hi) - float(lo), float(lo))

    @property
    def hi(self) -> float:
        return self.lo + self.volume


class Provenance(enum.Enum):
    POISSON = "poisson-analytic"
    COX = "cox-analytic"
    EMPIRICAL = "empirical"


@dataclass(frozen=True, eq=False)
class OccupationSpectrum:
    probs: np.ndarray
    provenance: Provenance
    truncation_n: int
    mass_deficit: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probabilities must be a non-empty vector")
        if np.any(p < 0):
            raise ValueError("negative occupation probability")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_probs(cls, probs, provenance: Provenance, **meta) -> "OccupationSpectrum":
        p = np.asarray(probs, dtype=float)
        deficit = 1.0 - math.fsum(p)
        return cls(p, provenance, p.size - 1, max(deficit, 0.0) if deficit > -1e-14 else deficit,
                   dict(meta))

    def __len__(self):
        return self.probs.size

    def moment(self, k: int) -> float:
        n = np.arange(self.probs.size, dtype=float)
        return math.fsum(n ** k * self.probs)

    @property
    def mean(self) -> float:
        return self.moment(1)

    @property
    def variance(self) -> float:
        m = self.mean
        n = np.arange(self.probs.size, dtype=float)
        return math.fsum((n - m) ** 2 * self.probs)

    @property
    def fano(self) -> float:
        return self.variance / self.mean

    def factorial_moment(self, k: int) -> float:
        n = np.arange(self.probs.size, dtype=float)
        ff = np.ones_like(n)
        for j in range(k):
            ff = ff * (n - j)
        return math.fsum(ff * self.probs)

    def padded(self, size: int) -> np.ndarray:
        out = np.zeros(max(size, self.probs.size))
        out[: self.probs.size] = self.probs
        return out


def total_variation(p: OccupationSpectrum, q: OccupationSpectrum) -> float:
    """``(1/2) sum |p - q|``, with any missing tail mass of ``q`` counted as mismatch."""
    size = max(len(p), len(q))
    a, b = p.padded(size), q.padded(size)
    return 0.5 * (float(np.sum(np.abs(a - b))) + max(q.mass_deficit, 0.0) + max(p.mass_deficit, 0.0))


# Poisson state ---------------------------------------------------------------

def log_poisson_occupation(mean: float, n: int) -> float:
    if mean == 0:
        return 0.0 if n == 0 else -math.inf
    return n * math.log(mean) - mean - math.lgamma(n + 1)


def poisson_occupation(mean: float, n: int) -> float:
    if mean < 0 or n < 0:
        raise ValueError("need mean >= 0 and n >= 0")
    return math.exp(log_poisson_occupation(mean, n))


def poisson_spectrum(mean: float, tol: float = DEFICIT_TOL) -> OccupationSpectrum:
    """Poisson(mean) truncated at the first ``n >= mean`` leaving mass below ``tol``."""
    probs, total, n = [], 0.0, 0
    while True:
        p = poisson_occupation(mean, n)
        probs.append(p)
        total += p
        if n >= mean and 1.0 - math.fsum(probs) <= tol:
            break
        n += 1
    return OccupationSpectrum.from_probs(probs, Provenance.POISSON, mean=mean)


def poisson_cluster_expectation(mean: float, k: int) -> float:
    if k < 1:
        raise ValueError("cluster order k must be >= 1")
    return mean ** k


def log_sub_poissonian_bound(kappa: float, vessel: Vessel, n: int) -> float:
    m = kappa * vessel.volume
    return n * math.log(m) - math.lgamma(n + 1)


def sub_poissonian_bound(kappa: float, vessel: Vessel, n: int) -> float:
    """``(kappa V)^n / n!``; may exceed 1."""
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    return math.exp(log_sub_poissonian_bound(kappa, vessel, n))


@dataclass(frozen=True)
class RuelleViolation:
    k: int
    value: float
    bound: float


@dataclass(frozen=True)
class RuelleReport:
    kappa: float
    checked: int
    violations: tuple

    @property
    def passed(self) -> bool:
        return not self.violations


def ruelle_check(samples: Iterable[tuple[int, float]], kappa: float) -> RuelleReport:
    """Check ``0 <= rho_k <= kappa^k`` for each ``(k, value)`` sample."""
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    bad, count = [], 0
    for k, value in samples:
        count += 1
        bound = kappa ** k
        if not (0.0 <= value <= bound):
            bad.append(RuelleViolation(int(k), float(value), bound))
    return RuelleReport(kappa, count, tuple(bad))


# exact combinatorics -----------------------------------------------------------

_lock = threading.Lock()
_bell = [1]
_bell_row = [1]
_STIRLING_MEMO = 512
_stirling: list[list[int]] = [[1]]


def _check_cap(n: int):
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if n > COMBINATORICS_CAP:
        raise CapExceededError(f"n = {n} exceeds the cap {COMBINATORICS_CAP}")


def bell_number(n: int) -> int:
    """Exact ``B_n`` from the Bell triangle (memoised, thread safe)."""
    _check_cap(n)
    if n < len(_bell):
        return _bell[n]
    with _lock:
        global _bell_row
        row = _bell_row
        while len(_bell) <= n:
            nxt = [row[-1]]
            for v in row:
                nxt.append(nxt[-1] + v)
            row = nxt
            _bell.append(row[0])
        _bell_row = row
    return _bell[n]


def _next_stirling(row: list[int]) -> list[int]:
    m = len(row)
    out = [0] * (m + 1)
    for k in range(1, m + 1):
        out[k] = k * (row[k] if k < m else 0) + row[k - 1]
    return out


def stirling2_row(n: int) -> list[int]:
    """``[S(n, 0), ..., S(n, n)]``, exact."""
    _check_cap(n)
    if n < len(_stirling):
        return _stirling[n]
    with _lock:
        while len(_stirling) <= min(n, _STIRLING_MEMO):
            _stirling.append(_next_stirling(_stirling[-1]))
    if n < len(_stirling):
        return _stirling[n]
    row = _stirling[-1]
    for _ in range(len(_stirling) - 1, n):
        row = _next_stirling(row)
    return row


def _is_exact(b) -> bool:
    return isinstance(b, (Integral, Rational)) and not isinstance(b, bool)


def touchard(n: int, b):
    """``T_n(b) = sum_k S(n, k) b^k``; exact for int/Fraction ``b``, float otherwise."""
    _check_cap(n)
    if _is_exact(b):
        acc = 0
        for s in reversed(stirling2_row(n)):
            acc = acc * b + s
        return acc
    try:
        return math.exp(log_touchard(n, float(b)))
    except OverflowError:
        return math.inf


def log_touchard(n: int, b: float) -> float:
    if not b > 0:
        raise ValueError("log_touchard needs b > 0")
    row = stirling2_row(n)
    lb = math.log(b)
    terms = [math.log(s) + k * lb for k, s in enumerate(row) if s]
    return _logsumexp(terms)


def touchard_binomial(n: int, b):
    """``T_n(b)`` from ``T_{m+1}(b) = b sum_k C(m, k) T_k(b)``."""
    return touchard_binomial_sequence(n, b)[n]


def touchard_binomial_sequence(n: int, b) -> list:
    """``[T_0(b), ..., T_n(b)]`` by the binomial recurrence; exact for int/Fraction ``b``."""
    _check_cap(n)
    if _is_exact(b):
        # b = p/q: U_m = q^m T_m is an integer with U_{m+1} = p sum_k C(m,k) q^(m-k) U_k
        p, q = b.numerator, b.denominator
        qp = [q ** j for j in range(n + 1)]
        u = [1]
        for m in range(n):
            acc, c = 0, 1
            for k in range(m + 1):
                acc += c * u[k] * qp[m - k]
                c = c * (m - k) // (k + 1)
            u.append(p * acc)
        if q == 1:
            return u
        return [Fraction(v, q ** m) for m, v in enumerate(u)]
    lb = math.log(float(b))
    lt = [0.0]
    for m in range(n):
        lc = [math.lgamma(m + 1) - math.lgamma(k + 1) - math.lgamma(m - k + 1) for k in range(m + 1)]
        lt.append(lb + _logsumexp([c + v for c, v in zip(lc, lt)]))
    out = []
    for v in lt:
        try:
            out.append(math.exp(v))
        except OverflowError:
            out.append(math.inf)
    return out


def _logsumexp(terms: Sequence[float]) -> float:
    if not terms:
        return -math.inf
    top = max(terms)
    if top == -math.inf:
        return top
    return top + math.log(math.fsum(math.exp(t - top) for t in terms))


def log_bell_over_factorial(n: int) -> float:
    return math.log(bell_number(n)) - math.lgamma(n + 1)


# Cox state -------------------------------------------------------------------------

def cox_constants(kappa: float, vessel: Vessel) -> tuple[float, float]:
    """``(a, b)`` with ``a = exp(-kappa V (1 - 1/e))`` and ``b = kappa V / e``."""
    m = kappa * vessel.volume
    return math.exp(-m * (1.0 - math.exp(-1.0))), m * math.exp(-1.0)


def log_cox_occupation(kappa: float, vessel: Vessel, n: int) -> float:
    m = kappa * vessel.volume
    la = -m * (1.0 - math.exp(-1.0))
    if n == 0:
        return la
    return la + log_touchard(n, m * math.exp(-1.0)) - math.lgamma(n + 1)


def cox_occupation(kappa: float, vessel: Vessel, n_max: Optional[int] = None,
                   tol: float = DEFICIT_TOL) -> OccupationSpectrum:
    """Cox spectrum ``p(0..n)``.

    ``n_max`` (or a guess from the mean) is doubled until the missing mass is
    ``<= tol`` and the last term is negligible at the scale of third moments.
    """
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    m = kappa * vessel.volume
    n = int(n_max) if n_max is not None else max(16, int(4 * m + 10 * math.sqrt(m) + 10))
    while True:
        if n > COMBINATORICS_CAP:
            raise CapExceededError(f"Cox truncation would exceed the cap {COMBINATORICS_CAP}")
        probs = [math.exp(log_cox_occupation(kappa, vessel, j)) for j in range(n + 1)]
        deficit = 1.0 - math.fsum(probs)
        # the last kept term must be negligible too, so moments are not tail-biased
        if deficit <= tol and probs[-1] * (n + 1) ** 3 < TAIL_NEGLIGIBLE:
            break
        n *= 2
    a, b = cox_constants(kappa, vessel)
    return OccupationSpectrum.from_probs(probs, Provenance.COX, kappa=kappa,
                                         volume=vessel.volume, a=a, b=b)


def heavy_tail_lower_bound(kappa: float, vessel: Vessel, n: int) -> float:
    """``a b B_n / n!``, a lower bound on the Cox ``p(n)`` when ``b >= 1``."""
    return math.exp(log_heavy_tail_lower_bound(kappa, vessel, n))


def log_heavy_tail_lower_bound(kappa: float, vessel: Vessel, n: int) -> float:
    a, b = cox_constants(kappa, vessel)
    if b < 1.0 - 1e-12:
        raise BoundDomainError("bound requires b_Λ ≥ 1, enlarge the vessel")
    if n < 2:
        raise ValueError("bound stated for n >= 2")
    return math.log(a) + math.log(b) + log_bell_over_factorial(n)


def sample_cox_counts(kappa: float, vessel: Vessel, size: int, rng: np.random.Generator) -> np.ndarray:
    """Compound sampler: ``M ~ Poisson(kappa V)`` parents, each with Poisson(1) offspring."""
    parents = rng.poisson(kappa * vessel.volume, size)
    # a sum of M iid Poisson(1) variables is Poisson(M)
    return rng.poisson(parents)


def empirical_spectrum(counts, **meta) -> OccupationSpectrum:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0:
        raise ValueError("no counts")
    probs = np.bincount(counts) / counts.size
    return OccupationSpectrum(probs, Provenance.EMPIRICAL, probs.size - 1, 0.0,
                              dict(meta, n_samples=int(counts.size)))


# correlations and factorial moments -------------------------------------------------

def cluster_expectation_from_correlations(rho_k: Callable, vessel: Vessel, k: int,
                                          n_nodes: int = 64) -> float:
    """Midpoint-rule ``int_V ... int_V rho_k``; ``rho_k`` takes ``k`` broadcastable arrays."""
    if k < 1 or k > 3:
        raise ValueError(f"cluster expectation implemented for 1 <= k <= 3, got {k}")
    h = vessel.volume / n_nodes
    x = vessel.lo + (np.arange(n_nodes) + 0.5) * h
    axes = np.meshgrid(*([x] * k), indexing="ij", sparse=True)
    vals = np.broadcast_to(np.asarray(rho_k(*axes), dtype=float), (n_nodes,) * k)
    return float(np.sum(vals)) * h ** k


@dataclass(frozen=True, eq=False)
class FactorialMoments:
    """``c[k-1] = E[N (N-1) ... (N-k+1)]`` and ``s[k-1] = c_k^{1/k} / V`` for k = 1..k_max."""

    c: np.ndarray
    s: np.ndarray
    se_c: np.ndarray
    se_s: np.ndarray
    volume: float
    n_samples: int
    _cov: np.ndarray = field(repr=False)

    @property
    def k_max(self) -> int:
        return self.c.size

    def _grad(self, k: int) -> float:
        c = self.c[k - 1]
        if c <= 0:
            return 0.0
        return c ** (1.0 / k - 1.0) / (k * self.volume)

    def diff_se(self, k1: int, k2: int) -> float:
        """Delta-method standard error of ``s_{k2} - s_{k1}`` (covariance included)."""
        g = np.zeros(self.k_max)
        g[k2 - 1] += self._grad(k2)
        g[k1 - 1] -= self._grad(k1)
        var = float(g @ self._cov @ g) / self.n_samples
        return math.sqrt(max(var, 0.0))


def factorial_moments(counts, volume: float, k_max: int = 4) -> FactorialMoments:
    counts = np.asarray(counts, dtype=float).ravel()
    if counts.size < 2:
        raise ValueError("need at least two samples")
    if not 1 <= k_max <= 5:
        raise ValueError("k_max must be in 1..5")
    ff = np.empty((k_max, counts.size))
    cur = np.ones_like(counts)
    for k in range(k_max):
        cur = cur * (counts - k)
        ff[k] = cur
    c = ff.mean(axis=1)
    cov = np.atleast_2d(np.cov(ff))
    se_c = np.sqrt(np.diag(cov) / counts.size)
    ks = np.arange(1, k_max + 1)
    pos = np.maximum(c, 0.0)
    s = pos ** (1.0 / ks) / volume
    with np.errstate(divide="ignore", invalid="ignore"):
        grad = np.where(c > 0, pos ** (1.0 / ks - 1.0) / (ks * volume), 0.0)
    return FactorialMoments(c, s, se_c, grad * se_c, float(volume), int(counts.size), cov)
