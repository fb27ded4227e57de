"""Individual-based spatial birth-death process on a 1D torus.

A configuration of ``N`` particles gives birth at location ``y`` with intensity

    E+(y) = b+(y) + sum_x a+(y - x)

and particle ``x_i`` dies at rate ``b-(x_i) + sum_{j != i} a-(x_i - x_j)``.
Events are simulated exactly (Gillespie).  The compiled event loop keeps the
per-particle death rates cached and updates them incrementally on each event;
the cache is rebuilt from scratch at every random-number block.
"""
from __future__ import annotations

import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ._accel import BACKEND, kernel
from .combinatorics import (FactorialMoments, OccupationSpectrum, Vessel, empirical_spectrum,
                            factorial_moments)
from .homogeneous import RiccatiParams, riccati_derived
from .kernels import (KernelSpec, encode, evaluate, point_value, torus_evaluate, torus_integral,
                      torus_value)

log = logging.getLogger(__name__)

POPULATION_CAP = 1_000_000
BURN_IN = 0.2
MIN_SNAPSHOTS = 100
ENV_TABLE = 4096
BLOCK = 4096

# event-loop status codes
_EXHAUSTED, _REACHED, _FULL, _ABSORBED, _BLOWUP = 0, 1, 2, 3, 4


class AbsorbingState(RuntimeError):
    """Raised by :func:`gillespie_step` when no event has positive rate."""


class BirthImpossibleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Configuration:
    """Finite multiset of positions on the torus ``[0, L)``; order is kept."""

    positions: np.ndarray
    torus_L: float

    def __post_init__(self):
        x = np.array(self.positions, dtype=float).ravel()
        if not self.torus_L > 0:
            raise ValueError(f"torus length must be > 0, got {self.torus_L}")
        if x.size and (x.min() < 0 or x.max() >= self.torus_L):
            raise ValueError(f"positions must lie in [0, {self.torus_L})")
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)

    def __len__(self):
        return self.positions.size

    @classmethod
    def empty(cls, torus_L: float) -> "Configuration":
        return cls(np.empty(0), torus_L)

    @classmethod
    def uniform(cls, n: int, torus_L: float, rng: np.random.Generator) -> "Configuration":
        return cls(rng.uniform(0.0, torus_L, n), torus_L)

    def count_in(self, vessel: Vessel) -> int:
        return int(np.count_nonzero(_in_vessel(self.positions, vessel, self.torus_L)))


def _in_vessel(x, vessel: Vessel, L: float):
    if vessel.volume > L:
        raise ValueError(f"vessel volume {vessel.volume} exceeds the torus length {L}")
    return np.mod(x - vessel.lo, L) < vessel.volume


@dataclass(frozen=True)
class ModelRates:
    b_plus: KernelSpec
    b_minus: KernelSpec
    a_plus: KernelSpec
    a_minus: KernelSpec

    def __post_init__(self):
        for name in ("a_plus", "a_minus"):
            k = getattr(self, name)
            if k.kind == "pgaussian" and k.s != 0:
                raise ValueError(f"{name} must be even; a shifted periodic Gaussian is not")


@dataclass(frozen=True)
class JumpRecord:
    time: float
    kind: str
    position: float
    population_after: int


# rates -------------------------------------------------------------------------

def environment_integral(spec: KernelSpec, L: float) -> float:
    """``int_0^L b(y) dy`` for a pointwise rate (table sum when no closed form)."""
    if spec.kind in ("zero", "const", "pgaussian"):
        return torus_integral(spec, L)
    _, cdf = _environment_table(spec, L)
    return float(cdf[-1])


@functools.lru_cache(maxsize=32)
def _environment_table(spec: KernelSpec, L: float, cells: int = ENV_TABLE):
    """Midpoint cell width and cumulative integral of ``b`` on ``cells`` cells (cached, read-only)."""
    h = L / cells
    mids = (np.arange(cells) + 0.5) * h
    vals = np.asarray(evaluate(spec.resolved(L), mids), dtype=float)
    cdf = np.cumsum(vals) * h
    cdf.setflags(write=False)
    return h, cdf


def total_birth_rate(cfg: Configuration, rates: ModelRates) -> float:
    L = cfg.torus_L
    return environment_integral(rates.b_plus, L) + len(cfg) * torus_integral(rates.a_plus, L)


def death_rate_of(i: int, cfg: Configuration, rates: ModelRates) -> float:
    n = len(cfg)
    if not -n <= i < n:
        raise IndexError(f"particle index {i} out of range for {n} particles")
    x = cfg.positions
    xi = x[i]
    others = np.delete(x, i % n)
    base = float(evaluate(rates.b_minus.resolved(cfg.torus_L), xi))
    if others.size == 0 or rates.a_minus.kind == "zero":
        return base
    return base + float(np.sum(torus_evaluate(rates.a_minus, xi - others, cfg.torus_L)))


def death_rates(cfg: Configuration, rates: ModelRates) -> np.ndarray:
    """All death rates by full recomputation (the reference for the cached values)."""
    x = cfg.positions
    L = cfg.torus_L
    base = np.asarray(evaluate(rates.b_minus.resolved(L), x), dtype=float) * np.ones(x.size)
    if x.size < 2 or rates.a_minus.kind == "zero":
        return base
    d = x[:, None] - x[None, :]
    pair = torus_evaluate(rates.a_minus, d, L)
    np.fill_diagonal(pair, 0.0)
    return base + pair.sum(axis=1)


def _displacement(spec: KernelSpec, L: float, u: float, z: float) -> float:
    if spec.kind == "const":
        return u * L
    if spec.kind == "sgaussian":
        return spec.r * z + (spec.s if u < 0.5 else -spec.s)
    return spec.r * z + (spec.s if spec.kind == "pgaussian" else 0.0)


def sample_birth_location(cfg: Configuration, rates: ModelRates, rng: np.random.Generator) -> float:
    """Draw ``y`` with density ``E+(y) / int E+`` by splitting environment and parent terms."""
    L = cfg.torus_L
    env = environment_integral(rates.b_plus, L)
    total = env + len(cfg) * torus_integral(rates.a_plus, L)
    if not total > 0:
        raise BirthImpossibleError("total birth rate is zero; no birth possible")
    u = rng.random(4)
    if u[0] * total < env:
        if rates.b_plus.kind == "const":
            y = u[1] * L
        else:
            h, cdf = _environment_table(rates.b_plus, L)
            j = min(int(np.searchsorted(cdf, u[1] * cdf[-1], side="right")), cdf.size - 1)
            y = (j + u[2]) * h
    else:
        parent = cfg.positions[min(int(u[1] * len(cfg)), len(cfg) - 1)]
        y = parent + _displacement(rates.a_plus, L, u[2], rng.standard_normal())
    return _wrap_position(y, L)


def _wrap_position(y: float, L: float) -> float:
    y = y - L * math.floor(y / L)
    return 0.0 if y >= L else y


def gillespie_step(cfg: Configuration, rates: ModelRates, rng: np.random.Generator,
                   t: float = 0.0) -> tuple[JumpRecord, Configuration]:
    """One exact event from time ``t``, with all rates recomputed from scratch."""
    birth = total_birth_rate(cfg, rates)
    d = death_rates(cfg, rates)
    total = birth + float(d.sum())
    if not total > 0:
        raise AbsorbingState("all event rates vanish")
    t_new = t + rng.exponential(1.0 / total)
    if rng.random() * total < birth:
        y = sample_birth_location(cfg, rates, rng)
        new = Configuration(np.append(cfg.positions, y), cfg.torus_L)
        return JumpRecord(t_new, "birth", y, len(new)), new
    i = int(rng.choice(d.size, p=d / d.sum()))
    x = cfg.positions[i]
    new = Configuration(np.delete(cfg.positions, i), cfg.torus_L)
    return JumpRecord(t_new, "death", float(x), len(new)), new


# compiled event loop --------------------------------------------------------------

@kernel
def _pair_value(params, cut, d, length):
    code = int(params[0])
    if code == 0:
        return 0.0
    if (code == 2 or code == 3) and params[5] == 0.0:
        w = d - length * math.floor(d / length + 0.5)
        if abs(w) > cut:
            return 0.0
        return point_value(params, w)
    return torus_value(params, d, length)


@kernel
def _refresh_rates(pos, drate, n, bm, am, am_cut, length):
    for i in range(n):
        drate[i] = point_value(bm, pos[i])
    if int(am[0]) == 0:
        return
    for i in range(n):
        for j in range(i + 1, n):
            v = _pair_value(am, am_cut, pos[i] - pos[j], length)
            drate[i] += v
            drate[j] += v


@kernel
def _advance(pos, drate, n, t, t_stop, unif, normals, k0,
             bm, am, am_cut, length, env_total, env_uniform, env_cdf, env_h,
             ap_kind, ap_mass, ap_r, ap_s, max_pop,
             record, rec_t, rec_kind, rec_x, rec_n):
    """Run events from ``t`` until ``t_stop``, buffer exhaustion, capacity or absorption.

    Each event consumes one row of ``unif`` (5 uniforms) and one normal:
    u0 waiting time, u1 event / victim, u2 environment vs parent,
    u3 table cell / parent index, u4 in-cell offset / kernel branch.
    """
    k = k0
    nb = 0
    nd = 0
    nrec = 0
    cap = pos.shape[0]
    nblock = unif.shape[0]
    am_on = int(am[0]) != 0
    status = 0
    while k < nblock:
        if n >= max_pop:
            status = 4
            break
        if n >= cap:
            status = 2
            break
        dsum = 0.0
        for i in range(n):
            dsum += drate[i]
        birth = env_total + n * ap_mass
        rate = birth + dsum
        if rate <= 0.0:
            status = 3
            break
        u0 = unif[k, 0]
        u1 = unif[k, 1]
        u2 = unif[k, 2]
        u3 = unif[k, 3]
        u4 = unif[k, 4]
        tau = -math.log1p(-u0) / rate
        if t + tau > t_stop:
            # memoryless: discarding the overshooting event leaves the law unchanged
            t = t_stop
            k += 1
            status = 1
            break
        t += tau
        w = u1 * rate
        if w < birth:
            if u2 * birth < env_total:
                if env_uniform:
                    y = u3 * length
                else:
                    j = np.searchsorted(env_cdf, u3 * env_cdf[-1], side="right")
                    if j >= env_cdf.shape[0]:
                        j = env_cdf.shape[0] - 1
                    y = (j + u4) * env_h
            else:
                p = int(u3 * n)
                if p >= n:
                    p = n - 1
                if ap_kind == 1:
                    z = u4 * length
                else:
                    z = ap_r * normals[k]
                    if ap_kind == 3:
                        z += ap_s if u4 < 0.5 else -ap_s
                    elif ap_kind == 4:
                        z += ap_s
                y = pos[p] + z
            y = y - length * math.floor(y / length)
            if y >= length:
                y = 0.0
            dn = point_value(bm, y)
            if am_on:
                for j in range(n):
                    v = _pair_value(am, am_cut, y - pos[j], length)
                    drate[j] += v
                    dn += v
            pos[n] = y
            drate[n] = dn
            n += 1
            nb += 1
            kind = 1
        else:
            target = w - birth
            victim = n - 1
            acc = 0.0
            for j in range(n):
                acc += drate[j]
                if acc > target:
                    victim = j
                    break
            y = pos[victim]
            if am_on:
                for j in range(n):
                    if j != victim:
                        drate[j] -= _pair_value(am, am_cut, pos[j] - y, length)
            n -= 1
            pos[victim] = pos[n]
            drate[victim] = drate[n]
            nd += 1
            kind = -1
        if record:
            rec_t[nrec] = t
            rec_kind[nrec] = kind
            rec_x[nrec] = y
            rec_n[nrec] = n
            nrec += 1
        k += 1
    return n, t, k, status, nb, nd, nrec


_AP_KIND = {"zero": 0, "const": 1, "gaussian": 2, "sgaussian": 3, "pgaussian": 4}


@dataclass(eq=False)
class IBMTrajectory:
    times: np.ndarray
    snapshots: list
    n_births: int = 0
    n_deaths: int = 0
    blowup: bool = False
    blowup_time: Optional[float] = None
    absorbed_time: Optional[float] = None
    events: Optional[list] = None
    meta: dict = field(default_factory=dict)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(c) for c in self.snapshots])

    def vessel_counts(self, vessel: Vessel) -> np.ndarray:
        return np.array([c.count_in(vessel) for c in self.snapshots])


def snapshot_times(t_end: float, interval: float) -> np.ndarray:
    if t_end < 0:
        raise ValueError("t_end must be >= 0")
    if t_end == 0:
        return np.zeros(1)
    if not interval > 0:
        raise ValueError("snapshot interval must be > 0")
    m = int(math.floor(t_end / interval + 1e-9))
    ts = interval * np.arange(m + 1)
    if t_end - ts[-1] > 1e-9 * max(1.0, t_end):
        ts = np.append(ts, t_end)
    return ts


def simulate(cfg0: Configuration, rates: ModelRates, t_end: float, interval: float,
             rng: Union[np.random.Generator, int, None] = None, record_events: bool = False,
             max_population: int = POPULATION_CAP, block: int = BLOCK) -> IBMTrajectory:
    """Exact simulation with snapshots every ``interval`` up to ``t_end``.

    Random numbers come from a numpy ``Generator`` in blocks, so a seed fixes
    the event stream on either backend.  Exceeding ``max_population`` stops
    the run and flags a blow-up.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    L = cfg0.torus_L
    times = snapshot_times(t_end, interval)

    bm = encode(rates.b_minus, L)
    am = encode(rates.a_minus, L)
    am_cut = rates.a_minus.support if rates.a_minus.kind in ("gaussian", "sgaussian") else math.inf
    env_total = environment_integral(rates.b_plus, L)
    env_uniform = rates.b_plus.kind in ("zero", "const")
    if env_uniform:
        env_h, env_cdf = L, np.zeros(1)
    else:
        env_h, env_cdf = _environment_table(rates.b_plus, L)
        env_total = float(env_cdf[-1])
    ap = rates.a_plus.resolved(L)
    ap_mass = torus_integral(ap, L)
    ap_kind = _AP_KIND[ap.kind]

    cap = max(64, 2 * len(cfg0))
    pos = np.zeros(cap)
    drate = np.zeros(cap)
    n = len(cfg0)
    pos[:n] = cfg0.positions
    rec = [np.zeros(block), np.zeros(block, np.int64), np.zeros(block), np.zeros(block, np.int64)]
    events = [] if record_events else None

    snaps = [cfg0]
    t = 0.0
    ti = 1
    nb_total = nd_total = 0
    blowup, t_blow, t_abs = False, None, None
    k = block
    unif = normals = None
    while ti < times.size:
        if k >= block:
            unif = rng.random((block, 5))
            normals = rng.standard_normal(block)
            k = 0
            _refresh_rates(pos, drate, n, bm, am, am_cut, L)
        n, t, k, status, nb, nd, nrec = _advance(
            pos, drate, n, t, times[ti], unif, normals, k,
            bm, am, am_cut, L, env_total, env_uniform, env_cdf, env_h,
            ap_kind, ap_mass, ap.r, ap.s, max_population,
            record_events, rec[0], rec[1], rec[2], rec[3])
        nb_total += nb
        nd_total += nd
        if record_events:
            for j in range(nrec):
                events.append(JumpRecord(float(rec[0][j]), "birth" if rec[1][j] > 0 else "death",
                                         float(rec[2][j]), int(rec[3][j])))
        if status == _REACHED:
            snaps.append(Configuration(pos[:n].copy(), L))
            ti += 1
        elif status == _FULL:
            pos = np.concatenate([pos, np.zeros(pos.size)])
            drate = np.concatenate([drate, np.zeros(drate.size)])
        elif status == _ABSORBED:
            t_abs = t
            frozen = Configuration(pos[:n].copy(), L)
            snaps.extend([frozen] * (times.size - ti))
            break
        elif status == _BLOWUP:
            blowup, t_blow = True, t
            log.warning("population cap %d exceeded at t=%.6g", max_population, t)
            break
    meta = {"backend": BACKEND, "block": block, "snapshot_interval": interval,
            "max_population": max_population}
    return IBMTrajectory(times[: len(snaps)], snaps, nb_total, nd_total, blowup, t_blow,
                         t_abs, events, meta)


# replica ensembles ----------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def replica_seed(base_seed: int, index: int) -> int:
    """Seed of replica ``index``: ``splitmix64(splitmix64(base) ^ index)``."""
    return splitmix64(splitmix64(int(base_seed) & _MASK64) ^ int(index))


def run_replicas(cfg0: Union[Configuration, callable], rates: ModelRates, t_end: float,
                 interval: float, base_seed: int, replicas: int, workers: int = 1,
                 **kwargs) -> list[IBMTrajectory]:
    """Independent replicas with seeds from :func:`replica_seed`.

    ``cfg0`` may be a callable ``rng -> Configuration`` to randomise the start.
    Results are ordered by replica index whatever ``workers`` is.
    """
    def one(i):
        rng = np.random.default_rng(replica_seed(base_seed, i))
        start = cfg0(rng) if callable(cfg0) else cfg0
        return simulate(start, rates, t_end, interval, rng, **kwargs)

    if workers <= 1:
        return [one(i) for i in range(replicas)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(replicas)))


# estimators -------------------------------------------------------------------------

def _post_burn_in(snapshots: Sequence[Configuration], burn_in: float):
    if not 0 <= burn_in < 1:
        raise ValueError("burn_in must be a fraction in [0, 1)")
    return list(snapshots)[int(math.floor(burn_in * len(snapshots))):]


def estimate_occupation(snapshots: Sequence[Configuration], vessel: Vessel,
                        burn_in: float = BURN_IN, min_snapshots: int = MIN_SNAPSHOTS) -> OccupationSpectrum:
    kept = _post_burn_in(snapshots, burn_in)
    if len(kept) < min_snapshots:
        raise ValueError(f"need at least {min_snapshots} snapshots after burn-in, got {len(kept)}")
    counts = [c.count_in(vessel) for c in kept]
    return empirical_spectrum(counts, burn_in=burn_in, volume=vessel.volume)


def empirical_factorial_moments(snapshots: Sequence[Configuration], vessel: Vessel,
                                k_max: int = 4, burn_in: float = 0.0) -> FactorialMoments:
    kept = _post_burn_in(snapshots, burn_in)
    return factorial_moments([c.count_in(vessel) for c in kept], vessel.volume, k_max)


def moments_over_time(trajectories: Sequence[IBMTrajectory], vessel: Vessel,
                      k_max: int = 4) -> list[tuple[float, FactorialMoments]]:
    """Factorial moments across replicas at each common snapshot time."""
    m = min(len(tr.snapshots) for tr in trajectories)
    out = []
    for j in range(m):
        counts = [tr.snapshots[j].count_in(vessel) for tr in trajectories]
        out.append((float(trajectories[0].times[j]), factorial_moments(counts, vessel.volume, k_max)))
    return out


def mean_field_density(rates: ModelRates, L: float) -> float:
    """Homogeneous Riccati level ``lambda+`` for constant rates."""
    if rates.b_plus.kind not in ("zero", "const") or rates.b_minus.kind not in ("zero", "const"):
        raise ValueError("mean-field level defined here for constant b+-")
    b = rates.b_plus.c if rates.b_plus.kind == "const" else 0.0
    bm = rates.b_minus.c if rates.b_minus.kind == "const" else 0.0
    a = torus_integral(rates.a_minus, L)
    alpha = torus_integral(rates.a_plus, L) - bm
    if a == 0:
        return b / bm if bm > 0 else math.inf
    return riccati_derived(RiccatiParams(b, a, alpha)).lambda_plus
