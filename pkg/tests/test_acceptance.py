"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every criterion is a function returning ``(ok, detail)`` where ``ok`` already
includes the runtime budget.  The lines are printed as the checks run (visible
with ``-s``) and repeated in the terminal summary by ``conftest.py``.  Run the
file directly (``python tests/test_acceptance.py``) to get the lines without
pytest.
"""
import math
import os
import sys
import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from spatialbd.cli import kinetic_problem, model_rates
from spatialbd.combinatorics import (Vessel, bell_number, cox_constants, cox_occupation,
                                     empirical_spectrum, factorial_moments,
                                     heavy_tail_lower_bound, poisson_spectrum,
                                     sample_cox_counts, total_variation, touchard,
                                     touchard_binomial_sequence)
from spatialbd.grid import Field, Grid1D
from spatialbd.hierarchy import (ClosureRule, PairField, PairOperator, chain_rhs_1,
                                 chain_rhs_2, integrate_pair_dynamics)
from spatialbd.homogeneous import RiccatiParams, riccati_derived, riccati_solve
from spatialbd.ibm import (Configuration, estimate_occupation, moments_over_time,
                           run_replicas, simulate)
from spatialbd.kernels import KernelSpec, evaluate, parse_kernel
from spatialbd.kinetic import KineticProblem, integrate_kinetic, kinetic_rhs, precompute_problem
from spatialbd.scenarios import preset

RESULTS: dict[int, str] = {}
WORKERS = min(8, os.cpu_count() or 1)


def report(n: int, title: str, ok: bool, detail: str, elapsed: float, budget: float) -> bool:
    ok = bool(ok) and elapsed < budget
    line = (f"{'PASS' if ok else 'FAIL'} criterion {n:2d} {title}: {detail} "
            f"[{elapsed:.2f}s / {budget:g}s]")
    RESULTS[n] = line
    print(line, flush=True)
    return ok


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# 1 ---------------------------------------------------------------------------------

def criterion_1():
    def work():
        p = RiccatiParams(b=2.0, a=1.0, alpha=1.0)
        s = riccati_derived(p)
        rho = riccati_solve(p, 0.0, math.log(2) / 3)
        errs = [abs(s.lambda_plus - 2), abs(s.lambda_minus + 1), abs(s.omega - 3),
                abs(s.delta - 0.5), abs(rho - 0.5)]
        return max(errs)
    err, dt = timed(work)
    return report(1, "Riccati closed form", err <= 1e-12, f"max error {err:.2e} (tol 1e-12)",
                  dt, 1.0)


# 2 ---------------------------------------------------------------------------------

def _constant_problem(dt, t_end, N=512):
    # b = 2, a = int a- = 1, alpha = int a+ - b- = 1.5 - 0.5 = 1
    return KineticProblem(Grid1D(40.0, N), KernelSpec.gaussian(1.5, 1.0),
                          KernelSpec.gaussian(1.0, 1.0), KernelSpec.const(2.0),
                          KernelSpec.const(0.5), KernelSpec.const(0.0), t_end, dt)


def criterion_2():
    p = RiccatiParams(2.0, 1.0, 1.0)

    def work():
        ts = [0.5, 1.0, 2.0, 5.0]
        tr = integrate_kinetic(_constant_problem(1e-3, 5.0), ts)
        sup = max(float(np.max(np.abs(s.values - riccati_solve(p, 0.0, t))))
                  for t, s in zip(tr.times[1:], tr.snapshots[1:]))
        errs = []
        for dt in (0.1, 0.05, 0.025):
            f = integrate_kinetic(_constant_problem(dt, 2.0), [2.0]).final
            errs.append(float(np.max(np.abs(f.values - riccati_solve(p, 0.0, 2.0)))))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        return sup, orders
    (sup, orders), dt = timed(work)
    ok = sup <= 1e-6 and bool(np.all(orders >= 3.5))
    return report(2, "solver vs Riccati oracle", ok,
                  f"sup error {sup:.2e} (tol 1e-6), orders {np.round(orders, 2).tolist()} (>= 3.5)",
                  dt, 10.0)


# 3 ---------------------------------------------------------------------------------

def criterion_3():
    def work():
        bad = []
        t = np.linspace(0.0, 10.0, 2001)
        for name in ("fig1a", "fig1b", "fig1c", "fig1d"):
            s = preset(name)
            p = RiccatiParams(s.b, s.a, s.alpha)
            lp = riccati_derived(p).lambda_plus
            rho = riccati_solve(p, s.rho0_value, t)
            d = np.diff(rho)
            mono = np.all(d >= 0) if s.rho0_value < lp else np.all(d <= 0)
            side = np.all(rho <= lp) if s.rho0_value < lp else np.all(rho >= lp)
            if not (mono and side and abs(rho[-1] - lp) < 1e-6):
                bad.append(name)
        return bad
    bad, dt = timed(work)
    return report(3, "Figure 1 monotone approach", not bad,
                  "all four curves monotone toward lambda+" if not bad else f"failed: {bad}",
                  dt, 1.0)


def _fmt_t(t):
    return "never" if t is None else f"{t:.2f}"


# 4 ---------------------------------------------------------------------------------

def _steady(name):
    s = preset(name).resolved()
    prob = kinetic_problem(s)
    tr = integrate_kinetic(prob, [s.t_end], steady_tol=s.steady_tol, stop_at_steady=True,
                           absolute=True)
    return prob, tr


def criterion_4():
    def work():
        out = {}
        for name in ("fig2L", "fig2R"):
            prob, tr = _steady(name)
            v = tr.final.values
            x = prob.grid.nodes
            i = int(np.argmax(v))
            bp = float(evaluate(prob.b_plus.resolved(prob.grid.length), x[i]))
            bm = float(evaluate(prob.b_minus.resolved(prob.grid.length), x[i]))
            hetero = (v.max() - v.min()) / v.mean() > 1e-1
            out[name] = (tr.steady_time is not None and tr.rhs_sup[-1] < 1e-6 and hetero
                         and bp > bm, f"{name} steady t={_fmt_t(tr.steady_time)}, argmax x={x[i]:.2f} "
                         f"(b+ {bp:.2f} > b- {bm:.2f})")
        _, a = _steady("fig3L")
        _, b = _steady("fig3R")
        out["fig3"] = (a.steady_time is not None and b.steady_time is not None
                       and a.steady_time > b.steady_time,
                       f"fig3L t={_fmt_t(a.steady_time)} > fig3R t={_fmt_t(b.steady_time)}")
        var = {}
        for name in ("fig4L", "fig4R"):
            _, tr = _steady(name)
            v = tr.final.values
            var[name] = ((v.max() - v.min()) / v.mean(), tr.steady_time)
        out["fig4"] = (var["fig4L"][1] is not None and var["fig4R"][1] is not None
                       and var["fig4L"][0] < 1e-3 and var["fig4R"][0] > 1e-1,
                       f"variation fig4L {var['fig4L'][0]:.1e}, fig4R {var['fig4R'][0]:.2f}")
        return out
    out, dt = timed(work)
    ok = all(v[0] for v in out.values())
    return report(4, "Figure 2/3/4 properties", ok, "; ".join(v[1] for v in out.values()),
                  dt, 120.0)


# 5 ---------------------------------------------------------------------------------

def criterion_5():
    def work():
        s = preset("fig5").resolved()
        prob = kinetic_problem(s)
        tr = integrate_kinetic(prob, s.snapshot_times, steady_tol=s.steady_tol,
                               stop_at_steady=True, absolute=True)
        peak = max(float(np.max(f.values)) for f in tr.snapshots)
        return tr, peak
    (tr, peak), dt = timed(work)
    if tr.diverged:
        detail = f"diverged at t={tr.blowup_time:.3f}"
    else:
        detail = (f"no blow-up: peak density {peak:.3e} < cap 1e9 up to t={tr.times[-1]:g}"
                  f", steady {_fmt_t(tr.steady_time)}")
    return report(5, "Figure 5 blow-up", tr.diverged, detail, dt, 60.0)


# 6 ---------------------------------------------------------------------------------

def criterion_6():
    def work():
        rng = np.random.default_rng(6)
        worst = 0.0
        N = 128
        for i in range(100):
            # widths kept below L/20 so no kernel wraps around the torus
            L = rng.uniform(20.0, 60.0)
            w = L / 20
            ap = KernelSpec.gaussian(rng.uniform(0, 2), rng.uniform(0.3, w))
            am = KernelSpec("sgaussian", rng.uniform(0, 2), rng.uniform(0.3, w), rng.uniform(0, w)) \
                if i % 2 else KernelSpec.gaussian(rng.uniform(0, 2), rng.uniform(0.3, w))
            bp = KernelSpec("pgaussian", rng.uniform(0, 3), rng.uniform(0.5, 5), rng.uniform(-5, 5))
            bm = KernelSpec.const(rng.uniform(0, 1))
            prob = KineticProblem(Grid1D(L, N), ap, am, bp, bm, KernelSpec.const(1.0), 1.0, 1e-3)
            pre = precompute_problem(prob)
            op = PairOperator.from_precomputed(pre)
            r = Field(prob.grid, rng.uniform(0, 5, N))
            a = kinetic_rhs(r, pre).values
            b = chain_rhs_1(r, PairField.product(r), op).values
            worst = max(worst, float(np.max(np.abs(a - b))))
        return worst
    worst, dt = timed(work)
    return report(6, "chain-to-kinetic link", worst <= 1e-12,
                  f"sup difference {worst:.2e} over 100 fields (tol 1e-12)", dt, 5.0)


# 7 ---------------------------------------------------------------------------------

def criterion_7():
    def work():
        notes, ok = [], True
        for m in (0.5, 1.0, 2 * math.e, 12.0):
            sp = cox_occupation(1.0, Vessel(m))
            e_sum = abs(math.fsum(sp.probs) - 1)
            e_mom = max(abs(sp.mean - m), abs(sp.variance - 2 * m))
            ok &= e_sum <= 1e-10 and e_mom <= 1e-8
        notes.append(f"(a,b) sum/moment errors ok={ok}")
        v = Vessel(2 * math.e)
        a, b = cox_constants(1.0, v)
        sp = cox_occupation(1.0, v, n_max=60)
        # n = 1: p(1) = a b exactly, matching a b B_1 / 1!
        c_ok = b >= 1 and sp.probs[1] >= a * b * (1 - 1e-12) and all(
            sp.probs[n] >= heavy_tail_lower_bound(1.0, v, n) * (1 - 1e-12) for n in range(2, 61))
        notes.append(f"(c) b={b:.3f}, n=1..60 ok={c_ok}")
        rng = np.random.default_rng(2024)
        vd = Vessel(2.0)
        tv = total_variation(empirical_spectrum(sample_cox_counts(1.0, vd, 10 ** 6, rng)),
                             cox_occupation(1.0, vd))
        notes.append(f"(d) TV {tv:.4f}")
        mpmath.mp.dps = 60
        e_ok = all(mpmath.mpf(bell_number(n)) / mpmath.factorial(n)
                   >= 1 / (mpmath.sqrt(2 * mpmath.pi) * mpmath.log(n) ** n) for n in (50, 100, 200))
        notes.append(f"(e) ok={e_ok}")
        return ok and c_ok and tv <= 0.01 and e_ok, "; ".join(notes)
    (ok, detail), dt = timed(work)
    return report(7, "Cox heavy tail", ok, detail, dt, 30.0)


# 8 ---------------------------------------------------------------------------------

def criterion_8():
    def work():
        s = preset("immigration-death").resolved()
        rates = model_rates(s)
        v = Vessel.interval(*s.vessel)
        tr = simulate(Configuration.empty(s.L), rates, s.t_end, s.snapshot_interval,
                      rng=np.random.default_rng(s.seed))
        sp = estimate_occupation(tr.snapshots, v, burn_in=s.burn_in)
        bp, bm = rates.b_plus.c, rates.b_minus.c
        tv = total_variation(sp, poisson_spectrum(bp * v.volume / bm))
        kept = tr.counts[int(math.floor(s.burn_in * len(tr.snapshots))):]
        dens = float(kept.mean()) / s.L
        return tv, dens / (bp / bm) - 1, sp.meta["n_samples"]
    (tv, rel, n), dt = timed(work)
    return report(8, "Poisson micro-macro", tv <= 0.02 and abs(rel) <= 0.02 and n >= 10 ** 4,
                  f"TV {tv:.4f} (tol 0.02), density rel. error {rel:+.4f} (tol 0.02), "
                  f"{n} snapshots", dt, 60.0)


# 9 ---------------------------------------------------------------------------------

def criterion_9():
    def work():
        s = preset("long-competition").resolved()
        rates = model_rates(s)
        v = Vessel.interval(*s.vessel)
        trs = run_replicas(lambda g: Configuration.uniform(s.n0, s.L, g), rates, s.t_end,
                           s.snapshot_interval, s.seed, s.replicas, workers=WORKERS)
        worst, n_times = -math.inf, 0
        for t, fm in moments_over_time(trs, v, s.k_max):
            if fm.c[0] == 0:
                continue  # empty start: every s_k is 0
            n_times += 1
            for k in range(1, s.k_max):
                worst = max(worst, (fm.s[k] - fm.s[k - 1]) / fm.diff_se(k, k + 1))
        dens = float(np.mean([len(tr.snapshots[-1]) for tr in trs])) / s.L
        cox = sample_cox_counts(dens, v, s.replicas, np.random.default_rng(s.seed))
        fm = factorial_moments(cox, v.volume, 2)
        z = (fm.s[1] - fm.s[0]) / fm.diff_se(1, 2)
        return worst, n_times, z
    (worst, n_times, z), dt = timed(work)
    return report(9, "sub-Poissonicity preserved", worst <= 2 and z > 5,
                  f"max (s_k+1 - s_k)/SE = {worst:+.2f} over {n_times} times (<= 2); "
                  f"Cox s2 - s1 = {z:.1f} SE (> 5)", dt, 300.0)


# 10 --------------------------------------------------------------------------------

def _pair_problem(ap, am, bp, bm, rho0, t_end, dt, N=128, L=40.0):
    return KineticProblem(Grid1D(L, N), parse_kernel(ap), parse_kernel(am), parse_kernel(bp),
                          parse_kernel(bm), parse_kernel(rho0), t_end, dt)


def criterion_10():
    def work():
        free = _pair_problem("zero", "zero", "pgaussian(1,2,0)", "const(0.5)",
                             "pgaussian(1,2,0)", 5.0, 1e-2)
        tr = integrate_pair_dynamics(free, ClosureRule.MEAN_FIELD, [1.0, 2.5, 5.0])
        e_free = max(float(np.max(np.abs(r2.truncated(r1)))) for r1, r2 in zip(tr.rho1, tr.rho2))
        ric = _pair_problem("gaussian(1.5,1)", "gaussian(1,1)", "const(2)", "const(0.5)",
                            "const(0)", 5.0, 1e-3)
        tr = integrate_pair_dynamics(ric, ClosureRule.MEAN_FIELD, [0.5, 1.0, 2.0, 5.0],
                                     mode="reclose")
        p = RiccatiParams(2, 1, 1)
        e_ric = max(float(np.max(np.abs(r1.values - riccati_solve(p, 0.0, t))))
                    for t, r1 in zip(tr.times[1:], tr.rho1[1:]))
        rng = np.random.default_rng(10)
        kw = _pair_problem("gaussian(0.7,1)", "gaussian(0.4,1.5)", "pgaussian(1,2,3)",
                           "const(0.5)", "const(1)", 1.0, 1e-2)
        pre = precompute_problem(kw)
        r1 = Field(kw.grid, rng.uniform(0.3, 2.0, kw.grid.n_points))
        prod = PairField.product(r1)
        a = chain_rhs_2(r1, prod, ClosureRule.MEAN_FIELD, pre).values
        b = chain_rhs_2(r1, prod, ClosureRule.KIRKWOOD, pre).values
        e_kw = float(np.max(np.abs(a - b)) / np.max(np.abs(a)))
        return e_free, e_ric, e_kw
    (e_free, e_ric, e_kw), dt = timed(work)
    # Kirkwood divides and multiplies the same products, so "exact" means roundoff
    ok = e_free <= 1e-8 and e_ric <= 1e-6 and e_kw <= 1e-13
    return report(10, "pair dynamics", ok,
                  f"free-mode product error {e_free:.1e} (1e-8), reclose vs Riccati {e_ric:.1e} "
                  f"(1e-6), Kirkwood vs product {e_kw:.1e} (roundoff)", dt, 120.0)


# 11 --------------------------------------------------------------------------------

def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def criterion_11():
    def work():
        bell = all(bell_number(n) == sum(1 for _ in _set_partitions(list(range(n))))
                   for n in range(11))
        # the binomial recurrence yields T_0..T_200 in one pass
        dual = all([touchard(n, b) for n in range(201)] == touchard_binomial_sequence(200, b)
                   for b in (1, 2, Fraction(1, 3), Fraction(5, 2)))
        t1 = all(touchard(n, 1) == bell_number(n) for n in range(51))
        return bell, dual, t1
    (bell, dual, t1), dt = timed(work)
    return report(11, "exact combinatorics", bell and dual and t1,
                  f"Bell vs enumeration {bell}, Touchard dual {dual}, T_n(1) = B_n {t1}", dt, 10.0)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}
EXPECTED_RED = {5: "the fig5 run stays bounded: a+ <= K a- pointwise (K = a+(0)/a-(0)) "
                   "caps the density near K, far below the 1e9 divergence cap"}


@pytest.mark.parametrize("n", [
    pytest.param(n, marks=pytest.mark.xfail(strict=True, reason=EXPECTED_RED[n]))
    if n in EXPECTED_RED else n for n in CRITERIA])
def test_criterion(n):
    assert CRITERIA[n]()


if __name__ == "__main__":
    wanted = [int(a) for a in sys.argv[1:]] or list(CRITERIA)
    results = [CRITERIA[n]() for n in wanted]
    sys.exit(0 if all(results) else 1)
