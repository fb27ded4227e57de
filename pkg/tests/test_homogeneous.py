import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spatialbd.homogeneous import (DegenerateRiccatiError, RiccatiParams, linear_solve,
                                   riccati_derived, riccati_solve, riccati_solve_delta_form)


def test_linear_examples():
    assert linear_solve(0, 1, 5, 100) == pytest.approx(5 * math.exp(-100), rel=1e-12)
    assert linear_solve(2, 0, 1, 3) == 7
    for t in (0.0, 0.3, 10.0, 1e3):
        assert linear_solve(2, 1, 2, t) == pytest.approx(2.0, rel=1e-15)


def test_derived_fig1_parameters():
    s = riccati_derived(RiccatiParams(b=2, a=1, alpha=1))
    assert (s.lambda_plus, s.lambda_minus, s.omega, s.delta) == pytest.approx((2, -1, 3, 0.5), abs=1e-12)
    s = riccati_derived(RiccatiParams(b=1, a=3, alpha=-1))
    assert s.omega == pytest.approx(math.sqrt(13), rel=1e-15)
    assert s.lambda_plus == pytest.approx((-1 + math.sqrt(13)) / 6, rel=1e-14)
    assert s.lambda_plus == pytest.approx(0.4342585, abs=5e-8)
    s = riccati_derived(RiccatiParams(b=0, a=1, alpha=1))
    assert (s.lambda_plus, s.lambda_minus, s.omega, s.delta) == (1, 0, 1, 0)


def test_degenerate():
    with pytest.raises(DegenerateRiccatiError, match="use linear_solve with effective rates"):
        riccati_derived(RiccatiParams(1, 0, -1))


def test_solution_examples():
    p = RiccatiParams(2, 1, 1)
    assert riccati_solve(p, 0.0, math.log(2) / 3) == pytest.approx(0.5, abs=1e-12)
    for q in (p, RiccatiParams(1, 3, -1), RiccatiParams(0.3, 0.01, -2.0)):
        lp = riccati_derived(q).lambda_plus
        assert np.allclose(riccati_solve(q, lp, np.linspace(0, 50, 11)), lp, rtol=1e-13)
    t = np.linspace(0, 20, 400)
    r = riccati_solve(RiccatiParams(1, 3, -1), 3.0, t)
    assert np.all(np.diff(r) <= 0) and r[1] < r[0] and r[-1] == pytest.approx(0.4342585, abs=1e-7)


def test_no_overflow_for_large_omega_t():
    p = RiccatiParams(2, 1, 1)
    assert riccati_solve(p, 0.0, 1e4) == pytest.approx(2.0, rel=1e-15)


def test_conjugate_form_accuracy():
    # |alpha| >> ab: the naive root formula loses all digits of lambda_+
    p = RiccatiParams(1e-6, 1e-6, -1e3)
    mp = mpmath.mp
    mp.dps = 50
    a, b, al = mpmath.mpf("1e-6"), mpmath.mpf("1e-6"), mpmath.mpf(-1000)
    w = mpmath.sqrt(al * al + 4 * a * b)
    s = riccati_derived(p)
    assert s.lambda_plus == pytest.approx(float((al + w) / (2 * a)), rel=1e-12)
    assert s.delta == pytest.approx(float(4 * a * b / (al + w) ** 2), rel=1e-12)


def test_delta_form_agrees():
    for p, r0 in [(RiccatiParams(2, 1, 1), 0.0), (RiccatiParams(1, 3, -1), 3.0)]:
        t = np.linspace(0, 5, 21)
        assert np.allclose(riccati_solve(p, r0, t), riccati_solve_delta_form(p, r0, t), rtol=1e-12)


params = st.builds(RiccatiParams, st.floats(0, 5), st.floats(0.01, 5), st.floats(-5, 5))


@settings(max_examples=200, deadline=None)
@given(params, st.floats(0, 10), st.floats(0.01, 5))
def test_residual(p, rho0, t):
    h = 1e-4
    f = lambda s: riccati_solve(p, rho0, t + s * h)
    fd = (f(-2) - 8 * f(-1) + 8 * f(1) - f(2)) / (12 * h)
    r = riccati_solve(p, rho0, t)
    assert fd == pytest.approx(p.rhs(r), rel=1e-6, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(params, st.floats(0, 10))
def test_vieta_and_monotonicity(p, rho0):
    s = riccati_derived(p)
    assert s.lambda_plus >= s.lambda_minus
    assert s.omega ** 2 == pytest.approx(p.alpha ** 2 + 4 * p.a * p.b, rel=1e-12, abs=1e-300)
    assert s.lambda_plus * s.lambda_minus == pytest.approx(-p.b / p.a, rel=1e-10, abs=1e-300)
    assert s.lambda_plus + s.lambda_minus == pytest.approx(p.alpha / p.a, rel=1e-10, abs=1e-12)
    r = riccati_solve(p, rho0, np.linspace(0, 10, 101))
    d = np.diff(r)
    tol = 1e-13 * max(1.0, abs(s.lambda_plus), rho0)
    if rho0 < s.lambda_plus:
        assert np.all(d >= -tol)
    elif rho0 > s.lambda_plus:
        assert np.all(d <= tol)


def test_linear_limit():
    for alpha in (-0.5, -2.0):
        t = np.linspace(0, 3, 7)
        lin = linear_solve(1.5, -alpha, 0.7, t)
        e6 = np.max(np.abs(riccati_solve(RiccatiParams(1.5, 1e-6, alpha), 0.7, t) - lin))
        e8 = np.max(np.abs(riccati_solve(RiccatiParams(1.5, 1e-8, alpha), 0.7, t) - lin))
        assert e8 < e6 and e8 < 1e-6
