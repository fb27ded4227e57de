import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spatialbd.grid import Grid1D, integrate
from spatialbd.kernels import (KernelSpec, KernelSpecError, analytic_integral, discretize, encode,
                               evaluate, format_kernel, parse_kernel, point_value, torus_evaluate,
                               torus_value, _lattice_sum)


def test_eval_examples():
    assert evaluate(KernelSpec.gaussian(1, 1), 0.0) == pytest.approx(0.3989423, abs=5e-8)
    assert evaluate(KernelSpec.shifted(1, 1, 2), 0.0) == pytest.approx(0.0539910, abs=5e-8)
    p = KernelSpec.periodic(1, 0.5, 0, 10)
    assert evaluate(p, 0.0) == evaluate(p, 10.0)


def test_gaussian_against_mpmath():
    for c, r, x in [(2.0, 5.0, 3.3), (1.0, 0.5, -1.2), (10.0, 1.0, 4.0)]:
        ref = mpmath.mpf(c) / (r * mpmath.sqrt(2 * mpmath.pi)) * mpmath.exp(-mpmath.mpf(x) ** 2 / (2 * r * r))
        assert evaluate(KernelSpec.gaussian(c, r), x) == pytest.approx(float(ref), rel=1e-14)


def test_periodic_lattice_sum_against_mpmath():
    c, r, s, p = 20.0, 10.0, 0.0, 60.0
    for x in (0.0, 7.5, 31.0):
        ref = mpmath.nsum(lambda n: mpmath.mpf(c) / (r * mpmath.sqrt(2 * mpmath.pi))
                          * mpmath.exp(-(x - s + n * p) ** 2 / (2 * r * r)), [-mpmath.inf, mpmath.inf])
        assert evaluate(KernelSpec.periodic(c, r, s, p), x) == pytest.approx(float(ref), rel=1e-13)


def test_doubling_truncation_window():
    rng = np.random.default_rng(5)
    for c, r, s, p in [(20, 10, 0, 60), (10, 5, -5, 40), (1, 0.5, 3, 10), (20, 3, 5, 40)]:
        x = rng.uniform(-2 * p, 2 * p, 200)
        cut = r * math.sqrt(2 * math.log(1e14))
        a = _lattice_sum(x, c, r, s, p, cut)
        b = _lattice_sum(x, c, r, s, p, 2 * cut)
        peak = c / (r * math.sqrt(2 * math.pi))
        assert np.max(np.abs(a - b)) <= 1e-13 * peak


def test_analytic_integrals():
    assert analytic_integral(KernelSpec.gaussian(2, 5)) == 2
    assert analytic_integral(KernelSpec.shifted(1, 3, 10)) == 1
    assert analytic_integral(KernelSpec.zero()) == 0
    assert analytic_integral(KernelSpec.periodic(3, 1, 0, 7)) == 3
    with pytest.raises(KernelSpecError, match="multiply v by L at the call site"):
        analytic_integral(KernelSpec.const(2))


def test_discretize_examples():
    g = Grid1D(40, 512)
    assert not np.any(discretize(KernelSpec.zero(), g).values)
    d = discretize(KernelSpec.gaussian(1, 1), g, centered=True)
    assert integrate(d) == pytest.approx(1.0, abs=1e-8)
    g2 = Grid1D(60, 1024)
    v = discretize(KernelSpec.shifted(1, 2, 10), g2, centered=True).values
    rev = v[(-np.arange(1024)) % 1024]
    assert np.max(np.abs(v - rev)) <= 1e-15 * v.max()


def test_refinement_convergence():
    spec = KernelSpec.gaussian(1, 0.7)
    errs = []
    for n in (16, 32):
        g = Grid1D(10, n)
        errs.append(abs(integrate(discretize(spec, g, centered=True)) - 1.0))
    assert errs[1] <= errs[0]


def test_aliasing_warning_in_meta():
    d = discretize(KernelSpec.gaussian(2, 5), Grid1D(40, 64), centered=True)
    assert "aliasing" in d.meta["warning"]
    assert "warning" not in discretize(KernelSpec.gaussian(1, 1), Grid1D(40, 64), centered=True).meta


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 10), st.floats(0.1, 6), st.floats(-12, 12), st.floats(-50, 50))
def test_evenness_and_nonnegativity(c, r, s, x):
    for spec in (KernelSpec.gaussian(c, r), KernelSpec.shifted(c, r, s)):
        assert evaluate(spec, x) == evaluate(spec, -x)
        assert evaluate(spec, x) >= 0


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["zero", "const(0.3)", "gaussian(2,0.5)", "sgaussian(1,3,10)",
                        "pgaussian(20,3,5)", "pgaussian(20,10)", "pgaussian(1,2,3,9)"]),
       st.floats(-70, 70))
def test_compiled_evaluation_matches_numpy(text, d):
    spec = parse_kernel(text)
    L = 40.0
    params = encode(spec, L)
    assert point_value(params, d) == pytest.approx(evaluate(spec.resolved(L), d), rel=1e-13, abs=1e-300)
    assert torus_value(params, d, L) == pytest.approx(float(torus_evaluate(spec, d, L)), rel=1e-13, abs=1e-300)
    assert torus_value.py_func(params, d, L) == pytest.approx(torus_value(params, d, L), rel=1e-14, abs=1e-300)


def test_kernel_text_round_trip():
    for text in ["zero", "const(0.1)", "gaussian(2.0,0.5)", "sgaussian(1.0,2.0,10.0)",
                 "pgaussian(20.0,10.0,0.0)", "pgaussian(10.0,1.0,5.0)", "pgaussian(1.0,2.0,3.0,9.0)"]:
        spec = parse_kernel(text)
        assert format_kernel(spec) == text
        assert parse_kernel(format_kernel(spec)) == spec
    assert parse_kernel("pgaussian(20,10)").s == 0.0


@pytest.mark.parametrize("bad", ["gauss(1,1)", "gaussian(1)", "gaussian(1,0)", "gaussian(-1,1)",
                                 "sgaussian(1,x,2)", "const(1", ""])
def test_kernel_text_errors(bad):
    with pytest.raises(KernelSpecError):
        parse_kernel(bad)
