import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochflock.errors import DomainError, UnsupportedError
from stochflock.kernels import (
    Constant,
    CutoffKernel,
    LogPower,
    PowerLaw,
    Regularized,
    Shifted,
    parse_kernel,
)

FAMILIES = [PowerLaw(0.5), PowerLaw(1.5), Regularized(1.0), LogPower(0.8), Constant(0.7)]


def test_eval_examples():
    assert PowerLaw(1).eval(2.0) == 0.5
    assert Regularized(2).eval(0.0) == 1.0
    assert LogPower(0.5).eval(math.e - 1) == pytest.approx(1.0, rel=1e-15)


def test_eval_rejects_zero_and_negative():
    with pytest.raises(DomainError):
        PowerLaw(1).eval(0.0)
    with pytest.raises(DomainError):
        LogPower(1).eval(0.0)
    with pytest.raises(DomainError):
        Regularized(1).eval(-1.0)


def test_eval_cutoff_examples():
    assert CutoffKernel(PowerLaw(1), 0.1).eval(0.05) == pytest.approx(10.0)
    assert CutoffKernel(PowerLaw(1), 0.1).eval(2.0) == 0.5
    assert CutoffKernel(PowerLaw(2), 0.5).eval(0.0) == 4.0


def test_running_inf_examples():
    assert PowerLaw(1).running_inf(4.0) == 0.25
    assert Constant(0.7).running_inf(100.0) == 0.7
    assert Regularized(1).running_inf(1.0) == pytest.approx(2 ** -0.5, rel=1e-14)


def test_running_inf_shifted_uses_minimisation():
    k = Shifted(PowerLaw(1.0), -0.2)
    assert k.running_inf(4.0) == pytest.approx(0.05, abs=1e-8)


def test_primitive_examples():
    assert PowerLaw(1).primitive(1.0) == 0.0
    assert PowerLaw(2).primitive(0.5) == pytest.approx(-2.0)
    assert PowerLaw(0.5).primitive(4.0) == pytest.approx(4.0)
    with pytest.raises(UnsupportedError):
        Regularized(1).primitive(1.0)
    with pytest.raises(UnsupportedError):
        LogPower(1).primitive(1.0)


def test_lipschitz_examples():
    assert PowerLaw(1).lipschitz_const(1.0) == 1.0
    assert PowerLaw(2).lipschitz_const(2.0) == 0.25
    assert Constant(3.0).lipschitz_const(5.0) == 0.0
    with pytest.raises(DomainError):
        PowerLaw(1).lipschitz_const(0.0)


def test_psi_star_and_singularity():
    assert [k.psi_star for k in FAMILIES] == [0.0, 0.0, 0.0, 0.0, 0.7]
    assert [k.singular_at_zero for k in FAMILIES] == [True, True, False, True, False]


def test_monotone_and_above_psi_star():
    rng = np.random.default_rng(1)
    r1 = rng.uniform(1e-3, 50, 2000)
    r2 = r1 + rng.uniform(0, 50, 2000)
    for k in FAMILIES:
        assert np.all(k.eval(r2) <= k.eval(r1))
        assert np.all(k.eval(r2) >= k.psi_star)


def test_finite_difference_lipschitz():
    r = np.geomspace(1e-3, 1e3, 120)
    for k in FAMILIES:
        lip = np.array([k.lipschitz_const(x) for x in r])
        for h in (1e-4, 1e-6):
            fd = np.abs(k.eval(r + h) - k.eval(r)) / h
            assert np.all(fd <= lip * (1 + 1e-6))


def test_primitive_derivative():
    r = np.geomspace(1e-3, 1e3, 120)
    for k in (PowerLaw(0.5), PowerLaw(1.0), PowerLaw(1.5), PowerLaw(2.0)):
        h = 1e-7 * r
        deriv = (k.primitive(r + h) - k.primitive(r - h)) / (2 * h)
        assert np.all(np.abs(deriv - k.eval(r)) <= 1e-5 * (1 + k.eval(r)))


def test_tail_integral_power_two():
    x = np.array([0.5, 1.0, 4.0])
    assert np.allclose(PowerLaw(2).tail_integral(x), 1 / x, rtol=1e-14)


@settings(max_examples=60, deadline=None)
@given(alpha=st.floats(0.1, 3.0), a=st.floats(1e-4, 1.0), r=st.floats(0.0, 10.0))
def test_cutoff_matches_base_above_and_is_flat_below(alpha, a, r):
    base = PowerLaw(alpha)
    k = CutoffKernel(base, a)
    if r >= a:
        assert k.eval(r) == base.eval(r)
    else:
        assert k.eval(r) == base.eval(a)


def test_parse_kernel_round_trip():
    for text in ("power:1.5", "reg:0.5", "log:0.8", "const:1.0", "shift:power:1.5:+0.2"):
        k = parse_kernel(text)
        assert parse_kernel(k.spec()) == k
    assert parse_kernel("shift:power:1.5:+0.2").eval(1.0) == pytest.approx(1.2)
    with pytest.raises(Exception):
        parse_kernel("cubic:2")
