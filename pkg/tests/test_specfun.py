import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracvar import specfun


def test_gamma_classical_values():
    assert specfun.gamma_fn(1.0) == pytest.approx(1.0, rel=1e-14)
    assert specfun.gamma_fn(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-13)
    assert specfun.gamma_fn(5.0) == pytest.approx(24.0, rel=1e-13)


def test_gamma_against_scipy_oracle():
    # Independent oracle: scipy's gamma over the contract interval.
    from scipy.special import gamma as ref

    xs = np.linspace(0.01, 50.0, 1234)
    worst = max(abs(specfun.gamma_fn(float(x)) - ref(x)) / ref(x) for x in xs)
    assert worst <= 1e-12


def test_gamma_domain_errors():
    for bad in (0.0, -1.5, float("nan"), float("inf")):
        with pytest.raises(ValueError):
            specfun.gamma_fn(bad)


def test_mu_s_half_order_value():
    # 2^0.5 Gamma(1.25) / (sqrt(pi) Gamma(0.25)), evaluated at 30 digits
    # with mpmath before the build.
    assert specfun.mu_s(1, 0.5) == pytest.approx(0.19947114020071634, rel=1e-13)


def test_mu_limit_near_one():
    for n in (1, 2):
        ratio = specfun.mu_s(n, 0.999) / (1.0 - 0.999)
        target = n / specfun.omega_n(n)
        assert ratio == pytest.approx(target, rel=5e-3)


def test_gamma_alpha_values():
    assert specfun.gamma_alpha(2, 1.0) == pytest.approx(2.0 * math.pi, rel=1e-13)
    # alpha gamma_alpha -> omega_n
    assert 0.001 * specfun.gamma_alpha(2, 0.001) == pytest.approx(
        2.0 * math.pi, rel=5e-3
    )
    assert 0.001 * specfun.gamma_alpha(1, 0.001) == pytest.approx(2.0, rel=5e-3)


def test_identity_examples():
    assert specfun.gamma_alpha(2, 0.5) * specfun.mu_s(2, 0.5) == pytest.approx(1.5, rel=1e-12)
    assert specfun.gamma_alpha(1, 0.5) * specfun.mu_s(1, 0.5) == pytest.approx(0.5, rel=1e-12)


@settings(max_examples=1000, deadline=None)
@given(
    n=st.sampled_from([1, 2]),
    s=st.floats(min_value=0.005, max_value=0.995),
)
def test_identity_random(n, s):
    # gamma_{1-s} mu_s = n - (1 - s), up to floating round-off.
    lhs = specfun.gamma_alpha(n, 1.0 - s) * specfun.mu_s(n, s)
    rhs = n - (1.0 - s)
    assert abs(lhs - rhs) / rhs <= 1e-10


def test_limit_bands():
    for n in (1, 2):
        for s in np.linspace(0.99, 0.9999, 25):
            ratio = specfun.mu_s(n, float(s)) / (1.0 - float(s))
            assert abs(ratio - n / specfun.omega_n(n)) / (n / specfun.omega_n(n)) <= 0.01
        for a in np.linspace(1e-4, 0.01, 25):
            val = float(a) * specfun.gamma_alpha(n, float(a))
            assert abs(val - specfun.omega_n(n)) / specfun.omega_n(n) <= 0.01


def test_domain_errors():
    with pytest.raises(ValueError):
        specfun.mu_s(3, 0.5)
    with pytest.raises(ValueError):
        specfun.mu_s(2, 1.0)
    with pytest.raises(ValueError):
        specfun.gamma_alpha(2, 2.5)
    with pytest.raises(ValueError):
        specfun.FracConstants(2, 0.0)


def test_frac_constants_bundle():
    c = specfun.FracConstants(2, 0.9)
    d = c.limit_diagnostics()
    assert d["identity_residual"] <= 1e-12
    assert c.omega_n == pytest.approx(2.0 * math.pi)
