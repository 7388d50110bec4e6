"""Special-function oracles: high-precision mpmath references, closed
forms, and recurrence/finite-difference identities."""

import math

import mpmath
import numpy as np
import pytest

from tfamix.specfun import digamma, log_gamma


def test_log_gamma_half():
    assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), rel=1e-14)


def test_log_gamma_factorial():
    assert log_gamma(5.0) == pytest.approx(math.log(24.0), rel=1e-14)


def test_log_gamma_against_mpmath():
    mpmath.mp.dps = 40
    for x in [1e-3, 0.1, 0.7, 1.0, 2.5, 10.0, 100.5, 1e4, 1e8]:
        ref = float(mpmath.loggamma(x))
        err = abs(log_gamma(x) - ref) / max(abs(ref), 1.0)
        assert err <= 1e-13, f"x={x}: rel err {err}"


def test_digamma_against_mpmath():
    mpmath.mp.dps = 40
    for x in [1e-3, 0.1, 0.5, 1.0, 2.0, 7.3, 150.0, 1e6]:
        ref = float(mpmath.digamma(x))
        assert abs(digamma(x) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_digamma_at_two_via_recurrence():
    # psi(2) = psi(1) + 1, psi(1) = -Euler-Mascheroni
    euler = float(mpmath.euler)
    assert digamma(2.0) == pytest.approx(-euler + 1.0, abs=1e-12)
    assert digamma(2.0) == pytest.approx(0.4227843351, abs=1e-9)


def test_digamma_half_closed_form():
    euler = float(mpmath.euler)
    assert digamma(0.5) == pytest.approx(-euler - 2.0 * math.log(2.0), abs=1e-12)
    assert digamma(0.5) == pytest.approx(-1.9635100260, abs=1e-9)


def test_digamma_recurrence_identity():
    rng = np.random.default_rng(0)
    for x in rng.uniform(0.05, 50.0, size=200):
        assert digamma(x + 1.0) - digamma(x) == pytest.approx(1.0 / x, abs=1e-12)


def test_log_gamma_convexity_on_grid():
    xs = np.linspace(0.1, 50.0, 300)
    h = 1e-3
    second = np.array(
        [log_gamma(x + h) - 2.0 * log_gamma(x) + log_gamma(x - h) for x in xs]
    )
    assert np.all(second >= 0.0)


def test_digamma_matches_log_gamma_derivative():
    xs = np.linspace(0.5, 40.0, 80)
    h = 1e-5
    for x in xs:
        fd = (log_gamma(x + h) - log_gamma(x - h)) / (2.0 * h)
        assert digamma(x) == pytest.approx(fd, abs=1e-6)


@pytest.mark.parametrize("fn", [log_gamma, digamma])
@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
def test_domain_errors(fn, bad):
    with pytest.raises(ValueError):
        fn(bad)
