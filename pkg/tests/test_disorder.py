import math

import numpy as np
import pytest
from scipy import integrate, stats

from pinlab.disorder import (
    DisorderSpec, TiltedContext, beta0_range, log_mgf, m_beta, sample_iid, sample_tilted,
    sample_tilted_law, tilted_variance,
)
from pinlab.errors import ConstructionError, UnsupportedError

FAMILIES = ["gaussian", "rademacher", "exponential", "truncated"]


def _density(spec):
    """Density of the centered, unit-variance law (continuous families)."""
    if spec.family == "gaussian":
        return stats.norm.pdf, -40.0, 40.0
    if spec.family == "exponential":
        return (lambda w: math.exp(-(w + 1))), -1.0, 400.0
    s, B = spec._scale, spec.bound
    mass = stats.norm.cdf(B) - stats.norm.cdf(-B)
    return (lambda w: stats.norm.pdf(w * s) * s / mass), -B / s, B / s


def _quad_mgf(spec, t):
    f, lo, hi = _density(spec)
    val, _ = integrate.quad(lambda w: math.exp(t * w) * f(w), lo, hi, epsabs=0, epsrel=1e-12)
    return math.log(val)


def test_log_mgf_examples():
    assert log_mgf(DisorderSpec("gaussian"), 0.7) == pytest.approx(0.245)
    assert log_mgf(DisorderSpec("rademacher"), 1.0) == pytest.approx(math.log(math.cosh(1.0)), rel=1e-15)
    for f in FAMILIES:
        assert log_mgf(DisorderSpec(f), 0.0) == pytest.approx(0.0, abs=1e-15)


def test_rademacher_mgf_monte_carlo():
    w = sample_iid(DisorderSpec("rademacher"), 10 ** 7, np.random.default_rng(3))
    assert math.log(np.mean(np.exp(w))) == pytest.approx(math.log(math.cosh(1.0)), abs=2e-3)


@pytest.mark.parametrize("family", ["gaussian", "exponential", "truncated"])
@pytest.mark.parametrize("t", [0.2, 0.5, 0.9])
def test_log_mgf_against_quadrature(family, t):
    spec = DisorderSpec(family)
    assert log_mgf(spec, t) == pytest.approx(_quad_mgf(spec, t), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_derivatives_are_consistent(family):
    spec = DisorderSpec(family)
    h = 1e-4
    for b in (0.1, 0.4, 0.7):
        d1 = (log_mgf(spec, b + h) - log_mgf(spec, b - h)) / (2 * h)
        d2 = (log_mgf(spec, b + h) - 2 * log_mgf(spec, b) + log_mgf(spec, b - h)) / h ** 2
        assert m_beta(spec, b) == pytest.approx(d1, rel=1e-6)
        assert tilted_variance(spec, b) == pytest.approx(d2, rel=1e-4)
        assert d2 >= 0
    assert m_beta(spec, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_m_beta_examples():
    assert m_beta(DisorderSpec("gaussian"), 0.37) == 0.37
    assert m_beta(DisorderSpec("rademacher"), 0.5) == pytest.approx(math.tanh(0.5))


def test_beta0_range():
    assert beta0_range(DisorderSpec("gaussian")) == pytest.approx(2.0)
    assert beta0_range(DisorderSpec("rademacher")) == pytest.approx(math.acosh(math.sqrt(2)), abs=1e-3)
    b = beta0_range(DisorderSpec("exponential"))
    assert 0 < b < 2
    assert b == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-3)
    for f in FAMILIES:
        spec = DisorderSpec(f)
        b0 = beta0_range(spec)
        for b in np.linspace(0, b0, 9):
            assert b / 2 <= m_beta(spec, b) + 1e-15 and m_beta(spec, b) <= 2 * b + 1e-15


@pytest.mark.parametrize("family", FAMILIES)
def test_iid_moments(family):
    w = sample_iid(DisorderSpec(family), 10 ** 6, np.random.default_rng(5))
    se = w.std() / 1000
    assert abs(w.mean()) < 4 * se
    m2, m4 = np.mean(w ** 2), np.mean(w ** 4)
    assert abs(m2 - 1) <= 4 * math.sqrt((m4 - m2 ** 2) / w.size)


def test_gaussian_ks():
    w = sample_iid(DisorderSpec("gaussian"), 10 ** 5, np.random.default_rng(6))
    assert stats.kstest(w, "norm").statistic < 0.01


def test_tilted_sampler(rng):
    spec = DisorderSpec("gaussian")
    ctx = TiltedContext(spec, 0.5, frozenset({3, 7}))
    w = sample_tilted(ctx, 10, rng, size=100_000)
    se = w.std(axis=0) / math.sqrt(w.shape[0])
    assert abs(w[:, 2].mean() - 0.5) < 3 * se[2]
    assert abs(w[:, 6].mean() - 0.5) < 3 * se[6]
    assert abs(w[:, 0].mean()) < 3 * se[0]
    rad = sample_tilted(TiltedContext(DisorderSpec("rademacher"), 0.5, frozenset({1})), 2, rng, size=100_000)
    assert abs(rad[:, 0].mean() - math.tanh(0.5)) < 3 * rad[:, 0].std() / math.sqrt(1e5)
    one = sample_tilted(ctx, 10, rng)
    assert one.shape == (10,)
    with pytest.raises(ValueError):
        sample_tilted(TiltedContext(spec, 0.5, frozenset({11})), 10, rng)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("beta", [0.2, 0.29])
def test_tilted_law_moments_within_beta0(family, beta):
    spec = DisorderSpec(family)
    w = sample_tilted_law(spec, beta, 200_000, np.random.default_rng(9))
    assert abs(w.mean() - m_beta(spec, beta)) < 3 * w.std() / math.sqrt(w.size)
    assert w.var() == pytest.approx(tilted_variance(spec, beta), rel=0.03)
    assert tilted_variance(spec, beta) <= 2


def test_exponential_tilt_limits(rng):
    spec = DisorderSpec("exponential")
    with pytest.raises(UnsupportedError):
        sample_tilted_law(spec, 1.0, 5, rng)
    with pytest.raises(UnsupportedError):
        log_mgf(spec, 1.0)


def test_unknown_family():
    with pytest.raises(ConstructionError):
        DisorderSpec("cauchy")
