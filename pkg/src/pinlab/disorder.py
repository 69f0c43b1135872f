"""IID charge laws with exact log-MGFs and the beta-tilted charge law.

All families are centered with unit variance:

* ``gaussian``: standard normal;
* ``rademacher``: fair +-1;
* ``exponential``: Exp(1) - 1 (MGF finite for t < 1 only);
* ``truncated``: standard normal conditioned on ``[-bound, bound]``, rescaled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConstructionError, UnsupportedError

FAMILIES = ("gaussian", "rademacher", "exponential", "truncated")


@dataclass(frozen=True)
class DisorderSpec:
    family: str
    bound: float = 2.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConstructionError(f"unknown disorder family {self.family!r}")
        if self.family == "truncated" and not self.bound > 0:
            raise ConstructionError("truncation bound must be positive")

    @property
    def _scale(self) -> float:
        """Standard deviation of the truncated normal before rescaling."""
        B = self.bound
        mass = special.erf(B / math.sqrt(2))
        return math.sqrt(1.0 - 2.0 * B * _phi(B) / mass)

    @property
    def mgf_limit(self) -> float:
        return 1.0 if self.family == "exponential" else math.inf


def _phi(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2 * math.pi)


def _trunc_moments(tau: float, B: float):
    """Mean and variance of N(tau, 1) conditioned on [-B, B]."""
    a, b = -B - tau, B - tau
    Z = special.ndtr(b) - special.ndtr(a)
    pa, pb = _phi(a), _phi(b)
    mean = tau + (pa - pb) / Z
    var = 1.0 + (a * pa - b * pb) / Z - ((pa - pb) / Z) ** 2
    return float(mean), float(var)


def _check_t(spec: DisorderSpec, t: float):
    if t >= spec.mgf_limit:
        raise UnsupportedError(f"{spec.family} MGF is infinite at t={t}")


def log_mgf(spec: DisorderSpec, t: float) -> float:
    """log E[exp(t omega)]."""
    _check_t(spec, t)
    f = spec.family
    if f == "gaussian":
        return 0.5 * t * t
    if f == "rademacher":
        # log cosh, stable for large |t|
        at = abs(t)
        return at + math.log1p(math.exp(-2 * at)) - math.log(2.0)
    if f == "exponential":
        return -t - math.log1p(-t)
    s, B = spec._scale, spec.bound
    tau = t / s
    num = special.ndtr(B - tau) - special.ndtr(-B - tau)
    den = special.ndtr(B) - special.ndtr(-B)
    return 0.5 * tau * tau + math.log(num / den)


def m_beta(spec: DisorderSpec, beta: float) -> float:
    """M'(beta)/M(beta): the mean of a charge under the beta-tilted law."""
    _check_t(spec, beta)
    f = spec.family
    if f == "gaussian":
        return float(beta)
    if f == "rademacher":
        return math.tanh(beta)
    if f == "exponential":
        return 1.0 / (1.0 - beta) - 1.0
    mean, _ = _trunc_moments(beta / spec._scale, spec.bound)
    return mean / spec._scale


def tilted_variance(spec: DisorderSpec, beta: float) -> float:
    """Second derivative of log M at beta (variance of the tilted charge)."""
    _check_t(spec, beta)
    f = spec.family
    if f == "gaussian":
        return 1.0
    if f == "rademacher":
        return 1.0 / math.cosh(beta) ** 2
    if f == "exponential":
        return 1.0 / (1.0 - beta) ** 2
    _, var = _trunc_moments(beta / spec._scale, spec.bound)
    return var / spec._scale ** 2


def beta0_range(spec: DisorderSpec, step: float = 1e-3, cap: float = 2.0) -> float:
    """Largest beta0 <= cap with (log M)'' in [1/2, 2] on [0, beta0] (grid scan)."""
    beta = 0.0
    n = int(round(cap / step))
    for i in range(1, n + 1):
        b = i * step
        if b >= spec.mgf_limit:
            break
        v = tilted_variance(spec, b)
        if not 0.5 <= v <= 2.0:
            break
        beta = b
    return beta


def sample_iid(spec: DisorderSpec, N: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """IID charges; shape ``(N,)`` or ``(size, N)``."""
    shape = (N,) if size is None else (size, N)
    f = spec.family
    if f == "gaussian":
        return rng.standard_normal(shape)
    if f == "rademacher":
        return 2.0 * rng.integers(0, 2, size=shape) - 1.0
    if f == "exponential":
        return rng.standard_exponential(shape) - 1.0
    return _truncated_normal(rng, 0.0, spec.bound, shape) / spec._scale


def _truncated_normal(rng, mean, B, shape):
    """N(mean, 1) conditioned on [-B, B] by rejection."""
    out = np.empty(int(np.prod(shape)))
    todo = np.arange(out.size)
    while todo.size:
        draw = mean + rng.standard_normal(todo.size)
        ok = np.abs(draw) <= B
        out[todo[ok]] = draw[ok]
        todo = todo[~ok]
    return out.reshape(shape)


def sample_tilted_law(spec: DisorderSpec, beta: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from dP_beta(w) proportional to exp(beta w) dP(w)."""
    f = spec.family
    if f == "gaussian":
        return beta + rng.standard_normal(n)
    if f == "rademacher":
        p_plus = 1.0 / (1.0 + math.exp(-2.0 * beta))
        return np.where(rng.random(n) < p_plus, 1.0, -1.0)
    if f == "exponential":
        if beta >= 1.0:
            raise UnsupportedError("exponential charges can be tilted only for beta < 1")
        return rng.standard_exponential(n) / (1.0 - beta) - 1.0
    s = spec._scale
    return _truncated_normal(rng, beta / s, spec.bound, (n,)) / s


@dataclass(frozen=True)
class TiltedContext:
    """Charge law tilted by exp(beta omega_n - log M(beta)) at pinned sites only."""

    base: DisorderSpec
    beta: float
    pinned_sites: frozenset


def sample_tilted(ctx: TiltedContext, N: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Charges on sites 1..N (array index n-1); tilted at pinned sites, base law elsewhere."""
    sites = np.array(sorted(ctx.pinned_sites), dtype=np.int64)
    if sites.size and (sites.min() < 1 or sites.max() > N):
        raise ValueError("pinned sites must lie in 1..N")
    omega = sample_iid(ctx.base, N, rng, size=size)
    if sites.size:
        rows = 1 if size is None else size
        draws = sample_tilted_law(ctx.base, ctx.beta, rows * sites.size, rng)
        if size is None:
            omega[sites - 1] = draws
        else:
            omega[:, sites - 1] = draws.reshape(rows, sites.size)
    return omega
