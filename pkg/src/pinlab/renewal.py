"""Renewal processes with regularly varying inter-arrival law.

``K(n) = L(n) / n^(1+alpha)`` normalized to a probability on the positive
integers, the renewal function ``u(n) = P(n in tau)``, persistence diagnostics
for the two-replica intersection renewal, and samplers for free and
pinned-endpoint (bridge) renewal paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate, special, stats

from .errors import ConstructionError, UnsupportedError
from .slowvar import EnvelopeTable, SlowlyVaryingSpec, build_envelope, eval_L


class Persistence(str, Enum):
    PERSISTENT = "persistent"
    TERMINATING = "terminating"
    UNDECIDED = "undecided"


@dataclass(frozen=True)
class RenewalModel:
    """Normalized inter-arrival table and renewal function.

    ``K[n]`` for ``n = 0..N_max`` (``K[0] = 0``); ``tail_mass`` is the mass of
    ``{n > N_max}``.  ``L_eff`` is the slowly varying function of the
    normalized law, ``K(n) = L_eff(n) / n^(1+alpha)``, and ``env`` its
    envelope.
    """

    alpha: float
    L: SlowlyVaryingSpec
    N_max: int
    K: np.ndarray
    tail_mass: float
    u: np.ndarray
    env: EnvelopeTable
    normalizer: float

    @property
    def L_eff(self) -> SlowlyVaryingSpec:
        return self.L.scaled(1.0 / self.normalizer)

    def K_at(self, n) -> np.ndarray:
        """K(n) for arbitrary positive n, beyond the table when needed."""
        n = np.asarray(n, dtype=float)
        return eval_L(self.L, n) * n ** (-1.0 - self.alpha) / self.normalizer

    @property
    def sampling_cdf(self) -> np.ndarray:
        """CDF of the gap law on 1..N_max with the tail lumped into N_max."""
        k = self.K[1:].copy()
        k[-1] += self.tail_mass
        return np.cumsum(k)


@dataclass(frozen=True)
class RenewalPath:
    points: tuple
    horizon: int

    def __len__(self):
        return len(self.points)


def _tail_integral(L: SlowlyVaryingSpec, alpha: float, X: float) -> float:
    """int_X^inf L(x) x^(-1-alpha) dx (midpoint-rule tail of the series)."""
    if L.kind == "trivial":
        if alpha <= 0:
            raise ConstructionError("trivial L with alpha = 0 is not normalizable")
        return L.c * X ** (-alpha) / alpha
    if L.kind == "log":
        T = math.log(max(X, math.e))
        # x = e^t: int_T^inf a t^b e^(-alpha t) dt
        if alpha == 0:
            if L.b >= -1:
                raise ConstructionError("alpha = 0 needs b < -1 for a normalizable K")
            return L.a * T ** (L.b + 1) / (-L.b - 1)
        val, _ = integrate.quad(lambda t: t ** L.b * math.exp(-alpha * (t - T)), T, np.inf,
                                epsabs=0, epsrel=1e-12, limit=200)
        # x in [X, e) only occurs for tiny X, where L is the constant a
        head = 0.0
        if X < math.e:
            head = L.a * (X ** (-alpha) - math.e ** (-alpha)) / alpha
        return head + L.a * val * math.exp(-alpha * T)
    # tables: L extended as its last tabulated value
    if alpha <= 0:
        raise ConstructionError("tabulated L with alpha = 0 is not supported")
    return L.table_y[-1] * X ** (-alpha) / alpha


def renewal_function(K: np.ndarray) -> np.ndarray:
    """u(0) = 1, u(n) = sum_{m=1}^n K(m) u(n-m)."""
    N = K.size - 1
    u = np.empty(N + 1)
    u[0] = 1.0
    for n in range(1, N + 1):
        u[n] = np.dot(K[1:n + 1], u[n - 1::-1])
    return u


def build_model(alpha: float, L: SlowlyVaryingSpec, N_max: int) -> RenewalModel:
    if alpha < 0:
        raise ConstructionError("alpha must be >= 0")
    if N_max < 2:
        raise ConstructionError("N_max must be >= 2")
    n = np.arange(1, N_max + 1, dtype=float)
    w = eval_L(L, n) * n ** (-1.0 - alpha)
    head = float(np.sum(w))
    tail = _tail_integral(L, alpha, N_max + 0.5)
    if not math.isfinite(tail) or tail > head:
        raise ConstructionError(
            f"N_max={N_max} too small: tail estimate {tail:.3g} exceeds the tabulated mass"
        )
    Z = head + tail
    K = np.concatenate([[0.0], w / Z])
    u = renewal_function(K)
    env = build_envelope(L.scaled(1.0 / Z), N_max)
    return RenewalModel(alpha=float(alpha), L=L, N_max=int(N_max), K=K,
                        tail_mass=tail / Z, u=u, env=env, normalizer=Z)


def doney_constant(alpha: float) -> float:
    return alpha * math.sin(math.pi * alpha) / math.pi


def check_doney(model: RenewalModel, n: int) -> float:
    """u(n) divided by its asymptotic equivalent alpha sin(pi alpha)/(pi n^(1-alpha) L(n))."""
    if not 0 < model.alpha < 1:
        raise UnsupportedError("renewal-function asymptotics need alpha in (0, 1)")
    if not 0 < n <= model.N_max:
        raise ValueError(f"n must lie in 1..{model.N_max}")
    Ln = eval_L(model.L_eff, n)
    return float(model.u[n] * n ** (1 - model.alpha) * Ln / doney_constant(model.alpha))


@dataclass(frozen=True)
class DoneyBoundReport:
    """Comparison of u(n) with 1/(sqrt(n+1) Lbold(n+1)) on the grid.

    ``lower_violations``/``upper_violations`` count grid points where the
    literal two-sided bound fails; ``kappa_low``/``kappa_high`` are the extreme
    values of u(n) sqrt(n+1) Lbold(n+1), so the bound holds after rescaling
    Lbold by ``1/kappa_low`` and cL by ``kappa_low/kappa_high``.
    """

    lower_violations: int
    upper_violations: int
    kappa_low: float
    kappa_high: float
    cL: float


def doney_bound_report(model: RenewalModel) -> DoneyBoundReport:
    env = model.env
    n = np.arange(model.N_max)
    scale = model.u[:-1] / env.Rhalf[n]
    return DoneyBoundReport(
        lower_violations=int(np.sum(scale < 1.0)),
        upper_violations=int(np.sum(scale > 1.0 / env.cL)),
        kappa_low=float(scale.min()),
        kappa_high=float(scale.max()),
        cL=env.cL,
    )


@dataclass(frozen=True)
class PersistenceReport:
    partial_sum: float
    classification: Persistence


def intersection_persistence(model: RenewalModel) -> PersistenceReport:
    """Partial sum of u(n)^2 and the analytic persistence verdict for tau cap tau'."""
    partial = float(np.sum(model.u[1:] ** 2))
    a, L = model.alpha, model.L
    if L.kind == "table":
        cls = Persistence.UNDECIDED
    elif a > 0.5:
        cls = Persistence.PERSISTENT
    elif a < 0.5:
        cls = Persistence.TERMINATING
    elif L.kind == "trivial":
        cls = Persistence.PERSISTENT
    else:
        # sum 1/(n log(n)^(2b)) diverges iff 2b <= 1
        cls = Persistence.PERSISTENT if L.b <= 0.5 else Persistence.TERMINATING
    return PersistenceReport(partial, cls)


def sample_positions(model: RenewalModel, N: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Cumulative renewal epochs for ``size`` independent paths.

    Returns an int array of shape ``(size, width)``; every row is strictly
    increasing and its last entry exceeds ``N``.  Entries above ``N`` are
    beyond the horizon.
    """
    if N > model.N_max:
        raise ValueError(f"horizon {N} exceeds N_max={model.N_max}")
    cdf = model.sampling_cdf
    expected = float(np.sum(model.u[1:N + 1])) if N > 0 else 0.0
    width = max(8, int(1.5 * expected) + 8)
    current = np.zeros(size, dtype=np.int64)
    blocks = []
    while True:
        gaps = np.searchsorted(cdf, rng.random((size, width)) * cdf[-1], side="right") + 1
        block = current[:, None] + np.cumsum(gaps, axis=1)
        blocks.append(block)
        current = block[:, -1]
        if np.all(current > N):
            break
    return np.hstack(blocks)


def sample_path(model: RenewalModel, N: int, rng: np.random.Generator) -> RenewalPath:
    if N <= 0:
        return RenewalPath((), max(N, 0))
    pos = sample_positions(model, N, 1, rng)[0]
    return RenewalPath(tuple(int(p) for p in pos[pos <= N]), N)


def local_time(model: RenewalModel, N: int, size: int, rng: np.random.Generator,
               upto: int | None = None) -> np.ndarray:
    """Number of renewal points in ``[1, upto]`` (default ``N``) for ``size`` paths."""
    upto = N if upto is None else upto
    pos = sample_positions(model, N, size, rng)
    return np.sum(pos <= upto, axis=1)


def _bridge_cdf(model: RenewalModel, D: int) -> np.ndarray:
    """Row r: CDF over gaps j = 1..r of K(j) u(r-j) / u(r)."""
    K, u = model.K, model.u
    C = np.ones((D + 1, D))
    for r in range(1, D + 1):
        p = K[1:r + 1] * u[r - 1::-1] / u[r]
        C[r, :r] = np.cumsum(p)
    return C


def sample_bridges(model: RenewalModel, D: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Renewal points of ``size`` bridges on ``[0, D]`` conditioned on ``D in tau``.

    Returns shape ``(size, width)``, each row strictly increasing and padded
    with ``-1`` after reaching ``D``; ``0`` is not included and ``D`` is the
    last valid entry when ``D > 0``.
    """
    if not 0 <= D <= model.N_max:
        raise ValueError("bridge length must be in 0..N_max")
    if D == 0:
        return np.full((size, 0), -1, dtype=np.int64)
    C = _bridge_cdf(model, D)
    pos = np.zeros(size, dtype=np.int64)
    cols = []
    while True:
        active = pos < D
        if not active.any():
            break
        col = np.full(size, -1, dtype=np.int64)
        idx = np.flatnonzero(active)
        r = D - pos[idx]
        U = rng.random(idx.size)
        gap = np.sum(C[r] < U[:, None], axis=1) + 1
        gap = np.minimum(gap, r)
        pos[idx] += gap
        col[idx] = pos[idx]
        cols.append(col)
    return np.stack(cols, axis=1)


def sample_bridge(model: RenewalModel, d: int, f: int, rng: np.random.Generator) -> RenewalPath:
    """Points of tau in (d, f] under the law conditioned on d, f in tau."""
    if not 0 <= d <= f <= model.N_max:
        raise ValueError("need 0 <= d <= f <= N_max")
    if d == f:
        return RenewalPath((), f)
    row = sample_bridges(model, f - d, 1, rng)[0]
    return RenewalPath(tuple(int(d + p) for p in row if p >= 0), f)


def half_normal_cdf(t):
    """CDF of |Z| / (2 sqrt(pi)), Z standard normal."""
    t = np.maximum(np.asarray(t, dtype=float), 0.0)
    return special.erf(np.sqrt(2.0 * np.pi) * t)


@dataclass(frozen=True)
class LocalTimeResult:
    ks_distance: float
    statistic: np.ndarray


def local_time_law(model: RenewalModel, N: int, samples: int, rng: np.random.Generator) -> LocalTimeResult:
    """KS distance between (L(N)/sqrt(N)) * #(tau cap [1, N/2]) and |Z|/(2 sqrt(pi))."""
    if model.alpha != 0.5:
        raise UnsupportedError("the half-normal local-time limit needs alpha = 1/2")
    counts = local_time(model, N, samples, rng, upto=N // 2)
    stat = eval_L(model.L_eff, N) / math.sqrt(N) * counts
    ks = stats.kstest(stat, half_normal_cdf).statistic
    return LocalTimeResult(float(ks), stat)
