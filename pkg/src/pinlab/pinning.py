"""Partition functions of the disordered pinning model and free-energy probes.

The pinned partition function is computed by the forward recursion

    W(M) = 1,   W(j) = z_j * sum_{i=M}^{j-1} W(i) K(j - i),   Z_{M,N} = W(N),

with ``z_n = exp(beta omega_n + h - log M(beta))``.  Rows of a batch carry a
running log-scale so that values spanning thousands of orders of magnitude
stay representable; every sum is over positive terms.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .disorder import DisorderSpec, log_mgf, sample_iid
from .errors import BracketingError
from .renewal import RenewalModel
from .seeding import map_chunks, replica_rng
from .slowvar import eval_L

_BIG = 1e200


@dataclass(frozen=True)
class PinningSystem:
    renewal: RenewalModel
    disorder: DisorderSpec
    beta: float
    h: float

    def log_weights(self, omega: np.ndarray) -> np.ndarray:
        """log z_n = beta omega_n + h - log M(beta)."""
        return self.beta * np.asarray(omega, dtype=float) + (
            self.h - log_mgf(self.disorder, self.beta)
        )

    def with_params(self, beta=None, h=None) -> "PinningSystem":
        return PinningSystem(self.renewal, self.disorder,
                             self.beta if beta is None else beta,
                             self.h if h is None else h)


@dataclass(frozen=True)
class FreeEnergyEstimate:
    value: float
    std_error: float
    N: int
    replicas: int
    beta: float = math.nan
    h: float = math.nan
    samples: np.ndarray = field(default=None, repr=False, compare=False)


def forward_log(K: np.ndarray, logz: np.ndarray, lo=None, allowed=None) -> np.ndarray:
    """Log of the forward table W for a batch of weight rows.

    ``logz`` has shape ``(R, n)`` with column ``j-1`` holding site ``j``.
    ``lo[j]`` is the smallest admissible predecessor of site ``j`` (site 0 is
    the pinned origin) and ``allowed[j]`` masks sites that may carry a
    renewal point.  Both may also be given per row, with shape ``(R, n + 1)``.
    Returns ``log W`` of shape ``(R, n + 1)``.
    """
    logz = np.atleast_2d(np.asarray(logz, dtype=float))
    R, n = logz.shape
    if n > K.size - 1:
        raise ValueError(f"system size {n} exceeds the K table ({K.size - 1})")
    per_row = lo is not None and np.ndim(lo) == 2
    if allowed is not None:
        allowed = np.asarray(allowed, dtype=bool)
        if allowed.ndim == 1:
            allowed = np.broadcast_to(allowed, (R, n + 1))
    z = np.exp(logz)
    lin = np.zeros((R, n + 1))
    lin[:, 0] = 1.0
    shift = np.zeros(R)
    logW = np.full((R, n + 1), -np.inf)
    logW[:, 0] = 0.0
    idx = np.arange(n + 1)
    with np.errstate(divide="ignore"):
        for j in range(1, n + 1):
            if allowed is not None:
                on = allowed[:, j]
                if not on.any():
                    continue
            if per_row:
                keep = idx[None, :j] >= lo[:, j, None]
                v = np.where(keep, lin[:, :j], 0.0) @ K[j:0:-1]
            else:
                a = 0 if lo is None else int(lo[j])
                v = lin[:, a:j] @ K[j - a:0:-1]
            v = v * z[:, j - 1]
            if allowed is not None:
                v = np.where(on, v, 0.0)
            lin[:, j] = v
            # log W(j) is fixed once computed; later rescaling only affects lin
            logW[:, j] = np.log(v) + shift
            big = v > _BIG
            if big.any():
                f = v[big]
                lin[big, : j + 1] /= f[:, None]
                shift[big] += np.log(f)
    return logW


def log_partition(sys: PinningSystem, omega, M: int, N: int) -> float:
    """log Z_{M,N}: walk pinned at M and N, rewards on sites M+1..N (omega[n-1] is site n)."""
    omega = np.asarray(omega, dtype=float)
    if not 0 <= M <= N <= omega.size:
        raise ValueError("need 0 <= M <= N <= len(omega)")
    if M == N:
        return 0.0
    logz = sys.log_weights(omega[M:N])[None, :]
    return float(forward_log(sys.renewal.K, logz)[0, -1])


def log_partition_batch(sys: PinningSystem, omegas: np.ndarray) -> np.ndarray:
    """log Z_{0,N} for each row of ``omegas`` (shape ``(R, N)``)."""
    return forward_log(sys.renewal.K, sys.log_weights(omegas))[:, -1]


def log_partition_free(sys: PinningSystem, omega) -> float:
    """log of the free-endpoint partition function on sites 1..N."""
    omega = np.asarray(omega, dtype=float)
    N = omega.size
    logW = forward_log(sys.renewal.K, sys.log_weights(omega)[None, :])[0]
    K = sys.renewal.K
    survive = np.clip(1.0 - np.concatenate([[0.0], np.cumsum(K[1:N + 1])]), 0.0, None)
    # P(tau_1 > N - j) for j = 0..N
    surv = survive[N - np.arange(N + 1)]
    with np.errstate(divide="ignore"):
        terms = logW + np.log(surv)
    m = terms.max()
    return float(m + math.log(np.exp(terms - m).sum()))


def replica_omegas(disorder: DisorderSpec, N: int, seed: int, name: str, start: int, stop: int) -> np.ndarray:
    return np.stack([sample_iid(disorder, N, replica_rng(seed, name, i)) for i in range(start, stop)])


def replica_log_partitions(sys: PinningSystem, N: int, replicas: int, seed: int,
                           name: str = "disorder", threads: int = 1) -> np.ndarray:
    """log Z_{0,N} for ``replicas`` disorder draws; replica i depends only on (seed, name, i)."""
    if N > sys.renewal.N_max:
        raise ValueError(f"N={N} exceeds N_max={sys.renewal.N_max}")
    if sys.beta == 0:
        v = log_partition_batch(sys, np.zeros((1, N)))[0]
        return np.full(replicas, v)

    def chunk(a, b):
        return log_partition_batch(sys, replica_omegas(sys.disorder, N, seed, name, a, b))

    return map_chunks(chunk, replicas, threads=threads)


def _mean_se(x: np.ndarray):
    n = x.size
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(x.mean()), se


def quenched_free_energy(sys: PinningSystem, N: int, replicas: int, seed: int,
                         name: str = "disorder", threads: int = 1) -> FreeEnergyEstimate:
    """Mean and standard error of (1/N) log Z_{0,N} over disorder replicas."""
    if replicas < 2:
        raise ValueError("need at least two replicas")
    f = replica_log_partitions(sys, N, replicas, seed, name, threads) / N
    mean, se = _mean_se(f)
    return FreeEnergyEstimate(mean, se, N, replicas, sys.beta, sys.h, f)


def _pure_gap(model: RenewalModel, b: float) -> float:
    """sum_n K(n) (1 - exp(-b n)), the table part exact, the rest by quadrature."""
    n = np.arange(1, model.N_max + 1, dtype=float)
    head = float(np.dot(model.K[1:], -np.expm1(-b * n)))
    X = model.N_max + 0.5
    a, L, Z = model.alpha, model.L, model.normalizer

    def integrand(t):
        x = math.exp(t)
        return eval_L(L, x) * math.exp(-a * t) * -math.expm1(-b * x)

    # x = e^t; the integrand decays like e^(-alpha t) and bends at b x = 1
    t0, t1 = math.log(X), math.log(X) + 40.0 / max(a, 0.05)
    knee = min(max(-math.log(b), t0), t1)
    tail, err = 0.0, 0.0
    for lo, hi in ((t0, knee), (knee, t1)):
        if hi > lo:
            v, e = integrate.quad(integrand, lo, hi, epsabs=0, epsrel=1e-12, limit=400)
            tail, err = tail + v, err + e
    if err > 1e-8 * max(tail, 1e-300) and err > 1e-15:
        warnings.warn(f"pure free energy tail correction imprecise (err {err:.2e})")
    return head + tail / Z


def pure_free_energy(model: RenewalModel, h: float) -> float:
    """F(0, h): zero for h <= 0, else the b > 0 with sum_n K(n) exp(-b n) = exp(-h)."""
    if h <= 0:
        return 0.0
    target = -math.expm1(-h)

    def g(logb):
        return _pure_gap(model, math.exp(logb)) - target

    lo, hi = -60.0, 5.0
    while g(hi) < 0:
        hi += 5.0
    while g(lo) > 0:
        lo -= 20.0
    logb = optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-13, maxiter=500)
    return math.exp(logb)


def annealed_identity_check(sys: PinningSystem, N: int, replicas: int, seed: int,
                            name: str = "annealed", threads: int = 1) -> float:
    """z-score of the replica mean of Z_{0,N} against the exact beta = 0 value."""
    exact = log_partition_batch(sys.with_params(beta=0.0), np.zeros((1, N)))[0]
    if sys.beta == 0:
        return 0.0
    ratio = np.exp(replica_log_partitions(sys, N, replicas, seed, name, threads) - exact)
    mean, se = _mean_se(ratio)
    return (mean - 1.0) / se


@dataclass(frozen=True)
class FractionalMoment:
    estimate: float
    std_error: float
    log_estimate: float
    gamma: float
    N: int
    replicas: int


def fractional_moment(sys: PinningSystem, gamma: float, N: int, replicas: int, seed: int,
                      name: str = "disorder", threads: int = 1) -> FractionalMoment:
    """Monte Carlo estimate of E[Z_{0,N}^gamma]."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    lz = gamma * replica_log_partitions(sys, N, replicas, seed, name, threads)
    m = float(lz.max())
    v = np.exp(lz - m)
    mean, se = _mean_se(v)
    scale = math.exp(m) if m < 700 else math.inf
    return FractionalMoment(mean * scale, se * scale, m + math.log(mean), gamma, N, replicas)


@dataclass(frozen=True)
class MonotonicityScan:
    estimates: list
    violations: list  # (beta_i, beta_{i+1}, increase, pooled_se)

    @property
    def monotone(self) -> bool:
        return not self.violations


def monotonicity_scan(model: RenewalModel, disorder: DisorderSpec, h: float, betas, N: int,
                      replicas: int, seed: int, name: str = "disorder", threads: int = 1,
                      n_se: float = 2.0) -> MonotonicityScan:
    """(1/N) E log Z_{0,N} along a beta grid with common disorder across betas."""
    ests = [quenched_free_energy(PinningSystem(model, disorder, b, h), N, replicas, seed, name, threads)
            for b in betas]
    bad = []
    for a, b in zip(ests, ests[1:]):
        pooled = math.hypot(a.std_error, b.std_error)
        if b.value - a.value > n_se * pooled:
            bad.append((a.beta, b.beta, b.value - a.value, pooled))
    return MonotonicityScan(ests, bad)


@dataclass(frozen=True)
class CriticalHEstimate:
    N: int
    h_c: float
    threshold: float


def critical_h_scan(model: RenewalModel, disorder: DisorderSpec, beta: float, N_list, h_grid,
                    replicas: int, seed: int, threshold: float | None = None,
                    name: str = "disorder") -> list:
    """Finite-size proxy for h_c(beta): smallest h whose free energy clears a threshold.

    With ``threshold=None`` the level is 5 pooled standard errors of the grid.
    The proxy is biased upward and decreases with N.
    """
    h_grid = sorted(h_grid)
    out = []
    for N in N_list:
        ests = [quenched_free_energy(PinningSystem(model, disorder, beta, h), N, max(replicas, 2),
                                     seed, name) for h in h_grid]
        thr = threshold
        if thr is None:
            thr = 5.0 * math.sqrt(np.mean([e.std_error ** 2 for e in ests]))
        above = [e.value - 3 * e.std_error > thr for e in ests]
        if not any(above):
            raise BracketingError(f"N={N}: no h in the grid exceeds the threshold")
        i = above.index(True)
        if i == 0:
            raise BracketingError(f"N={N}: the smallest grid h already exceeds the threshold")
        out.append(CriticalHEstimate(N, h_grid[i], thr))
    return out


def finite_size_allowance(model: RenewalModel, h: float, N: int) -> float:
    """|log Z_pinned - log Z_free| / N at beta = 0: the boundary-condition effect."""
    sys = PinningSystem(model, DisorderSpec("gaussian"), 0.0, h)
    zero = np.zeros(N)
    return abs(log_partition(sys, zero, 0, N) - log_partition_free(sys, zero)) / N
