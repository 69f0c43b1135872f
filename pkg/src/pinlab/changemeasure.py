"""The q-body potential, the block functional X and the truncated change of measure.

For a block of length ``k`` and ``q >= 2``

    V_k(i) = prod_{a=2}^q R(s_a - s_{a-1}) / (sqrt(q!) sqrt(k) tL(k)^((q-1)/2))

on tuples with distinct entries (``s`` is the sorted tuple, ``R = Rhalf`` and
``tL`` the envelope version of tilde_L), and zero on the diagonals.  Sums over
increasing tuples are evaluated by a layered recursion over the last index,
which costs ``O(q k^2)`` instead of ``O(k^q)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .disorder import DisorderSpec, m_beta, sample_iid
from .errors import BudgetError, ConstructionError
from .renewal import RenewalModel, RenewalPath, sample_bridges, sample_positions
from .slowvar import EnvelopeTable, SlowlyVaryingSpec, build_envelope

X_FULL_BUDGET = 2 ** 24  # k^q: k <= 256 at q = 3, k <= 64 at q = 4
SUM_V2_BUDGET = 5 * 2 ** 26  # q k^2: k <= 2^13 at q = 5
MAX_POINTS = 10_000


@dataclass(frozen=True)
class PotentialSpec:
    q: int
    k: int
    env: EnvelopeTable

    def __post_init__(self):
        if self.q < 2:
            raise ConstructionError("q must be >= 2")
        if self.k < 1:
            raise ConstructionError("k must be positive")
        if self.k > self.env.N_max:
            raise ConstructionError(f"envelope covers 0..{self.env.N_max}, need k={self.k}")

    @classmethod
    def build(cls, q: int, k: int, L: SlowlyVaryingSpec) -> "PotentialSpec":
        return cls(q, k, build_envelope(L, max(k, 2)))

    @property
    def norm(self) -> float:
        """sqrt(q!) sqrt(k) tL(k)^((q-1)/2)."""
        return math.sqrt(math.factorial(self.q) * self.k) * self.env.tildeLbold[self.k] ** (
            (self.q - 1) / 2
        )

    def kernel(self) -> np.ndarray:
        """T[j, i] = R(i - j) for j < i, zero otherwise (k x k)."""
        R = self.env.Rhalf
        d = np.arange(self.k)[None, :] - np.arange(self.k)[:, None]
        return np.where(d > 0, R[np.clip(d, 0, None)], 0.0)


@dataclass(frozen=True)
class TruncationSpec:
    K_cut: float

    def __post_init__(self):
        if not self.K_cut > 0:
            raise ConstructionError("K_cut must be positive")

    @property
    def level(self) -> float:
        """Truncation fires at X >= exp(K^2)."""
        return math.exp(min(self.K_cut ** 2, 700.0))


def V_eval(pspec: PotentialSpec, tup) -> float:
    """V_k at a q-tuple of block-local coordinates in 1..k."""
    s = sorted(int(i) for i in tup)
    if len(s) != pspec.q:
        raise ValueError(f"expected a {pspec.q}-tuple")
    if s[0] < 1 or s[-1] > pspec.k:
        raise ValueError(f"coordinates must lie in 1..{pspec.k}")
    if any(b == a for a, b in zip(s, s[1:])):
        return 0.0
    R = pspec.env.Rhalf
    return float(np.prod([R[b - a] for a, b in zip(s, s[1:])]) / pspec.norm)


def sum_V_squared(pspec: PotentialSpec, budget: int = SUM_V2_BUDGET) -> float:
    """sum over B^q of V_k^2 = (k tL(k)^(q-1))^-1 sum_{0<i_1<..<i_q<=k} prod R(gap)^2."""
    q, k = pspec.q, pspec.k
    if q * k * k > budget:
        raise BudgetError(f"q k^2 = {q * k * k} exceeds the budget {budget}")
    R2 = pspec.env.Rhalf[:k] ** 2
    R2[0] = 0.0  # gaps are >= 1
    T = np.ones(k)
    for _ in range(q - 1):
        T = signal.fftconvolve(T, R2)[:k]
        np.clip(T, 0.0, None, out=T)
    return float(T.sum() / (k * pspec.env.tildeLbold[k] ** (q - 1)))


def _increasing_sum(weights: np.ndarray, T: np.ndarray, q: int) -> np.ndarray:
    """sum over increasing q-tuples of prod T(gaps) prod weights, per row of ``weights``."""
    S = weights
    for _ in range(q - 1):
        S = weights * (S @ T)
    return S.sum(axis=-1)


def X_full(pspec: PotentialSpec, omega_block, budget: int = X_FULL_BUDGET) -> np.ndarray:
    """X = sum over B^q of V_k(i) omega_i1 ... omega_iq, for one or more charge rows."""
    q, k = pspec.q, pspec.k
    if float(k) ** q > budget:
        raise BudgetError(
            f"k^q = {k}^{q} exceeds the exhaustive budget; use E_tau_X on renewal-supported sums"
        )
    w = np.asarray(omega_block, dtype=float)
    if w.shape[-1] != k:
        raise ValueError(f"expected {k} charges per block")
    # ordered tuples = q! * increasing ones
    total = _increasing_sum(w, pspec.kernel(), q)
    out = math.factorial(q) * total / pspec.norm
    return float(out) if w.ndim == 1 else out


def _points_sum(R: np.ndarray, pts: np.ndarray, q: int) -> float:
    """sum over increasing q-tuples of distinct points of prod R(gaps)."""
    pts = np.unique(pts)
    if pts.size < q:
        return 0.0
    d = pts[None, :] - pts[:, None]
    T = np.where(d > 0, R[np.clip(d, 0, R.size - 1)], 0.0)
    return float(_increasing_sum(np.ones(pts.size), T, q))


def E_tau_X(pspec: PotentialSpec, path: RenewalPath, beta: float, disorder: DisorderSpec) -> float:
    """Tilted mean of X given tau: m_beta^q * sum over B^q of V_k(i) delta_i.

    ``path.points`` are block-local coordinates in 1..k.
    """
    pts = np.asarray(path.points, dtype=np.int64)
    if pts.size > MAX_POINTS:
        raise BudgetError(f"{pts.size} renewal points exceed the limit {MAX_POINTS}")
    if pts.size and (pts.min() < 1 or pts.max() > pspec.k):
        raise ValueError(f"path points must lie in 1..{pspec.k}")
    if beta == 0 or pts.size < pspec.q:
        return 0.0
    s = _points_sum(pspec.env.Rhalf, pts, pspec.q)
    return m_beta(disorder, beta) ** pspec.q * math.factorial(pspec.q) * s / pspec.norm


def _bridge_statistic(pspec: PotentialSpec, rows: np.ndarray, N: int) -> np.ndarray:
    """(Lbold(N)/tL(N)^((q-1)/2)) * sum over {0..N}^q of V_N(i) delta_i per bridge row."""
    q, env = pspec.q, pspec.env
    norm = math.sqrt(math.factorial(q) * N) * env.tildeLbold[N] ** ((q - 1) / 2)
    pref = env.Lbold[N] / env.tildeLbold[N] ** ((q - 1) / 2)
    out = np.empty(rows.shape[0])
    for r, row in enumerate(rows):
        pts = np.concatenate([[0], row[row >= 0]])
        out[r] = math.factorial(q) * _points_sum(env.Rhalf, pts, q) / norm
    return pref * out


@dataclass(frozen=True)
class FromCEResult:
    fraction_above: float
    threshold: float
    statistic: np.ndarray


def fromCE_test(model: RenewalModel, pspec: PotentialSpec, d: int, f: int, samples: int,
                rng: np.random.Generator, threshold: float = 0.0,
                epsilon_block: float = 0.1) -> FromCEResult:
    """Fraction of pinned bridges on [d, f] whose normalized q-body sum exceeds ``threshold``.

    The statistic only depends on N = f - d and is nonnegative.
    """
    N = f - d
    if N < epsilon_block * pspec.k:
        raise ValueError(f"f - d = {N} is below epsilon_block * k = {epsilon_block * pspec.k:g}")
    if N < 1 or N > pspec.env.N_max:
        raise ValueError(f"f - d must lie in 1..{pspec.env.N_max}")
    rows = sample_bridges(model, N, samples, rng)
    stat = _bridge_statistic(pspec, rows, N)
    frac = float(np.mean(stat > threshold)) if threshold > 0 else float(np.mean(stat >= threshold))
    return FromCEResult(frac, threshold, stat)


@dataclass(frozen=True)
class CEStatistic:
    mean: float
    variance: float
    std_error: float
    target: float
    values: np.ndarray


def ce_statistic(model: RenewalModel, N: int, theta: float, samples: int,
                 rng: np.random.Generator) -> CEStatistic:
    """(1/tL(N)) sum_{j <= theta N} R(j) delta_j over free renewal paths; target c/(2 pi)."""
    if model.alpha != 0.5:
        raise ConstructionError("the L^2 law is stated for alpha = 1/2")
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    env = model.env
    J = int(math.floor(theta * N))
    target = env.c_limit / (2 * math.pi)
    if J < 1:
        z = np.zeros(samples)
        return CEStatistic(0.0, 0.0, 0.0, target, z)
    pos = sample_positions(model, J, samples, rng)
    R = np.concatenate([env.Rhalf[: J + 1], [0.0]])
    vals = np.where(pos <= J, R[np.minimum(pos, J + 1)], 0.0).sum(axis=1) / env.tildeLbold[N]
    var = float(vals.var(ddof=1)) if samples > 1 else math.nan
    return CEStatistic(float(vals.mean()), var, math.sqrt(var / samples), target, vals)


# -- truncation and Hoelder split ---------------------------------------------

def f_K(tspec: TruncationSpec, x):
    return np.where(np.asarray(x) >= tspec.level, -tspec.K_cut, 0.0)


def g_weight(tspec: TruncationSpec, X_values) -> float:
    """exp(sum_j f_K(X_j)) over the blocks of I."""
    return float(np.exp(np.sum(f_K(tspec, np.asarray(X_values, dtype=float)))))


def block_factor(tspec: TruncationSpec, gamma: float, p_fire: float) -> float:
    """E[gbar^(-gamma/(1-gamma))] = (e^(K gamma/(1-gamma)) - 1) P(X >= e^(K^2)) + 1."""
    return math.expm1(tspec.K_cut * gamma / (1 - gamma)) * p_fire + 1.0


def chebyshev_fire_bound(tspec: TruncationSpec, variance: float) -> float:
    """P(X >= e^(K^2)) <= Var(X) / e^(2 K^2), capped at 1."""
    return min(1.0, variance * math.exp(-2.0 * tspec.K_cut ** 2))


def K_cut_for(gamma: float = 6 / 7, variance_bound: float = 2.0) -> float:
    """Smallest K with e^(K gamma/(1-gamma)) * variance_bound / e^(2 K^2) <= 1.

    Then the per-block factor is at most 2.
    """
    r = gamma / (1 - gamma)
    # 2 K^2 - r K - log(variance_bound) >= 0
    return (r + math.sqrt(r * r + 8 * math.log(variance_bound))) / 4


@dataclass(frozen=True)
class HolderFactor:
    exact_bound: float
    mc_estimate: float
    std_error: float
    fire_rate: float
    variance: float


def holder_factor(tspec: TruncationSpec, pspec: PotentialSpec, samples: int, rng: np.random.Generator,
                  gamma: float = 6 / 7, disorder: DisorderSpec = DisorderSpec("gaussian")) -> HolderFactor:
    """Per-block factor with P(X >= e^(K^2)) by Monte Carlo and by Chebyshev.

    The Chebyshev bound uses Var(X) = q! * sum_V_squared, the exact variance of
    X for centered unit-variance charges.
    """
    X = X_full(pspec, sample_iid(disorder, pspec.k, rng, size=samples))
    fire = X >= tspec.level
    p = float(fire.mean())
    var = math.factorial(pspec.q) * sum_V_squared(pspec)
    mc = block_factor(tspec, gamma, p)
    se = math.expm1(tspec.K_cut * gamma / (1 - gamma)) * math.sqrt(p * (1 - p) / samples)
    exact = block_factor(tspec, gamma, chebyshev_fire_bound(tspec, var))
    return HolderFactor(exact, mc, se, p, var)


@dataclass(frozen=True)
class HolderReport:
    lhs: float
    lhs_se: float
    g_factor: float
    g_factor_se: float
    gz_mean: float
    gz_se: float
    rhs: float
    rhs_upper: float
    holds: bool
    P_I: float
    eta_ratio: float
    gamma: float


def holder_chain_check(sys, plan, I, tspec: TruncationSpec, pspec: PotentialSpec, samples: int,
                       rng: np.random.Generator, gamma: float = 6 / 7) -> HolderReport:
    """Monte Carlo check of E[(Zhat^I)^g] <= E[g_I^(-g/(1-g))]^(1-g) E[g_I Zhat^I]^g.

    All three expectations use the same charge samples.  ``holds`` compares the
    left side minus 3 s.e. with the right side computed from each factor plus
    3 s.e.  The ratio E[g_I Zhat^I] / P_I is reported as a diagnostic.
    """
    from .coarsegrain import P_I_exact, hatZ_I_batch

    if plan.k != pspec.k:
        raise ValueError("potential block length must equal the plan's k")
    if plan.N > 512:
        raise BudgetError("the Hoelder chain check is limited to k m <= 512")
    I = tuple(sorted(I))
    omegas = sample_iid(sys.disorder, plan.N, rng, size=samples)
    logZ = hatZ_I_batch(sys, omegas, plan, [I])[:, 0]
    k = plan.k
    Xs = np.stack([X_full(pspec, omegas[:, (j - 1) * k: j * k]) for j in I], axis=1)
    logg = np.sum(f_K(tspec, Xs), axis=1)
    p = gamma / (1 - gamma)

    def ms(v):
        return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))

    shift = float(logZ.max())
    lhs, lhs_se = ms(np.exp(gamma * (logZ - shift)))
    gf, gf_se = ms(np.exp(-p * logg))
    gz, gz_se = ms(np.exp(logg + logZ - shift))
    rhs = gf ** (1 - gamma) * gz ** gamma
    rhs_up = (gf + 3 * gf_se) ** (1 - gamma) * (gz + 3 * gz_se) ** gamma
    scale = math.exp(gamma * shift)
    P = P_I_exact(sys.renewal, plan, I)
    return HolderReport(
        lhs=lhs * scale, lhs_se=lhs_se * scale, g_factor=gf, g_factor_se=gf_se,
        gz_mean=gz * math.exp(shift), gz_se=gz_se * math.exp(shift),
        rhs=rhs * scale, rhs_upper=rhs_up * scale,
        holds=bool(lhs - 3 * lhs_se <= rhs_up), P_I=P,
        eta_ratio=gz * math.exp(shift) / P if P > 0 else math.nan, gamma=gamma,
    )
