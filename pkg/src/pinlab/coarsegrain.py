"""Block decomposition of the partition function and the coarse-graining length.

The system ``{1..N}``, ``N = k m``, is cut into blocks
``B_i = {(i-1)k+1, ..., ik}``.  For ``I`` a set of blocks containing ``m``,
``Zhat^I`` collects the renewal trajectories whose points hit exactly the
blocks of ``I`` (each at least once) and end at ``N``; summing over ``I``
recovers ``Z_{0,N}``.  ``P_I`` is the same restricted sum at beta = h = 0.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import BudgetError, ConstructionError
from .pinning import PinningSystem, forward_log
from .renewal import RenewalModel
from .slowvar import SlowlyVaryingSpec, eval_L, eval_tilde_L, _log_tail

K_CAP = 10 ** 18


@dataclass(frozen=True)
class CoarseGrainPlan:
    k: int
    m: int

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise ConstructionError("k and m must be positive")

    @property
    def N(self) -> int:
        return self.k * self.m

    def block(self, i: int) -> range:
        return range((i - 1) * self.k + 1, i * self.k + 1)

    @property
    def blocks(self) -> list:
        return [self.block(i) for i in range(1, self.m + 1)]

    def block_of(self, n: int) -> int:
        """Index of the block containing site n >= 1."""
        return (n - 1) // self.k + 1


@dataclass(frozen=True)
class ShiftParams:
    q: int
    A: float
    beta: float

    def __post_init__(self):
        if self.q < 2:
            raise ConstructionError("q must be >= 2")
        if not self.A > 0:
            raise ConstructionError("A must be positive")
        if not self.beta > 0:
            raise ConstructionError("beta must be positive")


@dataclass(frozen=True)
class CoarseLength:
    k: int
    delta: float


def _k_ratio(L: SlowlyVaryingSpec, n: int, q: int) -> float:
    x = float(n)
    return eval_tilde_L(L, x) / eval_L(L, x) ** (2.0 / (q - 1))


def coarse_length(params: ShiftParams, L: SlowlyVaryingSpec, k_cap: int = K_CAP) -> CoarseLength:
    """Smallest n with tilde_L(n) / L(n)^(2/(q-1)) >= A beta^(-2q/(q-1)); delta = 1/n."""
    q = params.q
    if L.epsilon is not None and L.kind == "log" and L.b < 0.5 and q <= 1.0 / (2 * L.epsilon):
        raise ConstructionError(f"q={q} must exceed 1/(2 epsilon) = {1 / (2 * L.epsilon):g}")
    target = params.A * params.beta ** (-2.0 * q / (q - 1))
    hi = 1
    while _k_ratio(L, hi, q) < target:
        if hi > k_cap:
            raise BudgetError(f"coarse-graining length exceeds the cap {k_cap:.3g}")
        hi *= 2
    lo = hi // 2  # ratio(lo) < target, or lo = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _k_ratio(L, mid, q) >= target:
            hi = mid
        else:
            lo = mid
    if hi > k_cap:
        raise BudgetError(f"coarse-graining length exceeds the cap {k_cap:.3g}")
    return CoarseLength(int(hi), 1.0 / hi)


def _tilde_L_at_log(L: SlowlyVaryingSpec, t: float) -> float:
    """tilde_L(e^t), stable for large t."""
    if L.kind == "trivial" or (L.kind == "log" and L.b == 0):
        c2 = L.c ** 2 if L.kind == "trivial" else L.a ** 2
        return (t + math.log1p(math.exp(-t))) / c2
    if L.kind == "log" and t > 1.0:
        return (math.log1p(math.e) + _log_tail(L.b, t)) / L.a ** 2
    return eval_tilde_L(L, math.exp(t))


def _L_at_log(L: SlowlyVaryingSpec, t: float) -> float:
    if L.kind == "trivial":
        return L.c
    if L.kind == "log":
        return L.a * max(t, 1.0) ** L.b
    return eval_L(L, math.exp(t))


def log_a0_upper(beta: float, C1: float, C2: float, L: SlowlyVaryingSpec) -> float:
    """log of a0(beta) = C1 L(x*) / sqrt(x*) with tilde_L(x*) = C2 / beta^2.

    ``-inf`` when tilde_L converges (a0 is identically zero then).
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    if L.tilde_diverges is False:
        return -math.inf
    target = C2 / beta ** 2
    # bisection in t = log x
    lo, hi = -30.0, 1.0
    while _tilde_L_at_log(L, hi) < target:
        lo, hi = hi, 2 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _tilde_L_at_log(L, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, abs(hi)):
            break
    t = 0.5 * (lo + hi)
    return math.log(C1 * _L_at_log(L, t)) - 0.5 * t


def a0_upper(beta: float, C1: float, C2: float, L: SlowlyVaryingSpec) -> float:
    """C1 L(x*) / sqrt(x*) with tilde_L(x*) = C2 / beta^2; zero when tilde_L converges."""
    return math.exp(log_a0_upper(beta, C1, C2, L))


def log_a0_asymptotic(beta: float, C1: float, C2: float, L: SlowlyVaryingSpec) -> float:
    """Leading-order log a0 for logarithmic L with b < 1/2.

    tilde_L(x) ~ (log x)^(1-2b) / (a^2 (1-2b)) gives
    log x* ~ (a^2 (1-2b) C2)^(1/(1-2b)) beta^(-2/(1-2b)), hence a value of shape
    beta^(-2b/(1-2b)) exp(-C beta^(-2/(1-2b))).
    """
    if L.kind != "log" or L.b >= 0.5:
        raise ValueError("asymptotic form needs logarithmic L with b < 1/2")
    p = 1.0 - 2.0 * L.b
    logx = (L.a ** 2 * p * C2 / beta ** 2) ** (1.0 / p)
    return math.log(C1 * L.a) + L.b * math.log(logx) - 0.5 * logx


# -- restricted partition functions ------------------------------------------

def _subset_masks(plan: CoarseGrainPlan, I) -> tuple:
    """(lo, allowed) arrays on sites 0..N for the event E_I."""
    k, N = plan.k, plan.N
    I = sorted(set(I))
    allowed = np.zeros(N + 1, dtype=bool)
    lo = np.zeros(N + 1, dtype=np.int64)
    prev = None
    for b in I:
        sl = slice((b - 1) * k + 1, b * k + 1)
        allowed[sl] = True
        lo[sl] = 0 if prev is None else (prev - 1) * k + 1
        prev = b
    return lo, allowed


def _check_I(plan: CoarseGrainPlan, I):
    if any(not 1 <= i <= plan.m for i in I):
        raise ValueError(f"blocks must lie in 1..{plan.m}")


def all_subsets(m: int) -> list:
    """All subsets of {1..m} containing m, as sorted tuples."""
    rest = range(1, m)
    out = []
    for r in range(m):
        for c in itertools.combinations(rest, r):
            out.append(c + (m,))
    return out


def hatZ_I_batch(sys: PinningSystem, omegas, plan: CoarseGrainPlan, subsets) -> np.ndarray:
    """log Zhat^I for every (omega row, subset) pair, shape ``(rows, len(subsets))``."""
    omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
    N = plan.N
    if omegas.shape[1] < N:
        raise ValueError("need at least N charges per row")
    if N > sys.renewal.N_max:
        raise ValueError(f"N={N} exceeds N_max={sys.renewal.N_max}")
    subsets = [tuple(I) for I in subsets]
    out = np.full((omegas.shape[0], len(subsets)), -np.inf)
    live = [s for s, I in enumerate(subsets) if plan.m in I]
    if not live:
        return out
    los, alls = zip(*(_subset_masks(plan, subsets[s]) for s in live))
    S = len(live)
    lo = np.tile(np.stack(los), (omegas.shape[0], 1))
    allowed = np.tile(np.stack(alls), (omegas.shape[0], 1))
    logz = np.repeat(sys.log_weights(omegas[:, :N]), S, axis=0)
    res = forward_log(sys.renewal.K, logz, lo=lo, allowed=allowed)[:, -1]
    out[:, live] = res.reshape(omegas.shape[0], S)
    return out


def hatZ_I(sys: PinningSystem, omega, plan: CoarseGrainPlan, I) -> float:
    """log Zhat^I for one charge vector (``-inf`` when m is not in I)."""
    _check_I(plan, I)
    if plan.m not in I:
        return -math.inf
    omega = np.asarray(omega, dtype=float)
    lo, allowed = _subset_masks(plan, I)
    logz = sys.log_weights(omega[: plan.N])[None, :]
    return float(forward_log(sys.renewal.K, logz, lo=lo, allowed=allowed)[0, -1])


def P_I_exact(model: RenewalModel, plan: CoarseGrainPlan, I) -> float:
    """P(tau visits exactly the blocks of I, N in tau)."""
    _check_I(plan, I)
    if plan.m not in I:
        return 0.0
    lo, allowed = _subset_masks(plan, I)
    logW = forward_log(model.K, np.zeros((1, plan.N)), lo=lo, allowed=allowed)
    return float(np.exp(logW[0, -1]))


def P_I_all(model: RenewalModel, plan: CoarseGrainPlan, chunk: int = 128) -> dict:
    """P_I for every I containing m (keys are sorted tuples)."""
    from .disorder import DisorderSpec

    sys = PinningSystem(model, DisorderSpec("gaussian"), 0.0, 0.0)
    subsets = all_subsets(plan.m)
    vals = []
    for s in range(0, len(subsets), chunk):
        part = subsets[s:s + chunk]
        vals.append(hatZ_I_batch(sys, np.zeros((1, plan.N)), plan, part)[0])
    return dict(zip(subsets, np.exp(np.concatenate(vals))))


@dataclass(frozen=True)
class DecayFit:
    C1: float
    C2: float
    max_violation: float
    violations: int
    xi: float
    table: list  # (I, P_I, bound)


def _gap_log_sum(I) -> float:
    prev, s = 0, 0.0
    for i in I:
        s += math.log(i - prev)
        prev = i
    return s


def P_I_decay_fit(model: RenewalModel, k: int, m: int, xi: float = 1.4) -> DecayFit:
    """Constants C1, C2 with P_I <= C1 C2^|I| prod_j (i_j - i_{j-1})^(-xi) for all I.

    log C1 and log C2 minimize the total log-slack over all subsets (a linear
    program); log C1 is then lowered to the tightest feasible value.
    """
    if not 1 < xi < 1.5:
        raise ValueError("xi must lie in (1, 3/2)")
    if m > 20:
        raise BudgetError("exhaustive subset enumeration is limited to m <= 20")
    plan = CoarseGrainPlan(k, m)
    P = P_I_all(model, plan)
    subsets = list(P)
    size = np.array([len(I) for I in subsets], dtype=float)
    y = np.array([math.log(P[I]) + xi * _gap_log_sum(I) for I in subsets])
    # minimize sum_I (c1 + |I| c2 - y_I) subject to c1 + |I| c2 >= y_I
    res = optimize.linprog(
        c=[len(subsets), size.sum()],
        A_ub=np.column_stack([-np.ones_like(size), -size]),
        b_ub=-y,
        bounds=[(None, None), (None, None)],
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"decay fit failed: {res.message}")
    c2 = float(res.x[1])
    c1 = float(np.max(y - size * c2))
    log_bound = c1 + size * c2 - xi * np.array([_gap_log_sum(I) for I in subsets])
    excess = np.log([P[I] for I in subsets]) - log_bound
    table = [(I, float(P[I]), float(math.exp(b))) for I, b in zip(subsets, log_bound)]
    return DecayFit(
        C1=math.exp(c1), C2=math.exp(c2),
        max_violation=float(max(np.expm1(excess.max()), 0.0)),
        violations=int(np.sum(excess > 1e-12)),
        xi=xi, table=table,
    )


def gap_scaling_slope(model: RenewalModel, k: int, g_max: int = 9) -> float:
    """Slope of log P_I against log(g - 1) along I = {1, g, g + 1}, g = 2..g_max.

    The middle gap g - 1 grows while the other two gaps stay equal to one.
    """
    xs, ys = [], []
    for g in range(2, g_max + 1):
        plan = CoarseGrainPlan(k, g + 1)
        xs.append(math.log(g - 1))
        ys.append(math.log(P_I_exact(model, plan, (1, g, g + 1))))
    return float(np.polyfit(xs, ys, 1)[0])


def bitmask(I) -> int:
    return sum(1 << (i - 1) for i in I)
