import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinlab.changemeasure import (
    PotentialSpec, TruncationSpec, E_tau_X, K_cut_for, V_eval, X_full, block_factor,
    ce_statistic, chebyshev_fire_bound, fromCE_test, g_weight, holder_chain_check, holder_factor,
    sum_V_squared,
)
from pinlab.coarsegrain import CoarseGrainPlan
from pinlab.disorder import DisorderSpec, m_beta, sample_iid
from pinlab.errors import BudgetError
from pinlab.pinning import PinningSystem
from pinlab.renewal import RenewalPath, build_model
from pinlab.slowvar import SlowlyVaryingSpec as S, build_envelope

GAUSS = DisorderSpec("gaussian")


def _brute_V_table(ps):
    return {t: V_eval(ps, t) for t in itertools.product(range(1, ps.k + 1), repeat=ps.q)}


def test_V_direct_formula():
    ps = PotentialSpec.build(2, 16, S.trivial(1))
    env = build_envelope(S.trivial(1), 16)
    want = env.Rhalf[4] / math.sqrt(2 * 16 * 1) / math.sqrt(env.tildeLbold[16])
    assert V_eval(ps, (3, 7)) == pytest.approx(want, rel=1e-15)
    assert want == pytest.approx(1 / math.sqrt(5) / math.sqrt(32 * math.log(17)), rel=1e-12)


@pytest.mark.parametrize("q,k", [(2, 32), (3, 20), (3, 32)])
def test_V_symmetry_and_diagonal(q, k):
    ps = PotentialSpec.build(q, k, S.logarithmic(1, -0.5))
    table = _brute_V_table(ps)
    for t, v in table.items():
        if len(set(t)) < q:
            assert v == 0.0
        else:
            assert v == table[tuple(sorted(t))]


@pytest.mark.parametrize("q,k", [(2, 12), (3, 10), (4, 8)])
def test_sum_V_squared_brute(q, k):
    ps = PotentialSpec.build(q, k, S.logarithmic(2, 0.3))
    brute = sum(v * v for v in _brute_V_table(ps).values())
    assert sum_V_squared(ps) == pytest.approx(brute, rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([(2, 9), (3, 8), (4, 6)]))
def test_X_full_brute(seed, qk):
    q, k = qk
    ps = PotentialSpec.build(q, k, S.trivial(1))
    w = np.random.default_rng(seed).standard_normal(k)
    brute = sum(v * np.prod(w[np.array(t) - 1]) for t, v in _brute_V_table(ps).items())
    assert X_full(ps, w) == pytest.approx(brute, rel=1e-10, abs=1e-13)


def test_X_zero_and_budget():
    ps = PotentialSpec.build(3, 64, S.trivial(1))
    assert X_full(ps, np.zeros(64)) == 0.0
    with pytest.raises(BudgetError):
        X_full(PotentialSpec.build(3, 300, S.trivial(1)), np.zeros(300))
    with pytest.raises(BudgetError):
        sum_V_squared(PotentialSpec.build(5, 2 ** 14, S.trivial(1)))


def test_X_centered(rng):
    ps = PotentialSpec.build(3, 64, S.trivial(1))
    X = X_full(ps, sample_iid(GAUSS, 64, rng, size=10_000))
    assert abs(X.mean()) < 3 * X.std() / 100


def test_X_variance_is_qfact_sum_V_squared():
    # X sums over ordered tuples, so Var X = q! * sum over B^q of V^2
    ps = PotentialSpec.build(3, 128, S.trivial(1))
    X = X_full(ps, sample_iid(DisorderSpec("rademacher"), 128, np.random.default_rng(2), size=100_000))
    assert X.var() / (6 * sum_V_squared(ps)) == pytest.approx(1.0, abs=0.05)


def test_tilted_mean_identity_exact():
    # all sites pinned: E X = m_beta^q * sum over B^q of V, i.e. X at constant charges m_beta
    ps = PotentialSpec.build(3, 40, S.trivial(1))
    for fam, beta in (("gaussian", 0.4), ("rademacher", 0.6), ("exponential", 0.25)):
        m = m_beta(DisorderSpec(fam), beta)
        path = RenewalPath(tuple(range(1, 41)), 40)
        assert E_tau_X(ps, path, beta, DisorderSpec(fam)) == pytest.approx(
            X_full(ps, np.full(40, m)), rel=1e-12)


def test_E_tau_X():
    ps = PotentialSpec.build(3, 64, S.trivial(1))
    assert E_tau_X(ps, RenewalPath((3, 9), 64), 0.5, GAUSS) == 0.0
    assert E_tau_X(ps, RenewalPath((3, 9, 20, 50), 64), 0.0, GAUSS) == 0.0
    pts = (3, 9, 20, 50)
    brute = sum(V_eval(ps, t) for t in itertools.permutations(pts, 3))
    assert E_tau_X(ps, RenewalPath(pts, 64), 0.5, GAUSS) == pytest.approx(0.125 * brute, rel=1e-12)


def test_sum_V_squared_targets():
    small = sum_V_squared(PotentialSpec.build(2, 2 ** 8, S.trivial(1)))
    big = sum_V_squared(PotentialSpec.build(2, 2 ** 12, S.trivial(1)))
    assert abs(big - 1) < abs(small - 1)
    for q in (2, 3, 4):
        assert sum_V_squared(PotentialSpec.build(q, 2 ** 10, S.trivial(1))) <= 2
    # invariant under rescaling L
    a = sum_V_squared(PotentialSpec.build(3, 500, S.trivial(1)))
    b = sum_V_squared(PotentialSpec.build(3, 500, S.trivial(0.3)))
    assert a == pytest.approx(b, rel=1e-12)


def test_g_weight():
    t = TruncationSpec(2.0)
    lvl = math.exp(4.0)
    assert g_weight(t, [0.0, lvl * 0.99]) == 1.0
    assert g_weight(t, [lvl, 0.0]) == pytest.approx(math.exp(-2.0))
    assert g_weight(t, [lvl] * 3) == pytest.approx(math.exp(-6.0))


def test_K_cut_rule():
    K = K_cut_for(6 / 7)
    assert math.exp(6 * K) * 2 / math.exp(2 * K * K) == pytest.approx(1.0, rel=1e-12)
    assert block_factor(TruncationSpec(K), 6 / 7, chebyshev_fire_bound(TruncationSpec(K), 2.0)) <= 2.0 + 1e-12


def test_holder_factor(rng):
    ps = PotentialSpec.build(3, 32, S.trivial(1))
    far = holder_factor(TruncationSpec(50.0), ps, 2000, rng)
    assert far.mc_estimate == 1.0 and far.exact_bound == pytest.approx(1.0)
    for K in (0.8, 1.0, 1.2):
        hf = holder_factor(TruncationSpec(K), ps, 20_000, rng)
        assert hf.exact_bound >= hf.mc_estimate - 3 * hf.std_error


def test_holder_chain_small(small_model):
    plan = CoarseGrainPlan(16, 3)
    ps = PotentialSpec(3, 16, small_model.env)
    sys = PinningSystem(small_model, GAUSS, 0.8, 0.0)
    for K in (0.7, 50.0):
        for I in [(3,), (1, 3), (1, 2, 3)]:
            r = holder_chain_check(sys, plan, I, TruncationSpec(K), ps, 3000, np.random.default_rng(3))
            assert r.holds
            assert r.P_I > 0 and r.eta_ratio > 0
    # K_cut -> infinity: g = 1, both sides are E Z^g and (E Z)^g
    r = holder_chain_check(sys, plan, (3,), TruncationSpec(50.0), ps, 3000, np.random.default_rng(3))
    assert r.g_factor == 1.0 and r.rhs == pytest.approx(r.gz_mean ** r.gamma, rel=1e-12)


def test_ce_statistic(half_model):
    z = ce_statistic(half_model, 100, 0.001, 50, np.random.default_rng(1))
    assert z.mean == 0.0 and np.all(z.values == 0)
    assert half_model.env.c_limit == 1.0
    r = ce_statistic(half_model, 4096, 1.0, 2000, np.random.default_rng(1))
    assert r.target == pytest.approx(1 / (2 * math.pi))
    assert abs(r.mean / r.target - 1) < 0.15
    # direct recomputation for one path
    from pinlab.renewal import sample_positions
    pos = sample_positions(half_model, 4096, 1, np.random.default_rng(2))[0]
    pts = pos[pos <= 4096]
    one = ce_statistic(half_model, 4096, 1.0, 1, np.random.default_rng(2)).values[0]
    assert one == pytest.approx(half_model.env.Rhalf[pts].sum() / half_model.env.tildeLbold[4096])


def test_fromCE(half_model):
    ps = PotentialSpec(3, 1024, half_model.env)
    res = fromCE_test(half_model, ps, 100, 100 + 1024, 300, np.random.default_rng(4))
    assert np.all(res.statistic >= 0)
    assert res.fraction_above == 1.0  # threshold 0 includes every path
    pos = fromCE_test(half_model, ps, 0, 1024, 300, np.random.default_rng(4), threshold=1e-300)
    assert pos.fraction_above > 0.95
    with pytest.raises(ValueError):
        fromCE_test(half_model, ps, 0, 50, 10, np.random.default_rng(4))  # below epsilon k


def test_fromCE_quantile_stability(half_model):
    ps = PotentialSpec(3, 2 ** 10, half_model.env)
    ref = fromCE_test(half_model, ps, 0, 2 ** 8, 2000, np.random.default_rng(7))
    rho = float(np.quantile(ref.statistic, 0.05))
    big = fromCE_test(half_model, ps, 0, 2 ** 10, 2000, np.random.default_rng(8), threshold=rho)
    assert big.fraction_above >= 0.95 - 0.03
