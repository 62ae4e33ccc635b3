"""Drift constants, stepsize schedules, and every finite-sample bound."""

import math

import numpy as np
import pytest

from contract_sa.bounds import (
    AlphaConstants,
    StepsizeSchedule,
    build_schedule,
    compute_alphas,
    corollary1_bound,
    corollary2_bound,
    corollary3_constants,
    theorem1_bound,
    theorem2_bound,
    theorem3_bound,
    theorem3_schedule,
    theorem4_bound,
    theorem4_eps_cap,
    theorem5a_bound,
    theorem5a_eps_cap,
    theorem5b_bound,
    theorem5b_schedule,
)
from contract_sa.norms import EquivalenceConstants

IDENTITY_EQ = EquivalenceConstants(1.0, 1.0)


def make_alphas(a1=1.0, a2=0.5, a3=8.0, a4=2.0, B=0.0):
    """Hand-crafted constants for schedule/bound arithmetic tests."""
    return AlphaConstants(
        alpha1=a1, alpha2=a2, alpha3=a3, alpha4=a4,
        gamma=0.5, mu=1.0, L=1.0, ell_cs=1.0, u_cs=1.0, ell_es=1.0, u_es=1.0, B=B,
    )


# ---------------------------------------------------------------------------
# drift constants
# ---------------------------------------------------------------------------


def test_identical_norm_alphas():
    a = compute_alphas(0.5, 1.0, 1.0, IDENTITY_EQ, IDENTITY_EQ, B=0.0)
    assert (a.alpha1, a.alpha2, a.alpha3, a.alpha4) == (1.0, 0.5, 16.0, 4.0)


def test_alphas_with_state_dependent_noise():
    a = compute_alphas(0.5, 1.0, 1.0, IDENTITY_EQ, IDENTITY_EQ, B=3.0)
    assert (a.alpha3, a.alpha4) == (40.0, 4.0)


def test_alpha2_must_be_positive():
    # a wide norm gap at high gamma drives 1 - gamma sqrt(alpha1) below zero
    wide = EquivalenceConstants(0.5, 1.0)
    with pytest.raises(ValueError, match="alpha2"):
        compute_alphas(0.9, 1.0, 1.0, wide, IDENTITY_EQ, B=0.0)


def test_compute_alphas_validation():
    with pytest.raises(ValueError):
        compute_alphas(1.0, 1.0, 1.0, IDENTITY_EQ, IDENTITY_EQ, B=0.0)
    with pytest.raises(ValueError):
        compute_alphas(0.5, -1.0, 1.0, IDENTITY_EQ, IDENTITY_EQ, B=0.0)
    with pytest.raises(ValueError):
        compute_alphas(0.5, 1.0, 1.0, IDENTITY_EQ, IDENTITY_EQ, B=-0.1)


def test_sup_norm_constants_use_prescribed_mu():
    a = corollary3_constants(0.5, 16, B=0.0)
    assert a.mu == pytest.approx((0.5 + 1.0) ** 2 - 1.0, rel=1e-14)  # 1.25
    assert a.L == pytest.approx(4.0 * math.log(16) - 1.0, rel=1e-14)


def test_sup_norm_constants_match_manual_formulas():
    for gamma in (0.3, 0.5, 0.8):
        for d in (2, 16, 100):
            a = corollary3_constants(gamma, d, B=8.0)
            p = 4.0 * math.log(d)
            mu = (0.5 + 0.5 / gamma) ** 2 - 1.0
            sqrt_e = math.sqrt(math.e)
            assert a.alpha1 == pytest.approx((1.0 + mu) / (1.0 + mu / sqrt_e), rel=1e-13)
            assert a.alpha2 == pytest.approx(1.0 - gamma * math.sqrt(a.alpha1), rel=1e-13)
            assert a.alpha3 == pytest.approx(
                4.0 * math.e * 10.0 * (p - 1.0) * (1.0 + mu) / mu, rel=1e-13
            )
            assert a.alpha4 == pytest.approx(a.alpha3 / 20.0, rel=1e-13)


def test_sup_norm_constants_satisfy_dimension_free_caps():
    for gamma in (0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99):
        for d in (2, 4, 16, 64, 1024):
            a = corollary3_constants(gamma, d, B=0.0)
            assert a.alpha1 <= math.sqrt(math.e) * (1 + 1e-12)
            assert a.alpha2 >= (1.0 - gamma) / 2.0 * (1 - 1e-12)
            assert a.alpha3 <= 32.0 * math.e * 2.0 * math.log(d) / (1.0 - gamma) * (1 + 1e-12)
            assert a.alpha4 <= 16.0 * math.e * math.log(d) / (1.0 - gamma) * (1 + 1e-12)


def test_alpha1_worst_case_exceeds_three_halves_at_small_gamma():
    # the sqrt(e) cap is genuinely needed: 3/2 fails for weak contractions
    a = corollary3_constants(0.1, 16, B=0.0)
    assert 1.5 < a.alpha1 <= math.sqrt(math.e)


def test_sup_norm_constants_reject_tiny_dimension():
    with pytest.raises(ValueError):
        corollary3_constants(0.5, 1, B=0.0)


# ---------------------------------------------------------------------------
# stepsize schedules
# ---------------------------------------------------------------------------


def test_build_schedule_inverse_k_offset():
    # eps=2, alpha2=0.5, alpha3=8: K = max(1, eps*alpha3/alpha2) = 32
    s = build_schedule(make_alphas(), eps=2.0, xi=1.0)
    assert s.K == 32.0
    assert s.eps_at(0) == pytest.approx(2.0 / 32.0)


def test_build_schedule_fractional_exponent_offset():
    alphas = make_alphas()
    eps, xi = 0.3, 0.7
    s = build_schedule(alphas, eps=eps, xi=xi)
    want = max(1.0, (eps * 8.0 / 0.5) ** (1.0 / xi), (2.0 * xi / (0.5 * eps)) ** (1.0 / (1.0 - xi)))
    assert s.K == pytest.approx(want, rel=1e-14)


def test_build_schedule_constant_enforces_cap():
    alphas = make_alphas()  # cap = 0.5/8 = 0.0625
    s = build_schedule(alphas, eps=0.0625)
    assert s.kind == "constant" and s.eps == 0.0625
    with pytest.raises(ValueError):
        build_schedule(alphas, eps=0.07)
    with pytest.raises(ValueError):
        build_schedule(alphas, eps=-0.1, xi=1.0)


def test_built_schedules_respect_first_step_cap():
    rng = np.random.default_rng(5)
    for _ in range(30):
        a2, a3 = rng.uniform(0.05, 0.9), rng.uniform(1.0, 50.0)
        alphas = make_alphas(a2=a2, a3=a3, a4=a3 / 4.0)
        for xi in (0.3, 0.5, 0.8, 1.0):
            s = build_schedule(alphas, eps=rng.uniform(0.01, 5.0), xi=xi)
            assert s.eps_at(0) <= a2 / a3 * (1 + 1e-9)


def test_schedule_eps_at_vectorized_and_monotone():
    s = StepsizeSchedule(kind="polynomial", eps=1.5, xi=0.6, K=3.0)
    ks = np.arange(50)
    vec = s.eps_at(ks)
    np.testing.assert_allclose(vec, [s.eps_at(int(k)) for k in ks], rtol=1e-15)
    assert np.all(np.diff(vec) < 0) and np.all(vec > 0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        StepsizeSchedule(kind="constant", eps=-1.0)
    with pytest.raises(ValueError):
        StepsizeSchedule(kind="constant", eps=0.1, xi=0.5)
    with pytest.raises(ValueError):
        StepsizeSchedule(kind="polynomial", eps=0.1, xi=1.5, K=1.0)
    with pytest.raises(ValueError):
        StepsizeSchedule(kind="polynomial", eps=0.1, xi=0.5, K=0.5)
    with pytest.raises(ValueError):
        StepsizeSchedule(kind="geometric", eps=0.1)
    # eps = 0 is allowed so the engine can freeze iterates
    assert StepsizeSchedule(kind="constant", eps=0.0).eps_at(3) == 0.0


# ---------------------------------------------------------------------------
# general bounds
# ---------------------------------------------------------------------------


def test_recursive_bound_starts_at_alpha1_e0():
    alphas = make_alphas()
    s = build_schedule(alphas, eps=0.05)
    out = theorem1_bound(alphas, s, initial_err_c_sq=3.0, A=1.0, B=0.0, x_star_norm_c=0.0, k_max=0)
    assert out.shape == (1,)
    assert out[0] == pytest.approx(alphas.alpha1 * 3.0)


def test_recursive_bound_matches_independent_recurrence():
    alphas = make_alphas(a1=1.2, a2=0.4, a3=10.0, a4=2.5)
    s = build_schedule(alphas, eps=1.0, xi=1.0)
    k_max = 200
    got = theorem1_bound(alphas, s, 2.0, A=0.7, B=1.5, x_star_norm_c=2.0, k_max=k_max)
    eps = s.eps_at(np.arange(k_max))
    fac = 1.0 - alphas.alpha2 * eps
    P = np.concatenate([[1.0], np.cumprod(fac)])
    S = np.zeros(k_max + 1)
    for i in range(k_max):
        S[i + 1] = fac[i] * S[i] + eps[i] ** 2
    noise = 0.7 + 2.0 * 1.5 * 4.0
    want = alphas.alpha1 * 2.0 * P + alphas.alpha4 * noise * S
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_recursive_bound_rejects_oversized_first_step():
    alphas = make_alphas()
    fast = StepsizeSchedule(kind="constant", eps=0.5)  # above cap = 0.0625
    with pytest.raises(ValueError):
        theorem1_bound(alphas, fast, 1.0, 1.0, 0.0, 0.0, 10)


def test_constant_stepsize_bound_dominates_recursion_and_shares_plateau():
    alphas = make_alphas()
    eps = 0.05
    s = build_schedule(alphas, eps=eps)
    ks = np.arange(3001)
    recursive = theorem1_bound(alphas, s, 2.0, A=1.0, B=0.5, x_star_norm_c=1.0, k_max=3000)
    closed = corollary1_bound(alphas, eps, 2.0, A=1.0, B=0.5, x_star_norm_c=1.0, k=ks)
    assert np.all(recursive <= closed * (1 + 1e-12))
    plateau = (1.0 + 2.0 * 0.5 * 1.0) * alphas.alpha4 * eps / alphas.alpha2
    assert closed[-1] == pytest.approx(plateau, rel=1e-6)
    assert recursive[-1] == pytest.approx(plateau, rel=1e-6)


def test_constant_stepsize_bound_rejects_bad_eps():
    alphas = make_alphas()
    with pytest.raises(ValueError):
        corollary1_bound(alphas, 0.07, 1.0, 1.0, 0.0, 0.0, 5)
    with pytest.raises(ValueError):
        corollary1_bound(alphas, 0.0, 1.0, 1.0, 0.0, 0.0, 5)


def test_polynomial_bound_slow_decay_regime():
    alphas = make_alphas()  # alpha2 = 0.5, alpha3 = 8, alpha4 = 2
    eps = 1.0  # t = 0.5 < 1, K = max(1, 16) = 16
    ks = np.array([0, 10, 100])
    got = corollary2_bound(alphas, eps, 1.0, 3.0, 1.0, 0.0, 0.0, ks)
    want = 3.0 * (16.0 / (ks + 16.0)) ** 0.5 + (4.0 * 1.0 * 2.0 / 0.5) / (ks + 16.0) ** 0.5
    np.testing.assert_allclose(got, want, rtol=1e-13)


def test_polynomial_bound_critical_regime_has_log_factor():
    alphas = make_alphas()
    eps = 2.0  # t = 1 exactly, K = 32
    ks = np.array([1, 50, 500])
    got = corollary2_bound(alphas, eps, 1.0, 3.0, 1.0, 0.0, 0.0, ks)
    want = 3.0 * 32.0 / (ks + 32.0) + (4.0 * 2.0 / 0.25) * np.log(ks + 32.0) / (ks + 32.0)
    np.testing.assert_allclose(got, want, rtol=1e-13)


def test_polynomial_bound_fast_decay_regime():
    alphas = make_alphas()
    eps = 4.0  # t = 2 > 1, K = 64
    ks = np.array([0, 7, 300])
    got = corollary2_bound(alphas, eps, 1.0, 3.0, 1.0, 0.0, 0.0, ks)
    want = 3.0 * (64.0 / (ks + 64.0)) ** 2 + (4.0 * math.e * 16.0 * 2.0 / 1.0) / (ks + 64.0)
    np.testing.assert_allclose(got, want, rtol=1e-13)


def test_polynomial_bound_fractional_exponent_regime():
    alphas = make_alphas()
    eps, xi = 0.5, 0.5
    s = build_schedule(alphas, eps=eps, xi=xi)
    ks = np.array([0, 20, 2000])
    got = corollary2_bound(alphas, eps, xi, 3.0, 1.0, 0.0, 0.0, ks)
    decay = np.exp(-(0.5 * eps / 0.5) * (np.sqrt(ks + s.K) - math.sqrt(s.K)))
    want = 3.0 * decay + (2.0 * eps * 2.0 / 0.5) / np.sqrt(ks + s.K)
    np.testing.assert_allclose(got, want, rtol=1e-13)


def test_residual_bound_zero_problem_is_zero():
    for regime in ("constant", "inv_sqrt", "inv_k"):
        assert theorem2_bound(D=0.0, A=0.0, eps=0.5, regime=regime, k=5) == 0.0


def test_residual_bound_hand_values():
    # constant: D^2/((k+1)(1-eps)eps) + A eps/(1-eps)
    assert theorem2_bound(2.0, 1.0, 0.5, "constant", 0) == pytest.approx(
        4.0 / (1.0 * 0.25) + 1.0, rel=1e-14
    )
    # inv_sqrt at k = 1: (D^2 + A eps^2 (1 + ln 1)) / (2 (1-eps) eps (sqrt2 - 1))
    assert theorem2_bound(2.0, 1.0, 0.5, "inv_sqrt", 1) == pytest.approx(
        (4.0 + 0.25) / (2.0 * 0.25 * (math.sqrt(2.0) - 1.0)), rel=1e-14
    )
    # inv_k at k = 1: (D^2 + 2 A eps^2) / ((1-eps) eps ln 2)
    assert theorem2_bound(2.0, 1.0, 0.5, "inv_k", 1) == pytest.approx(
        (4.0 + 0.5) / (0.25 * math.log(2.0)), rel=1e-14
    )


def test_residual_bound_validation():
    with pytest.raises(ValueError):
        theorem2_bound(1.0, 1.0, 1.0, "constant", 5)
    with pytest.raises(ValueError):
        theorem2_bound(1.0, 1.0, 0.5, "inv_sqrt", 0)
    with pytest.raises(ValueError):
        theorem2_bound(1.0, 1.0, 0.5, "inv_k", 0)
    with pytest.raises(ValueError):
        theorem2_bound(1.0, 1.0, 0.5, "exotic", 5)


# ---------------------------------------------------------------------------
# algorithm-specific compositions
# ---------------------------------------------------------------------------


def test_offpolicy_schedule_hand_values():
    s = theorem3_schedule(0.9, A=1.0, n_states=10)
    assert s.eps == pytest.approx(40.0)
    assert s.K == pytest.approx(64.0 * 3.0 * math.log(10.0) / 0.001, rel=1e-13)


def test_offpolicy_bound_hand_formula():
    ks = np.array([0, 100, 10_000])
    got = theorem3_bound(0.9, 1.0, 10, 4.0, 9.0, ks)
    K = 64.0 * 3.0 * math.log(10.0) / 0.001
    want = 1024.0 * math.e**2 * (4.0 + 18.0 + 1.0) * 3.0 * math.log(10.0) / (0.001 * (ks + K))
    np.testing.assert_allclose(got, want, rtol=1e-13)


def test_td_cap_hand_value():
    assert theorem4_eps_cap(0.9, 1) == pytest.approx(0.1 / (16.0 * 1.81), rel=1e-14)


def test_td_bound_equals_generic_constant_bound():
    # the TD statement is exactly the generic constant-stepsize bound with
    # identical-norm constants gamma = beta^n, B = 2 beta^{2n},
    # A = 2 (1-beta^n)^2 / (1-beta)^2
    for beta in (0.5, 0.9, 0.99):
        for n in (1, 2, 5):
            bn = beta**n
            alphas = compute_alphas(bn, 1.0, 1.0, IDENTITY_EQ, IDENTITY_EQ, B=2.0 * bn * bn)
            eps = theorem4_eps_cap(beta, n)
            assert eps == pytest.approx(alphas.alpha2 / alphas.alpha3, rel=1e-13)
            ks = np.array([0, 10, 1000])
            via_td = theorem4_bound(beta, n, eps, 2.5, 3.0, ks)
            via_generic = corollary1_bound(
                alphas, eps, 2.5, A=2.0 * (1.0 - bn) ** 2 / (1.0 - beta) ** 2,
                B=2.0 * bn * bn, x_star_norm_c=math.sqrt(3.0), k=ks,
            )
            np.testing.assert_allclose(via_td, via_generic, rtol=1e-12)


def test_td_bound_rejects_oversized_eps():
    with pytest.raises(ValueError):
        theorem4_bound(0.9, 1, 0.1, 1.0, 1.0, 5)


def test_qlearning_cap_and_bound_hand_formulas():
    beta, S, A = 0.9, 10, 3
    cap = theorem5a_eps_cap(beta, S, A)
    assert cap == pytest.approx(0.01 / (640.0 * math.e * math.log(30.0)), rel=1e-14)
    ks = np.array([0, 10, 10_000])
    got = theorem5a_bound(beta, S, A, cap, 4.0, 25.0, ks)
    want = 1.5 * 4.0 * (1.0 - 0.1 * cap / 2.0) ** ks + 51.0 * 256.0 * math.e * math.log(
        30.0
    ) * cap / 0.01
    np.testing.assert_allclose(got, want, rtol=1e-13)


def test_qlearning_constant_bound_dominates_exact_composition():
    # the stated worst-case constants (3/2 decay factor, 256 e log coefficient)
    # must sit above the same bound assembled from the exact drift constants
    for beta in (0.5, 0.9):
        S, A = 10, 3
        eps = theorem5a_eps_cap(beta, S, A)
        alphas = corollary3_constants(beta, S * A, B=8.0)
        ks = np.arange(0, 20_000, 500)
        stated = theorem5a_bound(beta, S, A, eps, 4.0, 25.0, ks)
        exact = corollary1_bound(alphas, eps, 4.0, A=8.0, B=8.0, x_star_norm_c=5.0, k=ks)
        assert np.all(stated >= exact * (1 - 1e-12))


def test_qlearning_schedule_hand_value():
    s = theorem5b_schedule(0.9, 10, 3)
    assert s.eps == pytest.approx(40.0)
    assert s.K == pytest.approx(640.0 * math.e * math.log(30.0) / 0.001, rel=1e-13)


def test_qlearning_decaying_bound_hand_formula():
    ks = np.array([0, 1000])
    got = theorem5b_bound(0.9, 10, 3, 4.0, 25.0, ks)
    K = 640.0 * math.e * math.log(30.0) / 0.001
    want = 8192.0 * math.e**2 * (1.0 + 50.0 + 4.0) * math.log(30.0) / (0.001 * (ks + K))
    np.testing.assert_allclose(got, want, rtol=1e-13)


def test_decaying_bounds_decrease_in_k():
    ks = np.arange(1, 5000, 7)
    for curve in (
        theorem3_bound(0.9, 2.0, 10, 1.0, 1.0, ks),
        theorem5b_bound(0.8, 5, 3, 1.0, 1.0, ks),
        corollary2_bound(make_alphas(), 2.0, 1.0, 1.0, 1.0, 0.0, 0.0, ks),
    ):
        assert np.all(np.diff(curve) < 0)


def test_scalar_k_returns_float():
    alphas = make_alphas()
    assert isinstance(corollary1_bound(alphas, 0.05, 1.0, 1.0, 0.0, 0.0, 7), float)
    assert isinstance(theorem2_bound(1.0, 1.0, 0.5, "constant", 7), float)
    assert isinstance(theorem5b_bound(0.9, 10, 3, 1.0, 1.0, 7), float)
