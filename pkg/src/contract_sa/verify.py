"""Built-in verification suites for the CLI.

Each suite re-derives a guarantee from first principles and checks it against
an independent computation or a Monte-Carlo estimate on seeded random
instances. Suites: ``sandwich`` (envelope two-sided comparison), ``drift``
(one-step Lyapunov descent), ``contraction`` (operator moduli), ``noise``
(sampled-update noise envelopes), ``lipschitz`` (policy-to-value stability),
``tightness`` (sup-norm ln d scaling).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bounds as bnd
from .engine import fit_log_affine, gaussian_average_experiment, path_rng, verify_drift
from .envelope import make_spec, sandwich_check
from .mdp import (
    VtraceParams,
    policy_lipschitz_check,
    random_mdp,
    random_policy,
    tdn_operator,
    uniform_policy,
    vtrace_contraction_factor,
    vtrace_operator,
)
from .norms import eval_norm, linf, lp
from .rl import (
    make_qlearning_oracle,
    make_tdn_oracle,
    make_vtrace_oracle,
)

__all__ = ["CheckResult", "SUITES", "run_suite"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _suite_sandwich(seed: int = 2024) -> list[CheckResult]:
    rng = path_rng(seed, 0)
    out = []
    worst = np.inf
    count = 0
    for _ in range(200):
        d = int(rng.integers(1, 17))
        p = max(2.0, 4.0 * np.log(d)) if rng.random() < 0.5 else float(rng.uniform(2.0, 40.0))
        mu = float(rng.uniform(0.1, 5.0))
        spec = make_spec(linf(), lp(p), mu)
        x = rng.uniform(-10, 10, size=d)
        rep = sandwich_check(spec, x)
        count += 1
        lo_gap = rep.f_value + rep.slack - rep.lower_coef * rep.m_value
        hi_gap = rep.upper_coef * rep.m_value + rep.slack - rep.f_value
        worst = min(worst, lo_gap, hi_gap)
        if not rep.ok:
            out.append(CheckResult("sandwich", False, f"violated at d={d}, p={p}, mu={mu}"))
            return out
    out.append(CheckResult("sandwich", True, f"{count} random sup-norm/l_p cases, worst slack margin {worst:.3e}"))
    return out


def _suite_drift(seed: int = 2025) -> list[CheckResult]:
    mdp = random_mdp(4, 2, beta=0.8, seed=seed)
    d = mdp.n_states * mdp.n_actions
    alphas = bnd.corollary3_constants(mdp.beta, d, B=8.0)
    spec = make_spec(linf(), lp(4.0 * np.log(d)), alphas.mu)
    oracle = make_qlearning_oracle(mdp)
    eps = alphas.alpha2 / (2.0 * alphas.alpha3)
    rng = path_rng(seed, 1)
    worst = np.inf
    for i in range(10):
        Q = rng.uniform(0.0, 1.0 / (1.0 - mdp.beta), size=d)
        chk = verify_drift(spec, oracle, alphas, Q, eps, mc_samples=4000, seed=seed + i)
        worst = min(worst, chk.margin)
        if chk.lhs > chk.rhs + 3.0 * chk.stderr:
            return [CheckResult("drift", False, f"one-step drift violated: lhs={chk.lhs}, rhs={chk.rhs}")]
    return [CheckResult("drift", True, f"10 Q-learning points at eps=alpha2/(2 alpha3), worst margin {worst:.3e}")]


def _suite_contraction(seed: int = 2026) -> list[CheckResult]:
    out = []
    mdp = random_mdp(6, 3, beta=0.9, seed=seed)
    policy = random_policy(6, 3, seed + 1)
    behavior = uniform_policy(6, 3)
    rng = path_rng(seed, 2)

    oracle = make_tdn_oracle(mdp, policy, 3)
    lam_norm = oracle.noise.error_norm
    worst = np.inf
    for _ in range(200):
        v1, v2 = rng.uniform(-5, 5, size=(2, 6))
        num = float(eval_norm(lam_norm, tdn_operator(mdp, policy, 3, v1) - tdn_operator(mdp, policy, 3, v2)))
        den = float(eval_norm(lam_norm, v1 - v2))
        worst = min(worst, oracle.operator.gamma * den - num)
        if num > oracle.operator.gamma * den + 1e-10:
            out.append(CheckResult("contraction", False, f"TD(3) modulus violated: ratio {num/den}"))
            return out
    out.append(CheckResult("contraction:tdn", True, f"200 pairs within beta^n, worst margin {worst:.3e}"))

    params = VtraceParams(c_bar=1.0, rho_bar=1.5, n=2)
    gamma = vtrace_contraction_factor(policy, behavior, params, mdp.beta)
    worst = np.inf
    for _ in range(200):
        v1, v2 = rng.uniform(-5, 5, size=(2, 6))
        num = float(
            np.max(np.abs(vtrace_operator(mdp, policy, behavior, params, v1) - vtrace_operator(mdp, policy, behavior, params, v2)))
        )
        den = float(np.max(np.abs(v1 - v2)))
        worst = min(worst, gamma * den - num)
        if num > gamma * den + 1e-10:
            out.append(CheckResult("contraction", False, "off-policy modulus violated"))
            return out
    on_gamma = vtrace_contraction_factor(policy, policy, VtraceParams(1.0, 1.0, 4), mdp.beta)
    exact = abs(on_gamma - mdp.beta**4) < 1e-12
    out.append(CheckResult("contraction:vtrace", worst >= -1e-10, f"200 pairs within gamma, worst margin {worst:.3e}"))
    out.append(CheckResult("contraction:on-policy", exact, f"on-policy modulus {on_gamma} vs beta^n {mdp.beta**4}"))
    return out


def _suite_noise(seed: int = 2027) -> list[CheckResult]:
    out = []
    mdp = random_mdp(5, 2, beta=0.85, seed=seed)
    policy = random_policy(5, 2, seed + 1)
    behavior = uniform_policy(5, 2)
    cases = [
        ("tdn", make_tdn_oracle(mdp, policy, 2)),
        ("vtrace", make_vtrace_oracle(mdp, policy, behavior, VtraceParams(1.0, 1.2, 2))),
        ("qlearning", make_qlearning_oracle(mdp)),
    ]
    rng = path_rng(seed, 3)
    for name, oracle in cases:
        d = oracle.batch.dim
        nm = oracle.noise
        worst = np.inf
        ok = True
        for i in range(4):
            x = rng.uniform(-3, 3, size=d)
            mean = oracle.operator.apply(x[None, :])[0]
            U = oracle.batch.draw(path_rng(seed + 7, i), 3000)
            samples = oracle.batch.apply(np.tile(x, (3000, 1)), U)
            w = samples - mean[None, :]
            wsq = np.asarray(eval_norm(nm.error_norm, w)) ** 2
            cap = nm.A + nm.B * float(eval_norm(nm.error_norm, x)) ** 2
            se = float(np.std(wsq, ddof=1) / np.sqrt(wsq.size))
            margin = cap - float(np.mean(wsq)) - 3.0 * se
            worst = min(worst, margin)
            ok = ok and margin >= 0
        out.append(CheckResult(f"noise:{name}", ok, f"4 iterate points, worst 3-sigma margin {worst:.3e}"))
    return out


def _suite_lipschitz(seed: int = 2028) -> list[CheckResult]:
    rng = path_rng(seed, 4)
    worst = np.inf
    for i in range(200):
        mdp = random_mdp(6, 3, beta=float(rng.uniform(0.5, 0.95)), seed=seed + i)
        p1 = random_policy(6, 3, seed + 1000 + i)
        p2 = random_policy(6, 3, seed + 2000 + i)
        lhs, rhs, ok = policy_lipschitz_check(mdp, p1, p2)
        worst = min(worst, rhs - lhs)
        if not ok:
            return [CheckResult("lipschitz", False, f"violated: lhs={lhs}, rhs={rhs}")]
    return [CheckResult("lipschitz", True, f"200 random policy pairs, worst margin {worst:.3e}")]


def _suite_tightness(seed: int = 2029) -> list[CheckResult]:
    d_list = [2, 8, 32, 128, 512]
    k_max = 1000
    stats = gaussian_average_experiment(d_list, k_max, paths=500, base_seed=seed)
    scaled = np.array([k_max * stats[d].mean[-1] for d in d_list])
    slope, intercept, r2 = fit_log_affine(np.array(d_list, dtype=float), scaled)
    passed = r2 > 0.95 and slope > 0
    return [
        CheckResult(
            "tightness",
            passed,
            f"k E||avg||_inf^2 vs ln d: slope={slope:.4f}, intercept={intercept:.4f}, R^2={r2:.4f}",
        )
    ]


SUITES = {
    "sandwich": _suite_sandwich,
    "drift": _suite_drift,
    "contraction": _suite_contraction,
    "noise": _suite_noise,
    "lipschitz": _suite_lipschitz,
    "tightness": _suite_tightness,
}


def run_suite(name: str) -> list[CheckResult]:
    if name == "all":
        out = []
        for suite in SUITES.values():
            out.extend(suite())
        return out
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[name]()
