"""Sampled reinforcement-learning updates as noisy contraction oracles.

Each algorithm provides a :class:`~contract_sa.engine.BatchSampler` (synchronous
update: every state, or state-action pair, draws its own rollout each
iteration), the exact mean operator, the contraction certificate, the fixed
point, and the noise envelope E[||w||_e^2] <= A + B ||x||_e^2:

* n-step TD evaluation: beta^n-contraction in the stationary-weighted norm,
  A = 2 (1-beta^n)^2/(1-beta)^2, B = 2 beta^{2n};
* off-policy evaluation with truncated importance weights: contraction in the
  sup norm with modulus from the kappa constants; noise constant from the
  truncation levels, with E||w||_inf^2 <= A (1 + ||V||_inf^2) (so A = B);
* Q-learning: beta-contraction in the sup norm, A = B = 8.

The raw-uniform layout per iteration is documented on each sampler; the
off-policy sampler consumes the identical layout as the TD sampler, so with
behavior = target and truncation levels >= 1 the two produce bit-identical
samples from a shared stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import (
    MonteCarloResult,
    NoiseModel,
    NoisyOracle,
    OperatorModel,
    oracle_from_sampler,
    run_monte_carlo,
)
from .mdp import (
    Mdp,
    VtraceParams,
    clipped_policy,
    policy_matrix,
    policy_reward,
    stationary_distribution,
    optimal_q,
    value_of_policy,
    vtrace_contraction_factor,
    vtrace_noise_constant,
    _ratio,
)
from .norms import Norm, linf, weighted_l2

__all__ = [
    "TdnSampler",
    "VtraceSampler",
    "QLearningSampler",
    "tdn_sample",
    "vtrace_sample",
    "qlearning_sample",
    "tdn_noise_model",
    "qlearning_noise_model",
    "vtrace_noise_model",
    "make_tdn_oracle",
    "make_vtrace_oracle",
    "make_qlearning_oracle",
    "RlRun",
    "run_tdn",
    "run_vtrace",
    "run_qlearning",
]


def _cum_rows(probs: np.ndarray) -> np.ndarray:
    return np.cumsum(probs, axis=-1)


def _categorical(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Indices from cumulative rows (..., K) and uniforms (...)."""
    idx = np.sum(u[..., None] >= cum, axis=-1)
    return np.minimum(idx, cum.shape[-1] - 1)


def _rollout(
    policy_cum: np.ndarray,
    trans_cum: np.ndarray,
    U: np.ndarray,
    n: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Synchronous length-n rollouts from every state.

    U has shape (P, S, 2n): uniform 2t picks the action at step t from the
    policy row, uniform 2t+1 picks the successor from the transition row.
    Returns actions (P, S, n) and states (P, S, n+1) with states[..., 0] = s.
    """
    P, S = U.shape[0], policy_cum.shape[0]
    states = np.empty((P, S, n + 1), dtype=np.int64)
    actions = np.empty((P, S, n), dtype=np.int64)
    states[:, :, 0] = np.arange(S)[None, :]
    for t in range(n):
        cur = states[:, :, t]
        a = _categorical(policy_cum[cur], U[:, :, 2 * t])
        nxt = _categorical(trans_cum[a, cur], U[:, :, 2 * t + 1])
        actions[:, :, t] = a
        states[:, :, t + 1] = nxt
    return actions, states


class TdnSampler:
    """Synchronous n-step TD rollout sampler over value vectors (dim = S).

    sample(V)(s) = sum_{t<n} beta^t R(s_t, a_t) + beta^n V(s_n), one rollout
    per state per iteration; block width S * 2n uniforms."""

    def __init__(self, mdp: Mdp, policy: np.ndarray, n: int):
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        self.mdp = mdp
        self.n = n
        self.dim = mdp.n_states
        self.block_width = mdp.n_states * 2 * n
        self._policy_cum = _cum_rows(policy)
        self._trans_cum = _cum_rows(mdp.transitions)
        self._betas = mdp.beta ** np.arange(n)

    def draw(self, rng: np.random.Generator, n_iters: int) -> np.ndarray:
        return rng.random((n_iters, self.block_width))

    def apply(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        mdp, n = self.mdp, self.n
        P = X.shape[0]
        u = U.reshape(P, mdp.n_states, 2 * n)
        actions, states = _rollout(self._policy_cum, self._trans_cum, u, n)
        rewards = mdp.rewards[states[:, :, :n], actions]
        ret = np.einsum("t,pst->ps", self._betas, rewards)
        tail = np.take_along_axis(X, states[:, :, n], axis=1)
        return ret + mdp.beta**n * tail


class VtraceSampler:
    """Synchronous off-policy rollout sampler with truncated importance
    weights (dim = S).

    sample(V)(s) = V(s) + sum_{t<n} beta^t (prod_{j<t} c_j) rho_t delta_t with
    c_t = min(c_bar, ratio(s_t,a_t)), rho_t = min(rho_bar, ratio), and
    delta_t = R + beta V(s_{t+1}) - V(s_t), rollouts under the behavior
    policy. Identical uniform layout to :class:`TdnSampler` (S * 2n per
    iteration)."""

    def __init__(self, mdp: Mdp, target: np.ndarray, behavior: np.ndarray, params: VtraceParams):
        self.mdp = mdp
        self.params = params
        self.dim = mdp.n_states
        self.block_width = mdp.n_states * 2 * params.n
        ratio = _ratio(target, behavior)
        self._c = np.minimum(params.c_bar, ratio)
        self._rho = np.minimum(params.rho_bar, ratio)
        self._policy_cum = _cum_rows(behavior)
        self._trans_cum = _cum_rows(mdp.transitions)
        self._betas = mdp.beta ** np.arange(params.n)

    def draw(self, rng: np.random.Generator, n_iters: int) -> np.ndarray:
        return rng.random((n_iters, self.block_width))

    def apply(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        mdp, n = self.mdp, self.params.n
        P = X.shape[0]
        u = U.reshape(P, mdp.n_states, 2 * n)
        actions, states = _rollout(self._policy_cum, self._trans_cum, u, n)
        rewards = mdp.rewards[states[:, :, :n], actions]
        c = self._c[states[:, :, :n], actions]
        rho = self._rho[states[:, :, :n], actions]
        v_states = np.take_along_axis(X, states.reshape(P, -1), axis=1).reshape(states.shape)
        delta = rewards + mdp.beta * v_states[:, :, 1:] - v_states[:, :, :n]
        cprod = np.cumprod(np.concatenate([np.ones((P, mdp.n_states, 1)), c[:, :, :-1]], axis=2), axis=2)
        corr = np.einsum("t,pst->ps", self._betas, cprod * rho * delta)
        return X + corr


class QLearningSampler:
    """Synchronous Q-learning sampler over flattened Q tables (dim = S*A).

    sample(Q)(s,a) = R(s,a) + beta max_{a'} Q(s', a') with one successor draw
    per (s,a) per iteration; block width S*A uniforms (state-major order)."""

    def __init__(self, mdp: Mdp):
        self.mdp = mdp
        self.dim = mdp.n_states * mdp.n_actions
        self.block_width = self.dim
        # successor cumulative rows indexed (s, a, s')
        self._trans_cum = _cum_rows(np.transpose(mdp.transitions, (1, 0, 2)))

    def draw(self, rng: np.random.Generator, n_iters: int) -> np.ndarray:
        return rng.random((n_iters, self.block_width))

    def apply(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        mdp = self.mdp
        P = X.shape[0]
        S, A = mdp.n_states, mdp.n_actions
        Q = X.reshape(P, S, A)
        u = U.reshape(P, S, A)
        nxt = _categorical(self._trans_cum[None, :, :, :], u)
        vmax = Q.max(axis=2)
        tail = np.take_along_axis(vmax, nxt.reshape(P, -1), axis=1).reshape(P, S, A)
        return (mdp.rewards[None] + mdp.beta * tail).reshape(P, self.dim)


# ---------------------------------------------------------------------------
# single-sample API (consumes the same stream as the batch path)
# ---------------------------------------------------------------------------


def tdn_sample(mdp: Mdp, policy: np.ndarray, n: int, V: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One synchronous n-step TD sample of the evaluation operator at V."""
    s = TdnSampler(mdp, policy, n)
    return s.apply(np.asarray(V, dtype=float)[None, :], s.draw(rng, 1))[0]


def vtrace_sample(
    mdp: Mdp,
    target: np.ndarray,
    behavior: np.ndarray,
    params: VtraceParams,
    V: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One synchronous truncated-importance-sampling sample at V."""
    s = VtraceSampler(mdp, target, behavior, params)
    return s.apply(np.asarray(V, dtype=float)[None, :], s.draw(rng, 1))[0]


def qlearning_sample(mdp: Mdp, Q: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One synchronous Q-learning sample of the Bellman optimality operator."""
    s = QLearningSampler(mdp)
    flat = s.apply(np.asarray(Q, dtype=float).reshape(1, -1), s.draw(rng, 1))[0]
    return flat.reshape(mdp.n_states, mdp.n_actions)


# ---------------------------------------------------------------------------
# noise envelopes and oracles
# ---------------------------------------------------------------------------


def tdn_noise_model(mdp: Mdp, policy: np.ndarray, n: int) -> NoiseModel:
    """A = 2 (1-beta^n)^2/(1-beta)^2 and B = 2 beta^{2n} in the
    stationary-weighted norm of the policy chain."""
    lam = stationary_distribution(mdp, policy)
    bn = mdp.beta**n
    return NoiseModel(
        A=2.0 * (1.0 - bn) ** 2 / (1.0 - mdp.beta) ** 2,
        B=2.0 * mdp.beta ** (2 * n),
        error_norm=weighted_l2(lam),
    )


def vtrace_noise_model(params: VtraceParams, beta: float) -> NoiseModel:
    """E||w||_inf^2 <= A (1 + ||V||_inf^2) with A from the truncation levels."""
    A = vtrace_noise_constant(params, beta)
    return NoiseModel(A=A, B=A, error_norm=linf())


def qlearning_noise_model() -> NoiseModel:
    """E||w||_inf^2 <= 8 (1 + ||Q||_inf^2)."""
    return NoiseModel(A=8.0, B=8.0, error_norm=linf())


def make_tdn_oracle(mdp: Mdp, policy: np.ndarray, n: int) -> NoisyOracle:
    """n-step TD oracle: mean operator T_n (beta^n-contraction in the
    stationary-weighted norm), fixed point V_pi."""
    from .mdp import tdn_operator

    P_pi = policy_matrix(mdp, policy)
    r_pi = policy_reward(mdp, policy)
    noise = tdn_noise_model(mdp, policy, n)

    def apply(X: np.ndarray) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(X, dtype=float))
        for _ in range(n):
            Y = r_pi[None, :] + mdp.beta * (Y @ P_pi.T)
        return Y

    op = OperatorModel(
        apply=apply,
        contraction_norm=noise.error_norm,
        gamma=mdp.beta**n,
        fixed_point=value_of_policy(mdp, policy),
    )
    # consistency probe: the vectorized path must agree with the reference operator
    probe = np.zeros((1, mdp.n_states))
    if not np.allclose(apply(probe)[0], tdn_operator(mdp, policy, n, probe[0]), atol=1e-12):
        raise AssertionError("vectorized TD operator disagrees with the reference implementation")
    return oracle_from_sampler(TdnSampler(mdp, policy, n), noise, op)


def make_vtrace_oracle(
    mdp: Mdp, target: np.ndarray, behavior: np.ndarray, params: VtraceParams
) -> NoisyOracle:
    """Truncated-importance-sampling oracle: sup-norm contraction with the
    kappa-based modulus; fixed point = value of the clipped policy."""
    from .mdp import vtrace_operator

    gamma = vtrace_contraction_factor(target, behavior, params, mdp.beta)
    fixed = value_of_policy(mdp, clipped_policy(target, behavior, params.rho_bar))
    noise = vtrace_noise_model(params, mdp.beta)

    def apply(X: np.ndarray) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([vtrace_operator(mdp, target, behavior, params, row) for row in Y])

    op = OperatorModel(apply=apply, contraction_norm=linf(), gamma=gamma, fixed_point=fixed)
    return oracle_from_sampler(VtraceSampler(mdp, target, behavior, params), noise, op)


def make_qlearning_oracle(mdp: Mdp) -> NoisyOracle:
    """Q-learning oracle over flattened Q tables: Bellman optimality operator,
    beta-contraction in the sup norm, fixed point Q*."""
    from .mdp import bellman_optimality

    noise = qlearning_noise_model()
    S, A = mdp.n_states, mdp.n_actions

    def apply(X: np.ndarray) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(X, dtype=float)).reshape(-1, S, A)
        vmax = Q.max(axis=2)
        tail = np.einsum("ast,pt->pas", mdp.transitions, vmax).transpose(0, 2, 1)
        return (mdp.rewards[None] + mdp.beta * tail).reshape(-1, S * A)

    probe = np.zeros(S * A)
    if not np.allclose(apply(probe[None])[0].reshape(S, A), bellman_optimality(mdp, probe.reshape(S, A)), atol=1e-12):
        raise AssertionError("vectorized Bellman operator disagrees with the reference implementation")
    op = OperatorModel(
        apply=apply,
        contraction_norm=linf(),
        gamma=mdp.beta,
        fixed_point=optimal_q(mdp).reshape(-1),
    )
    return oracle_from_sampler(QLearningSampler(mdp), noise, op)


# ---------------------------------------------------------------------------
# multi-path runners
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RlRun:
    """Monte-Carlo run of an RL oracle: per-path diagnostics, the fixed point
    the error curves are measured against, and the oracle's certificates."""

    result: MonteCarloResult
    fixed_point: np.ndarray
    gamma: float
    noise: NoiseModel
    primary_label: str


def _run_oracle(
    oracle: NoisyOracle,
    schedule,
    k_max: int,
    paths: int,
    seed: int,
    x0: np.ndarray | None,
    err_norms: dict[str, Norm],
    primary_label: str,
) -> RlRun:
    fixed = oracle.operator.fixed_point
    if x0 is None:
        x0 = np.zeros_like(fixed)
    result = run_monte_carlo(
        oracle.batch,
        x0,
        schedule,
        k_max,
        paths,
        seed,
        x_star=fixed,
        err_norms=err_norms,
    )
    return RlRun(
        result=result,
        fixed_point=fixed,
        gamma=oracle.operator.gamma,
        noise=oracle.noise,
        primary_label=primary_label,
    )


def run_tdn(
    mdp: Mdp,
    policy: np.ndarray,
    n: int,
    schedule,
    k_max: int,
    paths: int,
    seed: int,
    v0: np.ndarray | None = None,
    extra_err_norms: dict[str, Norm] | None = None,
) -> RlRun:
    """n-step TD evaluation from v0 (default zeros); records the squared
    stationary-weighted error to V_pi plus any extra norms."""
    oracle = make_tdn_oracle(mdp, policy, n)
    err_norms = {"lambda": oracle.noise.error_norm}
    err_norms.update(extra_err_norms or {})
    return _run_oracle(oracle, schedule, k_max, paths, seed, v0, err_norms, "lambda")


def run_vtrace(
    mdp: Mdp,
    target: np.ndarray,
    behavior: np.ndarray,
    params: VtraceParams,
    schedule,
    k_max: int,
    paths: int,
    seed: int,
    v0: np.ndarray | None = None,
) -> RlRun:
    """Off-policy evaluation with truncated importance sampling; records the
    squared sup-norm error to the clipped policy's value."""
    oracle = make_vtrace_oracle(mdp, target, behavior, params)
    return _run_oracle(oracle, schedule, k_max, paths, seed, v0, {"linf": linf()}, "linf")


def run_qlearning(
    mdp: Mdp,
    schedule,
    k_max: int,
    paths: int,
    seed: int,
    q0: np.ndarray | None = None,
) -> RlRun:
    """Q-learning on flattened Q tables; records the squared sup-norm error
    to Q*."""
    oracle = make_qlearning_oracle(mdp)
    x0 = None if q0 is None else np.asarray(q0, dtype=float).reshape(-1)
    return _run_oracle(oracle, schedule, k_max, paths, seed, x0, {"linf": linf()}, "linf")
