"""Tabular Markov decision processes and the operators the experiments run on.

Conventions: ``transitions`` has shape (n_actions, n_states, n_states) with
row-stochastic slices P_a; ``rewards`` has shape (n_states, n_actions) with
entries in [0, 1]; ``beta`` in (0, 1) is the discount factor. Policies are
row-stochastic (n_states, n_actions) arrays.

Besides the basic policy algebra (P_pi, R_pi, value, stationary
distribution) this module implements:

* the n-step TD evaluation operator (beta^n-contraction in the
  stationary-weighted norm),
* the off-policy n-step operator with truncated importance-sampling weights
  (clip levels c_bar <= rho_bar), its contraction factor via the
  per-state minimum truncated mass (kappa constants), its fixed point (the
  value of the clipped policy), and its noise constant,
* the Bellman optimality operator for Q tables,
* a direct check of the policy-to-value Lipschitz bound.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .fileio import atomic_write_text

__all__ = [
    "Mdp",
    "VtraceParams",
    "random_mdp",
    "uniform_policy",
    "random_policy",
    "policy_matrix",
    "policy_reward",
    "value_of_policy",
    "stationary_distribution",
    "tdn_operator",
    "clipped_policy",
    "rho_max",
    "kappa_constants",
    "vtrace_operator",
    "vtrace_contraction_factor",
    "vtrace_noise_constant",
    "bellman_optimality",
    "optimal_q",
    "policy_lipschitz_check",
    "save_mdp",
    "load_mdp",
    "dumps_mdp",
    "loads_mdp",
]

_ROW_TOL = 1e-12


@dataclass(frozen=True)
class Mdp:
    """Tabular MDP: transitions (A,S,S) row-stochastic, rewards (S,A) in [0,1],
    discount beta in (0,1)."""

    transitions: np.ndarray
    rewards: np.ndarray
    beta: float

    def __post_init__(self) -> None:
        P, R = self.transitions, self.rewards
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ValueError(f"transitions must have shape (A,S,S), got {P.shape}")
        if R.shape != (P.shape[1], P.shape[0]):
            raise ValueError(f"rewards must have shape (S,A) = {(P.shape[1], P.shape[0])}, got {R.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > _ROW_TOL):
            raise ValueError("transition rows must be nonnegative and sum to 1 within 1e-12")
        if np.any(R < 0) or np.any(R > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if not (0.0 < self.beta < 1.0):
            raise ValueError(f"beta must be in (0,1), got {self.beta}")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0]


@dataclass(frozen=True)
class VtraceParams:
    """Truncation levels and lookahead for the off-policy operator:
    0 <= c_bar <= rho_bar, n >= 1 temporal-difference terms."""

    c_bar: float
    rho_bar: float
    n: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.c_bar <= self.rho_bar):
            raise ValueError(f"need 0 <= c_bar <= rho_bar, got c_bar={self.c_bar}, rho_bar={self.rho_bar}")
        if self.rho_bar <= 0:
            raise ValueError("rho_bar must be positive")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def random_mdp(n_states: int, n_actions: int, beta: float, seed: int) -> Mdp:
    """Random dense MDP: transition rows drawn uniformly from the simplex
    (normalized i.i.d. exponentials), rewards uniform on [0, 1]."""
    if n_states < 1 or n_actions < 1:
        raise ValueError("need at least one state and one action")
    rng = _rng(seed)
    raw = rng.exponential(size=(n_actions, n_states, n_states))
    P = raw / raw.sum(axis=2, keepdims=True)
    R = rng.uniform(size=(n_states, n_actions))
    return Mdp(transitions=P, rewards=R, beta=float(beta))


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def random_policy(n_states: int, n_actions: int, seed: int) -> np.ndarray:
    """Random policy with rows uniform on the simplex."""
    raw = _rng(seed).exponential(size=(n_states, n_actions))
    return raw / raw.sum(axis=1, keepdims=True)


def _check_policy(mdp: Mdp, policy: np.ndarray) -> None:
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy must have shape {(mdp.n_states, mdp.n_actions)}, got {policy.shape}")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("policy rows must be nonnegative and sum to 1")


def policy_matrix(mdp: Mdp, policy: np.ndarray) -> np.ndarray:
    """State-to-state transition matrix P_pi(s,s') = sum_a pi(a|s) P_a(s,s')."""
    _check_policy(mdp, policy)
    return np.einsum("sa,ast->st", policy, mdp.transitions)


def policy_reward(mdp: Mdp, policy: np.ndarray) -> np.ndarray:
    """Expected one-step reward R_pi(s) = sum_a pi(a|s) R(s,a)."""
    _check_policy(mdp, policy)
    return np.sum(policy * mdp.rewards, axis=1)


def value_of_policy(mdp: Mdp, policy: np.ndarray) -> np.ndarray:
    """V_pi = (I - beta P_pi)^{-1} R_pi by direct solve (residual < 1e-10)."""
    P = policy_matrix(mdp, policy)
    r = policy_reward(mdp, policy)
    A = np.eye(mdp.n_states) - mdp.beta * P
    v = np.linalg.solve(A, r)
    resid = float(np.max(np.abs(A @ v - r)))
    if resid >= 1e-10:
        raise RuntimeError(f"value solve residual {resid} >= 1e-10")
    return v


def stationary_distribution(mdp: Mdp, policy: np.ndarray) -> np.ndarray:
    """Unique stationary distribution of P_pi.

    Damped power iteration on (P+I)/2 (same fixed points, aperiodic) to l1
    change < 1e-13, eigenvector fallback; rejects chains whose stationary
    distribution is non-unique (multiplicity of the eigenvalue 1) or has a
    component below 1e-9.
    """
    P = policy_matrix(mdp, policy)
    S = mdp.n_states
    half = 0.5 * (P + np.eye(S))
    lam = np.full(S, 1.0 / S)
    converged = False
    for _ in range(1_000_000):
        nxt = lam @ half
        nxt /= nxt.sum()
        if float(np.abs(nxt - lam).sum()) < 1e-13:
            lam = nxt
            converged = True
            break
        lam = nxt
    if not converged:
        w, v = np.linalg.eig(P.T)
        idx = int(np.argmin(np.abs(w - 1.0)))
        vec = np.real(v[:, idx])
        s = vec.sum()
        if abs(s) < 1e-12:
            raise RuntimeError("stationary distribution eigenvector is degenerate")
        lam = vec / s
    sv = np.linalg.svd(P.T - np.eye(S), compute_uv=False)
    if int(np.sum(sv < 1e-10)) != 1:
        raise ValueError("stationary distribution is not unique for this policy")
    if np.any(lam < 1e-9):
        raise RuntimeError(f"stationary distribution has a component below 1e-9: min = {lam.min()}")
    resid = float(np.max(np.abs(lam @ P - lam)))
    if resid > 1e-10:
        raise RuntimeError(f"stationary distribution residual {resid} > 1e-10")
    return lam / lam.sum()


def tdn_operator(mdp: Mdp, policy: np.ndarray, n: int, V: np.ndarray) -> np.ndarray:
    """n-step TD evaluation operator
    T_n(V) = sum_{i<n} beta^i P_pi^i R_pi + beta^n P_pi^n V (Horner form)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    P = policy_matrix(mdp, policy)
    r = policy_reward(mdp, policy)
    y = np.asarray(V, dtype=float)
    for _ in range(n):
        y = r + mdp.beta * (P @ y)
    return y


# ---------------------------------------------------------------------------
# off-policy operator with truncated importance sampling
# ---------------------------------------------------------------------------


def _ratio(target: np.ndarray, behavior: np.ndarray) -> np.ndarray:
    """Importance ratios pi/pi' with coverage check (pi > 0 => pi' > 0)."""
    if np.any((target > 0) & (behavior <= 0)):
        raise ValueError("behavior policy does not cover the target policy (pi(a|s) > 0 where pi'(a|s) = 0)")
    out = np.zeros_like(target)
    mask = behavior > 0
    out[mask] = target[mask] / behavior[mask]
    return out


def rho_max(target: np.ndarray, behavior: np.ndarray) -> float:
    """Largest importance ratio max_{s,a} pi(a|s)/pi'(a|s) over supported pairs."""
    return float(np.max(_ratio(target, behavior)))


def clipped_policy(target: np.ndarray, behavior: np.ndarray, rho_bar: float) -> np.ndarray:
    """The policy actually evaluated under truncation level rho_bar:
    pi_rho(a|s) proportional to min(rho_bar pi'(a|s), pi(a|s))."""
    if rho_bar <= 0:
        raise ValueError("rho_bar must be positive")
    _ratio(target, behavior)
    numer = np.minimum(rho_bar * behavior, target)
    denom = numer.sum(axis=1, keepdims=True)
    if np.any(denom <= 0):
        raise ValueError("truncated policy has a zero row; increase rho_bar or fix coverage")
    return numer / denom


def kappa_constants(
    target: np.ndarray, behavior: np.ndarray, params: VtraceParams
) -> tuple[float, float]:
    """Per-state minimum truncated masses
    kappa_c = min_s sum_a min(c_bar pi'(a|s), pi(a|s)) and kappa_rho likewise
    with rho_bar; requires 0 < kappa_c <= kappa_rho <= 1."""
    _ratio(target, behavior)
    kc = float(np.min(np.sum(np.minimum(params.c_bar * behavior, target), axis=1)))
    kr = float(np.min(np.sum(np.minimum(params.rho_bar * behavior, target), axis=1)))
    if kc <= 0:
        raise ValueError(
            "kappa_c = 0: the truncation level c_bar and behavior policy leave no mass on the target policy"
        )
    if not (kc <= kr <= 1.0 + 1e-12):
        raise AssertionError(f"expected 0 < kappa_c <= kappa_rho <= 1, got ({kc}, {kr})")
    return kc, min(kr, 1.0)


def _vtrace_tables(
    mdp: Mdp, target: np.ndarray, behavior: np.ndarray, params: VtraceParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(c-weights, rho-weights, behavior) tables min(clip, pi/pi') per (s,a)."""
    ratio = _ratio(target, behavior)
    return np.minimum(params.c_bar, ratio), np.minimum(params.rho_bar, ratio), behavior


def vtrace_operator(
    mdp: Mdp,
    target: np.ndarray,
    behavior: np.ndarray,
    params: VtraceParams,
    V: np.ndarray,
) -> np.ndarray:
    """Exact expected off-policy operator

        T(V) = V + sum_{t=0}^{n-1} beta^t Q_c^t b,

    where Q_c(s,s') = sum_a pi'(a|s) min(c_bar, ratio) P_a(s,s') and
    b(s) = sum_a pi'(a|s) min(rho_bar, ratio) (R(s,a) + beta (P_a V)(s) - V(s)).
    """
    _check_policy(mdp, target)
    _check_policy(mdp, behavior)
    cw, rw, _ = _vtrace_tables(mdp, target, behavior, params)
    V = np.asarray(V, dtype=float)
    Qc = np.einsum("sa,ast->st", behavior * cw, mdp.transitions)
    PV = np.einsum("ast,t->as", mdp.transitions, V)
    b = np.sum(behavior * rw * (mdp.rewards + mdp.beta * PV.T - V[:, None]), axis=1)
    acc = b.copy()
    cur = b
    scale = 1.0
    for _ in range(1, params.n):
        cur = Qc @ cur
        scale *= mdp.beta
        acc += scale * cur
    return V + acc


def vtrace_contraction_factor(
    target: np.ndarray, behavior: np.ndarray, params: VtraceParams, beta: float
) -> float:
    """Contraction modulus of the truncated off-policy operator in the sup
    norm: 1 - (1-beta) (1 - (beta kappa_c)^n) kappa_rho / (1 - beta kappa_c)."""
    if not (0.0 < beta < 1.0):
        raise ValueError(f"beta must be in (0,1), got {beta}")
    kc, kr = kappa_constants(target, behavior, params)
    g = 1.0 - (1.0 - beta) * (1.0 - (beta * kc) ** params.n) * kr / (1.0 - beta * kc)
    if not (0.0 < g < 1.0):
        raise AssertionError(f"contraction factor {g} outside (0,1)")
    return g


def vtrace_noise_constant(params: VtraceParams, beta: float) -> float:
    """Constant A with E||w||_inf^2 <= A (1 + ||V||_inf^2) for the sampled
    off-policy update. Piecewise in beta*c_bar (discontinuous at
    beta*c_bar = 1, where the n-dependent middle branch applies):

        beta c_bar < 1:  32 rho_bar^2 / (1 - beta c_bar)^2
        beta c_bar = 1:  32 rho_bar^2 n^2
        beta c_bar > 1:  32 rho_bar^2 (beta c_bar)^{2n} / (beta c_bar - 1)^2
    """
    bc = beta * params.c_bar
    r2 = 32.0 * params.rho_bar**2
    if bc < 1.0:
        return r2 / (1.0 - bc) ** 2
    if bc == 1.0:
        return r2 * params.n**2
    return r2 * bc ** (2 * params.n) / (bc - 1.0) ** 2


# ---------------------------------------------------------------------------
# Q tables
# ---------------------------------------------------------------------------


def bellman_optimality(mdp: Mdp, Q: np.ndarray) -> np.ndarray:
    """Bellman optimality operator
    T(Q)(s,a) = R(s,a) + beta sum_{s'} P_a(s,s') max_{a'} Q(s',a')."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"Q must have shape {(mdp.n_states, mdp.n_actions)}, got {Q.shape}")
    vmax = Q.max(axis=1)
    return mdp.rewards + mdp.beta * np.einsum("ast,t->as", mdp.transitions, vmax).T


def optimal_q(mdp: Mdp, tol: float = 1e-13) -> np.ndarray:
    """Fixed point of the Bellman optimality operator by value iteration
    (sup-norm residual below tol * scale)."""
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    scale = max(1.0, 1.0 / (1.0 - mdp.beta))
    for _ in range(1_000_000):
        nxt = bellman_optimality(mdp, Q)
        if float(np.max(np.abs(nxt - Q))) < tol * scale * (1.0 - mdp.beta):
            return nxt
        Q = nxt
    raise RuntimeError("value iteration did not converge")


def policy_lipschitz_check(mdp: Mdp, pi1: np.ndarray, pi2: np.ndarray) -> tuple[float, float, bool]:
    """Check ||V_pi1 - V_pi2||_inf <= 2/(1-beta)^2 max_s sum_a |pi1 - pi2|.

    Returns (lhs, rhs, ok) with slack 1e-10."""
    lhs = float(np.max(np.abs(value_of_policy(mdp, pi1) - value_of_policy(mdp, pi2))))
    rhs = 2.0 / (1.0 - mdp.beta) ** 2 * float(np.max(np.sum(np.abs(pi1 - pi2), axis=1)))
    return lhs, rhs, lhs <= rhs + 1e-10


# ---------------------------------------------------------------------------
# serialization (structured text, exact round-trip via repr floats)
# ---------------------------------------------------------------------------


def dumps_mdp(mdp: Mdp) -> str:
    buf = io.StringIO()
    buf.write("mdp-v1\n")
    buf.write(f"n_states {mdp.n_states}\n")
    buf.write(f"n_actions {mdp.n_actions}\n")
    buf.write(f"beta {mdp.beta!r}\n")
    buf.write("transitions\n")
    for a in range(mdp.n_actions):
        for s in range(mdp.n_states):
            buf.write(" ".join(repr(float(v)) for v in mdp.transitions[a, s]) + "\n")
    buf.write("rewards\n")
    for s in range(mdp.n_states):
        buf.write(" ".join(repr(float(v)) for v in mdp.rewards[s]) + "\n")
    return buf.getvalue()


def loads_mdp(text: str) -> Mdp:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "mdp-v1":
        raise ValueError("not an mdp-v1 document")
    header = {}
    idx = 1
    for _ in range(3):
        key, val = lines[idx].split(maxsplit=1)
        header[key] = val
        idx += 1
    S, A, beta = int(header["n_states"]), int(header["n_actions"]), float(header["beta"])
    if lines[idx] != "transitions":
        raise ValueError("expected 'transitions' section")
    idx += 1
    P = np.array([[float(v) for v in lines[idx + i].split()] for i in range(A * S)]).reshape(A, S, S)
    idx += A * S
    if lines[idx] != "rewards":
        raise ValueError("expected 'rewards' section")
    idx += 1
    R = np.array([[float(v) for v in lines[idx + i].split()] for i in range(S)]).reshape(S, A)
    return Mdp(transitions=P, rewards=R, beta=beta)


def save_mdp(mdp: Mdp, path: str) -> None:
    atomic_write_text(path, dumps_mdp(mdp))


def load_mdp(path: str) -> Mdp:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_mdp(fh.read())
