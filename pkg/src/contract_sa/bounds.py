"""Finite-sample convergence bounds for contractive stochastic approximation.

The iteration is x_{k+1} = x_k + eps_k (H(x_k) - x_k + w_k) with H a
gamma-contraction in ||.||_c, martingale-difference noise satisfying
E[||w||_e^2 | F_k] <= A + B ||x_k||_e^2, and positive non-increasing
stepsizes. All bounds are driven by four constants (alpha1..alpha4) derived
from the smoothing envelope of 1/2 ||.||_c^2 and two norm-equivalence pairs:
(ell_cs, u_cs) from ||.||_c to the smoothing norm and (ell_es, u_es) from the
noise norm ||.||_e to the smoothing norm.

Bound families:

* ``theorem1_bound``   -- general non-increasing schedules (running-product form),
* ``corollary1_bound`` -- constant stepsize (geometric + plateau),
* ``corollary2_bound`` -- polynomial stepsizes eps/(k+K)^xi, four regimes,
* ``corollary3_constants`` -- dimension-aware sup-norm constants with the
  smoothing norm l_p, p = 4 ln d,
* ``theorem2_bound``   -- residual bounds for non-expansive (gamma = 1) maps,
* ``theorem3_bound``   -- off-policy truncated-importance-sampling evaluation,
* ``theorem4_bound``   -- n-step temporal-difference evaluation,
* ``theorem5a_bound`` / ``theorem5b_bound`` -- tabular Q-learning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .norms import EquivalenceConstants

__all__ = [
    "AlphaConstants",
    "compute_alphas",
    "corollary3_constants",
    "StepsizeSchedule",
    "build_schedule",
    "theorem1_bound",
    "corollary1_bound",
    "corollary2_bound",
    "theorem2_bound",
    "theorem3_schedule",
    "theorem3_bound",
    "theorem4_eps_cap",
    "theorem4_bound",
    "theorem5a_eps_cap",
    "theorem5a_bound",
    "theorem5b_schedule",
    "theorem5b_bound",
]


@dataclass(frozen=True)
class AlphaConstants:
    """The four drift constants plus the inputs they were derived from."""

    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float
    gamma: float
    mu: float
    L: float
    ell_cs: float
    u_cs: float
    ell_es: float
    u_es: float
    B: float

    def __post_init__(self) -> None:
        if not (self.alpha1 >= 1.0 - 1e-12):
            raise ValueError(f"alpha1 must be >= 1, got {self.alpha1}")
        if not (self.alpha2 > 0.0):
            raise ValueError(
                f"alpha2 = 1 - gamma*sqrt(alpha1) must be positive, got {self.alpha2} "
                "(smoothing norm too far from the contraction norm for this gamma)"
            )
        if not (self.alpha3 > 0.0 and self.alpha4 > 0.0):
            raise ValueError("alpha3 and alpha4 must be positive")


def compute_alphas(
    gamma: float,
    mu: float,
    L: float,
    equiv_cs: EquivalenceConstants,
    equiv_es: EquivalenceConstants,
    B: float,
) -> AlphaConstants:
    """Drift constants from the contraction modulus, envelope parameters, and
    the two norm-equivalence pairs (contraction->smoothing, noise->smoothing).

        alpha1 = (1 + mu/ell_cs^2) / (1 + mu/u_cs^2)
        alpha2 = 1 - gamma sqrt(alpha1)              (must be > 0)
        alpha3 = 4 u_cs^2 u_es^2 (B+2) L (ell_cs^2 + mu) / (mu ell_cs^2 ell_es^2)
        alpha4 = alpha3 / (2 (B+2))
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must be in (0,1), got {gamma}")
    if mu <= 0 or L <= 0:
        raise ValueError("mu and L must be positive")
    if B < 0:
        raise ValueError("B must be nonnegative")
    ell_cs, u_cs = equiv_cs.lower, equiv_cs.upper
    ell_es, u_es = equiv_es.lower, equiv_es.upper
    alpha1 = (1.0 + mu / ell_cs**2) / (1.0 + mu / u_cs**2)
    alpha2 = 1.0 - gamma * math.sqrt(alpha1)
    alpha3 = 4.0 * u_cs**2 * u_es**2 * (B + 2.0) * L * (ell_cs**2 + mu) / (mu * ell_cs**2 * ell_es**2)
    alpha4 = alpha3 / (2.0 * (B + 2.0))
    return AlphaConstants(
        alpha1=alpha1,
        alpha2=alpha2,
        alpha3=alpha3,
        alpha4=alpha4,
        gamma=gamma,
        mu=mu,
        L=L,
        ell_cs=ell_cs,
        u_cs=u_cs,
        ell_es=ell_es,
        u_es=u_es,
        B=B,
    )


def corollary3_constants(gamma: float, d: int, B: float) -> AlphaConstants:
    """Sup-norm contraction/noise with smoothing norm l_p, p = 4 ln d.

    Uses mu = (1/2 + 1/(2 gamma))^2 - 1, which guarantees
    alpha2 >= (1 - gamma)/2. Checks the dimension-free caps that make the
    sup-norm bounds explicit:
    alpha1 <= sqrt(e), alpha3 <= 32 e (B+2) ln d / (1-gamma),
    alpha4 <= 16 e ln d / (1-gamma).
    """
    if d < 2:
        raise ValueError(f"corollary3_constants requires dimension >= 2, got {d}")
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must be in (0,1), got {gamma}")
    p = 4.0 * math.log(d)
    if p < 2.0:
        raise ValueError(f"dimension {d} gives p = 4 ln d = {p} < 2")
    mu = (0.5 + 0.5 / gamma) ** 2 - 1.0
    L = p - 1.0
    eq = EquivalenceConstants(1.0, d ** (1.0 / p))  # d^{1/p} = e^{1/4}, so u_cs^2 = sqrt(e)
    alphas = compute_alphas(gamma, mu, L, eq, eq, B)
    sqrt_e = math.sqrt(math.e)
    ln_d = math.log(d)
    slack = 1.0 + 1e-12
    if not (alphas.alpha1 <= sqrt_e * slack):
        raise AssertionError(f"alpha1 = {alphas.alpha1} exceeds sqrt(e)")
    if not (alphas.alpha2 >= (1.0 - gamma) / 2.0 / slack):
        raise AssertionError(f"alpha2 = {alphas.alpha2} below (1-gamma)/2")
    if not (alphas.alpha3 <= 32.0 * math.e * (B + 2.0) * ln_d / (1.0 - gamma) * slack):
        raise AssertionError(f"alpha3 = {alphas.alpha3} exceeds 32 e (B+2) ln d/(1-gamma)")
    if not (alphas.alpha4 <= 16.0 * math.e * ln_d / (1.0 - gamma) * slack):
        raise AssertionError(f"alpha4 = {alphas.alpha4} exceeds 16 e ln d/(1-gamma)")
    return alphas


# ---------------------------------------------------------------------------
# stepsize schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepsizeSchedule:
    """Constant (eps_k = eps) or polynomial (eps_k = eps/(k+K)^xi) stepsizes."""

    kind: str  # "constant" | "polynomial"
    eps: float
    xi: float | None = None
    K: float | None = None

    def __post_init__(self) -> None:
        # The engine accepts eps = 0 (frozen iterates); the bound
        # constructors all require strictly positive stepsizes themselves.
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if self.kind == "constant":
            if self.xi is not None or self.K is not None:
                raise ValueError("constant schedules take no xi/K")
        elif self.kind == "polynomial":
            if self.xi is None or not (0.0 < self.xi <= 1.0):
                raise ValueError(f"polynomial schedules need xi in (0,1], got {self.xi}")
            if self.K is None or self.K < 1.0:
                raise ValueError(f"polynomial schedules need K >= 1, got {self.K}")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def eps_at(self, k):
        """Stepsize at iteration k (k may be an int or an integer array)."""
        k = np.asarray(k, dtype=float)
        if self.kind == "constant":
            out = np.full_like(k, self.eps)
        else:
            out = self.eps / (k + self.K) ** self.xi
        return float(out) if out.ndim == 0 else out


def build_schedule(alphas: AlphaConstants, eps: float, xi: float | None = None) -> StepsizeSchedule:
    """Schedule whose first stepsize is guaranteed <= alpha2/alpha3.

    xi is None -> constant schedule (eps itself must satisfy the cap);
    xi = 1    -> K = max(1, eps alpha3/alpha2);
    xi in (0,1) -> K = max(1, (eps alpha3/alpha2)^{1/xi}, (2 xi/(alpha2 eps))^{1/(1-xi)}).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    a2, a3 = alphas.alpha2, alphas.alpha3
    if xi is None:
        cap = a2 / a3
        if eps > cap * (1.0 + 1e-12):
            raise ValueError(f"constant stepsize {eps} exceeds alpha2/alpha3 = {cap}")
        return StepsizeSchedule(kind="constant", eps=eps)
    if not (0.0 < xi <= 1.0):
        raise ValueError(f"xi must be in (0,1], got {xi}")
    if xi == 1.0:
        K = max(1.0, eps * a3 / a2)
    else:
        K = max(1.0, (eps * a3 / a2) ** (1.0 / xi), (2.0 * xi / (a2 * eps)) ** (1.0 / (1.0 - xi)))
    return StepsizeSchedule(kind="polynomial", eps=eps, xi=xi, K=K)


# ---------------------------------------------------------------------------
# general and specialized bounds
# ---------------------------------------------------------------------------


def _noise_scale(A: float, B: float, x_star_norm_c: float) -> float:
    return A + 2.0 * B * x_star_norm_c**2


def theorem1_bound(
    alphas: AlphaConstants,
    schedule: StepsizeSchedule,
    initial_err_c_sq: float,
    A: float,
    B: float,
    x_star_norm_c: float,
    k_max: int,
) -> np.ndarray:
    """Bound on E||x_k - x*||_c^2 for k = 0..k_max under any schedule built
    so that eps_0 <= alpha2/alpha3:

        alpha1 e0 prod_{j<k}(1-alpha2 eps_j)
        + alpha4 (A + 2B ||x*||_c^2) sum_{i<k} eps_i^2 prod_{j=i+1}^{k-1}(1-alpha2 eps_j),

    evaluated by the running recurrences P_{k+1} = (1-alpha2 eps_k) P_k and
    S_{k+1} = (1-alpha2 eps_k) S_k + eps_k^2.
    """
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    eps0 = schedule.eps_at(0)
    cap = alphas.alpha2 / alphas.alpha3
    if eps0 > cap * (1.0 + 1e-12):
        raise ValueError(
            f"first stepsize {eps0} exceeds alpha2/alpha3 = {cap}; build the schedule with build_schedule"
        )
    noise = _noise_scale(A, B, x_star_norm_c)
    out = np.empty(k_max + 1)
    P, S = 1.0, 0.0
    out[0] = alphas.alpha1 * initial_err_c_sq
    for k in range(k_max):
        e = float(schedule.eps_at(k))
        fac = 1.0 - alphas.alpha2 * e
        P *= fac
        S = fac * S + e * e
        out[k + 1] = alphas.alpha1 * initial_err_c_sq * P + alphas.alpha4 * noise * S
    return out


def corollary1_bound(
    alphas: AlphaConstants,
    eps: float,
    initial_err_c_sq: float,
    A: float,
    B: float,
    x_star_norm_c: float,
    k,
) -> np.ndarray | float:
    """Constant-stepsize bound (eps <= alpha2/alpha3):

        alpha1 e0 (1 - alpha2 eps)^k + (A + 2B||x*||_c^2) alpha4 eps / alpha2.
    """
    cap = alphas.alpha2 / alphas.alpha3
    if not (0.0 < eps <= cap * (1.0 + 1e-12)):
        raise ValueError(f"constant stepsize {eps} outside (0, alpha2/alpha3 = {cap}]")
    k = np.asarray(k, dtype=float)
    noise = _noise_scale(A, B, x_star_norm_c)
    out = (
        alphas.alpha1 * initial_err_c_sq * (1.0 - alphas.alpha2 * eps) ** k
        + noise * alphas.alpha4 * eps / alphas.alpha2
    )
    return float(out) if out.ndim == 0 else out


def corollary2_bound(
    alphas: AlphaConstants,
    eps: float,
    xi: float,
    initial_err_c_sq: float,
    A: float,
    B: float,
    x_star_norm_c: float,
    k,
) -> np.ndarray | float:
    """Polynomial-stepsize bound for eps_k = eps/(k+K)^xi with K from
    ``build_schedule``. Four regimes: xi = 1 with eps alpha2 below / at /
    above 1, and xi in (0,1)."""
    schedule = build_schedule(alphas, eps, xi)
    K = schedule.K
    k = np.asarray(k, dtype=float)
    a1, a2, a4 = alphas.alpha1, alphas.alpha2, alphas.alpha4
    e0 = initial_err_c_sq
    noise = _noise_scale(A, B, x_star_norm_c)
    if xi == 1.0:
        t = eps * a2
        if t < 1.0:
            out = a1 * e0 * (K / (k + K)) ** t + (4.0 * eps**2 * a4 / (1.0 - t)) * noise / (k + K) ** t
        elif t == 1.0:
            out = a1 * e0 * K / (k + K) + (4.0 * a4 / a2**2) * noise * np.log(k + K) / (k + K)
        else:
            out = a1 * e0 * (K / (k + K)) ** t + (4.0 * math.e * eps**2 * a4 / (t - 1.0)) * noise / (k + K)
    else:
        decay = np.exp(-(a2 * eps / (1.0 - xi)) * ((k + K) ** (1.0 - xi) - K ** (1.0 - xi)))
        out = a1 * e0 * decay + (2.0 * eps * a4 / a2) * noise / (k + K) ** xi
    return float(out) if out.ndim == 0 else out


def theorem2_bound(D: float, A: float, eps: float, regime: str, k) -> np.ndarray | float:
    """Bound on min_{i<=k} E||H(x_i) - x_i||_2^2 for a non-expansive H with
    fixed points, B = 0 noise (E||w||_2^2 <= A), and D an upper bound on
    ||x_0 - x*||_2 over fixed points x*.

    regimes: "constant" (eps_k = eps in (0,1)), "inv_sqrt"
    (eps_k = eps/sqrt(k+1), bound defined for k >= 1), "inv_k"
    (eps_k = eps/(k+1), bound defined for k >= 1).
    """
    if not (0.0 < eps < 1.0):
        raise ValueError(f"eps must be in (0,1), got {eps}")
    if D < 0 or A < 0:
        raise ValueError("D and A must be nonnegative")
    k = np.asarray(k, dtype=float)
    if regime == "constant":
        out = D**2 / ((k + 1.0) * (1.0 - eps) * eps) + A * eps / (1.0 - eps)
    elif regime == "inv_sqrt":
        if np.any(k < 1):
            raise ValueError("inv_sqrt bound is defined for k >= 1")
        out = (D**2 + A * eps**2 * (1.0 + np.log(k))) / (2.0 * (1.0 - eps) * eps * (np.sqrt(k + 1.0) - 1.0))
    elif regime == "inv_k":
        if np.any(k < 1):
            raise ValueError("inv_k bound is defined for k >= 1")
        out = (D**2 + 2.0 * A * eps**2) / ((1.0 - eps) * eps * np.log(k + 1.0))
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# algorithm-specific compositions
# ---------------------------------------------------------------------------


def theorem3_schedule(gamma: float, A: float, n_states: int) -> StepsizeSchedule:
    """Prescribed schedule for off-policy evaluation with truncated
    importance sampling: eps_k = eps/(k+K), eps = 4/(1-gamma),
    K = 64 (A+2) log|S| / (1-gamma)^3."""
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must be in (0,1), got {gamma}")
    if n_states < 2:
        raise ValueError("need at least 2 states for the log|S| factor")
    eps = 4.0 / (1.0 - gamma)
    K = 64.0 * (A + 2.0) * math.log(n_states) / (1.0 - gamma) ** 3
    return StepsizeSchedule(kind="polynomial", eps=eps, xi=1.0, K=max(1.0, K))


def theorem3_bound(
    gamma: float,
    A: float,
    n_states: int,
    initial_err_inf_sq: float,
    fixed_point_norm_inf_sq: float,
    k,
) -> np.ndarray | float:
    """Sup-norm error bound for off-policy evaluation under the prescribed
    schedule:

        1024 e^2 (||V_0 - V^fix||_inf^2 + 2 ||V^fix||_inf^2 + 1) (A+2) log|S|
        / ((1-gamma)^3 (k + K)).
    """
    schedule = theorem3_schedule(gamma, A, n_states)
    k = np.asarray(k, dtype=float)
    num = (
        1024.0
        * math.e**2
        * (initial_err_inf_sq + 2.0 * fixed_point_norm_inf_sq + 1.0)
        * (A + 2.0)
        * math.log(n_states)
    )
    out = num / ((1.0 - gamma) ** 3 * (k + schedule.K))
    return float(out) if out.ndim == 0 else out


def theorem4_eps_cap(beta: float, n: int) -> float:
    """Largest constant stepsize covered by the n-step TD bound:
    (1 - beta^n) / (16 (1 + beta^{2n}))."""
    if not (0.0 < beta < 1.0):
        raise ValueError(f"beta must be in (0,1), got {beta}")
    if n < 1:
        raise ValueError("n must be >= 1")
    return (1.0 - beta**n) / (16.0 * (1.0 + beta ** (2 * n)))


def theorem4_bound(
    beta: float,
    n: int,
    eps: float,
    initial_err_lambda_sq: float,
    v_pi_norm_lambda_sq: float,
    k,
) -> np.ndarray | float:
    """Stationary-weighted error bound for n-step TD with constant stepsize
    eps <= theorem4_eps_cap:

        ||V_0 - V_pi||_L^2 (1 - (1-beta^n) eps)^k
        + (8/(1-beta^n)) ((1-beta^n)^2/(1-beta)^2 + 2 beta^{2n} ||V_pi||_L^2) eps.
    """
    cap = theorem4_eps_cap(beta, n)
    if not (0.0 < eps <= cap * (1.0 + 1e-12)):
        raise ValueError(f"eps = {eps} outside (0, {cap}] for beta={beta}, n={n}")
    k = np.asarray(k, dtype=float)
    bn = beta**n
    noise = (1.0 - bn) ** 2 / (1.0 - beta) ** 2 + 2.0 * beta ** (2 * n) * v_pi_norm_lambda_sq
    out = initial_err_lambda_sq * (1.0 - (1.0 - bn) * eps) ** k + (8.0 / (1.0 - bn)) * noise * eps
    return float(out) if out.ndim == 0 else out


def _log_sa(n_states: int, n_actions: int) -> float:
    sa = n_states * n_actions
    if sa < 2:
        raise ValueError("need |S||A| >= 2 for the log(|S||A|) factor")
    return math.log(sa)


def theorem5a_eps_cap(beta: float, n_states: int, n_actions: int) -> float:
    """Largest constant stepsize covered by the Q-learning bound:
    (1-beta)^2 / (640 e log(|S||A|))."""
    if not (0.0 < beta < 1.0):
        raise ValueError(f"beta must be in (0,1), got {beta}")
    return (1.0 - beta) ** 2 / (640.0 * math.e * _log_sa(n_states, n_actions))


def theorem5a_bound(
    beta: float,
    n_states: int,
    n_actions: int,
    eps: float,
    initial_err_inf_sq: float,
    q_star_norm_inf_sq: float,
    k,
) -> np.ndarray | float:
    """Sup-norm error bound for constant-stepsize Q-learning
    (eps <= theorem5a_eps_cap):

        (3/2) ||Q_0 - Q*||_inf^2 (1 - (1-beta) eps / 2)^k
        + (1 + 2 ||Q*||_inf^2) 256 e log(|S||A|) eps / (1-beta)^2.
    """
    cap = theorem5a_eps_cap(beta, n_states, n_actions)
    if not (0.0 < eps <= cap * (1.0 + 1e-12)):
        raise ValueError(f"eps = {eps} outside (0, {cap}]")
    k = np.asarray(k, dtype=float)
    out = 1.5 * initial_err_inf_sq * (1.0 - (1.0 - beta) * eps / 2.0) ** k + (
        1.0 + 2.0 * q_star_norm_inf_sq
    ) * 256.0 * math.e * _log_sa(n_states, n_actions) * eps / (1.0 - beta) ** 2
    return float(out) if out.ndim == 0 else out


def theorem5b_schedule(beta: float, n_states: int, n_actions: int) -> StepsizeSchedule:
    """Prescribed Q-learning schedule eps_k = eps/(k+K) with eps = 4/(1-beta)
    and K = 640 e log(|S||A|) / (1-beta)^3."""
    if not (0.0 < beta < 1.0):
        raise ValueError(f"beta must be in (0,1), got {beta}")
    K = 640.0 * math.e * _log_sa(n_states, n_actions) / (1.0 - beta) ** 3
    return StepsizeSchedule(kind="polynomial", eps=4.0 / (1.0 - beta), xi=1.0, K=max(1.0, K))


def theorem5b_bound(
    beta: float,
    n_states: int,
    n_actions: int,
    initial_err_inf_sq: float,
    q_star_norm_inf_sq: float,
    k,
) -> np.ndarray | float:
    """Sup-norm error bound for Q-learning under the prescribed 1/(k+K)
    schedule:

        8192 e^2 (1 + 2 ||Q*||_inf^2 + ||Q_0 - Q*||_inf^2) log(|S||A|)
        / ((1-beta)^3 (k + K)).
    """
    schedule = theorem5b_schedule(beta, n_states, n_actions)
    k = np.asarray(k, dtype=float)
    num = (
        8192.0
        * math.e**2
        * (1.0 + 2.0 * q_star_norm_inf_sq + initial_err_inf_sq)
        * _log_sa(n_states, n_actions)
    )
    out = num / ((1.0 - beta) ** 3 * (k + schedule.K))
    return float(out) if out.ndim == 0 else out
