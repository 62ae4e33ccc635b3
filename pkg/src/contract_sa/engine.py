"""Stochastic approximation engine.

Runs x_{k+1} = x_k + eps_k (sample_k - x_k) where sample_k is an unbiased
draw of H(x_k) + w_k, with per-path counter-based RNG streams
(Philox seeded by (base_seed, path_index)), an exponentially thinned
recording grid, Kahan-compensated Monte-Carlo aggregation, and a one-step
drift verifier for the envelope Lyapunov function.

Two execution paths produce bit-identical iterates:

* :func:`run_sa` / :func:`run_averaged` -- one path, any callable oracle;
* :func:`run_monte_carlo` -- all paths at once for oracles exposing the
  :class:`BatchSampler` interface (pre-drawn randomness blocks, vectorized
  updates). Each path consumes exactly the stream it would consume alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .bounds import StepsizeSchedule
from .envelope import EnvelopeSpec, evaluate, evaluate_batch
from .norms import Norm, eval_norm, linf

__all__ = [
    "path_rng",
    "record_grid",
    "kahan_mean_stderr",
    "OperatorModel",
    "NoiseModel",
    "BatchSampler",
    "NoisyOracle",
    "oracle_from_sampler",
    "RunRecord",
    "CurveStats",
    "MonteCarloResult",
    "run_sa",
    "run_averaged",
    "run_monte_carlo",
    "DriftCheck",
    "verify_drift",
    "gaussian_average_experiment",
    "fit_log_affine",
]

_DENSE_RECORD_LIMIT = 1000
_RECORD_GROWTH = 1.05
_BLOCK_FLOAT_BUDGET = 8_000_000


def path_rng(base_seed: int, path_index: int) -> np.random.Generator:
    """Counter-based per-path stream: Philox keyed by (base_seed, path_index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(base_seed), int(path_index)))))


def record_grid(k_max: int) -> np.ndarray:
    """Recorded iteration indices: every k up to min(1000, k_max), then
    ceil(1.05^j), always including k_max."""
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    ks = set(range(0, min(_DENSE_RECORD_LIMIT, k_max) + 1))
    v = float(_DENSE_RECORD_LIMIT)
    while v < k_max:
        v *= _RECORD_GROWTH
        k = int(np.ceil(v))
        if k <= k_max:
            ks.add(k)
    ks.add(k_max)
    return np.array(sorted(ks), dtype=np.int64)


def kahan_mean_stderr(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Compensated mean and standard error over the last axis.

    Two passes of Kahan summation (sum, then squared deviations); the result
    is independent of path order to well below 1e-10.
    """
    M = np.atleast_2d(np.asarray(values, dtype=float))
    n = M.shape[-1]
    if n < 1:
        raise ValueError("need at least one sample")

    def ksum(rows: np.ndarray) -> np.ndarray:
        total = np.zeros(rows.shape[:-1])
        comp = np.zeros_like(total)
        for i in range(rows.shape[-1]):
            y = rows[..., i] - comp
            t = total + y
            comp = (t - total) - y
            total = t
        return total

    mean = ksum(M) / n
    if n == 1:
        se = np.zeros_like(mean)
    else:
        dev = M - mean[..., None]
        var = ksum(dev * dev) / (n - 1)
        se = np.sqrt(np.maximum(var, 0.0) / n)
    if np.asarray(values).ndim == 1:
        return float(mean[0]), float(se[0])
    return mean, se


# ---------------------------------------------------------------------------
# model interfaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OperatorModel:
    """Deterministic mean operator H: apply (vectorized over stacked rows),
    its contraction norm and modulus (gamma = 1 means non-expansive), and its
    fixed point when known."""

    apply: Callable[[np.ndarray], np.ndarray]
    contraction_norm: Norm
    gamma: float
    fixed_point: np.ndarray | None = None


@dataclass(frozen=True)
class NoiseModel:
    """Martingale-difference noise envelope E[||w||_e^2 | x] <= A + B ||x||_e^2."""

    A: float
    B: float
    error_norm: Norm

    def __post_init__(self) -> None:
        if self.A < 0 or self.B < 0:
            raise ValueError("noise constants A, B must be nonnegative")


class BatchSampler(Protocol):
    """Vectorizable sampled operator: ``draw`` pulls the per-iteration raw
    randomness block for one path, ``apply`` maps stacked iterates and blocks
    to stacked samples of H(x) + w."""

    dim: int
    block_width: int

    def draw(self, rng: np.random.Generator, n_iters: int) -> np.ndarray: ...

    def apply(self, X: np.ndarray, U: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class NoisyOracle:
    """Sampled operator x -> H(x) + w with its noise envelope, optional mean
    operator (for diagnostics and residuals), and optional batch interface."""

    sample: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    noise: NoiseModel
    operator: OperatorModel | None = None
    batch: BatchSampler | None = None


def oracle_from_sampler(sampler: BatchSampler, noise: NoiseModel, operator: OperatorModel | None) -> NoisyOracle:
    """Wrap a BatchSampler as a single-path oracle consuming the identical
    randomness stream (one block per call)."""

    def sample(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        U = sampler.draw(rng, 1)
        return sampler.apply(x[None, :], U.reshape(1, -1))[0]

    return NoisyOracle(sample=sample, noise=noise, operator=operator, batch=sampler)


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    """Diagnostics of one path at the recorded iterations."""

    ks: np.ndarray
    x_final: np.ndarray
    err_c_sq: np.ndarray | None = None
    m_sq: np.ndarray | None = None
    resid_sq: np.ndarray | None = None
    resid_min_sq: np.ndarray | None = None

    def __post_init__(self) -> None:
        for field in (self.err_c_sq, self.m_sq, self.resid_sq, self.resid_min_sq):
            if field is not None and field.shape != self.ks.shape:
                raise ValueError("recorded series must align with the recording grid")


@dataclass(frozen=True)
class CurveStats:
    """Monte-Carlo aggregate of one diagnostic over paths."""

    ks: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray


@dataclass(frozen=True)
class MonteCarloResult:
    """Per-path diagnostic matrices (n_recorded, n_paths) plus final iterates."""

    ks: np.ndarray
    err_sq: dict[str, np.ndarray]
    resid_min_sq: np.ndarray | None
    x_final: np.ndarray

    def curve(self, label: str) -> CurveStats:
        mean, se = kahan_mean_stderr(self.err_sq[label])
        return CurveStats(ks=self.ks, mean=mean, stderr=se)

    def resid_min_curve(self) -> CurveStats:
        if self.resid_min_sq is None:
            raise ValueError("residuals were not tracked")
        mean, se = kahan_mean_stderr(self.resid_min_sq)
        return CurveStats(ks=self.ks, mean=mean, stderr=se)

    def records(self, label: str | None = None) -> list[RunRecord]:
        errs = self.err_sq.get(label) if label else None
        out = []
        for p in range(self.x_final.shape[0]):
            out.append(
                RunRecord(
                    ks=self.ks,
                    x_final=self.x_final[p],
                    err_c_sq=None if errs is None else errs[:, p],
                    resid_min_sq=None if self.resid_min_sq is None else self.resid_min_sq[:, p],
                )
            )
        return out


def _check_finite(x: np.ndarray, k: int) -> None:
    if not np.all(np.isfinite(x)):
        raise RuntimeError(f"non-finite iterate at k={k}; aborting run")


# ---------------------------------------------------------------------------
# single-path runners
# ---------------------------------------------------------------------------


def run_sa(
    oracle: NoisyOracle,
    x0: np.ndarray,
    schedule,
    k_max: int,
    seed: int,
    rng: np.random.Generator | None = None,
    envelope_spec: EnvelopeSpec | None = None,
) -> RunRecord:
    """One path of x_{k+1} = x_k + eps_k (sample(x_k) - x_k).

    Records ||x_k - x*||_c^2 when the oracle's operator has a known fixed
    point, and M(x_k - x*) when an envelope spec is given. Aborts on
    non-finite iterates.
    """
    x = np.array(x0, dtype=float)
    if rng is None:
        rng = path_rng(seed, 0)
    ks = record_grid(k_max)
    rec_idx = {int(k): i for i, k in enumerate(ks)}
    op = oracle.operator
    x_star = op.fixed_point if op is not None else None
    err = np.empty(ks.size) if x_star is not None else None
    msq = np.empty(ks.size) if (envelope_spec is not None and x_star is not None) else None

    def record(k: int, x: np.ndarray) -> None:
        i = rec_idx.get(k)
        if i is None:
            return
        if err is not None:
            err[i] = float(eval_norm(op.contraction_norm, x - x_star)) ** 2
        if msq is not None:
            msq[i] = evaluate(envelope_spec, x - x_star).value

    record(0, x)
    for k in range(k_max):
        s = oracle.sample(x, rng)
        x = x + schedule.eps_at(k) * (s - x)
        _check_finite(x, k + 1)
        record(k + 1, x)
    return RunRecord(ks=ks, x_final=x, err_c_sq=err, m_sq=msq)


def run_averaged(oracle: NoisyOracle, x0: np.ndarray, schedule, k_max: int, seed: int) -> RunRecord:
    """One path tracking the squared Euclidean fixed-point residual
    ||H(x_k) - x_k||_2^2 of the mean operator and its running minimum over
    all iterations so far. Requires B = 0 noise and a mean operator."""
    if oracle.noise.B != 0:
        raise ValueError("residual tracking requires a bounded-variance oracle (B = 0)")
    if oracle.operator is None:
        raise ValueError("residual tracking requires the deterministic mean operator")
    x = np.array(x0, dtype=float)
    rng = path_rng(seed, 0)
    ks = record_grid(k_max)
    rec_idx = {int(k): i for i, k in enumerate(ks)}
    resid = np.empty(ks.size)
    resid_min = np.empty(ks.size)
    best = np.inf
    H = oracle.operator.apply
    for k in range(k_max + 1):
        r = H(x[None, :])[0] - x
        rsq = float(r @ r)
        best = min(best, rsq)
        i = rec_idx.get(k)
        if i is not None:
            resid[i] = rsq
            resid_min[i] = best
        if k < k_max:
            s = oracle.sample(x, rng)
            x = x + schedule.eps_at(k) * (s - x)
            _check_finite(x, k + 1)
    return RunRecord(ks=ks, x_final=x, resid_sq=resid, resid_min_sq=resid_min)


# ---------------------------------------------------------------------------
# vectorized Monte Carlo runner
# ---------------------------------------------------------------------------


def run_monte_carlo(
    sampler: BatchSampler,
    x0: np.ndarray,
    schedule,
    k_max: int,
    paths: int,
    base_seed: int,
    x_star: np.ndarray | None = None,
    err_norms: dict[str, Norm] | None = None,
    track_residual: bool = False,
    mean_apply: Callable[[np.ndarray], np.ndarray] | None = None,
) -> MonteCarloResult:
    """All paths at once; path p consumes exactly the stream of
    path_rng(base_seed, p). Randomness is pre-drawn in blocks of
    (paths, chunk, block_width) capped by an 8e6-float budget."""
    if paths < 1:
        raise ValueError(f"need at least one path, got {paths}")
    if err_norms and x_star is None:
        raise ValueError("error recording needs the fixed point")
    if track_residual and mean_apply is None:
        raise ValueError("residual tracking needs the mean operator")
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    X = np.tile(x0, (paths, 1))
    rngs = [path_rng(base_seed, p) for p in range(paths)]
    ks = record_grid(k_max)
    rec_idx = {int(k): i for i, k in enumerate(ks)}
    err = {label: np.empty((ks.size, paths)) for label in (err_norms or {})}
    resid_min = np.empty((ks.size, paths)) if track_residual else None
    best = np.full(paths, np.inf)

    def observe(k: int) -> None:
        nonlocal best
        if track_residual:
            r = mean_apply(X) - X
            best = np.minimum(best, np.sum(r * r, axis=1))
        i = rec_idx.get(k)
        if i is None:
            return
        if err_norms:
            diff = X - x_star
            for label, nrm in err_norms.items():
                e = np.asarray(eval_norm(nrm, diff))
                err[label][i] = e * e
        if track_residual:
            resid_min[i] = best

    observe(0)
    chunk = max(1, _BLOCK_FLOAT_BUDGET // max(1, paths * sampler.block_width))
    k = 0
    while k < k_max:
        n_iters = min(chunk, k_max - k)
        blocks = np.stack([sampler.draw(rng, n_iters) for rng in rngs])  # (P, n_iters, m)
        for j in range(n_iters):
            S = sampler.apply(X, blocks[:, j, :])
            X = X + schedule.eps_at(k) * (S - X)
            k += 1
            if not np.all(np.isfinite(X)):
                raise RuntimeError(f"non-finite iterate at k={k}; aborting run")
            observe(k)
    return MonteCarloResult(ks=ks, err_sq=err, resid_min_sq=resid_min, x_final=X)


# ---------------------------------------------------------------------------
# drift verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftCheck:
    """One-step envelope drift comparison: Monte-Carlo estimate of
    E[M(x_+ - x*)], the guaranteed right-hand side, its standard error, and
    margin = rhs - lhs - 3*stderr (>= 0 means the inequality holds with
    three-sigma room)."""

    lhs: float
    rhs: float
    stderr: float
    margin: float


def verify_drift(
    envelope_spec: EnvelopeSpec,
    oracle: NoisyOracle,
    alphas,
    x: np.ndarray,
    eps: float,
    mc_samples: int,
    seed: int,
) -> DriftCheck:
    """Monte-Carlo check of the one-step drift inequality

        E[M(x_+ - x*)] <= (1 - 2 alpha2 eps + alpha3 eps^2) M(x - x*)
                          + alpha4 (A + 2B ||x*||_c^2) eps^2 / (2 (1 + mu/ell_cs^2))

    at a single point x, where x_+ = x + eps (sample(x) - x)."""
    if oracle.operator is None or oracle.operator.fixed_point is None:
        raise ValueError("drift verification needs the operator's fixed point")
    x = np.asarray(x, dtype=float)
    x_star = oracle.operator.fixed_point
    rng = path_rng(seed, 0)
    if oracle.batch is not None:
        U = oracle.batch.draw(rng, mc_samples).reshape(mc_samples, -1)
        samples = oracle.batch.apply(np.tile(x, (mc_samples, 1)), U)
    else:
        samples = np.stack([oracle.sample(x, rng) for _ in range(mc_samples)])
    X1 = x + eps * (samples - x)
    m_next = evaluate_batch(envelope_spec, X1 - x_star)
    lhs, se = kahan_mean_stderr(m_next)
    m_here = evaluate(envelope_spec, x - x_star).value
    A, B = oracle.noise.A, oracle.noise.B
    xs_c = float(eval_norm(envelope_spec.contraction_norm, x_star))
    rhs = (1.0 - 2.0 * alphas.alpha2 * eps + alphas.alpha3 * eps**2) * m_here + alphas.alpha4 * (
        A + 2.0 * B * xs_c**2
    ) * eps**2 / (2.0 * (1.0 + alphas.mu / alphas.ell_cs**2))
    return DriftCheck(lhs=float(lhs), rhs=float(rhs), stderr=float(se), margin=float(rhs - lhs - 3.0 * se))


# ---------------------------------------------------------------------------
# running-average Gaussian experiment (sup-norm tightness probe)
# ---------------------------------------------------------------------------


class _GaussianSampler:
    """Sampled operator for H = 0 with standard normal noise: the sample is
    the noise itself, so eps_k = 1/(k+1) makes x_k the running average."""

    def __init__(self, dim: int):
        self.dim = dim
        self.block_width = dim

    def draw(self, rng: np.random.Generator, n_iters: int) -> np.ndarray:
        return rng.standard_normal((n_iters, self.dim))

    def apply(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        return U


def gaussian_average_experiment(
    d_list: list[int], k_max: int, paths: int, base_seed: int
) -> dict[int, CurveStats]:
    """For each dimension d: average k_max i.i.d. N(0, I_d) draws over many
    paths and record E||x_k||_inf^2 on the recording grid. The scaled
    statistic k * E||x_k||_inf^2 equals E||z||_inf^2 (z standard normal in
    dimension d), which grows affinely in ln d."""
    schedule = StepsizeSchedule(kind="polynomial", eps=1.0, xi=1.0, K=1.0)
    out = {}
    for i, d in enumerate(d_list):
        sampler = _GaussianSampler(d)
        res = run_monte_carlo(
            sampler,
            np.zeros(d),
            schedule,
            k_max,
            paths,
            base_seed + i,
            x_star=np.zeros(d),
            err_norms={"linf": linf()},
        )
        out[d] = res.curve("linf")
    return out


def fit_log_affine(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float, float]:
    """Least-squares fit y ~ slope * ln(x) + intercept; returns
    (slope, intercept, r_squared)."""
    lx = np.log(np.asarray(xs, dtype=float))
    ys = np.asarray(ys, dtype=float)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    fit = A @ coef
    ss_res = float(np.sum((ys - fit) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2
