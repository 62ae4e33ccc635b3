"""Experiment orchestration: TOML configs in, labeled curves out.

An experiment config is a TOML document with top-level ``name``, ``kind``,
``paths``, ``k_max``, ``seed`` and kind-specific tables. Unknown keys raise
:class:`ConfigError` (no silent tolerance). Kinds:

* ``qlearning`` -- Q-learning with the constant-stepsize bound ("theorem-a"),
  the prescribed 1/(k+K) schedule ("theorem-b"), or a custom constant;
* ``tdn``     -- n-step TD with the constant-stepsize bound or custom eps;
* ``vtrace``  -- truncated-importance-sampling evaluation with the prescribed
  schedule and bound, or a custom constant stepsize (no overlay);
* ``fig1``    -- the multi-n TD comparison (one curve per n, no bound);
* ``averaged``-- non-expansive rotation iteration, running-min residual vs
  the three stepsize-regime bounds;
* ``tightness`` -- the running-average Gaussian probe of the ln d scaling.

Empirical curves are Monte-Carlo means with standard errors over per-path
Philox streams; bound columns are NaN where a bound is not defined or not
applicable (writers render NaN as an empty CSV field).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import tomli

from . import bounds as bnd
from .bounds import StepsizeSchedule
from .engine import CurveStats, fit_log_affine, gaussian_average_experiment, run_monte_carlo
from .mdp import Mdp, VtraceParams, load_mdp, random_mdp, random_policy, uniform_policy
from .norms import eval_norm, l2, linf
from .rl import RlRun, make_vtrace_oracle, run_qlearning, run_tdn, run_vtrace

__all__ = [
    "ConfigError",
    "Curve",
    "ExperimentOutcome",
    "parse_config",
    "run_experiment",
    "RotationSampler",
    "run_rotation_residual",
    "run_fig1",
    "Fig1Curve",
]


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration."""


@dataclass(frozen=True)
class Curve:
    """One labeled output curve. Missing columns are None (whole column) or
    NaN (single cells)."""

    label: str
    ks: np.ndarray
    empirical_mean: np.ndarray | None = None
    empirical_stderr: np.ndarray | None = None
    bound: np.ndarray | None = None


@dataclass(frozen=True)
class ExperimentOutcome:
    name: str
    kind: str
    curves: list[Curve]
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# config parsing / validation
# ---------------------------------------------------------------------------

_TOP_KEYS = {"name", "kind", "paths", "k_max", "seed", "mdp", "policy", "behavior",
             "qlearning", "tdn", "vtrace", "fig1", "averaged", "tightness"}
_KIND_TABLES = {"qlearning", "tdn", "vtrace", "fig1", "averaged", "tightness"}


def _reject_unknown(table: dict, allowed: set[str], where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _require(table: dict, keys: set[str], where: str) -> None:
    missing = keys - set(table)
    if missing:
        raise ConfigError(f"missing required key(s) {sorted(missing)} in {where}")


def parse_config(text: str) -> dict:
    """Parse and validate an experiment TOML document."""
    try:
        cfg = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    _reject_unknown(cfg, _TOP_KEYS, "the top level")
    _require(cfg, {"name", "kind", "paths", "k_max", "seed"}, "the top level")
    kind = cfg["kind"]
    if kind not in _KIND_TABLES:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    if kind not in cfg:
        raise ConfigError(f"kind = {kind!r} requires a [{kind}] table")
    for other in _KIND_TABLES - {kind}:
        if other in cfg:
            raise ConfigError(f"[{other}] table does not belong to kind = {kind!r}")
    if not isinstance(cfg["paths"], int) or isinstance(cfg["paths"], bool):
        raise ConfigError("paths must be an integer")
    if not isinstance(cfg["k_max"], int) or cfg["k_max"] < 0:
        raise ConfigError("k_max must be a nonnegative integer")
    if cfg["paths"] < 1:
        raise ConfigError("paths must be >= 1")

    if "mdp" in cfg:
        m = cfg["mdp"]
        _reject_unknown(m, {"source", "n_states", "n_actions", "beta", "seed", "path"}, "[mdp]")
        src = m.get("source", "random")
        if src == "random":
            _require(m, {"n_states", "n_actions", "beta", "seed"}, "[mdp]")
        elif src == "file":
            _require(m, {"path"}, "[mdp]")
        else:
            raise ConfigError(f"unknown mdp source {src!r}")
    for key in ("policy", "behavior"):
        if key in cfg:
            t = cfg[key]
            _reject_unknown(t, {"kind", "seed"}, f"[{key}]")
            pk = t.get("kind")
            if pk not in {"uniform", "random"}:
                raise ConfigError(f"[{key}].kind must be 'uniform' or 'random'")
            if pk == "random":
                _require(t, {"seed"}, f"[{key}]")

    table = cfg[kind]
    if kind == "qlearning":
        _reject_unknown(table, {"schedule", "eps"}, "[qlearning]")
        _require(table, {"schedule"}, "[qlearning]")
        if table["schedule"] not in {"theorem-a", "theorem-b", "constant"}:
            raise ConfigError("qlearning schedule must be 'theorem-a', 'theorem-b', or 'constant'")
        if table["schedule"] == "constant":
            _require(table, {"eps"}, "[qlearning]")
        _require(cfg, {"mdp"}, "the top level")
    elif kind == "tdn":
        _reject_unknown(table, {"n", "schedule", "eps"}, "[tdn]")
        _require(table, {"n", "schedule"}, "[tdn]")
        if table["schedule"] not in {"theorem", "constant"}:
            raise ConfigError("tdn schedule must be 'theorem' or 'constant'")
        if table["schedule"] == "constant":
            _require(table, {"eps"}, "[tdn]")
        _require(cfg, {"mdp", "policy"}, "the top level")
    elif kind == "vtrace":
        _reject_unknown(table, {"n", "c_bar", "rho_bar", "schedule", "eps"}, "[vtrace]")
        _require(table, {"n", "c_bar", "rho_bar", "schedule"}, "[vtrace]")
        if table["schedule"] not in {"theorem", "constant"}:
            raise ConfigError("vtrace schedule must be 'theorem' or 'constant'")
        if table["schedule"] == "constant":
            _require(table, {"eps"}, "[vtrace]")
        _require(cfg, {"mdp", "policy", "behavior"}, "the top level")
    elif kind == "fig1":
        _reject_unknown(table, {"n_list", "eps"}, "[fig1]")
        _require(table, {"n_list", "eps"}, "[fig1]")
        _require(cfg, {"mdp", "policy"}, "the top level")
    elif kind == "averaged":
        _reject_unknown(table, {"regime", "eps", "noise_std", "theta", "x0"}, "[averaged]")
        _require(table, {"regime", "eps", "noise_std"}, "[averaged]")
        if table["regime"] not in {"constant", "inv_sqrt", "inv_k"}:
            raise ConfigError("averaged regime must be 'constant', 'inv_sqrt', or 'inv_k'")
    elif kind == "tightness":
        _reject_unknown(table, {"d_list"}, "[tightness]")
        _require(table, {"d_list"}, "[tightness]")
    return cfg


def _build_mdp(cfg: dict) -> Mdp:
    m = cfg["mdp"]
    if m.get("source", "random") == "file":
        return load_mdp(m["path"])
    return random_mdp(m["n_states"], m["n_actions"], m["beta"], m["seed"])


def _build_policy(cfg: dict, key: str, mdp: Mdp) -> np.ndarray:
    t = cfg[key]
    if t["kind"] == "uniform":
        return uniform_policy(mdp.n_states, mdp.n_actions)
    return random_policy(mdp.n_states, mdp.n_actions, t["seed"])


# ---------------------------------------------------------------------------
# rotation (non-expansive) experiment
# ---------------------------------------------------------------------------


class RotationSampler:
    """Planar rotation H(x) = R(theta) x (non-expansive, fixed point 0) plus
    isotropic Gaussian noise; E||w||_2^2 = 2 noise_std^2."""

    def __init__(self, theta: float, noise_std: float):
        c, s = math.cos(theta), math.sin(theta)
        self.R = np.array([[c, -s], [s, c]])
        self.noise_std = float(noise_std)
        self.dim = 2
        self.block_width = 2

    def draw(self, rng: np.random.Generator, n_iters: int) -> np.ndarray:
        return rng.standard_normal((n_iters, 2))

    def apply(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        return X @ self.R.T + self.noise_std * U

    def mean_apply(self, X: np.ndarray) -> np.ndarray:
        return X @ self.R.T


_AVERAGED_SCHEDULES = {
    "constant": lambda eps: StepsizeSchedule(kind="constant", eps=eps),
    "inv_sqrt": lambda eps: StepsizeSchedule(kind="polynomial", eps=eps, xi=0.5, K=1.0),
    "inv_k": lambda eps: StepsizeSchedule(kind="polynomial", eps=eps, xi=1.0, K=1.0),
}


def run_rotation_residual(
    theta: float,
    noise_std: float,
    regime: str,
    eps: float,
    k_max: int,
    paths: int,
    seed: int,
    x0: np.ndarray,
) -> tuple[CurveStats, np.ndarray]:
    """Run the rotation iteration and return (running-min residual curve,
    residual bound on the same grid; NaN where the bound is undefined)."""
    if regime not in _AVERAGED_SCHEDULES:
        raise ValueError(f"unknown regime {regime!r}")
    sampler = RotationSampler(theta, noise_std)
    schedule = _AVERAGED_SCHEDULES[regime](eps)
    result = run_monte_carlo(
        sampler,
        np.asarray(x0, dtype=float),
        schedule,
        k_max,
        paths,
        seed,
        track_residual=True,
        mean_apply=sampler.mean_apply,
    )
    curve = result.resid_min_curve()
    D = float(np.linalg.norm(x0))
    A = 2.0 * noise_std**2
    bound = np.full(curve.ks.size, np.nan)
    valid = curve.ks >= (0 if regime == "constant" else 1)
    bound[valid] = bnd.theorem2_bound(D, A, eps, regime, curve.ks[valid])
    return curve, bound


# ---------------------------------------------------------------------------
# multi-n TD comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Fig1Curve:
    n: int
    l2: CurveStats
    linf: CurveStats
    tail_l2: float
    tail_linf: float


def _tail_mean(curve: CurveStats, k_max: int) -> float:
    mask = curve.ks >= 0.75 * k_max
    return float(np.mean(curve.mean[mask]))


def run_fig1(
    mdp: Mdp,
    policy: np.ndarray,
    n_list: list[int],
    eps: float,
    k_max: int,
    paths: int,
    seed: int,
) -> list[Fig1Curve]:
    """Run n-step TD for each n with a shared constant stepsize, recording
    squared l2 and sup-norm errors to V_pi; the tail statistics average the
    mean curves over the last quarter of the horizon."""
    schedule = StepsizeSchedule(kind="constant", eps=eps)
    out = []
    for i, n in enumerate(n_list):
        run = run_tdn(
            mdp, policy, n, schedule, k_max, paths, seed + i,
            extra_err_norms={"l2": l2(), "linf": linf()},
        )
        cl2 = run.result.curve("l2")
        clinf = run.result.curve("linf")
        out.append(
            Fig1Curve(
                n=n,
                l2=cl2,
                linf=clinf,
                tail_l2=_tail_mean(cl2, k_max),
                tail_linf=_tail_mean(clinf, k_max),
            )
        )
    return out


# ---------------------------------------------------------------------------
# experiment dispatch
# ---------------------------------------------------------------------------


def _curve_from_run(label: str, run: RlRun, bound: np.ndarray | None) -> Curve:
    stats = run.result.curve(run.primary_label)
    return Curve(
        label=label,
        ks=stats.ks,
        empirical_mean=stats.mean,
        empirical_stderr=stats.stderr,
        bound=bound,
    )


def _run_qlearning_experiment(cfg: dict, mdp: Mdp) -> ExperimentOutcome:
    from .mdp import optimal_q

    table = cfg["qlearning"]
    S, A = mdp.n_states, mdp.n_actions
    q_star = optimal_q(mdp)
    e0 = float(np.max(np.abs(q_star))) ** 2  # Q0 = 0
    qs = float(np.max(np.abs(q_star))) ** 2
    meta: dict = {"n_states": S, "n_actions": A, "beta": mdp.beta}
    mode = table["schedule"]
    if mode == "theorem-b":
        schedule = bnd.theorem5b_schedule(mdp.beta, S, A)
        meta["eps"], meta["K"] = schedule.eps, schedule.K
        run = run_qlearning(mdp, schedule, cfg["k_max"], cfg["paths"], cfg["seed"])
        bound = np.asarray(bnd.theorem5b_bound(mdp.beta, S, A, e0, qs, run.result.ks))
    else:
        cap = bnd.theorem5a_eps_cap(mdp.beta, S, A)
        eps = float(table.get("eps", cap))
        meta["eps"] = eps
        schedule = StepsizeSchedule(kind="constant", eps=eps)
        run = run_qlearning(mdp, schedule, cfg["k_max"], cfg["paths"], cfg["seed"])
        if eps <= cap * (1 + 1e-12):
            bound = np.asarray(bnd.theorem5a_bound(mdp.beta, S, A, eps, e0, qs, run.result.ks))
        else:
            bound = None
            meta["note"] = f"constant stepsize {eps} above the covered cap {cap}; no bound overlay"
    return ExperimentOutcome(cfg["name"], "qlearning", [_curve_from_run(mode, run, bound)], meta)


def _run_tdn_experiment(cfg: dict, mdp: Mdp) -> ExperimentOutcome:
    table = cfg["tdn"]
    policy = _build_policy(cfg, "policy", mdp)
    n = table["n"]
    cap = bnd.theorem4_eps_cap(mdp.beta, n)
    eps = float(table.get("eps", cap))
    schedule = StepsizeSchedule(kind="constant", eps=eps)
    run = run_tdn(mdp, policy, n, schedule, cfg["k_max"], cfg["paths"], cfg["seed"])
    lam_norm = run.noise.error_norm
    e0 = float(eval_norm(lam_norm, run.fixed_point)) ** 2  # V0 = 0
    vs = e0
    meta = {"n": n, "eps": eps, "beta": mdp.beta}
    if eps <= cap * (1 + 1e-12):
        bound = np.asarray(bnd.theorem4_bound(mdp.beta, n, eps, e0, vs, run.result.ks))
    else:
        bound = None
        meta["note"] = f"constant stepsize {eps} above the covered cap {cap}; no bound overlay"
    return ExperimentOutcome(cfg["name"], "tdn", [_curve_from_run(f"n={n}", run, bound)], meta)


def _run_vtrace_experiment(cfg: dict, mdp: Mdp) -> ExperimentOutcome:
    table = cfg["vtrace"]
    target = _build_policy(cfg, "policy", mdp)
    behavior = _build_policy(cfg, "behavior", mdp)
    params = VtraceParams(c_bar=float(table["c_bar"]), rho_bar=float(table["rho_bar"]), n=table["n"])
    oracle = make_vtrace_oracle(mdp, target, behavior, params)
    gamma = oracle.operator.gamma
    A = oracle.noise.A
    meta = {"n": params.n, "c_bar": params.c_bar, "rho_bar": params.rho_bar,
            "gamma": gamma, "noise_A": A, "beta": mdp.beta}
    if table["schedule"] == "theorem":
        schedule = bnd.theorem3_schedule(gamma, A, mdp.n_states)
        meta["eps"], meta["K"] = schedule.eps, schedule.K
    else:
        schedule = StepsizeSchedule(kind="constant", eps=float(table["eps"]))
        meta["eps"] = schedule.eps
    run = run_vtrace(mdp, target, behavior, params, schedule, cfg["k_max"], cfg["paths"], cfg["seed"])
    if table["schedule"] == "theorem":
        fp = run.fixed_point
        e0 = float(np.max(np.abs(fp))) ** 2  # V0 = 0
        bound = np.asarray(
            bnd.theorem3_bound(gamma, A, mdp.n_states, e0, float(np.max(np.abs(fp))) ** 2, run.result.ks)
        )
    else:
        bound = None
        meta["note"] = "custom constant stepsize; no bound overlay"
    return ExperimentOutcome(cfg["name"], "vtrace", [_curve_from_run("vtrace", run, bound)], meta)


def _run_fig1_experiment(cfg: dict, mdp: Mdp) -> ExperimentOutcome:
    table = cfg["fig1"]
    policy = _build_policy(cfg, "policy", mdp)
    n_list = [int(n) for n in table["n_list"]]
    curves = run_fig1(mdp, policy, n_list, float(table["eps"]), cfg["k_max"], cfg["paths"], cfg["seed"])
    out = [
        Curve(label=f"n={c.n}", ks=c.l2.ks, empirical_mean=c.l2.mean, empirical_stderr=c.l2.stderr)
        for c in curves
    ]
    meta = {
        "eps": table["eps"],
        "metric": "mean squared l2 error to the policy value",
        "tail_l2": {f"n={c.n}": c.tail_l2 for c in curves},
        "tail_linf": {f"n={c.n}": c.tail_linf for c in curves},
    }
    return ExperimentOutcome(cfg["name"], "fig1", out, meta)


def _run_averaged_experiment(cfg: dict) -> ExperimentOutcome:
    table = cfg["averaged"]
    theta = float(table.get("theta", math.pi / 3.0))
    x0 = np.asarray(table.get("x0", [2.0, 1.0]), dtype=float)
    if x0.shape != (2,):
        raise ConfigError("averaged x0 must be a 2-vector")
    curve, bound = run_rotation_residual(
        theta, float(table["noise_std"]), table["regime"], float(table["eps"]),
        cfg["k_max"], cfg["paths"], cfg["seed"], x0,
    )
    meta = {"theta": theta, "regime": table["regime"], "eps": table["eps"],
            "noise_std": table["noise_std"], "D": float(np.linalg.norm(x0)),
            "metric": "running min of the squared fixed-point residual"}
    return ExperimentOutcome(
        cfg["name"], "averaged",
        [Curve(label=table["regime"], ks=curve.ks, empirical_mean=curve.mean,
               empirical_stderr=curve.stderr, bound=bound)],
        meta,
    )


def _run_tightness_experiment(cfg: dict) -> ExperimentOutcome:
    table = cfg["tightness"]
    d_list = [int(d) for d in table["d_list"]]
    stats = gaussian_average_experiment(d_list, cfg["k_max"], cfg["paths"], cfg["seed"])
    curves = []
    scaled = []
    for d in d_list:
        c = stats[d]
        curves.append(Curve(label=f"d={d}", ks=c.ks, empirical_mean=c.mean, empirical_stderr=c.stderr))
        scaled.append(cfg["k_max"] * c.mean[-1])
    slope, intercept, r2 = fit_log_affine(np.array(d_list, dtype=float), np.array(scaled))
    meta = {
        "metric": "E ||running average||_inf^2",
        "scaled_stat_by_d": {f"d={d}": s for d, s in zip(d_list, scaled)},
        "fit": {"slope": slope, "intercept": intercept, "r_squared": r2},
    }
    return ExperimentOutcome(cfg["name"], "tightness", curves, meta)


def run_experiment(cfg: dict) -> ExperimentOutcome:
    """Dispatch a validated config to its runner."""
    kind = cfg["kind"]
    if kind == "averaged":
        return _run_averaged_experiment(cfg)
    if kind == "tightness":
        return _run_tightness_experiment(cfg)
    mdp = _build_mdp(cfg)
    if kind == "qlearning":
        return _run_qlearning_experiment(cfg, mdp)
    if kind == "tdn":
        return _run_tdn_experiment(cfg, mdp)
    if kind == "vtrace":
        return _run_vtrace_experiment(cfg, mdp)
    raise ConfigError(f"unknown experiment kind {kind!r}")
