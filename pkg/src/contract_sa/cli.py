"""Command-line interface.

Subcommands:

* ``contract-sa run CONFIG [--outdir DIR]`` -- run a TOML experiment and
  write CSV curve(s), an SVG figure, and a meta sidecar. The output
  directory defaults to $CONTRACT_SA_OUTDIR, then ``./out``.
* ``contract-sa verify SUITE`` -- run a built-in verification suite
  (sandwich, drift, contraction, noise, lipschitz, tightness, all); prints
  one PASS/FAIL line per property and exits 1 on any failure.
* ``contract-sa bounds compute --theorem T --params FILE --k-max N [--out F]``
  -- evaluate a bound family on the recording grid; CSV to stdout or a file.
* ``contract-sa envelope eval --spec FILE --x CSV [--tol T]`` -- evaluate the
  smoothing envelope at a point; prints value, residual, minimizer as CSV.

Exit codes: 0 success, 1 verification failure, 2 usage or config errors.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import tomli

from . import bounds as bnd
from .engine import record_grid
from .envelope import evaluate, make_spec
from .experiments import ConfigError, Curve, parse_config, run_experiment
from .norms import Norm, linf, lp, weighted_l2
from .reports import curve_to_csv, write_outcome
from .verify import run_suite

OUTDIR_ENV = "CONTRACT_SA_OUTDIR"


def _fail_usage(msg: str) -> "NoReturn":  # noqa: F821
    print(f"error: {msg}", file=sys.stderr)
    raise SystemExit(2)


def _load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        _fail_usage(f"no such file: {path}")
    except tomli.TOMLDecodeError as exc:
        _fail_usage(f"invalid TOML in {path}: {exc}")


def _norm_from_table(t: dict, where: str) -> Norm:
    kind = t.get("kind")
    if kind == "linf":
        extra = set(t) - {"kind"}
    elif kind == "l2":
        extra = set(t) - {"kind"}
    elif kind == "lp":
        extra = set(t) - {"kind", "p"}
    elif kind == "weighted_l2":
        extra = set(t) - {"kind", "weights"}
    else:
        _fail_usage(f"{where}.kind must be one of linf, l2, lp, weighted_l2")
    if extra:
        _fail_usage(f"unknown key(s) {sorted(extra)} in {where}")
    if kind == "linf":
        return linf()
    if kind == "l2":
        return lp(2.0)
    if kind == "lp":
        if "p" not in t:
            _fail_usage(f"{where} with kind='lp' needs p")
        return lp(float(t["p"]))
    if "weights" not in t:
        _fail_usage(f"{where} with kind='weighted_l2' needs weights")
    return weighted_l2(np.asarray(t["weights"], dtype=float))


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        _fail_usage(str(exc))
    try:
        cfg = parse_config(text)
        outcome = run_experiment(cfg)
    except (ConfigError, ValueError) as exc:
        _fail_usage(str(exc))
    outdir = args.outdir or os.environ.get(OUTDIR_ENV) or "out"
    paths = write_outcome(outcome, outdir, text)
    for p in paths:
        print(p)
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _cmd_verify(args: argparse.Namespace) -> int:
    results = run_suite(args.suite)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failures += 0 if r.passed else 1
        print(f"{status} {r.name}: {r.detail}")
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# bounds compute
# ---------------------------------------------------------------------------


def _table(params: dict, key: str) -> dict:
    if key not in params:
        _fail_usage(f"params file needs a [{key}] table")
    return params[key]


def _alphas_from_params(params: dict) -> bnd.AlphaConstants:
    if "constants" in params:
        t = _table(params, "constants")
        return bnd.corollary3_constants(float(t["gamma"]), int(t["d"]), float(t["B"]))
    t = _table(params, "alphas")
    from .norms import EquivalenceConstants

    return bnd.compute_alphas(
        gamma=float(t["gamma"]),
        mu=float(t["mu"]),
        L=float(t["L"]),
        equiv_cs=EquivalenceConstants(float(t["ell_cs"]), float(t["u_cs"])),
        equiv_es=EquivalenceConstants(float(t["ell_es"]), float(t["u_es"])),
        B=float(t["B"]),
    )


def _cmd_bounds(args: argparse.Namespace) -> int:
    params = _load_toml(args.params)
    ks = record_grid(args.k_max)
    label = f"theorem-{args.theorem}"
    try:
        if args.theorem in {"1", "c1", "c2", "c3"}:
            alphas = _alphas_from_params(params)
            curve_t = _table(params, "curve")
            e0 = float(curve_t["initial_err_sq"])
            A = float(curve_t["A"])
            xs = float(curve_t.get("x_star_norm", 0.0))
            sched_t = _table(params, "schedule")
            eps = float(sched_t["eps"])
            if args.theorem == "1":
                schedule = bnd.build_schedule(alphas, eps, sched_t.get("xi"))
                full = bnd.theorem1_bound(alphas, schedule, e0, A, alphas.B, xs, args.k_max)
                vals = full[ks]
            elif args.theorem == "c1":
                vals = np.asarray(bnd.corollary1_bound(alphas, eps, e0, A, alphas.B, xs, ks))
            else:
                xi = float(sched_t["xi"])
                vals = np.asarray(bnd.corollary2_bound(alphas, eps, xi, e0, A, alphas.B, xs, ks))
        elif args.theorem == "2":
            t = _table(params, "theorem2")
            vals = np.full(ks.size, np.nan)
            valid = ks >= (0 if t["regime"] == "constant" else 1)
            vals[valid] = bnd.theorem2_bound(float(t["D"]), float(t["A"]), float(t["eps"]), t["regime"], ks[valid])
        elif args.theorem == "3":
            t = _table(params, "theorem3")
            vals = np.asarray(
                bnd.theorem3_bound(
                    float(t["gamma"]), float(t["A"]), int(t["n_states"]),
                    float(t["initial_err_sq"]), float(t["fixed_point_norm_sq"]), ks,
                )
            )
        elif args.theorem == "4":
            t = _table(params, "theorem4")
            beta, n = float(t["beta"]), int(t["n"])
            eps = float(t.get("eps", bnd.theorem4_eps_cap(beta, n)))
            vals = np.asarray(
                bnd.theorem4_bound(beta, n, eps, float(t["initial_err_sq"]), float(t["v_pi_norm_sq"]), ks)
            )
        else:
            t = _table(params, "theorem5")
            beta, S, A_ = float(t["beta"]), int(t["n_states"]), int(t["n_actions"])
            e0, qs = float(t["initial_err_sq"]), float(t["q_star_norm_sq"])
            if t.get("variant") == "a":
                eps = float(t.get("eps", bnd.theorem5a_eps_cap(beta, S, A_)))
                vals = np.asarray(bnd.theorem5a_bound(beta, S, A_, eps, e0, qs, ks))
            elif t.get("variant") == "b":
                vals = np.asarray(bnd.theorem5b_bound(beta, S, A_, e0, qs, ks))
            else:
                _fail_usage("theorem 5 params need variant = 'a' or 'b'")
    except (KeyError, ValueError) as exc:
        _fail_usage(f"bound parameters rejected: {exc}")
    curve = Curve(label=label, ks=ks, bound=vals)
    text = curve_to_csv(curve)
    if args.out:
        from .fileio import atomic_write_text

        atomic_write_text(args.out, text)
        print(args.out)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# envelope eval
# ---------------------------------------------------------------------------


def _cmd_envelope(args: argparse.Namespace) -> int:
    params = _load_toml(args.spec)
    env_t = _table(params, "envelope")
    extra = set(env_t) - {"mu", "contraction_norm", "smoothing_norm"}
    if extra:
        _fail_usage(f"unknown key(s) {sorted(extra)} in [envelope]")
    for key in ("mu", "contraction_norm", "smoothing_norm"):
        if key not in env_t:
            _fail_usage(f"[envelope] needs {key}")
    try:
        spec = make_spec(
            _norm_from_table(env_t["contraction_norm"], "[envelope.contraction_norm]"),
            _norm_from_table(env_t["smoothing_norm"], "[envelope.smoothing_norm]"),
            float(env_t["mu"]),
        )
        x = np.array([float(v) for v in args.x.split(",")], dtype=float)
    except ValueError as exc:
        _fail_usage(str(exc))
    res = evaluate(spec, x, args.tol)
    header = "value,residual," + ",".join(f"u{i}" for i in range(x.size))
    row = ",".join([repr(res.value), repr(res.residual)] + [repr(float(v)) for v in res.minimizer])
    print(header)
    print(row)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contract-sa",
        description="Finite-sample bounds and experiments for contractive stochastic approximation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a TOML experiment config")
    p_run.add_argument("config", help="path to the experiment TOML file")
    p_run.add_argument("--outdir", default=None, help=f"output directory (default ${OUTDIR_ENV} or ./out)")
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser("verify", help="run a built-in verification suite")
    p_verify.add_argument(
        "suite",
        choices=["sandwich", "drift", "contraction", "noise", "lipschitz", "tightness", "all"],
    )
    p_verify.set_defaults(func=_cmd_verify)

    p_bounds = sub.add_parser("bounds", help="evaluate bound curves")
    bounds_sub = p_bounds.add_subparsers(dest="bounds_command", required=True)
    p_compute = bounds_sub.add_parser("compute", help="evaluate a bound family on the recording grid")
    p_compute.add_argument("--theorem", required=True, choices=["1", "c1", "c2", "c3", "2", "3", "4", "5"])
    p_compute.add_argument("--params", required=True, help="TOML file with the bound parameters")
    p_compute.add_argument("--k-max", required=True, type=int, dest="k_max")
    p_compute.add_argument("--out", default=None, help="write CSV here instead of stdout")
    p_compute.set_defaults(func=_cmd_bounds)

    p_env = sub.add_parser("envelope", help="evaluate the smoothing envelope")
    env_sub = p_env.add_subparsers(dest="envelope_command", required=True)
    p_eval = env_sub.add_parser("eval", help="evaluate at a point")
    p_eval.add_argument("--spec", required=True, help="TOML file with the [envelope] table")
    p_eval.add_argument("--x", required=True, help="comma-separated vector")
    p_eval.add_argument("--tol", type=float, default=None)
    p_eval.set_defaults(func=_cmd_envelope)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
