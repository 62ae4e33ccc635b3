"""Experiment configs, report files, and the command-line interface."""

import hashlib
import json
import math

import numpy as np
import pytest

from contract_sa import bounds as bnd
from contract_sa.cli import main
from contract_sa.engine import record_grid
from contract_sa.experiments import (
    ConfigError,
    Curve,
    parse_config,
    run_experiment,
    run_rotation_residual,
)
from contract_sa.reports import CSV_HEADER, curve_to_csv, write_outcome

TDN_CONFIG = """\
name = "smoke-tdn"
kind = "tdn"
paths = 2
k_max = 20
seed = 3

[mdp]
n_states = 3
n_actions = 2
beta = 0.7
seed = 9

[policy]
kind = "uniform"

[tdn]
n = 1
schedule = "constant"
eps = 0.01
"""


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


def test_parse_config_accepts_a_minimal_document():
    cfg = parse_config(TDN_CONFIG)
    assert cfg["kind"] == "tdn" and cfg["tdn"]["n"] == 1


@pytest.mark.parametrize(
    "mutate,fragment",
    [
        (lambda t: t + "bogus = 1\n", "bogus"),
        (lambda t: t.replace('eps = 0.01', 'eps = 0.01\nstray = 2'), "stray"),
        (lambda t: t.replace('name = "smoke-tdn"\n', ""), "name"),
        (lambda t: t.replace('kind = "tdn"', 'kind = "nope"'), "nope"),
        (lambda t: t.replace("paths = 2", "paths = 0"), "paths"),
        (lambda t: t.replace("paths = 2", "paths = true"), "integer"),
        (lambda t: t.replace("k_max = 20", "k_max = -1"), "k_max"),
        (lambda t: t.replace('kind = "uniform"', 'kind = "greedy"'), "uniform"),
        (lambda t: t + '[vtrace]\nn = 1\nc_bar = 1.0\nrho_bar = 1.0\nschedule = "constant"\neps = 0.1\n', "vtrace"),
        (lambda t: t.replace('schedule = "constant"\neps = 0.01\n', 'schedule = "constant"\n'), "eps"),
        (lambda t: t.replace("[mdp]", "[mdp]\nsource = 'csv'"), "csv"),
        (lambda t: "not valid = = toml", "TOML"),
    ],
    ids=[
        "unknown-top-key", "unknown-table-key", "missing-name", "bad-kind",
        "zero-paths", "bool-paths", "negative-k-max", "bad-policy-kind",
        "stray-kind-table", "constant-needs-eps", "bad-mdp-source", "bad-toml",
    ],
)
def test_parse_config_rejects_invalid_documents(mutate, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(mutate(TDN_CONFIG))


def test_parse_config_requires_the_kind_table():
    text = TDN_CONFIG.replace('[tdn]\nn = 1\nschedule = "constant"\neps = 0.01\n', "")
    with pytest.raises(ConfigError, match="tdn"):
        parse_config(text)


# ---------------------------------------------------------------------------
# CSV rendering
# ---------------------------------------------------------------------------


def test_csv_header_and_round_trip_floats():
    ks = np.array([0, 1, 2])
    mean = np.array([1.0, 0.1 + 0.2, 1e-17])
    se = np.array([0.5, np.nan, 0.25])
    curve = Curve(label="c", ks=ks, empirical_mean=mean, empirical_stderr=se)
    lines = curve_to_csv(curve).splitlines()
    assert lines[0] == "k,empirical_mean,empirical_stderr,bound"
    assert lines[0] == CSV_HEADER
    assert len(lines) == 4
    for i, line in enumerate(lines[1:]):
        k, m, s, b = line.split(",")
        assert int(k) == ks[i]
        assert float(m) == mean[i]  # repr round-trips exactly
        assert b == ""
    assert lines[2].split(",")[2] == ""  # NaN stderr renders as empty


def test_csv_bound_only_curve():
    curve = Curve(label="b", ks=np.array([0, 5]), bound=np.array([2.0, 1.0]))
    lines = curve_to_csv(curve).splitlines()
    assert lines[1] == "0,,,2.0"
    assert lines[2] == "5,,,1.0"


# ---------------------------------------------------------------------------
# output writer
# ---------------------------------------------------------------------------


def _small_outcome():
    cfg = parse_config(TDN_CONFIG)
    return run_experiment(cfg)


def test_write_outcome_produces_csv_svg_and_meta(tmp_path):
    outcome = _small_outcome()
    paths = write_outcome(outcome, str(tmp_path), TDN_CONFIG)
    names = [p.split("/")[-1] for p in paths]
    assert names == ["smoke-tdn.csv", "smoke-tdn.svg", "smoke-tdn.meta.json"]
    svg = (tmp_path / "smoke-tdn.svg").read_bytes()
    assert svg.startswith(b"<?xml") and b"</svg>" in svg
    meta = json.loads((tmp_path / "smoke-tdn.meta.json").read_text())
    assert meta["config_sha256"] == hashlib.sha256(TDN_CONFIG.encode()).hexdigest()
    assert set(meta["files"]) == {"smoke-tdn.csv", "smoke-tdn.svg"}
    assert meta["kind"] == "tdn" and meta["parameters"]["n"] == 1
    csv_lines = (tmp_path / "smoke-tdn.csv").read_text().splitlines()
    assert len(csv_lines) == 1 + 21  # header + dense grid for k_max = 20


def test_outputs_are_byte_identical_across_reruns(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    write_outcome(_small_outcome(), str(a), TDN_CONFIG)
    write_outcome(_small_outcome(), str(b), TDN_CONFIG)
    for name in ["smoke-tdn.csv", "smoke-tdn.svg", "smoke-tdn.meta.json"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_multi_curve_outcomes_write_one_csv_per_label(tmp_path):
    ks = np.array([0, 1])
    curves = [Curve(label=f"n={n}", ks=ks, empirical_mean=np.array([1.0, 0.5])) for n in (1, 2)]
    from contract_sa.experiments import ExperimentOutcome

    outcome = ExperimentOutcome(name="multi", kind="fig1", curves=curves)
    paths = write_outcome(outcome, str(tmp_path), "x = 1\n")
    names = [p.split("/")[-1] for p in paths]
    assert names[:2] == ["multi__n-1.csv", "multi__n-2.csv"]

    clash = ExperimentOutcome(
        name="clash", kind="fig1",
        curves=[Curve(label="a b", ks=ks), Curve(label="a*b", ks=ks)],
    )
    with pytest.raises(ValueError, match="collide"):
        write_outcome(clash, str(tmp_path), "x = 1\n")


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------


def test_zero_horizon_yields_a_single_row():
    cfg = parse_config(TDN_CONFIG.replace("k_max = 20", "k_max = 0"))
    outcome = run_experiment(cfg)
    lines = curve_to_csv(outcome.curves[0]).splitlines()
    assert len(lines) == 2 and lines[1].startswith("0,")


def test_tdn_experiment_flags_uncovered_stepsizes():
    cfg = parse_config(TDN_CONFIG.replace("eps = 0.01", "eps = 0.3"))
    outcome = run_experiment(cfg)
    assert outcome.curves[0].bound is None
    assert "no bound overlay" in outcome.meta["note"]


def test_averaged_experiment_leaves_bound_empty_where_undefined():
    text = """\
name = "avg"
kind = "averaged"
paths = 2
k_max = 5
seed = 1

[averaged]
regime = "inv_k"
eps = 0.5
noise_std = 0.5
"""
    outcome = run_experiment(parse_config(text))
    curve = outcome.curves[0]
    assert math.isnan(curve.bound[0]) and np.all(np.isfinite(curve.bound[1:]))
    lines = curve_to_csv(curve).splitlines()
    assert lines[1].endswith(",")  # k = 0 bound cell is empty
    assert not lines[2].endswith(",")


def test_qlearning_experiment_theorem_b_schedule_metadata():
    text = """\
name = "ql"
kind = "qlearning"
paths = 2
k_max = 10
seed = 2

[mdp]
n_states = 3
n_actions = 2
beta = 0.6
seed = 4

[qlearning]
schedule = "theorem-b"
"""
    outcome = run_experiment(parse_config(text))
    sched = bnd.theorem5b_schedule(0.6, 3, 2)
    assert outcome.meta["eps"] == sched.eps and outcome.meta["K"] == sched.K
    assert outcome.curves[0].bound is not None
    assert np.all(outcome.curves[0].bound > 0)


def test_tightness_experiment_reports_the_log_fit():
    text = """\
name = "tight"
kind = "tightness"
paths = 50
k_max = 200
seed = 6

[tightness]
d_list = [2, 8]
"""
    outcome = run_experiment(parse_config(text))
    assert len(outcome.curves) == 2
    fit = outcome.meta["fit"]
    assert set(fit) == {"slope", "intercept", "r_squared"}
    assert outcome.meta["scaled_stat_by_d"]["d=8"] > outcome.meta["scaled_stat_by_d"]["d=2"]


def test_rotation_residual_rejects_unknown_regime():
    with pytest.raises(ValueError, match="regime"):
        run_rotation_residual(1.0, 0.5, "linear", 0.5, 10, 2, 1, np.array([2.0, 1.0]))


# ---------------------------------------------------------------------------
# command-line interface
# ---------------------------------------------------------------------------


def _write_config(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_cli_run_writes_files_and_lists_them(tmp_path, capsys):
    cfg = _write_config(tmp_path, TDN_CONFIG)
    outdir = tmp_path / "results"
    assert main(["run", cfg, "--outdir", str(outdir)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 3
    for p in printed:
        assert (outdir / p.split("/")[-1]).exists()


def test_cli_run_honors_the_outdir_environment_variable(tmp_path, capsys, monkeypatch):
    cfg = _write_config(tmp_path, TDN_CONFIG)
    envdir = tmp_path / "envout"
    monkeypatch.setenv("CONTRACT_SA_OUTDIR", str(envdir))
    assert main(["run", cfg]) == 0
    capsys.readouterr()
    assert (envdir / "smoke-tdn.csv").exists()


def test_cli_run_usage_failures_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", str(tmp_path / "missing.toml")])
    assert exc.value.code == 2

    bad = _write_config(tmp_path, TDN_CONFIG + "bogus = 1\n", "bad.toml")
    outdir = tmp_path / "never"
    with pytest.raises(SystemExit) as exc:
        main(["run", bad, "--outdir", str(outdir)])
    assert exc.value.code == 2
    assert "bogus" in capsys.readouterr().err
    assert not outdir.exists()  # nothing was written

    zero = _write_config(tmp_path, TDN_CONFIG.replace("paths = 2", "paths = 0"), "zero.toml")
    with pytest.raises(SystemExit) as exc:
        main(["run", zero, "--outdir", str(outdir)])
    assert exc.value.code == 2
    assert not outdir.exists()


def test_cli_bounds_compute_matches_the_library(tmp_path, capsys):
    params = """\
[theorem4]
beta = 0.9
n = 2
initial_err_sq = 4.0
v_pi_norm_sq = 9.0
"""
    path = _write_config(tmp_path, params, "t4.toml")
    assert main(["bounds", "compute", "--theorem", "4", "--params", path, "--k-max", "50"]) == 0
    out = capsys.readouterr().out
    ks = record_grid(50)
    eps = bnd.theorem4_eps_cap(0.9, 2)
    vals = np.asarray(bnd.theorem4_bound(0.9, 2, eps, 4.0, 9.0, ks))
    expected = curve_to_csv(Curve(label="theorem-4", ks=ks, bound=vals))
    assert out == expected


def test_cli_bounds_compute_writes_a_file(tmp_path, capsys):
    params = """\
[theorem2]
regime = "constant"
D = 2.0
A = 0.5
eps = 0.5
"""
    path = _write_config(tmp_path, params, "t2.toml")
    out_csv = tmp_path / "t2.csv"
    assert main([
        "bounds", "compute", "--theorem", "2", "--params", path,
        "--k-max", "10", "--out", str(out_csv),
    ]) == 0
    capsys.readouterr()
    lines = out_csv.read_text().splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 12
    k1_bound = float(lines[2].split(",")[3])
    assert k1_bound == pytest.approx(bnd.theorem2_bound(2.0, 0.5, 0.5, "constant", 1))


def test_cli_bounds_rejects_bad_parameters(tmp_path, capsys):
    path = _write_config(tmp_path, "[theorem4]\nbeta = 1.5\nn = 1\ninitial_err_sq = 1.0\nv_pi_norm_sq = 1.0\n")
    with pytest.raises(SystemExit) as exc:
        main(["bounds", "compute", "--theorem", "4", "--params", path, "--k-max", "5"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_cli_envelope_eval_prints_the_closed_form(tmp_path, capsys):
    spec = """\
[envelope]
mu = 1.0

[envelope.contraction_norm]
kind = "l2"

[envelope.smoothing_norm]
kind = "l2"
"""
    path = _write_config(tmp_path, spec, "env.toml")
    assert main(["envelope", "eval", "--spec", path, "--x", "3,4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "value,residual,u0,u1"
    assert lines[1] == "6.25,0.0,1.5,2.0"


def test_cli_verify_suite_passes(capsys):
    assert main(["verify", "lipschitz"]) == 0
    out = capsys.readouterr().out
    assert "PASS lipschitz" in out and out.strip().endswith("1/1 checks passed")
