"""The experiment runner: config validation, artifact trees, exit codes."""

import filecmp
import json
import os
import textwrap
from pathlib import Path

import numpy as np
import pytest

from siwave.cli import (ConfigError, ExperimentConfig, KINDS, main,
                        parse_config)

pytestmark = pytest.mark.filterwarnings(
    "ignore:.*Matplotlib.*:UserWarning")


def write_config(tmp_path, text, name="config.yaml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def run_cli(*args):
    return main([str(a) for a in args])


# --------------------------------------------------------------------------
# config validation: every failure exits 2 with a line-anchored message

def test_defaults_parse_for_every_kind():
    for kind in KINDS:
        cfg = parse_config(kind, threads=2)
        assert isinstance(cfg, ExperimentConfig)
        assert cfg.kind == kind
        assert cfg.out == Path("artifacts") / kind
        assert cfg.threads == 2
        assert cfg.seed == 0
        assert cfg.figures is True


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError, match="unknown experiment kind"):
        parse_config("spectral-sweep")


def test_unknown_key_is_anchored(tmp_path, capsys):
    path = write_config(tmp_path, """\
        kind: profile-sweep
        n_knots: 4
        knotts: 9
        """)
    assert run_cli("profile-sweep", "--config", path) == 2
    err = capsys.readouterr().err
    assert f"{path}:3" in err
    assert "unknown key 'knotts'" in err


def test_kind_mismatch_is_anchored(tmp_path, capsys):
    path = write_config(tmp_path, """\
        kind: quench-study
        """)
    assert run_cli("effective-run", "--config", path) == 2
    err = capsys.readouterr().err
    assert f"{path}:1" in err
    assert "does not match subcommand 'effective-run'" in err


def test_bad_type_is_anchored(tmp_path, capsys):
    path = write_config(tmp_path, """\
        kind: profile-sweep
        r_min: 0.5
        n_knots: many
        """)
    assert run_cli("profile-sweep", "--config", path) == 2
    err = capsys.readouterr().err
    assert f"{path}:3" in err
    assert "'n_knots' expects a positive integer" in err


def test_duplicate_key_rejected(tmp_path, capsys):
    path = write_config(tmp_path, """\
        r_min: 0.5
        r_min: 0.7
        """)
    assert run_cli("profile-sweep", "--config", path) == 2
    err = capsys.readouterr().err
    assert f"{path}:2" in err
    assert "duplicate key 'r_min'" in err


def test_yaml_syntax_error_is_anchored(tmp_path, capsys):
    path = write_config(tmp_path, "r_min: [0.5,\n  oops\n")
    assert run_cli("profile-sweep", "--config", path) == 2
    assert "invalid YAML" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert run_cli("profile-sweep", "--config",
                   tmp_path / "nope.yaml") == 2
    assert "no such config file" in capsys.readouterr().err


def test_spec_invariant_violation(tmp_path, capsys):
    path = write_config(tmp_path, """\
        spec:
          epsilon: -0.1
        """)
    assert run_cli("profile-sweep", "--config", path) == 2
    err = capsys.readouterr().err
    assert f"{path}:1" in err
    assert "epsilon must be positive" in err


def test_override_without_value(capsys):
    assert run_cli("profile-sweep", "--override", "n_knots") == 2
    assert "expected KEY=VALUE" in capsys.readouterr().err


def test_override_bad_value_is_anchored(capsys):
    assert run_cli("profile-sweep", "--override", "n_knots=maybe") == 2
    err = capsys.readouterr().err
    assert "--override n_knots" in err
    assert "positive integer" in err


def test_ascending_eps_ladder_rejected(capsys):
    assert run_cli("convergence-study", "--override",
                   "eps_list=[0.05, 0.1, 0.2]") == 2
    assert "strictly descending" in capsys.readouterr().err


def test_grid_keys_go_together(capsys):
    assert run_cli("profile-sweep", "--override",
                   "grid_half_width=20.0") == 2
    assert "go together" in capsys.readouterr().err


def test_bad_seed_rejected(capsys):
    assert run_cli("profile-sweep", "--override", "seed=-3") == 2
    assert "seed" in capsys.readouterr().err


def test_nonpositive_threads_rejected():
    with pytest.raises(ConfigError, match="--threads"):
        parse_config("profile-sweep", threads=0)


# --------------------------------------------------------------------------
# artifact trees on the happy path

REQUIRED_FILES = ("config.yaml", "manifest.json", "summary.json")


def check_tree(outdir, *extra):
    for name in REQUIRED_FILES + extra:
        assert (outdir / name).is_file(), name
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["tool"] == "siwave"
    assert manifest["status"] in ("ok", "check-failure")
    listed = set(manifest["artifacts"])
    on_disk = {str(p.relative_to(outdir)) for p in outdir.rglob("*")
               if p.is_file() and p != outdir / "manifest.json"}
    assert listed == on_disk
    summary = json.loads((outdir / "summary.json").read_text())
    assert summary["kind"] == manifest["kind"]
    return manifest, summary


def test_profile_sweep_tree_and_determinism(tmp_path):
    args = ("profile-sweep", "--threads", 2,
            "--override", "n_knots=4", "--override", "r_max=4.0")
    assert run_cli(*args, "--out", tmp_path / "a") == 0
    assert run_cli(*args, "--out", tmp_path / "b") == 0
    _, summary = check_tree(tmp_path / "a", "mu_curve.csv")
    assert summary["passed"] is True
    names = [c["name"] for c in summary["checks"]]
    assert "el_residual_max" in names

    profiles = sorted((tmp_path / "a" / "profiles").glob("*.csv"))
    assert len(profiles) == 4
    # identical config and threads reproduce every payload byte for byte
    for rel in ("mu_curve.csv", "summary.json", "config.yaml",
                *(f"profiles/{p.name}" for p in profiles)):
        assert filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel,
                           shallow=False), rel


def test_profile_sweep_csv_is_full_precision(tmp_path):
    assert run_cli("profile-sweep", "--out", tmp_path, "--threads", 2,
                   "--override", "n_knots=2", "--override",
                   "figures=false") == 0
    header, row = (tmp_path / "mu_curve.csv").read_text().splitlines()[:2]
    assert header.split(",")[:3] == ["R", "mu", "mu_prime"]
    mu = row.split(",")[1]
    assert len(mu.replace(".", "").replace("-", "").lstrip("0")) >= 16


def test_spectrum_map_tree(tmp_path):
    assert run_cli("spectrum-map", "--out", tmp_path, "--threads", 2,
                   "--seed", 11,
                   "--override", "n_knots=2", "--override", "k=6",
                   "--override", "n_samples=60") == 0
    _, summary = check_tree(tmp_path, "spectrum.csv")
    assert summary["passed"] is True
    header = (tmp_path / "spectrum.csv").read_text().splitlines()[0]
    assert header == ("R,lambda_0,lambda_1,kernel_residual,gap,"
                      "lambda_star,violations,min_quotient")
    resolved = (tmp_path / "config.yaml").read_text()
    assert "seed: 11" in resolved


def test_effective_run_tree(tmp_path):
    assert run_cli("effective-run", "--out", tmp_path, "--threads", 2,
                   "--override", "T_max=2.0",
                   "--override", "table_knots=8") == 0
    _, summary = check_tree(tmp_path, "trajectory.csv", "run_info.json")
    assert summary["passed"] is True
    info = json.loads((tmp_path / "run_info.json").read_text())
    assert info["quench_time"] is not None
    assert (tmp_path / "figures" / "trajectory.png").is_file()


def test_quench_study_tree(tmp_path):
    assert run_cli("quench-study", "--out", tmp_path, "--threads", 2,
                   "--override", "T_max=4.0",
                   "--override", "n_samples=100",
                   "--override", "table_knots=8") == 0
    _, summary = check_tree(tmp_path, "trajectory.csv", "envelopes.json")
    assert summary["passed"] is True
    env = json.loads((tmp_path / "envelopes.json").read_text())
    assert env["passed"] is True
    assert env["c_hi"] > env["c_lo"] > 0
    assert env["R0"] == pytest.approx(env["R_star"] + env["delta"])


def test_full_sim_tree(tmp_path):
    assert run_cli("full-sim", "--out", tmp_path, "--threads", 2,
                   "--override", "T_max=0.5",
                   "--override", "n_snapshots=6") == 0
    _, summary = check_tree(tmp_path, "run_info.json")
    assert summary["passed"] is True
    assert (tmp_path / "fields" / "snapshot_000.csv").is_file()
    assert (tmp_path / "fields" / "energy.csv").is_file()
    info = json.loads((tmp_path / "run_info.json").read_text())
    assert info["causal_deviation"] <= 1e-12
    assert info["energy_drift"] <= 1e-4


@pytest.fixture(scope="module")
def coarse_study(tmp_path_factory):
    """A cheap epsilon ladder: main slopes converge, the control does not
    yet separate, so the run lands on the check-failure exit."""
    outdir = tmp_path_factory.mktemp("coarse_study")
    code = run_cli("convergence-study", "--out", outdir, "--threads", 4,
                   "--override", "eps_list=[0.2, 0.1, 0.05]",
                   "--override", "y_star=0.7")
    return code, outdir


def test_convergence_study_tree(coarse_study):
    code, outdir = coarse_study
    manifest, summary = check_tree(
        outdir, "error_report.json", "trajectory.csv", "mu_curve.csv",
        "envelopes.json", "series_eps0.2.csv", "series_eps0.1.csv",
        "series_eps0.05.csv")
    env = json.loads((outdir / "envelopes.json").read_text())
    assert env["hypothesis_ok"] is True
    assert env["max_violation"] <= 1e-6
    assert manifest["kind"] == "convergence-study"
    assert (outdir / "profiles").is_dir()
    assert (outdir / "fields" / "snapshot_000.csv").is_file()
    assert (outdir / "figures" / "convergence.png").is_file()
    report = json.loads((outdir / "error_report.json").read_text())
    assert report["slopes"]["L1H1"]["slope"] == pytest.approx(1.93, abs=0.1)


def test_check_failure_exits_3(coarse_study):
    code, outdir = coarse_study
    assert code == 3
    summary = json.loads((outdir / "summary.json").read_text())
    assert summary["passed"] is False
    failed = {c["name"] for c in summary["checks"] if not c["passed"]}
    assert failed == {"control_slope"}
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["status"] == "check-failure"


def test_compute_failure_exits_1(tmp_path, capsys):
    # a band too narrow for the interface decay cannot seed the wave run
    code = run_cli("full-sim", "--out", tmp_path, "--threads", 2,
                   "--override", "delta=0.2")
    assert code == 1
    assert "band too narrow" in capsys.readouterr().err
    # partial artifacts survive, with the failure on record
    assert (tmp_path / "config.yaml").is_file()
    assert not (tmp_path / "summary.json").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert "band too narrow" in manifest["error"]


def test_overrides_beat_config(tmp_path):
    path = write_config(tmp_path, """\
        kind: profile-sweep
        n_knots: 10
        figures: true
        """)
    outdir = tmp_path / "out"
    assert run_cli("profile-sweep", "--config", path, "--out", outdir,
                   "--threads", 2, "--override", "n_knots=3",
                   "--override", "figures=false") == 0
    assert len(list((outdir / "profiles").glob("*.csv"))) == 3
    assert "n_knots: 3" in (outdir / "config.yaml").read_text()
    assert not (outdir / "figures").exists()


def test_artifact_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("SIWAVE_ARTIFACT_ROOT", str(tmp_path))
    assert run_cli("profile-sweep", "--out", "nested/run1", "--threads", 2,
                   "--override", "n_knots=2",
                   "--override", "figures=false") == 0
    assert (tmp_path / "nested" / "run1" / "summary.json").is_file()
    # absolute paths are left alone
    cfg = parse_config("profile-sweep", out=tmp_path / "abs")
    assert cfg.out == tmp_path / "abs"


def test_config_seed_used_when_no_flag(tmp_path):
    path = write_config(tmp_path, """\
        kind: spectrum-map
        seed: 42
        """)
    cfg = parse_config("spectrum-map", config_path=path)
    assert cfg.seed == 42
    cfg = parse_config("spectrum-map", config_path=path, seed=7)
    assert cfg.seed == 7
