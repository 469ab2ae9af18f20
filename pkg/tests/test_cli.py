"""End-to-end runs of the command line against the bundled configs."""

import json
import os
import shutil
import subprocess
from importlib import resources

import pytest

from sdelab import cli

OU = str(resources.files("sdelab") / "configs" / "ou.toml")
CUBIC = str(resources.files("sdelab") / "configs" / "cubic.toml")


def load(out, name):
    with open(os.path.join(out, name)) as fh:
        d = json.load(fh)
    d.pop("generated", None)
    return d


def write_config(path, text):
    path.write_text(text)
    return str(path)


SEEDLESS = """
[model]
dim = 2
p = 4.0
A = [["1", "0"], ["0", "1"]]
G = ["0 - x1", "0 - x2"]

[simulate]
x0 = [0.0, 0.0]
paths = 120
step = 0.01
horizon = 0.5
"""


def test_check_ellipticity_on_bundled_model(tmp_path):
    out = str(tmp_path)
    code = cli.main(["check-ellipticity", "--config", OU, "--out", out])
    assert code == 0
    d = load(out, "ellipticity.json")
    assert d["pass"] is True
    assert d["min_eigenvalue"] == 1.0


def test_check_integrability_finite(tmp_path):
    out = str(tmp_path)
    assert cli.main(["check-integrability", OU, "--out", out]) == 0
    assert load(out, "integrability.json")["verdict"] == "finite"


def test_check_lyapunov_minimal_m_is_one(tmp_path):
    out = str(tmp_path)
    code = cli.main(["check-lyapunov", OU, "--out", out, "--criterion", "c2"])
    assert code == 0
    d = load(out, "lyapunov.json")
    assert abs(d["minimal_M"] - 1.0) <= 0.01
    assert d["saturation"]["saturating"] is True

    code = cli.main(["check-lyapunov", OU, "--out", out,
                     "--criterion", "c2", "--radius-max", "20"])
    assert code == 0
    d = load(out, "lyapunov.json")
    assert d["region"]["radius"] == 20.0
    assert abs(d["minimal_M"] - 1.0) <= 0.01


def test_check_lyapunov_flags_cubic_growth(tmp_path):
    out = str(tmp_path)
    code = cli.main(["check-lyapunov", CUBIC, "--out", out])
    assert code == 1
    d = load(out, "lyapunov.json")
    assert d["saturation"]["saturating"] is False


def test_solve_density_writes_files_and_matches_reference(tmp_path):
    out = str(tmp_path)
    assert cli.main(["solve-density", OU, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "density.json"))
    assert os.path.exists(os.path.join(out, "density.csv"))
    d = load(out, "density_report.json")
    assert d["flux_residual"] < 1e-10
    assert d["max_relative_error_vs_reference"] < 0.1
    assert abs(d["mass_on_grid"] - 1.0) < 1e-8


def test_check_divfree_passes(tmp_path):
    out = str(tmp_path)
    assert cli.main(["check-divfree", OU, "--out", out]) == 0
    d = load(out, "divfree.json")
    assert d["worst_normalized"] <= d["tolerance"]
    assert len(d["residuals"]) > 0


def test_recurrence_satisfied(tmp_path):
    out = str(tmp_path)
    assert cli.main(["recurrence", OU, "--out", out]) == 0
    assert load(out, "recurrence.json")["criterion"] == "satisfied"
    with open(os.path.join(out, "recurrence.csv")) as fh:
        header = fh.readline().strip()
    assert header == "r,v1,v2,v,a,trusted"


def test_simulate_ou_sees_no_explosions(tmp_path):
    out = str(tmp_path)
    code = cli.main(["simulate", OU, "--out", out, "--paths", "200"])
    assert code == 0
    d = load(out, "simulate.json")
    assert d["explosion"]["estimate"] == 0.0
    with open(os.path.join(out, "simulate.csv")) as fh:
        assert sum(1 for _ in fh) == 201


def test_simulate_cubic_explosion_is_a_finding_not_an_error(tmp_path):
    out = str(tmp_path)
    code = cli.main(["simulate", CUBIC, "--out", out,
                     "--paths", "1000", "--horizon", "2"])
    assert code == 0
    d = load(out, "simulate.json")
    assert d["explosion"]["estimate"] >= 0.95
    assert d["explosion"]["ci_low"] > 0.9


def test_simulate_artifacts_identical_across_runs_and_threads(tmp_path):
    outs = [str(tmp_path / f"g{k}") for k in (1, 2)]
    for out, threads in zip(outs, ("1", "4")):
        code = cli.main(["simulate", OU, "--out", out, "--paths", "200",
                         "--threads", threads])
        assert code == 0
    a, b = (load(out, "simulate.json") for out in outs)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    csvs = [open(os.path.join(out, "simulate.csv"), "rb").read()
            for out in outs]
    assert csvs[0] == csvs[1]


def test_seed_flag_beats_config_seed(tmp_path, capsys):
    out = str(tmp_path)
    code = cli.main(["simulate", OU, "--out", out, "--paths", "120",
                     "--step", "0.01", "--horizon", "0.5", "--seed", "5"])
    assert code == 0
    assert "seed: 5 (--seed)" in capsys.readouterr().out
    assert load(out, "simulate.json")["seed"] == 5


def test_seed_env_var_fallback(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path / "m.toml", SEEDLESS)
    monkeypatch.setenv("SDE_LAB_SEED", "42")
    out = str(tmp_path / "out")
    assert cli.main(["simulate", cfg, "--out", out]) == 0
    assert "seed: 42 (SDE_LAB_SEED)" in capsys.readouterr().out
    assert load(out, "simulate.json")["seed"] == 42


def test_seed_drawn_and_printed_when_unset(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path / "m.toml", SEEDLESS)
    monkeypatch.delenv("SDE_LAB_SEED", raising=False)
    out = str(tmp_path / "out")
    assert cli.main(["simulate", cfg, "--out", out]) == 0
    assert "(random)" in capsys.readouterr().out
    assert isinstance(load(out, "simulate.json")["seed"], int)


def test_verify_runs_the_configured_checks(tmp_path):
    out = str(tmp_path)
    assert cli.main(["verify", OU, "--out", out]) == 0
    d = load(out, "verify.json")
    names = [c["test"] for c in d["checks"]]
    assert names == ["martingale_residual", "qv_residual",
                     "drift_functional_check", "strong_consistency"]
    assert all(c["verdict"] == "pass" for c in d["checks"])


def test_verify_single_check_flag(tmp_path):
    out = str(tmp_path)
    code = cli.main(["verify", OU, "--out", out, "--check", "martingale"])
    assert code == 0
    d = load(out, "verify.json")
    assert len(d["checks"]) == 1
    assert d["checks"][0]["test"] == "martingale_residual"


def test_verify_invariance_needs_a_density(tmp_path):
    cfg = write_config(tmp_path / "m.toml", SEEDLESS)
    out = str(tmp_path / "out")
    code = cli.main(["verify", cfg, "--out", out, "--check", "invariance"])
    assert code == 2


def test_bad_configs_exit_two(tmp_path):
    out = str(tmp_path)
    assert cli.main(["check-ellipticity", str(tmp_path / "nope.toml"),
                     "--out", out]) == 2
    broken = write_config(tmp_path / "broken.toml", "dim = [unclosed")
    assert cli.main(["check-ellipticity", broken, "--out", out]) == 2
    nosec = write_config(tmp_path / "nosec.toml", SEEDLESS)
    assert cli.main(["check-divfree", nosec, "--out", out]) == 2


def test_failing_check_exits_one(tmp_path):
    cfg = write_config(tmp_path / "m.toml", """
[model]
dim = 2
p = 4.0
A = [["1", "0"], ["0", "0 - 1"]]
G = ["0", "0"]

[ellipticity]
region = { kind = "ball", center = [0.0, 0.0], radius = 2.0 }
""")
    out = str(tmp_path / "out")
    assert cli.main(["check-ellipticity", cfg, "--out", out]) == 1
    assert load(out, "ellipticity.json")["pass"] is False


def test_report_bundles_artifacts_with_config(tmp_path):
    out = str(tmp_path)
    cli.main(["check-ellipticity", OU, "--out", out])
    cli.main(["check-lyapunov", OU, "--out", out])
    assert cli.main(["report", OU, "--out", out]) == 0
    d = load(out, "report.json")
    assert set(d["artifacts"]) == {"ellipticity.json", "lyapunov.json"}
    assert d["config"]["model"]["dim"] == 2
    empty = str(tmp_path / "empty")
    os.makedirs(empty)
    assert cli.main(["report", OU, "--out", empty]) == 2


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as err:
        cli.main(["check-ellipticity"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        cli.main(["frobnicate", OU])
    assert err.value.code == 2


def test_console_script_is_installed(tmp_path):
    exe = shutil.which("sdelab")
    assert exe is not None
    proc = subprocess.run([exe, "check-ellipticity", OU,
                           "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "ellipticity: pass" in proc.stdout
