import json

import pytest

from gdmadvect.cli import main


def _text(path):
    return path.read_bytes().decode()


def _run(*args):
    return main(list(args))


def test_run_writes_outputs(tmp_path):
    assert _run("run", "--case", "case2", "--method", "cvfe", "--n", "16", "--theta", "0.5",
                "--p", "2", "--alpha", "2", "--out", str(tmp_path)) == 0
    rec = json.loads((tmp_path / "case2_cvfe_n16.json").read_text())
    csv = _text(tmp_path / "case2_cvfe_n16_state.csv")
    assert csv.startswith(f"# config_hash={rec['config_hash']}\r\n")
    assert rec["resolved_config"]["theta"] == 0.5
    assert rec["assumptions"]["h_D"] == "mesh size"
    assert set(rec["errors"]) == {"errl1", "errl2", "errlinf"}


def test_rerun_bitwise_identical(tmp_path):
    args = ["run", "--case", "case1", "--method", "hfv", "--levels", "2", "--p", "3",
            "--alpha", "1"]
    assert _run(*args, "--out", str(tmp_path / "a")) == 0
    assert _run(*args, "--out", str(tmp_path / "b")) == 0
    for name in ("case1_hfv_level2.json", "case1_hfv_level2_state.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_theta_out_of_range(tmp_path, capsys):
    assert _run("run", "--theta", "0.3", "--out", str(tmp_path)) == 2
    assert "[1/2, 1]" in capsys.readouterr().err


@pytest.mark.parametrize("args", [
    ["convergence", "--n", ""],
    ["convergence", "--n", " , "],
    ["convergence", "--method", "cvfe,hfv"],
    ["run", "--method", "cvfe", "--gamma", "0.5"],
    ["run", "--method", "upwind", "--beta", "2"],
    ["run", "--method", "cvfe", "--mesh-family", "refined"],
    ["run", "--n", "4,8"],
    ["run", "--lambda", "bogus"],
    ["run", "--lambda", "supg:-1"],
    ["run", "--dt", "fast"],
    ["run", "--p", "1"],
    ["run", "--method", "hfv", "--gamma", "0"],
    ["diagnose", "--method", "upwind"],
])
def test_config_errors(tmp_path, args):
    assert _run(*args, "--out", str(tmp_path)) == 2


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# study\ncase = case1\nmethod = mlnc-p1\nn = 6\np = 3\nalpha = 1\n")
    assert _run("run", "--config", str(cfg), "--p", "1.5", "--out", str(tmp_path)) == 0
    rec = json.loads((tmp_path / "case1_mlnc-p1_n6.json").read_text())
    assert rec["resolved_config"]["p"] == 1.5
    assert rec["resolved_config"]["alpha"] == 1.0
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert _run("run", "--config", str(bad)) == 2


def test_convergence_table(tmp_path):
    assert _run("convergence", "--case", "case2", "--method", "upwind", "--n", "4,8",
                "--out", str(tmp_path)) == 0
    lines = _text(tmp_path / "case2_upwind_convergence.csv").split("\r\n")
    assert lines[1] == "h,errl2,rate2,errl1,rate1,errlinf,rateinf,umin,umax"
    assert len([l for l in lines[2:] if l]) == 2
    assert lines[2].split(",")[2] == "" and lines[3].split(",")[2] != ""


def test_profile_and_diagnose(tmp_path):
    assert _run("profile", "--case", "case1", "--method", "cvfe", "--n", "8", "--samples", "7",
                "--out", str(tmp_path)) == 0
    prof = _text(tmp_path / "case1_cvfe_n8_profile.csv").split("\r\n")
    assert prof[1] == "s,value" and len([l for l in prof[2:] if l]) == 7
    assert _run("diagnose", "--case", "case2", "--method", "hfv", "--levels", "2",
                "--seed", "5", "--out", str(tmp_path)) == 0
    rep = json.loads((tmp_path / "case2_hfv_level2_estimators.json").read_text())
    assert rep["W_D(velocity)"]["kind"] == "sampled lower bound"
    assert abs(rep["energy"]["max_abs_relative_slack"]) <= 1e-8
    assert _text(tmp_path / "case2_hfv_level2_energy.csv").startswith("# config_hash=")


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    from gdmadvect import cli
    from gdmadvect.errors import NewtonDivergence

    def boom(*a, **k):
        raise NewtonDivergence("no convergence", residual=1.0)

    monkeypatch.setattr(cli, "run", boom)
    assert _run("run", "--p", "3", "--n", "4", "--out", str(tmp_path)) == 1
