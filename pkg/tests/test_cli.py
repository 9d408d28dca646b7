from pathlib import Path

import pytest

from roughroad.cli import read_config, run

CONFIGS = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*/*.cfg"))

# recipes that certify nonexistence exit with 3
EXPECT_3 = {
    "case1c/profiles.cfg", "case1d/profiles.cfg", "case2c/profiles.cfg", "case2d/profiles.cfg",
    "case1d/viscous_profile.cfg", "case2d/viscous_profile.cfg",
}

DOWN = ["--v-minus", "2", "--v-plus", "1"]


def test_classify_prints_text_and_key_values(capsys):
    code = run(["classify", *DOWN, "--fbar", "0.1875", "--side", "low-high"])
    out = capsys.readouterr().out
    assert code == 0
    assert "Case 1A: InfinitelyMany" in out
    lines = dict(line.split("=", 1) for line in out.splitlines() if "=" in line)
    assert lines["label"] == "1A" and lines["verdict"] == "InfinitelyMany"
    assert lines["q0_range"] == "(0.25, 0.75]"


def test_unknown_flag_exits_2_with_usage(capsys):
    assert run(["classify", "--bogus"]) == 2
    err = capsys.readouterr().err
    assert "usage" in err and "--bogus" in err


def test_validation_errors_exit_2(capsys):
    assert run(["classify", *DOWN, "--rho-minus", "0.6", "--rho-plus", "0.7"]) == 2
    assert run(["profile-w", "--v-minus", "2", "--v-plus", "1", "--ell", "-0.2", "--fbar", "0.1875"]) == 2
    assert run(["ftl", *DOWN]) == 2
    assert "error" in capsys.readouterr().err


def test_nonexistence_exits_3(tmp_path, capsys):
    assert run(["profile-q", "--case", "1C", "-o", str(tmp_path / "q.csv")]) == 3
    captured = capsys.readouterr()
    assert "no profile" in (captured.out + captured.err).lower()
    assert not (tmp_path / "q.csv").exists()


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# test recipe\ncommand = classify\nv_minus = 2\nv_plus = 1\n"
                   "fbar = 0.1875\nside = low-high\n", encoding="utf-8")
    assert read_config(cfg)["command"] == "classify"
    assert run(["--config", str(cfg)]) == 0
    assert "label=1A" in capsys.readouterr().out
    assert run(["--config", str(cfg), "classify", "--side", "high-low"]) == 0
    assert "label=1D" in capsys.readouterr().out


def test_profile_q_is_deterministic(tmp_path, capsys):
    outs = []
    for k in range(2):
        path = tmp_path / f"q{k}.csv"
        assert run(["profile-q", "--case", "1A", "--q0", "0.6", "--x-min", "-4", "-o", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].startswith(b"x,Q\n")


def test_family_ftl_and_viscous_outputs(tmp_path, capsys):
    assert run(["family", "--case", "1A", "--n-members", "3", "--x-min", "-2",
                "-o", str(tmp_path / "fam")]) == 0
    assert (tmp_path / "fam" / "index.csv").read_text().startswith("q0,filename\n")
    assert run(["ftl", *DOWN, "--riemann", "0.3,0.4", "--n-left", "10", "--n-right", "10",
                "--T", "0.2", "--dt", "0.01", "--record-every", "5", "-o", str(tmp_path / "t.csv"),
                "--gnuplot"]) == 0
    assert (tmp_path / "t.csv").read_text().startswith("t,i,z,rho\n")
    assert (tmp_path / "t.csv.events.csv").exists() and (tmp_path / "t.csv.gp").exists()
    assert run(["viscous-profile", "--case", "1A", "-o", str(tmp_path / "v.csv")]) == 0
    assert run(["viscous-pde", *DOWN, "--riemann", "0.6,0.7", "--T", "0.05", "--dx", "0.01",
                "--x-lo", "-0.5", "--x-hi", "0.5", "-o", str(tmp_path / "p.csv")]) == 0
    assert (tmp_path / "p.csv").read_text().startswith("t,x,rho\n")
    assert run(["diagnostics", "--case", "1A", "--q0", "0.6"]) == 0
    out = capsys.readouterr().out
    assert "transversality=pass" in out


@pytest.mark.slow
@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda p: f"{p.parent.name}/{p.name}")
def test_shipped_configs(cfg, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    rel = f"{cfg.parent.name}/{cfg.name}"
    assert run(["--config", str(cfg)]) == (3 if rel in EXPECT_3 else 0)
