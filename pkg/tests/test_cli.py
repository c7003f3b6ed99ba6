import json
import os

import pytest

from dflsim import cli
from dflsim.core import ConfigError

GOOD_CONFIG = """\
[experiment]
m = 6
rounds = 2
seed = 3
algorithm = afind_plus

[data]
partition = cluster:2
num_classes = 4
d_in = 8
n_per_client = 30

[model]
d_hidden = 6
k_w = 2
k_beta = 2

[collaboration]
tau = 0.5
upsilon = 0.1
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(GOOD_CONFIG)
    return str(path)


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------

def test_load_config_reads_sections(config_path):
    cfg = cli.load_config(config_path)
    assert cfg.m == 6
    assert cfg.rounds == 2
    assert cfg.partition == "cluster:2"
    assert cfg.d_hidden == 6


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        cli.load_config("/nonexistent/exp.ini")


def test_load_config_rejects_unknown_section(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[experiment]\nm = 4\nrounds = 1\n[wat]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown config section"):
        cli.load_config(str(path))


def test_load_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[experiment]\nm = 4\nrounds = 1\nwat = 1\n")
    with pytest.raises(ConfigError, match="unknown config key"):
        cli.load_config(str(path))


def test_load_config_requires_m_and_rounds(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[experiment]\nseed = 1\n")
    with pytest.raises(ConfigError, match="missing required key"):
        cli.load_config(str(path))


def test_load_config_reports_bad_values(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[experiment]\nm = four\nrounds = 1\n")
    with pytest.raises(ConfigError, match="bad value"):
        cli.load_config(str(path))


def test_overrides_with_and_without_section(config_path):
    cfg = cli.load_config(config_path,
                          ["experiment.rounds=5", "tau=0.4", "d_hidden=9"])
    assert cfg.rounds == 5
    assert cfg.tau == 0.4
    assert cfg.d_hidden == 9


def test_override_none_literal(config_path):
    cfg = cli.load_config(config_path, ["theta_override=0.1"])
    assert cfg.theta_override == 0.1
    cfg = cli.load_config(config_path, ["theta_override=none"])
    assert cfg.theta_override is None


def test_override_rejects_bad_forms(config_path):
    with pytest.raises(ConfigError):
        cli.load_config(config_path, ["rounds"])
    with pytest.raises(ConfigError):
        cli.load_config(config_path, ["nope=3"])
    with pytest.raises(ConfigError):
        cli.load_config(config_path, ["experiment.nope=3"])


# ---------------------------------------------------------------------------
# output root resolution
# ---------------------------------------------------------------------------

def test_out_dir_priority(config_path, monkeypatch):
    cfg = cli.load_config(config_path)
    monkeypatch.delenv(cli.OUT_ENV_VAR, raising=False)
    assert cli.resolve_out_dir(cfg, "explicit") == "explicit"
    assert cli.resolve_out_dir(cfg, None) == cfg.out_dir
    monkeypatch.setenv(cli.OUT_ENV_VAR, "/tmp/from-env")
    assert cli.resolve_out_dir(cfg, None) == "/tmp/from-env"
    assert cli.resolve_out_dir(cfg, "explicit") == "explicit"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def test_run_writes_artifacts(config_path, tmp_path, capsys):
    out = str(tmp_path / "out")
    rc = cli.main(["run", "--config", config_path, "--seed", "3,4",
                   "--out", out])
    assert rc == 0
    (run_dir,) = [d for d in os.listdir(out) if d.startswith("run_")]
    files = set(os.listdir(os.path.join(out, run_dir)))
    assert files == {"metrics_seed3.csv", "metrics_seed4.csv",
                     "audit_seed3.csv", "audit_seed4.csv", "summary.json"}
    with open(os.path.join(out, run_dir, "summary.json")) as fh:
        summary = json.load(fh)
    assert summary["config"]["m"] == 6
    assert len(summary["seeds"]) == 2
    assert 0.0 <= summary["best_acc_mean"] <= 1.0
    assert "wrote" in capsys.readouterr().out


def test_run_respects_env_out(config_path, tmp_path, monkeypatch):
    env_out = str(tmp_path / "env-out")
    monkeypatch.setenv(cli.OUT_ENV_VAR, env_out)
    rc = cli.main(["run", "--config", config_path])
    assert rc == 0
    assert any(d.startswith("run_") for d in os.listdir(env_out))


def test_run_reports_config_errors(config_path, capsys):
    rc = cli.main(["run", "--config", config_path, "--set", "tau=-1"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_run_reports_divergence(config_path, tmp_path, capsys):
    rc = cli.main(["run", "--config", config_path, "--out", str(tmp_path / "x"),
                   "--set", "eta_w=1e200", "--set", "eta_beta=1e200",
                   "--set", "k_w=5", "--set", "k_beta=5"])
    assert rc == 2
    assert "diverged" in capsys.readouterr().err


def test_compare_writes_table(config_path, tmp_path, capsys):
    out = str(tmp_path / "cmp")
    rc = cli.main(["compare", "--config", config_path,
                   "--algos", "local_only,gossip_k:2",
                   "--seeds", "0,1", "--out", out])
    assert rc == 0
    lines = (tmp_path / "cmp" / "compare.csv").read_text().splitlines()
    assert lines[0] == "algorithm,best_mean,best_std,final_mean,final_std"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["local_only", "gossip_k:2"]
    console = capsys.readouterr().out
    assert "local_only" in console and "gossip_k:2" in console


def test_compare_rejects_bad_algorithm(config_path, tmp_path):
    rc = cli.main(["compare", "--config", config_path, "--algos", "wat",
                   "--seeds", "0", "--out", str(tmp_path / "cmp")])
    assert rc == 1


def test_toy_smoke_single_seed(tmp_path, capsys):
    rc = cli.main(["toy", "--seeds", "0", "--out", str(tmp_path / "toy")])
    assert rc == 0
    lines = (tmp_path / "toy" / "toy_report.csv").read_text().splitlines()
    assert lines[0] == "regime,seed,acc"
    regimes = {ln.split(",")[0] for ln in lines[1:]}
    assert regimes == {"solo_2", "coop_12", "coop_23", "coop_123"}
    out = capsys.readouterr().out
    for regime in regimes:
        assert regime in out
