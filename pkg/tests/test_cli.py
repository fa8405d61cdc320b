import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from robustpo.cli import load_config, main, output_dir, parse_config, read_policy, write_policy
from robustpo.envs import make_chain
from robustpo.errors import ArtifactError, ConfigError
from robustpo.mdp import SoftmaxPolicy

CHAIN = """
seed = 3

[environment]
name = "chain"
n_states = 4

[algorithm]
algorithm = "maxmin"
r = 0.5
iterations = {iterations}
init_noise = 0.1

[evaluation]
r_grid = [{grid}]
n_samples = 50
max_proposals = 200000
"""


def write_config(tmp_path, iterations=5, grid="0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9", extra=""):
    path = tmp_path / "run.toml"
    path.write_text(CHAIN.format(iterations=iterations, grid=grid) + extra)
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_missing_environment_section():
    with pytest.raises(ConfigError, match="environment"):
        parse_config("seed = 1\n")


def test_missing_environment_name():
    with pytest.raises(ConfigError, match="environment.name"):
        parse_config("[environment]\nn_states = 3\n")


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError, match="itterations"):
        parse_config('[environment]\nname = "chain"\nn_states = 3\n[algorithm]\nitterations = 3\n')
    with pytest.raises(ConfigError, match="colour"):
        parse_config('[environment]\nname = "tomato"\ncolour = "red"\n')


def test_toml_syntax_error_reports_location():
    with pytest.raises(ConfigError, match="line"):
        parse_config("[environment\n", "bad.toml")


def test_invalid_values_become_config_errors():
    with pytest.raises(ConfigError, match="algorithm"):
        parse_config('[environment]\nname = "chain"\nn_states = 3\n[algorithm]\nr = 1.5\n')


def test_sample_config_loads():
    cfg = load_config(Path(__file__).parents[1] / "configs" / "tomato_maxmin.toml")
    assert cfg.env_name == "tomato" and cfg.train.r == 0.4 and len(cfg.evaluation.r_grid) == 9


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = parse_config(f'out = "{tmp_path / "from_config"}"\n[environment]\nname = "chain"\nn_states = 3\n')
    monkeypatch.delenv("ROBUSTPO_OUT", raising=False)
    assert output_dir(cfg, None) == tmp_path / "from_config"
    monkeypatch.setenv("ROBUSTPO_OUT", str(tmp_path / "from_env"))
    assert output_dir(cfg, None) == tmp_path / "from_env"
    assert output_dir(cfg, str(tmp_path / "from_flag")) == tmp_path / "from_flag"


def test_policy_round_trip(tmp_path):
    pol = SoftmaxPolicy(np.random.default_rng(0).normal(size=(3, 2)))
    write_policy(tmp_path / "p.txt", pol, {"r": 0.5})
    np.testing.assert_array_equal(read_policy(tmp_path / "p.txt").logits, pol.logits)


@pytest.mark.parametrize("text", ["", "0 1\n", "# robustpo-policy n_states=2 n_actions=2\n0 1\n", "# robustpo-policy n_states=1 n_actions=2\n0 x\n"])
def test_malformed_policy_names_path(tmp_path, text):
    path = tmp_path / "broken.txt"
    path.write_text(text)
    with pytest.raises(ArtifactError, match="broken.txt"):
        read_policy(path)


def test_zero_iterations_writes_initial_policy(tmp_path):
    cfg = write_config(tmp_path, iterations=0, extra="")
    cfg.write_text(cfg.read_text().replace("init_noise = 0.1", "init_noise = 0.0"))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    np.testing.assert_array_equal(read_policy(tmp_path / "out" / "policy.txt").logits, make_chain(4).reference.logits)


def test_train_is_reproducible(tmp_path):
    cfg = write_config(tmp_path)
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    ma = json.loads((tmp_path / "a" / "manifest_train.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest_train.json").read_text())
    assert ma["outputs"] == mb["outputs"] and ma["config_sha256"] == mb["config_sha256"]
    assert len(read_rows(tmp_path / "a" / "train_log.csv")) == 5


def test_seed_override_changes_run(tmp_path):
    cfg = write_config(tmp_path)
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "11"])
    assert (tmp_path / "a" / "policy.txt").read_text() != (tmp_path / "b" / "policy.txt").read_text()
    assert json.loads((tmp_path / "b" / "manifest_train.json").read_text())["seed"] == 11


@pytest.fixture
def trained(tmp_path):
    cfg = write_config(tmp_path)
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "t")])
    return cfg, tmp_path / "t" / "policy.txt"


def test_evaluate_reference_and_artifacts(tmp_path, trained):
    cfg, pol = trained
    other = tmp_path / "other.txt"
    shutil.copy(pol, other)
    out = tmp_path / "e"
    assert main(["evaluate", "--config", str(cfg), "--out", str(out), "reference", str(pol), str(other)]) == 0
    rows = read_rows(out / "metrics.csv")
    assert [r["policy_id"] for r in rows] == ["reference", "policy", "other"]
    assert abs(float(rows[0]["worst"])) < 1e-12 and float(rows[0]["occ_unseen"]) == 0.0
    assert rows[1]["worst"] == rows[2]["worst"]


def test_evaluate_malformed_artifact(tmp_path, trained, capsys):
    cfg, _ = trained
    bad = tmp_path / "bad_policy.txt"
    bad.write_text("nonsense\n")
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "e"), str(bad)]) == 2
    assert "bad_policy.txt" in capsys.readouterr().err


def test_sweep_rows(tmp_path, trained):
    cfg, pol = trained
    out = tmp_path / "s"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "reference", str(pol), str(pol)]) == 0
    rows = read_rows(out / "sweep.csv")
    assert len(rows) == 27
    assert all(int(r["n_accepted"]) <= int(r["n_proposed"]) for r in rows)


def test_sweep_empty_grid(tmp_path, capsys):
    cfg = write_config(tmp_path, grid="")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"), "reference"]) == 2
    assert "r_grid" in capsys.readouterr().err


def test_grid_search(tmp_path):
    cfg = write_config(tmp_path, iterations=2, grid="0.3, 0.6")
    out = tmp_path / "g"
    assert main(["grid-search", "--config", str(cfg), "--out", str(out), "--jobs", "2"]) == 0
    assert len(read_rows(out / "grid.csv")) == 2
    assert (out / "policy_r0.3.txt").exists() and (out / "policy_r0.6.txt").exists()
    assert "best_r" in json.loads((out / "manifest_grid-search.json").read_text())


def test_oracle_passes(tmp_path, capsys):
    cfg = write_config(tmp_path, extra="\n[oracle]\nn_instances = 5\n")
    assert main(["oracle", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert capsys.readouterr().out.count("PASS") == 6


def test_oracle_tight_duality_tolerance(tmp_path):
    cfg = write_config(tmp_path, extra='\n[oracle]\nn_instances = 20\nchecks = ["strong-duality"]\n[oracle.tolerances]\nduality = 1e-12\n')
    assert main(["oracle", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0


def test_oracle_failure_is_replayable(tmp_path):
    cfg = write_config(tmp_path, extra='\n[oracle]\nn_instances = 3\nchecks = ["strong-duality"]\n[oracle.tolerances]\nduality = 0.0\n')
    out = tmp_path / "o"
    assert main(["oracle", "--config", str(cfg), "--out", str(out)]) == 1
    failure = out / "oracle_failure_strong-duality.json"
    doc = json.loads(failure.read_text())
    assert doc["check"] == "strong-duality" and "mu_pi" in doc["instance"]
    assert main(["oracle", "--config", str(cfg), "--out", str(out), "--replay", str(failure)]) == 1


def test_console_script_help():
    exe = shutil.which("robustpo")
    cmd = [exe, "--help"] if exe else [sys.executable, "-m", "robustpo.cli", "--help"]
    out = subprocess.run(cmd, capture_output=True, text=True, check=True).stdout
    for sub in ("train", "evaluate", "sweep", "grid-search", "oracle"):
        assert sub in out
