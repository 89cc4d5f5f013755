import os

import numpy as np
import pytest

from sdpi.cli import main, write_csv
from sdpi.config import default_config, load_config, render_config
from sdpi.errors import ConfigError


def test_default_config_complete():
    cfg = default_config()
    assert cfg["run"]["env"] == "duffing"
    assert cfg["sdpi"]["lambda_ic"] == 10.0
    assert cfg["verify"]["dims"] == [1, 2, 3]


def test_load_config_overlays(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nenv = lqr4\nseed = 9\n\n[sdpi]\nh = 0.02\nhidden = 32,32\n")
    cfg = load_config(str(path))
    assert cfg["run"]["env"] == "lqr4"
    assert cfg["run"]["seed"] == 9
    assert cfg["sdpi"]["h"] == 0.02
    assert cfg["sdpi"]["hidden"] == [32, 32]
    # untouched keys keep defaults
    assert cfg["sdpi"]["lr"] == 3e-3


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[sdpi]\nlearning_rate = 0.1\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[training]\nlr = 0.1\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_bad_value_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[sdpi]\nh = fast\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_missing_file_rejected():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/path.ini")


def test_render_round_trip(tmp_path):
    cfg = default_config()
    cfg["run"]["seed"] = 123
    path = tmp_path / "echo.ini"
    path.write_text(render_config(cfg))
    back = load_config(str(path))
    assert back == cfg


def test_write_csv_formatting(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b"], [(1, 0.1), (2, np.float64(1.0 / 3.0))])
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b"
    assert lines[2] == "2,0.33333333333333331"


def test_cli_unknown_env_exits_2(tmp_path):
    rc = main(["oracle-study", "--env", "lorenz", "--out", str(tmp_path)])
    assert rc == 2


def test_cli_misspelled_config_key_exits_2(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nsede = 1\n")
    rc = main(["verify-identities", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_cli_verify_identities_and_determinism(tmp_path):
    cfg = tmp_path / "quick.ini"
    cfg.write_text("[verify]\nseeds = 2\ndims = 1,2\n")
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    assert main(["verify-identities", "--config", str(cfg), "--seed", "3",
                 "--out", str(out1)]) == 0
    assert main(["verify-identities", "--config", str(cfg), "--seed", "3",
                 "--out", str(out2)]) == 0
    f1 = (out1 / "identity_defects.csv").read_bytes()
    f2 = (out2 / "identity_defects.csv").read_bytes()
    assert f1 == f2
    assert (out1 / "resolved_config.ini").exists()


def test_cli_verify_different_seed_changes_fields(tmp_path):
    cfg = tmp_path / "quick.ini"
    cfg.write_text("[verify]\nseeds = 1\ndims = 1\n")
    outs = []
    for seed in (0, 1):
        out = tmp_path / f"s{seed}"
        assert main(["verify-identities", "--config", str(cfg), "--seed", str(seed),
                     "--out", str(out)]) == 0
        outs.append((out / "identity_defects.csv").read_bytes())
    assert outs[0] != outs[1]


def test_cli_optimal_cost_small(tmp_path):
    cfg = tmp_path / "oc.ini"
    cfg.write_text("[optimal_cost]\nn_starts = 2\n\n[run]\nenv = lqr4\n")
    out = tmp_path / "oc_out"
    assert main(["optimal-cost", "--config", str(cfg), "--seed", "0",
                 "--out", str(out)]) == 0
    text = (out / "oracle_summary.csv").read_text()
    assert "direct-trajectory-opt" in text
    assert (out / "oracle_costs.csv").exists()
