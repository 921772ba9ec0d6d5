import pytest

from graft.config import RunConfig, load_config, read_config_file
from graft.errors import ConfigError


def test_defaults_and_validation():
    cfg = load_config(env={})
    assert cfg == RunConfig()
    with pytest.raises(ConfigError):
        RunConfig(source_switch=4)
    with pytest.raises(ConfigError):
        RunConfig(horizon="daily")
    with pytest.raises(ConfigError):
        RunConfig(epochs=0)


def test_file_include_env_and_override_precedence(tmp_path):
    (tmp_path / "base.cfg").write_text("# shared\nepochs = 5\nlr = 0.01\nd_model = 8\n")
    (tmp_path / "run.cfg").write_text("include base.cfg\nepochs = 7   # wins over base\nsparse = no\n")
    assert read_config_file(tmp_path / "run.cfg") == {"epochs": 7, "lr": 0.01, "d_model": 8, "sparse": False}
    cfg = load_config(tmp_path / "run.cfg", env={"GRAFT_LR": "0.5", "GRAFT_SEED": "3"})
    assert (cfg.epochs, cfg.lr, cfg.seed, cfg.d_model, cfg.sparse) == (7, 0.5, 3, 8, False)
    cfg = load_config(tmp_path / "run.cfg", env={"GRAFT_SEED": "3"}, overrides={"seed": 9, "horizon": None})
    assert cfg.seed == 9 and cfg.horizon == "stlf"


def test_bad_files(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("epochs = many\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        load_config(p, env={})
    p.write_text("no_such_key = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(p, env={})
    p.write_text("just words\n")
    with pytest.raises(ConfigError):
        load_config(p, env={})
    p.write_text("include bad.cfg\n")
    with pytest.raises(ConfigError, match="cycle"):
        load_config(p, env={})
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.cfg", env={})
    with pytest.raises(ConfigError):
        load_config(env={"GRAFT_EPOCHS": "x"})


def test_region_list():
    assert RunConfig(regions="R1, R2,,").region_list == ("R1", "R2")
