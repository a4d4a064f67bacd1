"""Config.load resolution order: explicit arg → JAILVOTE_CONFIG → cwd jailvote.yaml,
plus flat-key routing and flag precedence."""

from datetime import date
from pathlib import Path

import pytest

from jailvote.config import Config, derive_seed
from jailvote.errors import ConfigError


def _write_cfg(path: Path, workdir: str):
    path.write_text(f"workdir: {workdir}\n", encoding="utf-8")


def test_explicit_arg_wins(tmp_path, monkeypatch):
    explicit = tmp_path / "explicit.yaml"
    _write_cfg(explicit, "/from/explicit")
    env_cfg = tmp_path / "env.yaml"
    _write_cfg(env_cfg, "/from/env")
    monkeypatch.setenv("JAILVOTE_CONFIG", str(env_cfg))
    cfg = Config.load(explicit)
    assert cfg.workdir == Path("/from/explicit")
    assert cfg.source == explicit


def test_env_var_used_when_no_arg(tmp_path, monkeypatch):
    env_cfg = tmp_path / "env.yaml"
    _write_cfg(env_cfg, "/from/env")
    monkeypatch.setenv("JAILVOTE_CONFIG", str(env_cfg))
    monkeypatch.chdir(tmp_path)  # cwd jailvote.yaml absent
    cfg = Config.load()
    assert cfg.workdir == Path("/from/env")


def test_cwd_config_used_when_no_arg_no_env(tmp_path, monkeypatch):
    monkeypatch.delenv("JAILVOTE_CONFIG", raising=False)
    _write_cfg(tmp_path / "jailvote.yaml", "/from/cwd")
    monkeypatch.chdir(tmp_path)
    cfg = Config.load()
    assert cfg.workdir == Path("/from/cwd")


def test_missing_everything_returns_defaults(tmp_path, monkeypatch):
    monkeypatch.delenv("JAILVOTE_CONFIG", raising=False)
    monkeypatch.chdir(tmp_path)
    cfg = Config.load()
    assert cfg.workdir == Path("./work")
    assert cfg.linkage.threshold == 0.75
    assert cfg.linkage.resamples == 50
    assert cfg.study.control_days == 7
    assert cfg.source is None


def test_key_value_and_yaml_forms_agree(tmp_path):
    yaml_file = tmp_path / "a.yaml"
    yaml_file.write_text(
        "threshold: 0.95\nresamples: 3\ncontrol_days: 28\nelection_day: 2020-11-03\n"
        "gap_tolerance: 1\nsynth_n_bookings: 200\n",
        encoding="utf-8",
    )
    kv_file = tmp_path / "b.conf"
    kv_file.write_text(
        "# comment\nthreshold=0.95\nresamples = 3\ncontrol_days=28\n"
        "election_day=2020-11-03\ngap_tolerance=1\nsynth_n_bookings=200\n",
        encoding="utf-8",
    )
    for path in (yaml_file, kv_file):
        cfg = Config.load(path)
        assert cfg.linkage.threshold == 0.95
        assert cfg.linkage.resamples == 3
        assert cfg.linkage.election_day == date(2020, 11, 3)
        assert cfg.study.control_days == 28
        assert cfg.ingest.gap_tolerance == 1
        assert cfg.synth.n_bookings == 200


def test_unknown_key_ignored_with_warning(tmp_path, caplog):
    path = tmp_path / "c.yaml"
    path.write_text("threshold: 0.95\nno_such_key: 1\n", encoding="utf-8")
    with caplog.at_level("WARNING", logger="jailvote.config"):
        cfg = Config.load(path)
    assert cfg.linkage.threshold == 0.95
    assert "no_such_key" in caplog.text


def test_bad_value_raises_config_error(tmp_path):
    path = tmp_path / "d.yaml"
    path.write_text("resamples: many\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        Config.load(path)


def test_init_threshold_outside_unit_interval_rejected(tmp_path):
    path = tmp_path / "g.yaml"
    path.write_text("init_threshold: 1.5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="init_threshold"):
        Config.load(path)
    path.write_text("init_threshold: 0.9\n", encoding="utf-8")
    assert Config.load(path).linkage.init_threshold == 0.9


def test_invalid_control_window_rejected(tmp_path):
    path = tmp_path / "e.yaml"
    path.write_text("control_days: 10\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="control_days"):
        Config.load(path)


def test_flag_beats_file_beats_default(tmp_path):
    path = tmp_path / "f.yaml"
    path.write_text("seed: 3\nthreshold: 0.95\n", encoding="utf-8")
    cfg = Config.load(path)
    assert cfg.seed == 3 and cfg.synth.seed == 3
    flagged = cfg.override(seed=11, threshold=None, control_days=14)
    assert flagged.seed == 11 and flagged.synth.seed == 11
    assert flagged.linkage.threshold == 0.95      # None flag leaves the file value
    assert flagged.study.control_days == 14
    assert cfg.seed == 3                           # override returns a copy


def test_override_rejects_unknown_flag():
    with pytest.raises(ConfigError):
        Config().override(bogus=1)


def test_derive_seed_named_streams():
    assert derive_seed(7, "fit") == derive_seed(7, "fit")
    assert derive_seed(7, "fit") != derive_seed(7, "synth")
    assert derive_seed(7, "em", 0) != derive_seed(7, "em", 1)
    assert derive_seed(7, "fit") != derive_seed(8, "fit")
    assert 0 <= derive_seed(0, "x") < 2 ** 64
