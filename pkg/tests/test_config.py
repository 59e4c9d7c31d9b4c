import pytest
import yaml

from geoat import __version__
from geoat.config import apply_overrides, default_config, deep_merge, load_config_file, resolve, write_resolved
from geoat.errors import ConfigError


def test_defaults_leave_lr_to_mode():
    cfg = resolve()
    assert cfg["train"]["lr"] is None and cfg["model"]["variant"] == "audio_only"


def test_layer_precedence(tmp_path):
    (tmp_path / "c.yaml").write_text("model:\n  variant: late\ntrain:\n  max_epochs: 7\n  patience: 3\n")
    cfg = resolve(tmp_path / "c.yaml")
    assert cfg["model"]["variant"] == "late" and cfg["train"]["max_epochs"] == 7
    assert cfg["model"]["backbone"] == "mel_mlp"  # untouched default survives
    cfg = resolve(tmp_path / "c.yaml", {"train": {"max_epochs": 9, "lr": None}})
    assert cfg["train"]["max_epochs"] == 9 and cfg["train"]["patience"] == 3
    cfg = resolve(tmp_path / "c.yaml", {"train": {"max_epochs": 9}}, ["train.max_epochs=11", "model.mlp_hidden=[8, 4]"])
    assert cfg["train"]["max_epochs"] == 11 and cfg["model"]["mlp_hidden"] == [8, 4]


def test_override_errors():
    with pytest.raises(ConfigError):
        apply_overrides(default_config(), ["novalue"])
    with pytest.raises(ConfigError):
        apply_overrides(default_config(), ["manifest.x=1"])
    with pytest.raises(ConfigError):
        resolve(overrides=["model.variant=bogus"])


def test_bad_files(tmp_path):
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "list.yaml")
    (tmp_path / "broken.yaml").write_text("a: [1\n")
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "broken.yaml")
    (tmp_path / "empty.yaml").write_text("")
    assert load_config_file(tmp_path / "empty.yaml") == {}


def test_deep_merge_does_not_mutate():
    base = {"a": {"b": 1, "c": [1]}}
    out = deep_merge(base, {"a": {"b": 2}})
    assert out == {"a": {"b": 2, "c": [1]}} and base == {"a": {"b": 1, "c": [1]}}


def test_resolved_file_round_trips(tmp_path):
    cfg = resolve(overrides=["train.seed=3"])
    path = write_resolved(cfg, tmp_path / "run")
    doc = yaml.safe_load(path.read_text())
    assert doc["tool_version"] == __version__
    assert (tmp_path / "run" / "VERSION").read_text().strip() == __version__
    assert resolve(path) == cfg
