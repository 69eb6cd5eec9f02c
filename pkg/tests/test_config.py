from pathlib import Path

import pytest
import yaml

from conftest import make_config
from dpc.config import RunConfig, apply_overrides, parse_config, worker_threads
from dpc.errors import ConfigError

ROOT = Path(__file__).parents[1]


@pytest.fixture
def config_file(tmp_path):
    def write(data):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(data), encoding="utf-8")
        return path

    return write


def _minimal():
    return {"optim": {"lr0": 0.1}, "data": {"preprocess": {"mean": [0.5] * 3, "std": [0.5] * 3}}}


def test_override_takes_precedence_over_file(config_file):
    config = parse_config(config_file(_minimal()), ["optim.lr0=0.01"])
    assert config.optim.lr0 == 0.01
    assert config.optim.epochs == 10


def test_overrides_parse_yaml_values():
    data = apply_overrides({}, ["prompt.instance_specific=false", "data.split=[0.5, 0.5]", "paths.vocab=v.txt"])
    assert data == {"prompt": {"instance_specific": False}, "data": {"split": [0.5, 0.5]},
                    "paths": {"vocab": "v.txt"}}
    with pytest.raises(ConfigError, match="not key=value"):
        apply_overrides({}, ["optim.lr0"])


def test_out_of_range_momentum_names_the_field(config_file):
    data = _minimal()
    data["optim"]["momentum"] = 1.5
    with pytest.raises(ConfigError) as info:
        parse_config(config_file(data))
    assert any(p.startswith("optim.momentum:") for p in info.value.problems)


def test_all_problems_are_reported_together(config_file):
    data = _minimal()
    data["optim"].update(momentum=1.5, batch_size=0)
    data["seeds"] = {"weights": -1}
    with pytest.raises(ConfigError) as info:
        parse_config(config_file(data))
    fields = {p.split(":")[0] for p in info.value.problems}
    assert {"optim.momentum", "optim.batch_size", "seeds.weights"} <= fields


def test_unknown_key_is_rejected(config_file):
    data = _minimal()
    data["optim"]["learning_rate"] = 0.1
    with pytest.raises(ConfigError, match="optim.learning_rate"):
        parse_config(config_file(data))


def test_lr0_is_required(config_file):
    data = _minimal()
    del data["optim"]["lr0"]
    with pytest.raises(ConfigError, match="optim.lr0"):
        parse_config(config_file(data))


def test_cross_field_checks(config_file):
    data = _minimal()
    data["model"] = {"patch_size": 5}
    data["data"]["source"] = "manifest"
    with pytest.raises(ConfigError) as info:
        parse_config(config_file(data))
    message = str(info.value)
    assert "patch_size" in message
    assert "paths.manifest is required" in message


def test_template_must_end_with_placeholder():
    with pytest.raises(ValueError, match="must end with"):
        make_config(prompt={"template": "[label word] in a photo"})


def test_digest_ignores_key_order_and_output_dir():
    forward = RunConfig.model_validate({"optim": {"lr0": 0.1, "epochs": 5},
                                        "data": {"preprocess": {"mean": [0.5] * 3, "std": [0.5] * 3}}})
    backward = RunConfig.model_validate({"data": {"preprocess": {"std": [0.5] * 3, "mean": [0.5] * 3}},
                                         "paths": {"output_dir": "elsewhere"},
                                         "optim": {"epochs": 5, "lr0": 0.1}})
    assert forward.digest == backward.digest
    assert len(forward.digest) == 64
    assert forward.with_updates(optim={"epochs": 6}).digest != forward.digest


def test_shipped_configs_parse():
    default = parse_config(ROOT / "config.yaml")
    assert default.data.source == "synthetic"
    assert default.prompt.template == "a photo seems to express a feeling of [label word]"
    assert default.optim.schedule.lr0 == 0.1

    manifest_run = parse_config(ROOT / "configs" / "clip_manifest.yaml")
    assert manifest_run.preprocess_size == 224
    assert manifest_run.data.label_groups["positive"][0] == "amusement"


def test_relative_paths_resolve_against_the_config_file(tmp_path, monkeypatch):
    folder = tmp_path / "configs"
    folder.mkdir()
    data = _minimal()
    data["paths"] = {"vocab": "../vocab.txt", "encoder_archive": str(tmp_path / "weights.dpcw")}
    path = folder / "run.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    elsewhere = tmp_path / "elsewhere"
    elsewhere.mkdir()
    monkeypatch.chdir(elsewhere)

    config = parse_config(path)
    assert Path(config.resolve_path(config.paths.vocab)).resolve() == (tmp_path / "vocab.txt").resolve()
    assert config.resolve_path(config.paths.encoder_archive) == str(tmp_path / "weights.dpcw")
    assert config.paths.vocab == "../vocab.txt"
    assert config.with_updates(optim={"epochs": 2}).resolve_path("v.txt") == str(folder / "v.txt")
    assert RunConfig.model_validate(_minimal()).resolve_path("v.txt") == "v.txt"
    assert config.resolve_path(None) is None


def test_worker_threads(monkeypatch):
    monkeypatch.delenv("DPC_THREADS", raising=False)
    assert worker_threads() == 1
    monkeypatch.setenv("DPC_THREADS", "3")
    assert worker_threads() == 3
    monkeypatch.setenv("DPC_THREADS", "0")
    assert worker_threads() == 1
    monkeypatch.setenv("DPC_THREADS", "many")
    with pytest.raises(ConfigError, match="DPC_THREADS"):
        worker_threads()
