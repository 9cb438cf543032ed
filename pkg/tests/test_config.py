import json
import math

import pytest

from ldpvlm.exceptions import ValidationError
from ldpvlm.pipeline.config import (DELTA, ExperimentConfig, dp_hyperparameters,
                                    join_hyperparameters, load_config, vlm_hyperparameters)


def test_defaults():
    cfg = ExperimentConfig.from_dict()
    assert cfg.task == "data_collection" and cfg.trials == 3
    assert cfg["epsilon.delta"] == DELTA
    assert cfg.dataset == "mnist"
    assert math.isinf(cfg.epsilon_local[0])


def test_nested_and_dotted_forms_agree():
    a = ExperimentConfig.from_dict({"vlm": {"clip_radius": 2.5}, "epsilon": {"local": [1, "inf"]}})
    b = ExperimentConfig.from_dict({"vlm.clip_radius": 2.5, "epsilon.local": [1, "inf"]})
    assert a == b
    assert a.vlm_clip_radius == 2.5


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"task": "tracking"},
    {"trials": 0},
    {"epsilon.local": [-1]},
    {"epsilon.delta": 1e-6},
    {"lambda": 1.5},
    {"accuracy_kinds": ["fuzzy"]},
    {"data.source": "idx"},
    {"task": "data_join"},
    {"task": "novel_class", "data.source": "synthetic_lending"},
    {"task": "data_join", "data.source": "synthetic_lending", "level": "feature"},
])
def test_invalid_configs(raw):
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(raw)


def test_round_trip_through_file(tmp_path):
    cfg = ExperimentConfig.from_dict({"task": "data_join", "data.source": "synthetic_lending",
                                      "epsilon.local": ["inf", 4], "vlm.epsilon_pretrain": "learned"})
    path = tmp_path / "c.json"
    path.write_text(cfg.dumps())
    back = load_config(path)
    assert back == cfg and back.dataset == "lending"
    assert json.loads(cfg.dumps())["epsilon.local"] == ["inf", 4]


def test_invalid_json(tmp_path):
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ValidationError):
        load_config(tmp_path / "bad.json")


def test_replace_accepts_underscore_names():
    cfg = ExperimentConfig.from_dict().replace(seed=5, classifier_n_epochs=3)
    assert cfg.seed == 5 and cfg["classifier.n_epochs"] == 3


def test_tuned_tables():
    assert vlm_hyperparameters("mnist", "clean", "latent", 4) == (0.7, 7.5, 5.0)
    assert vlm_hyperparameters("mnist", "clean", "latent", math.inf) == (0.7, 10.0, None)
    # off-grid budgets take the nearest tabulated entry in log space
    assert vlm_hyperparameters("lending", "private", "feature", 3.9) == \
        vlm_hyperparameters("lending", "private", "feature", 4)
    assert join_hyperparameters(10) == (8, 5.0, 10.0)
    assert dp_hyperparameters("mnist", 1.0) == (5e-4, 64, 1.1)
    assert dp_hyperparameters("lending", 4.0) == dp_hyperparameters("lending", 5.0)
