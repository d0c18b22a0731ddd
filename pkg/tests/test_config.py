import json

import pytest

from hydra_ensemble.config import PRESETS, head_seed, load_config
from hydra_ensemble.errors import ConfigError


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_are_valid(name):
    cfg = load_config(name)
    assert cfg.roster()
    assert cfg.plan.seed == cfg.seed


def test_default_is_the_reference_preset():
    assert load_config(None).raw == load_config("reference").raw
    assert len(load_config("reference").roster()) == 6
    assert len(load_config("paper").roster()) == 12


def test_paper_preset_keeps_the_published_schedule():
    plan = load_config("paper").plan
    assert (plan.body_epochs, plan.head_epochs, plan.body_lr) == (6, 5, 1e-4)
    assert plan.head_lr_schedule == ((1, 1e-4), (3, 1e-5), (1, 1e-6))


def test_lr_scale_multiplies_every_rate():
    plan = load_config({"lr_scale": 10.0, "heads": PRESETS["paper"]["heads"]}).plan
    assert plan.body_lr == pytest.approx(1e-3, rel=1e-15)
    assert [lr for _, lr in plan.head_lr_schedule] == pytest.approx([1e-3, 1e-4, 1e-5], rel=1e-15)


def test_file_round_trip_and_seed_override(tmp_path):
    cfg = load_config("tiny")
    (tmp_path / "c.json").write_text(cfg.to_json())
    again = load_config(str(tmp_path / "c.json"))
    assert again.raw == cfg.raw and again.training_hash() == cfg.training_hash()
    moved = cfg.with_seed(5)
    assert moved.seed == 5 and moved.plan.seed == 5
    assert moved.training_hash() != cfg.training_hash()
    assert [h.seed for h in moved.roster()] == [head_seed(5, 0), head_seed(5, 1)]


def test_training_hash_ignores_the_synthetic_section():
    raw = json.loads(load_config("tiny").to_json())
    base = load_config(raw).training_hash()
    raw["synthetic"]["noise"] = 0.2
    assert load_config(raw).training_hash() == base
    raw["heads"][0]["augment"] = "zoom"
    assert load_config(raw).training_hash() != base


def test_roster_options_reach_the_heads():
    cfg = load_config({"crops": {"expansion_factor": 3.0, "min_size": 40},
                       "augment": {"zoom_range": [0.9, 1.1], "shift_frac": 0.2},
                       "heads": [{"id": "a", "cnn": "dense", "crop": "EXT-MULTI", "augment": "zoom",
                                  "weighting": "fmow", "seed": 77}]})
    (h,) = cfg.roster()
    assert (h.head_id, h.seed, h.crop.expansion_factor, h.crop.min_size) == ("a", 77, 3.0, 40)
    assert h.augment.zoom_range == (0.9, 1.1)


@pytest.mark.parametrize(
    "raw",
    [
        {"heads": []},
        {"colour": 1, "heads": PRESETS["tiny"]["heads"]},
        {"plan": {"seed": 3}, "heads": PRESETS["tiny"]["heads"]},
        {"plan": {"head_epochs": 2}, "heads": PRESETS["tiny"]["heads"]},
        {"model": {"depth": 3}, "heads": PRESETS["tiny"]["heads"]},
        {"crops": {"size": 3}, "heads": PRESETS["tiny"]["heads"]},
        {"heads": [{"cnn": "vgg", "crop": "EXT-PAN", "augment": "flip", "weighting": "unweighted"}]},
        {"heads": [{"cnn": "dense", "crop": "EXT-PAN", "augment": "flip"}]},
        {"heads": [{"id": "1", "cnn": "dense", "crop": "EXT-PAN", "augment": "flip", "weighting": "unweighted"}] * 2},
        {"synthetic": {"box_range": [40, 60]}, "heads": PRESETS["tiny"]["heads"]},
    ],
)
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        load_config(raw)


def test_unreadable_config_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "bad.json"))
    (tmp_path / "list.json").write_text("[]")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "list.json"))
