import pytest

from flap.config import Config, ConfigError, apply_overrides, load_config, parse_config
from flap.synthetic import toy_config


def test_defaults_match_documented_values():
    cfg = Config().validate()
    assert (cfg.train.beta1, cfg.train.beta2, cfg.train.peak_lr, cfg.train.epochs) == (0.99, 0.9, 1e-4, 45)
    assert (cfg.model.decoder_depth, cfg.model.decoder_heads, cfg.model.decoder_width) == (4, 4, 512)
    assert cfg.audio.target_frames == 998 and cfg.audio.grid == (63, 8)
    assert cfg.loss.temperature_init == 0.07 and cfg.loss.symmetric


def test_dump_parse_round_trip(tmp_path):
    for cfg in (Config(), toy_config("2d", 1.0, seed=7)):
        path = tmp_path / "c.txt"
        path.write_text(cfg.dumps())
        assert load_config(path) == cfg


def test_parse_values_and_comments():
    cfg = parse_config(
        """
        # toy run
        mask.strategy = 2d      # nested masking
        mask.groups = 8
        loss.symmetric = false
        train.grad_clip = 1
        train.warmup_steps = none
        audio.target_seconds = 1.28
        """
    )
    assert cfg.mask.strategy == "2d" and cfg.mask.groups == 8
    assert cfg.loss.symmetric is False
    assert cfg.train.grad_clip == 1.0 and isinstance(cfg.train.grad_clip, float)
    assert cfg.train.warmup_steps is None
    assert cfg.audio.target_frames == 126


def test_string_field_keeps_literal_none():
    assert parse_config("mask.strategy = none").mask.strategy == "none"


@pytest.mark.parametrize(
    "line",
    ["nosection = 1", "model.unknown = 3", "loss.symmetric = 3", "mask.strategy = 3d", "model.heads = 5", "just text"],
)
def test_rejects_bad_lines(line):
    with pytest.raises(ConfigError):
        parse_config(line)


def test_overrides_validate():
    cfg = apply_overrides(Config(), {"train.seed": "4", "mask.ratio": 0.75})
    assert cfg.train.seed == 4 and cfg.mask.ratio == 0.75
    with pytest.raises(ConfigError):
        apply_overrides(Config(), {"mask.ratio": "1.0"})
