from dataclasses import replace

import pytest

from episodica.augment import TransformPair
from episodica.config import (
    KEYS,
    SEED_ENV,
    EncoderConfig,
    RunConfig,
    TrainConfig,
    build_config,
    describe_keys,
    env_seed,
    format_value,
    load_config,
    parse_config,
    serialize_config,
    with_overrides,
)
from episodica.exceptions import ConfigError
from episodica.render import resource_text


def test_empty_text_gives_defaults():
    assert parse_config("") == RunConfig()
    assert parse_config("# only a comment\n\n") == RunConfig()


def test_example_config_spells_out_the_defaults():
    assert parse_config(resource_text("example.conf")) == RunConfig()


def test_temperature_parsing():
    assert parse_config("temperature = 0.1\n").loss.temperature == 0.1
    assert parse_config("temperature=2   # warm\n").loss.temperature == 2.0
    with pytest.raises(ConfigError):
        parse_config("temperature = 0\n")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("n_way = 5\ntemperature = warm\n")


def test_variant_sets_the_default_temperature():
    assert parse_config("variant = moco\n").loss.temperature == 0.2
    assert parse_config("variant = moco\ntemperature = 0.07\n").loss.temperature == 0.07
    assert RunConfig().loss.temperature == 0.5


def test_serialization_is_a_fixpoint():
    cfg = parse_config(
        "variant = moco\nchannels = 8, 16\nnesterov = false\n"
        "transform_pair = distort+blur\nimage_mean = 0.1, 0.2, 0.3\n"
    )
    text = serialize_config(cfg)
    assert parse_config(text) == cfg
    assert serialize_config(parse_config(text)) == text
    assert len(text.splitlines()) == len(KEYS)


def test_serialized_values():
    text = serialize_config(RunConfig())
    assert "projection_head = true\n" in text
    assert "channels = 16, 32, 64\n" in text
    assert "transform_pair = crop+distort\n" in text
    assert text.splitlines()[0] == "image_size = 32"


@pytest.mark.parametrize(
    "text,message",
    [
        ("colour = red\n", "line 1: unknown key 'colour'"),
        ("n_way = 5\nn_way = 6\n", "line 2: duplicate key 'n_way'"),
        ("\n\nepochs\n", "line 3: expected 'key = value'"),
        ("k_shot = one\n", "line 1: bad value for 'k_shot'"),
        ("nesterov = maybe\n", "line 1: bad value"),
        ("channels = 16,,32\n", "line 1: bad value"),
    ],
)
def test_parse_errors_name_the_line(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text)


@pytest.mark.parametrize(
    "text",
    [
        "transform_pair = crop+crop\n",
        "variant = byol\n",
        "n_way = 0\n",
        "image_std = 0.2, 0, 0.2\n",
        "schedule = step\n",
        "similarity = l1\n",
        "momentum = 1.0\n",
    ],
)
def test_invalid_values(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_transform_pair_becomes_an_enum():
    cfg = parse_config("transform_pair = crop+blur\n")
    assert cfg.augment.transform_pair is TransformPair.CROP_BLUR


def test_seed_reaches_the_augmentation_streams():
    assert parse_config("seed = 17\n").augment.rng_seed == 17


def test_seed_precedence(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("seed = 1\nepochs = 3\n")
    assert load_config(path, environ={}).train.seed == 1
    assert load_config(path, environ={SEED_ENV: "2"}).train.seed == 2
    assert load_config(path, environ={SEED_ENV: "2"}, seed=3).train.seed == 3
    assert load_config(path, environ={SEED_ENV: ""}).train.seed == 1
    assert load_config(environ={}).train.seed == 0
    assert load_config(path, environ={}, seed=None).train.epochs == 3


def test_bad_seed_variable():
    with pytest.raises(ConfigError, match=SEED_ENV):
        load_config(environ={SEED_ENV: "abc"})
    with pytest.raises(ConfigError, match=SEED_ENV):
        env_seed({SEED_ENV: "1.5"})


def test_env_seed():
    assert env_seed({SEED_ENV: "42"}) == 42
    assert env_seed({SEED_ENV: ""}) is None
    assert env_seed({}) is None


def test_config_file_errors_name_the_file(tmp_path):
    path = tmp_path / "broken.conf"
    path.write_text("n_way = 5\nbogus = 1\n")
    with pytest.raises(ConfigError, match="broken.conf: line 2"):
        load_config(path, environ={})
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.conf", environ={})


def test_overrides():
    cfg = RunConfig()
    assert with_overrides(cfg) is cfg
    assert with_overrides(cfg, n_way=None) is cfg
    assert with_overrides(cfg, n_way=10).task.n_way == 10
    moco = with_overrides(cfg, variant="moco")
    assert moco.loss.temperature == 0.2
    custom = with_overrides(parse_config("temperature = 0.3\n"), variant="moco")
    assert custom.loss.temperature == 0.3


def test_build_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown keys: colour"):
        build_config({"colour": "red"})


def test_section_configs():
    assert EncoderConfig(projection_head=False).head_arch() is None
    assert len(EncoderConfig().arch()) > 0
    with pytest.raises(ConfigError):
        EncoderConfig(channels=())
    with pytest.raises(ConfigError):
        TrainConfig(moco_momentum=1.5)
    with pytest.raises(ConfigError):
        replace(TrainConfig(), workers=-1)


def test_format_value():
    assert (format_value(True), format_value(False)) == ("true", "false")
    assert format_value(0.0001) == "0.0001"
    assert format_value((0.5, 0.25)) == "0.5, 0.25"
    assert format_value(3) == "3"


def test_describe_keys_lists_every_key():
    text = describe_keys()
    for key in KEYS:
        assert key.name in text
    assert "[default: 0.999]" in text
    assert SEED_ENV in text
