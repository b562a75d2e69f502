"""Run configuration: ``key = value`` text, one flat key namespace.

:data:`KEYS` is the single table behind parsing, canonical serialization and
the ``--help`` listing. ``temperature`` defaults by variant and is resolved at
parse time, so ``parse_config(serialize_config(cfg)) == cfg``.
"""
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, NamedTuple, Optional, Tuple

from .augment import AugmentConfig, TransformPair
from .encoder import desk_arch, projection_arch
from .episodes import TaskSpec
from .exceptions import ConfigError
from .losses import DEFAULT_TEMPERATURE, LossConfig
from .optim import SCHEDULES, OptimState
from .render import render

LOG = logging.getLogger(__name__)

SEED_ENV = "EPISODICA_SEED"
VARIANTS = ("simclr", "moco")


@dataclass(frozen=True)
class EncoderConfig:
    channels: Tuple[int, ...] = (16, 32, 64)
    embed_dim: int = 64
    projection_head: bool = True
    projection_dim: int = 32

    def __post_init__(self):
        if not self.channels or any(width <= 0 for width in self.channels):
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if self.embed_dim <= 0 or self.projection_dim <= 0:
            raise ConfigError("embed_dim and projection_dim must be positive")

    def arch(self, in_channels=3):
        return desk_arch(in_channels, self.channels, self.embed_dim)

    def head_arch(self):
        if not self.projection_head:
            return None
        return projection_arch(self.embed_dim, self.projection_dim)


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    nesterov: bool = True
    schedule: str = "constant"

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {', '.join(SCHEDULES)}")
        self.state()

    def state(self) -> OptimState:
        return OptimState(self.lr, self.momentum, self.weight_decay, self.nesterov)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    variant: str = "simclr"
    seed: int = 0
    moco_momentum: float = 0.999
    queue_capacity: int = 1024
    workers: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"variant must be one of {', '.join(VARIANTS)}, got '{self.variant}'"
            )
        if self.epochs <= 0 or self.batch_size <= 0 or self.queue_capacity <= 0:
            raise ConfigError("epochs, batch_size and queue_capacity must be positive")
        if not 0 <= self.moco_momentum <= 1:
            raise ConfigError(f"moco_momentum must be in [0, 1], got {self.moco_momentum}")
        if self.workers < 0:
            raise ConfigError(f"workers must be >= 0, got {self.workers}")


@dataclass(frozen=True)
class RunConfig:
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    train: TrainConfig = field(default_factory=TrainConfig)

    def values(self) -> Dict[str, Any]:
        out = {}
        for key in KEYS:
            value = getattr(getattr(self, key.section), key.attribute)
            out[key.name] = value.value if isinstance(value, TransformPair) else value
        return out


class Key(NamedTuple):
    name: str
    section: str
    kind: str
    help: str
    attribute: str = ""


def _key(name, section, kind, help_text, attribute=None):
    return Key(name, section, kind, help_text, attribute or name)


KEYS = (
    _key("image_size", "augment", "int", "side of the square augmented views"),
    _key("jitter_strength", "augment", "float", "color distortion strength s"),
    _key("image_mean", "augment", "floats", "per-channel normalization mean"),
    _key("image_std", "augment", "floats", "per-channel normalization std"),
    _key("transform_pair", "augment", "str", "crop+distort, crop+blur or distort+blur"),
    _key("temperature", "loss", "float", "softmax temperature (0.5 simclr, 0.2 moco)"),
    _key("similarity", "loss", "str", "cosine or dot"),
    _key("channels", "encoder", "ints", "conv widths of the encoder"),
    _key("embed_dim", "encoder", "int", "embedding dimension"),
    _key("projection_head", "encoder", "bool", "train through a 2-layer projection head"),
    _key("projection_dim", "encoder", "int", "projection head output dimension"),
    _key("lr", "optim", "float", "base learning rate"),
    _key("momentum", "optim", "float", "SGD momentum"),
    _key("weight_decay", "optim", "float", "L2 weight decay"),
    _key("nesterov", "optim", "bool", "use Nesterov momentum"),
    _key("schedule", "optim", "str", "constant or cosine learning-rate schedule"),
    _key("n_way", "task", "int", "classes per evaluation task"),
    _key("k_shot", "task", "int", "keys per class"),
    _key("n_query", "task", "int", "queries per class"),
    _key("n_tasks", "task", "int", "evaluation tasks"),
    _key("epochs", "train", "int", "pretraining epochs"),
    _key("batch_size", "train", "int", "images per batch"),
    _key("variant", "train", "str", "simclr or moco"),
    _key("seed", "train", "int", "seed for every random stream"),
    _key("moco_momentum", "train", "float", "key encoder momentum coefficient"),
    _key("queue_capacity", "train", "int", "negative key queue size"),
    _key("workers", "train", "int", "augmentation threads (0 = inline)"),
)
KEYS_BY_NAME = {key.name: key for key in KEYS}


def _parse_bool(text):
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(convert):
    def parse(text):
        items = [item.strip() for item in text.split(",")]
        if not all(items):
            raise ValueError(f"empty item in list {text!r}")
        return tuple(convert(item) for item in items)

    return parse


PARSERS = {
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "str": str,
    "ints": _parse_list(int),
    "floats": _parse_list(float),
}


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(format_value(item) for item in value)
    return str(value)


def parse_value(name: str, text: str):
    key = KEYS_BY_NAME.get(name)
    if key is None:
        raise ConfigError(f"unknown key '{name}'")
    try:
        return PARSERS[key.kind](text.strip())
    except ValueError as e:
        raise ConfigError(f"bad value for '{name}': {e}") from None


def build_config(values: Mapping[str, Any]) -> RunConfig:
    """RunConfig from a flat mapping; unspecified keys take defaults."""
    unknown = set(values) - set(KEYS_BY_NAME)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    sections: Dict[str, Dict[str, Any]] = {
        "augment": {}, "loss": {}, "encoder": {}, "optim": {}, "task": {}, "train": {}
    }
    for name, value in values.items():
        key = KEYS_BY_NAME[name]
        sections[key.section][key.attribute] = value
    if "transform_pair" in sections["augment"]:
        pair = sections["augment"]["transform_pair"]
        try:
            sections["augment"]["transform_pair"] = TransformPair(pair)
        except ValueError:
            raise ConfigError(
                f"transform_pair must be one of {', '.join(p.value for p in TransformPair)}, "
                f"got '{pair}'"
            ) from None
    train = TrainConfig(**sections["train"])
    sections["augment"]["rng_seed"] = train.seed
    sections["loss"].setdefault("temperature", DEFAULT_TEMPERATURE[train.variant])
    return RunConfig(
        augment=AugmentConfig(**sections["augment"]),
        loss=LossConfig(**sections["loss"]),
        encoder=EncoderConfig(**sections["encoder"]),
        optim=OptimConfig(**sections["optim"]),
        task=TaskSpec(**sections["task"]),
        train=train,
    )


def parse_assignments(text: str) -> Dict[str, Any]:
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, value = line.partition("=")
        name = name.strip()
        if not sep or not name:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw.strip()!r}")
        if name in values:
            raise ConfigError(f"line {number}: duplicate key '{name}'")
        try:
            values[name] = parse_value(name, value)
        except ConfigError as e:
            raise ConfigError(f"line {number}: {e}") from None
    return values


def parse_config(text: str) -> RunConfig:
    return build_config(parse_assignments(text))


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text: every key in table order, defaults included."""
    return "".join(f"{name} = {format_value(value)}\n" for name, value in cfg.values().items())


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    overrides = {name: value for name, value in overrides.items() if value is not None}
    if not overrides:
        return cfg
    values = cfg.values()
    if "variant" in overrides and "temperature" not in overrides:
        if values["temperature"] == DEFAULT_TEMPERATURE[values["variant"]]:
            values.pop("temperature")
    values.update(overrides)
    return build_config(values)


def env_seed(environ=None) -> Optional[int]:
    environ = os.environ if environ is None else environ
    if not environ.get(SEED_ENV):
        return None
    try:
        return int(environ[SEED_ENV])
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}") from None


def load_config(path: Optional[Path] = None, environ=None, **overrides) -> RunConfig:
    """Defaults < config file < ``EPISODICA_SEED`` < explicit overrides."""
    values = {}
    if path is not None:
        path = Path(path)
        LOG.debug("Reading config '%s'", path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config '{path}': {e}") from e
        try:
            values = parse_assignments(text)
        except ConfigError as e:
            raise ConfigError(f"{path}: {e}") from None
    seed = env_seed(environ)
    if seed is not None:
        values["seed"] = seed
    values.update({name: value for name, value in overrides.items() if value is not None})
    return build_config(values)


def describe_keys() -> str:
    defaults = RunConfig().values()
    return render(
        "config_help.txt",
        keys=[(key, format_value(defaults[key.name])) for key in KEYS],
        env=SEED_ENV,
    )

