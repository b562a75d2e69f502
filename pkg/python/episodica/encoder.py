"""Layer-chain encoders, their initialization, forward pass and checkpoints.

An architecture is an ordered tuple of :class:`LayerSpec`; its text form (one
layer per line, e.g. ``conv3x3 3 16 1``) is the checkpoint manifest.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np

from . import tensor as T
from .exceptions import ArchError, ContractError, DimensionError, FormatError
from .formats import read_tensor, write_tensor
from .rng import RngKey
from .tensor import Tensor

LOG = logging.getLogger(__name__)

MANIFEST = "arch.txt"
TENSOR_SUFFIX = ".eten"

ARITY = {
    "dense": 2,
    "conv3x3": 3,
    "relu": 0,
    "global_avg_pool": 0,
    "l2_normalize_output": 0,
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ARITY:
            raise ArchError(f"unknown layer '{self.kind}'")
        if len(self.args) != ARITY[self.kind]:
            raise ArchError(
                f"layer '{self.kind}' takes {ARITY[self.kind]} arguments, got {len(self.args)}"
            )
        if any(int(arg) <= 0 for arg in self.args):
            raise ArchError(f"layer '{self}' has a non-positive argument")

    def __str__(self):
        return " ".join([self.kind, *(str(arg) for arg in self.args)])

    @classmethod
    def parse(cls, line: str) -> "LayerSpec":
        kind, *args = line.split()
        try:
            values = tuple(int(arg) for arg in args)
        except ValueError:
            raise ArchError(f"non-integer argument in layer '{line.strip()}'") from None
        return cls(kind, values)


def dense(fan_in, fan_out):
    return LayerSpec("dense", (fan_in, fan_out))


def conv3x3(cin, cout, stride=1):
    return LayerSpec("conv3x3", (cin, cout, stride))


RELU = LayerSpec("relu")
GLOBAL_AVG_POOL = LayerSpec("global_avg_pool")
L2_NORMALIZE_OUTPUT = LayerSpec("l2_normalize_output")


@dataclass(frozen=True)
class ArchInfo:
    input_rank: int
    input_features: int
    embed_dim: int


def check_arch(arch: Sequence[LayerSpec]) -> ArchInfo:
    """Validate that the layer shapes compose; raise :class:`ArchError` if not."""
    if not arch:
        raise ArchError("architecture is empty")
    first = arch[0]
    if first.kind not in ("dense", "conv3x3"):
        raise ArchError(f"architecture must start with dense or conv3x3, not '{first}'")
    input_rank = 4 if first.kind == "conv3x3" else 2
    rank, features = input_rank, first.args[0]
    for index, layer in enumerate(arch):
        if layer.kind == "conv3x3":
            if rank != 4 or layer.args[0] != features:
                raise ArchError(f"layer {index} '{layer}' does not accept {features} features")
            features = layer.args[1]
        elif layer.kind == "dense":
            if rank != 2 or layer.args[0] != features:
                raise ArchError(
                    f"layer {index} '{layer}' does not accept rank-{rank} input "
                    f"with {features} features"
                )
            features = layer.args[1]
        elif layer.kind == "global_avg_pool":
            if rank != 4:
                raise ArchError(f"layer {index} '{layer}' needs spatial input")
            rank = 2
        elif layer.kind == "l2_normalize_output" and index != len(arch) - 1:
            raise ArchError("l2_normalize_output must be the last layer")
    if rank != 2:
        raise ArchError("architecture must end with flat (batch, features) output")
    return ArchInfo(input_rank, first.args[0], features)


@dataclass(frozen=True)
class EncoderModel:
    arch: Tuple[LayerSpec, ...]
    params: Mapping[str, Tensor] = field(repr=False)
    embed_dim: int

    @property
    def info(self) -> ArchInfo:
        return check_arch(self.arch)

    def with_params(self, params: Mapping[str, Tensor]) -> "EncoderModel":
        if set(params) != set(self.params):
            raise ContractError("replacement parameters do not match the model")
        return EncoderModel(self.arch, dict(params), self.embed_dim)


def param_names(index: int) -> Tuple[str, str]:
    return f"{index}.weight", f"{index}.bias"


def init_encoder(arch: Iterable[LayerSpec], seed: int) -> EncoderModel:
    """He-normal weights, zero biases; identical for identical seeds."""
    arch = tuple(arch)
    info = check_arch(arch)
    params: Dict[str, Tensor] = {}
    for index, layer in enumerate(arch):
        if layer.kind == "dense":
            fan_in, fan_out = layer.args
            shape = (fan_in, fan_out)
        elif layer.kind == "conv3x3":
            cin, cout, _ = layer.args
            fan_in, fan_out = cin * 9, cout
            shape = (cout, cin, 3, 3)
        else:
            continue
        rng = RngKey(seed).child(index).generator()
        weight_name, bias_name = param_names(index)
        params[weight_name] = Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape))
        params[bias_name] = Tensor(np.zeros(fan_out))
    return EncoderModel(arch, params, info.embed_dim)


def forward(model: EncoderModel, batch) -> Tensor:
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    info = model.info
    if x.ndim != info.input_rank or x.shape[1] != info.input_features:
        raise DimensionError(
            f"batch of shape {x.shape} does not fit an encoder expecting rank "
            f"{info.input_rank} with {info.input_features} input features"
        )
    for index, layer in enumerate(model.arch):
        if layer.kind in ("dense", "conv3x3"):
            weight_name, bias_name = param_names(index)
            weight, bias = model.params[weight_name], model.params[bias_name]
            if layer.kind == "dense":
                x = T.bias_add(T.matmul(x, weight), bias)
            else:
                x = T.conv3x3(x, weight, bias, stride=layer.args[2])
        elif layer.kind == "relu":
            x = T.relu(x)
        elif layer.kind == "global_avg_pool":
            x = T.global_avg_pool(x)
        else:
            x = T.l2_normalize(x)
    return x


def congruent(a: EncoderModel, b: EncoderModel) -> bool:
    return a.params.keys() == b.params.keys() and all(
        a.params[name].shape == b.params[name].shape for name in a.params
    )


def desk_arch(in_channels=3, channels=(16, 32, 64), embed_dim=64) -> Tuple[LayerSpec, ...]:
    """Small conv backbone: 3x3 blocks (stride 1 then 2), average pool, dense head."""
    layers = []
    previous = in_channels
    for index, width in enumerate(channels):
        layers += [conv3x3(previous, width, 1 if index == 0 else 2), RELU]
        previous = width
    layers += [GLOBAL_AVG_POOL, dense(previous, embed_dim)]
    return tuple(layers)


def projection_arch(embed_dim, projection_dim) -> Tuple[LayerSpec, ...]:
    return (dense(embed_dim, embed_dim), RELU, dense(embed_dim, projection_dim))


def format_arch(arch: Iterable[LayerSpec]) -> str:
    return "".join(f"{layer}\n" for layer in arch)


def parse_arch(text: str) -> Tuple[LayerSpec, ...]:
    lines = [line for line in text.splitlines() if line.strip() and not line.startswith("#")]
    return tuple(LayerSpec.parse(line) for line in lines)


def save_checkpoint(model: EncoderModel, directory):
    directory = Path(directory)
    LOG.debug("Making folder '%s'", directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / MANIFEST).write_text(format_arch(model.arch), encoding="utf-8")
    for name, value in model.params.items():
        write_tensor(directory / f"{name}{TENSOR_SUFFIX}", value)


def load_checkpoint(directory) -> EncoderModel:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.is_file():
        raise FormatError(f"{directory}: missing {MANIFEST}")
    arch = parse_arch(manifest.read_text(encoding="utf-8"))
    template = init_encoder(arch, seed=0)
    params = {}
    for name, expected in template.params.items():
        path = directory / f"{name}{TENSOR_SUFFIX}"
        if not path.is_file():
            raise FormatError(f"{directory}: missing parameter '{name}'")
        value = read_tensor(path)
        if value.shape != expected.shape:
            raise ArchError(
                f"{directory}: parameter '{name}' has shape {value.shape}, "
                f"expected {expected.shape}"
            )
        params[name] = value
    LOG.debug("Loaded %d parameters from '%s'", len(params), directory)
    return template.with_params(params)
