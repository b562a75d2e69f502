"""SGD with (Nesterov) momentum and weight decay, plus the momentum-encoder update."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .encoder import EncoderModel, congruent
from .exceptions import ConfigError, ContractError
from .tensor import Tensor

LOG = logging.getLogger(__name__)

SCHEDULES = ("constant", "cosine")


@dataclass
class OptimState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    nesterov: bool = True
    velocity: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")


def init_optim(model: EncoderModel, **settings) -> OptimState:
    opt = OptimState(**settings)
    opt.velocity = {name: np.zeros(value.shape) for name, value in model.params.items()}
    return opt


def sgd_step(model: EncoderModel, grads: Mapping[str, Tensor], opt: OptimState) -> EncoderModel:
    """One update: v <- mu*v + (g + wd*theta), then theta <- theta - lr*(step).

    ``step`` is ``g + wd*theta + mu*v`` with Nesterov momentum, ``v`` otherwise.
    ``opt.velocity`` is updated in place; a new model is returned.
    """
    if set(grads) != set(model.params):
        raise ContractError(
            f"gradient keys {sorted(grads)} do not match parameters {sorted(model.params)}"
        )
    if not opt.velocity:
        opt.velocity = {name: np.zeros(value.shape) for name, value in model.params.items()}
    elif set(opt.velocity) != set(model.params):
        raise ContractError("optimizer velocity does not match the model parameters")

    updated = {}
    for name, value in model.params.items():
        theta = value.data.astype(np.float64)
        direction = grads[name].data.astype(np.float64) + opt.weight_decay * theta
        velocity = opt.momentum * opt.velocity[name] + direction
        opt.velocity[name] = velocity
        step = direction + opt.momentum * velocity if opt.nesterov else velocity
        updated[name] = Tensor(theta - opt.lr * step)
    return model.with_params(updated)


def momentum_update(
    key_model: EncoderModel, query_model: EncoderModel, m: float
) -> EncoderModel:
    """theta_g <- m*theta_g + (1 - m)*theta_f; returns the new key model."""
    if not 0 <= m <= 1:
        raise ContractError(f"momentum coefficient must be in [0, 1], got {m}")
    if not congruent(key_model, query_model):
        raise ContractError("key and query encoders have incongruent parameters")
    updated = {
        name: Tensor(
            m * value.data.astype(np.float64)
            + (1.0 - m) * query_model.params[name].data.astype(np.float64)
        )
        for name, value in key_model.params.items()
    }
    return key_model.with_params(updated)


def learning_rate(base: float, epoch: int, epochs: int, schedule: str = "constant") -> float:
    if schedule == "constant":
        return base
    if schedule == "cosine":
        return base * 0.5 * (1.0 + math.cos(math.pi * epoch / max(epochs, 1)))
    raise ConfigError(f"unknown learning-rate schedule '{schedule}'")
