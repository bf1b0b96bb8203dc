import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from src.core.errors import ContractError, NonFiniteError, ShapeError
from src.components.network import iter_params, zeros_like_params
from src.utils.logs import log_event

logger = logging.getLogger(__name__)

DEFAULT_MOMENTUM = 0.9


class MomentumPolicy(str, Enum):
    """What happens to the velocity buffer when a new generation starts"""
    NONE = "none"
    RESET = "reset"
    INHERIT = "inherit"


@dataclass(frozen=True)
class OptimizerState:
    velocity: tuple
    momentum: float
    step_counter: int = 0

    def clone(self):
        velocity = tuple({name: array.copy() for name, array in layer.items()} for layer in self.velocity)
        return OptimizerState(velocity, self.momentum, self.step_counter)


def init_optimizer(model, momentum=DEFAULT_MOMENTUM):
    if not 0.0 <= momentum < 1.0:
        raise ContractError(f"momentum must be in [0, 1), got {momentum}")
    return OptimizerState(zeros_like_params(model.params), float(momentum), 0)


@dataclass(frozen=True)
class LrSchedule:
    eta_max: float
    eta_min: float = 0.0
    horizon: int = 1

    def __post_init__(self):
        if self.eta_max < 0 or self.eta_min < 0 or self.eta_min > self.eta_max:
            raise ContractError(f"need 0 <= eta_min <= eta_max, got {self.eta_min}, {self.eta_max}")
        if self.horizon < 1:
            raise ContractError(f"horizon must be >= 1, got {self.horizon}")


def cosine_lr(sched, t):
    """
    eta(t) = eta_min + (eta_max - eta_min) * (1 + cos(pi * t / T)) / 2.

    Steps past the horizon are clamped to eta_min with a warning.
    """
    if t < 0:
        raise ContractError(f"step index must be >= 0, got {t}")
    if t >= sched.horizon:
        if t > sched.horizon:
            log_event(logger, "lr_schedule_overrun", step=int(t), horizon=sched.horizon,
                      level=logging.WARNING)
        return sched.eta_min
    cosine = 1.0 + math.cos(math.pi * t / sched.horizon)
    return sched.eta_min + 0.5 * (sched.eta_max - sched.eta_min) * cosine


def sgd_step(model, opt, grads, eta, weight_decay=0.0):
    """
    One momentum-SGD update: v <- mu * v + g, w <- w - eta * v.

    Returns new (model, opt); the inputs are left untouched.
    """
    if len(grads) != len(model.params) or len(opt.velocity) != len(model.params):
        raise ShapeError("gradients, velocity and parameters must cover the same layers")
    new_params = [dict() for _ in model.params]
    new_velocity = [dict() for _ in model.params]
    for index, name, weight in iter_params(model.params):
        grad = grads[index].get(name)
        velocity = opt.velocity[index].get(name)
        if grad is None or velocity is None or grad.shape != weight.shape or velocity.shape != weight.shape:
            raise ShapeError(f"layer {index} {name}: gradient/velocity not congruent with {weight.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for layer {index} {name} "
                                 f"({model.layers[index].describe()})", where=(index, name))
        if weight_decay:
            grad = grad + weight_decay * weight
        velocity = opt.momentum * velocity + grad
        new_velocity[index][name] = velocity
        new_params[index][name] = weight - eta * velocity
    new_opt = OptimizerState(tuple(new_velocity), opt.momentum, opt.step_counter + 1)
    return model.with_params(new_params), new_opt


def apply_momentum_policy(policy, parent_opt, momentum=DEFAULT_MOMENTUM):
    """
    Optimizer state for one offspring at the start of a generation.

    none: mu = 0 and zero velocity; reset: mu kept, zero velocity;
    inherit: mu kept, velocity deep-copied from the selected parent.
    The step counter always follows the lineage.
    """
    policy = MomentumPolicy(policy)
    if policy is MomentumPolicy.INHERIT:
        velocity = tuple({name: array.copy() for name, array in layer.items()}
                         for layer in parent_opt.velocity)
        return OptimizerState(velocity, float(momentum), parent_opt.step_counter)
    mu = 0.0 if policy is MomentumPolicy.NONE else float(momentum)
    return OptimizerState(zeros_like_params(parent_opt.velocity), mu, parent_opt.step_counter)
