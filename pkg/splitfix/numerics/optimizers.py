"""
    Adaptive-moment optimizer with decoupled weight decay & its learning rate
    schedule.
"""

from dataclasses import dataclass, field

import numpy

from splitfix.exceptions import NonFiniteError
from splitfix.numerics.tensor import Parameter


@dataclass(frozen=True)
class LearningRateSchedule:
    """
        Linear warmup from base_rate / warmup_steps up to base_rate, then a
        step decay multiplying the rate by decay_factor every decay_every
        steps (decay_every = 0 keeps the rate constant after warmup).
    """

    base_rate: float = 0.002
    warmup_steps: int = 0
    decay_every: int = 0
    decay_factor: float = 0.5

    def __call__(self, step: int) -> float:
        if step < self.warmup_steps:
            return self.base_rate * (step + 1) / self.warmup_steps

        if self.decay_every <= 0:
            return self.base_rate

        return self.base_rate * self.decay_factor ** ((step - self.warmup_steps) // self.decay_every)


@dataclass
class OptimizerState:
    schedule: LearningRateSchedule = field(default_factory=LearningRateSchedule)
    weight_decay: float = 0.01
    beta_1: float = 0.9
    beta_2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moments: dict[str, numpy.ndarray] = field(default_factory=dict)
    second_moments: dict[str, numpy.ndarray] = field(default_factory=dict)


def optimizer_step(parameters: list[Parameter], state: OptimizerState) -> None:
    """
        Applies one decoupled-weight-decay adaptive-moment update to every
        parameter from its accumulated gradient. Every gradient is checked
        before any parameter changes, so a non-finite gradient leaves all
        parameters & the state untouched.
    """

    parameter: Parameter
    for parameter in parameters:
        if not numpy.all(numpy.isfinite(parameter.grad)):
            raise NonFiniteError("Gradient contains NaN or infinite values.", parameter_name=parameter.name, step=state.step)

    learning_rate: float = state.schedule(state.step)
    state.step += 1
    first_correction: float = 1 - state.beta_1 ** state.step
    second_correction: float = 1 - state.beta_2 ** state.step

    for parameter in parameters:
        first: numpy.ndarray = state.first_moments.get(parameter.name, numpy.zeros_like(parameter.data))
        second: numpy.ndarray = state.second_moments.get(parameter.name, numpy.zeros_like(parameter.data))
        if first.shape != parameter.shape:
            raise ValueError(f"Optimizer moments of {parameter.name} do not match the parameter shape.")

        first = state.beta_1 * first + (1 - state.beta_1) * parameter.grad
        second = state.beta_2 * second + (1 - state.beta_2) * parameter.grad ** 2
        state.first_moments[parameter.name] = first.astype(parameter.data.dtype)
        state.second_moments[parameter.name] = second.astype(parameter.data.dtype)

        decayed: numpy.ndarray = parameter.data * (1 - learning_rate * state.weight_decay)
        update: numpy.ndarray = learning_rate * (first / first_correction) / (numpy.sqrt(second / second_correction) + state.eps)
        parameter.data = (decayed - update).astype(parameter.data.dtype)


class AdamW:
    """ Optimizer bound to a fixed parameter list. """

    def __init__(self, parameters: list[Parameter], schedule: LearningRateSchedule, weight_decay: float = 0.01) -> None:
        self.parameters: list[Parameter] = [parameter for parameter in parameters if parameter.trainable]
        self.state = OptimizerState(schedule=schedule, weight_decay=weight_decay)

    @property
    def learning_rate(self) -> float:
        return self.state.schedule(self.state.step)

    def step(self) -> None:
        optimizer_step(self.parameters, self.state)

    def zero_grad(self) -> None:
        parameter: Parameter
        for parameter in self.parameters:
            parameter.zero_grad()
