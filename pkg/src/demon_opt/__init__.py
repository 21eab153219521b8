"""Decaying-momentum optimizers, learning-rate/momentum schedules and their verification."""

from .optimizers import (
    OptimizerState,
    StepHyper,
    adam_step,
    apply_weight_decay,
    demon_adam_step,
    demon_sgdm_step,
    init_state,
    sgd_step,
    sgdm_step,
)
from .schedules import (
    Kind,
    PlateauState,
    ScheduleSpec,
    Target,
    cosine_value,
    demon_beta,
    demon_theory_beta,
    exponential_value,
    linear_value,
    onecycle_value,
    plateau_update,
    schedule_eval,
    step_value,
)

__version__ = "0.1.0"
