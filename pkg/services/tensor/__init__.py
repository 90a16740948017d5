from services.tensor.tensor import (
    Tensor,
    as_tensor,
    parameter,
    no_grad,
    forward_op,
    numerics,
)
from services.tensor.optim import Adam, AdamState, LearningRateSchedule, adam_step

__all__ = [
    "Tensor",
    "as_tensor",
    "parameter",
    "no_grad",
    "forward_op",
    "numerics",
    "Adam",
    "AdamState",
    "LearningRateSchedule",
    "adam_step",
]
