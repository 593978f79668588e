import math

from cpheno.errors import ParameterError


def lr_schedule(step: int, warmup_steps: int, total_steps: int, base_lr: float) -> float:
    """
    Linear warmup followed by cosine annealing to zero

    Parameters:
        step (int): Current step, 0 <= step <= total_steps
        warmup_steps (int): Length of the linear ramp, < total_steps
        total_steps (int): Last step of the schedule
        base_lr (float): Peak learning rate, reached at step == warmup_steps
    """
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps >= total_steps:
        raise ParameterError(f"warmup_steps {warmup_steps} must be below total_steps {total_steps}")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def effective_warmup(warmup_steps: int, total_steps: int) -> int:
    """Warmup clipped below total_steps for short runs"""
    if total_steps <= 1:
        return 0
    return min(warmup_steps, total_steps - 1)
