"""Learning-rate schedule: linear batch scaling, then linear decay over the last half."""
from __future__ import annotations


def lr_schedule(base: float, batch: int, epoch: int, total_epochs: int) -> float:
    """Learning rate for ``epoch`` (0-based) of a ``total_epochs`` stage.

    The base rate is scaled by ``batch / 16``, held for the first half of the
    stage and decayed linearly so that it would reach 0 at ``total_epochs``.
    """
    if total_epochs <= 0:
        raise ValueError(f"total_epochs must be positive, got {total_epochs}")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    effective = base * (batch / 16)
    half = total_epochs / 2
    if epoch < half:
        return effective
    return effective * ((total_epochs - epoch) / (total_epochs - half))
