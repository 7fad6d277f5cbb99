"""Maximum-margin losses and deferred re-balancing for class-imbalanced classification."""

from .margin_losses import (
    BaselineKind,
    BaselineOptions,
    Branch,
    ClassCounts,
    GradMode,
    LossResult,
    LossSpec,
    MarginMode,
    MarginParams,
    baseline_loss,
    hard_negative_margin,
    hard_positive_margin,
    ldam_constant,
    ldam_gammas,
    mm_loss,
    mm_margin,
)

__version__ = "0.1.0"
