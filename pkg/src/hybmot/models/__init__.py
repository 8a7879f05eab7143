from .physical import (
    FitError,
    PhysicalModel,
    RegressionModel,
    ShipMinimal,
    ShipPropulsion,
    QuadMinimal,
    fit_regression,
    make_first_principles,
    make_physical_model,
    rollout_physical,
)
from .recurrent import (
    OutputConstraint,
    RecurrentCorrector,
    adam_init,
    adam_update,
    constrain,
    constrain_backward,
    global_norm_clip,
    lstm_forward,
)
from .hybrid import (
    HybridModel,
    TrainingConfig,
    TrainingDiverged,
    hybrid_step,
    load_checkpoint,
    rollout_free_running,
    rollout_teacher_forced,
    save_checkpoint,
    train_one_phase,
    train_two_phase,
)

__all__ = [
    "FitError",
    "PhysicalModel",
    "RegressionModel",
    "ShipMinimal",
    "ShipPropulsion",
    "QuadMinimal",
    "fit_regression",
    "make_first_principles",
    "make_physical_model",
    "rollout_physical",
    "OutputConstraint",
    "RecurrentCorrector",
    "adam_init",
    "adam_update",
    "constrain",
    "constrain_backward",
    "global_norm_clip",
    "lstm_forward",
    "HybridModel",
    "TrainingConfig",
    "TrainingDiverged",
    "hybrid_step",
    "load_checkpoint",
    "rollout_free_running",
    "rollout_teacher_forced",
    "save_checkpoint",
    "train_one_phase",
    "train_two_phase",
]
