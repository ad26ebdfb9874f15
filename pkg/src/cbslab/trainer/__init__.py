"""Desk-scale trainer reproducing the steps-to-target protocol."""
from .loop import (
    EvalPoint,
    OptimizerConfig,
    TrainerConfig,
    TrainingDiverged,
    TrainResult,
    eval_cadence,
    ewa_update,
    load_trainer_config,
    steps_to_target,
    train,
)
from .optim import AdamState, NonFiniteGradient, adam_step, clip_by_global_norm
from .schedule import SchedulerConfig, lr_at, warmup_steps
from .tasks import LeastSquaresTask, TeacherStudentTask, make_task
