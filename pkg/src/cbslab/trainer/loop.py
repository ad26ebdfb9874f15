"""Steps-to-target training loop: Adam, warmup/schedules, EWA, hybrid eval cadence."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..problem import make_rng
from .optim import AdamState, adam_step
from .schedule import SchedulerConfig, lr_at
from .tasks import make_task


class TrainingDiverged(FloatingPointError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.95
    beta2: float = 0.99
    eps: float = 1e-8
    grad_clip_norm: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive")


@dataclass(frozen=True)
class TrainerConfig:
    task: str = "lsq"
    task_params: dict = field(default_factory=dict)
    batch_size: int = 16
    lr: float = 3.16e-3
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    ewa_decay: float = 0.99
    eval_interval: int = 1000
    target_loss: float | None = None
    max_steps: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ewa_decay <= 1.0:
            raise ValueError("ewa_decay must lie in [0, 1]")
        if self.batch_size < 1 or self.max_steps < 1 or self.eval_interval < 1:
            raise ValueError("batch_size, max_steps and eval_interval must be positive")

    @classmethod
    def from_dict(cls, cfg: dict) -> TrainerConfig:
        cfg = dict(cfg)
        if "optimizer" in cfg:
            cfg["optimizer"] = OptimizerConfig(**cfg["optimizer"])
        if "scheduler" in cfg:
            cfg["scheduler"] = SchedulerConfig(**cfg["scheduler"])
        return cls(**cfg)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> TrainerConfig:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return TrainerConfig(**d)


def load_trainer_config(path) -> TrainerConfig:
    text = Path(path).read_text()
    raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    return TrainerConfig.from_dict(raw)


@dataclass(frozen=True)
class EvalPoint:
    step: int
    val_loss_ewa: float
    val_loss_raw: float
    lr: float


@dataclass
class TrainResult:
    steps: int | None
    evals: list
    status: str  # reached | not-reached

    @property
    def reached(self):
        return self.status == "reached"


def ewa_update(avg, params, decay):
    """``decay * avg + (1 - decay) * params``."""
    return decay * avg + (1.0 - decay) * params


def eval_cadence(n_total: int, base_interval: int) -> list[int]:
    """Powers of two, multiples of ``base_interval``, and 5% steps over the last 30%."""
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    steps = set()
    p = 1
    while p <= n_total:
        steps.add(p)
        p *= 2
    steps.update(range(base_interval, n_total + 1, base_interval))
    # ceil(k * n / 20) for k = 14..20 in integer arithmetic
    steps.update(-(-k * n_total // 20) for k in range(14, 21))
    return sorted(steps)


_TASKS = {}


def _task_for(cfg: TrainerConfig):
    key = (cfg.task, json.dumps(cfg.task_params, sort_keys=True))
    if key not in _TASKS:
        _TASKS[key] = make_task(cfg.task, **cfg.task_params)
    return _TASKS[key]


def train(cfg: TrainerConfig, target_loss: float | None = None) -> TrainResult:
    """Train with Adam and EWA, evaluating the averaged weights on the cadence.

    Stops at the first cadence step whose EWA validation loss is at or below
    the target. Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    target = cfg.target_loss if target_loss is None else target_loss
    task = _task_for(cfg)
    init_rng, train_rng = (make_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    params = task.init_params(init_rng)
    avg = params.copy()
    state = AdamState.zeros_like(params)
    opt, sched = cfg.optimizer, cfg.scheduler
    horizon = cfg.max_steps if sched.kind == "constant" else min(cfg.max_steps, sched.total_steps)
    cadence = set(eval_cadence(horizon, cfg.eval_interval))
    evals = []
    for step in range(1, horizon + 1):
        lr = lr_at(sched, step - 1, cfg.lr, cfg.max_steps)
        x, y = task.sample(cfg.batch_size, train_rng)
        # overflow shows up as a non-finite value and is reported as divergence
        with np.errstate(over="ignore", invalid="ignore"):
            grads = task.grad(params, x, y)
        if not np.all(np.isfinite(grads)):
            raise TrainingDiverged(step)
        params, state = adam_step(state, params, grads, lr, opt.beta1, opt.beta2, opt.eps, opt.grad_clip_norm)
        avg = ewa_update(avg, params, cfg.ewa_decay)
        if step in cadence:
            with np.errstate(over="ignore", invalid="ignore"):
                ev = EvalPoint(step, task.val_loss(avg), task.val_loss(params), lr)
            if not (np.isfinite(ev.val_loss_ewa) and np.isfinite(ev.val_loss_raw)):
                raise TrainingDiverged(step)
            evals.append(ev)
            if target is not None and ev.val_loss_ewa <= target:
                return TrainResult(step, evals, "reached")
    return TrainResult(None, evals, "not-reached")


def steps_to_target(cfg: TrainerConfig, target_loss: float | None = None) -> int | None:
    """First cadence step reaching the target, or ``None`` if ``max_steps`` runs out."""
    return train(cfg, target_loss).steps
