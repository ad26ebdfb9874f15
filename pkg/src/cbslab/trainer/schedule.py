"""Learning-rate schedules with linear warmup."""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class SchedulerConfig:
    kind: str = "constant"  # constant | cosine | wsd
    warmup_fraction: float = 0.0
    total_steps: int | None = None
    decay_fraction: float = 0.2
    floor_lr: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "cosine", "wsd"):
            raise ValueError(f"unknown scheduler {self.kind!r}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup fraction must lie in [0, 1)")
        if self.kind != "constant" and not self.total_steps:
            raise ValueError(f"{self.kind} schedule needs total_steps")
        if self.kind == "wsd" and not 0.0 < self.decay_fraction <= 1.0:
            raise ValueError("decay fraction must lie in (0, 1]")
        if self.kind == "wsd" and self.warmup_fraction + self.decay_fraction > 1.0:
            raise ValueError("warmup and decay phases overlap")


def warmup_steps(cfg: SchedulerConfig, max_steps: int | None = None) -> int:
    horizon = cfg.total_steps if cfg.kind != "constant" else (max_steps or cfg.total_steps or 0)
    return math.ceil(cfg.warmup_fraction * horizon)


def lr_at(cfg: SchedulerConfig, step: int, peak: float, max_steps: int | None = None) -> float:
    """Learning rate applied at optimizer step ``step`` (0-based)."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    if cfg.kind != "constant" and step > cfg.total_steps:
        raise ValueError(f"step {step} beyond the schedule horizon {cfg.total_steps}")
    w = warmup_steps(cfg, max_steps)
    if step < w:
        return peak * (step + 1) / w
    if cfg.kind == "constant":
        return peak
    total = cfg.total_steps
    if cfg.kind == "cosine":
        span = total - w
        progress = 1.0 if span <= 0 else (step - w) / span
        return cfg.floor_lr + (peak - cfg.floor_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))
    decay_start = total * (1.0 - cfg.decay_fraction)
    if step <= decay_start:
        return peak
    return peak * (total - step) / (total - decay_start)
