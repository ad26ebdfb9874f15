"""Monte Carlo simulation of single-pass mini-batch SGD with iterate averaging."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .problem import SpectralProblem, excess_risk, make_rng, sample_batch

# Covariate rows drawn per call to ``sample_batch``; a function of (B, d)
# only, so the random stream layout is fixed by the configuration.
_CHUNK_ELEMENTS = 1 << 18


class Diverged(ArithmeticError):
    """SGD produced a non-finite iterate."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"SGD diverged at step {step}")


@dataclass(frozen=True)
class SGDConfig:
    batch_size: int
    learning_rate: float
    data_size: int
    seed: int = 0
    record_trajectory: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.data_size < 1:
            raise ValueError("batch size and data size must be positive")
        if self.data_size % self.batch_size:
            raise ValueError(
                f"batch size {self.batch_size} does not divide data size {self.data_size}"
            )
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")

    @property
    def n_steps(self) -> int:
        return self.data_size // self.batch_size


@dataclass
class SGDResult:
    final: np.ndarray
    average: np.ndarray
    samples_drawn: int
    trajectory: np.ndarray | None = None


def _batches_per_chunk(batch_size: int, dim: int) -> int:
    return max(1, _CHUNK_ELEMENTS // (batch_size * dim))


def run_minibatch_sgd(problem: SpectralProblem, cfg: SGDConfig) -> SGDResult:
    """One pass over ``D = n B`` fresh samples.

    The average covers ``w_0 .. w_{n-1}``; the last batch only produces the
    returned final iterate ``w_n``.
    """
    rng = make_rng(cfg.seed)
    n = cfg.n_steps
    w = np.array(problem.init, dtype=np.float64)
    w_sum = np.zeros_like(w)
    per_chunk = _batches_per_chunk(cfg.batch_size, problem.dim)
    traj = [w.copy()] if cfg.record_trajectory else None
    bsz = cfg.batch_size
    drawn = 0
    step = 0
    while step < n:
        k = min(per_chunk, n - step)
        batch = sample_batch(problem, k * bsz, rng)
        drawn += batch.size
        x = np.ascontiguousarray(batch.covariates)
        y = np.ascontiguousarray(batch.responses)
        if traj is None:
            bad = kernels.sgd_chunk(x, y, w, w_sum, cfg.learning_rate, bsz, step)
        else:
            for s in range(k):
                rows = slice(s * bsz, (s + 1) * bsz)
                bad = kernels.sgd_chunk(x[rows], y[rows], w, w_sum, cfg.learning_rate, bsz, step + s)
                traj.append(w.copy())
                if bad >= 0:
                    break
        if bad >= 0:
            raise Diverged(bad)
        step += k
    return SGDResult(
        final=w,
        average=w_sum / n,
        samples_drawn=drawn,
        trajectory=None if traj is None else np.array(traj),
    )


class ReplicaDivergence(ArithmeticError):
    def __init__(self, n_diverged, reps, first_step):
        self.n_diverged = n_diverged
        self.reps = reps
        self.first_step = first_step
        super().__init__(
            f"{n_diverged} of {reps} replicas diverged (earliest at step {first_step})"
        )


def mc_excess_risk(problem: SpectralProblem, cfg: SGDConfig, reps: int, jobs: int = 1):
    """Mean and standard error of the averaged-iterate excess risk.

    Replica ``k`` uses seed ``cfg.seed + k``; results are reduced in seed
    order, so ``jobs`` never changes the output.
    """
    if reps < 2:
        raise ValueError("need at least 2 replicas for a standard error")

    def one(k):
        rep_cfg = SGDConfig(cfg.batch_size, cfg.learning_rate, cfg.data_size, cfg.seed + k)
        try:
            res = run_minibatch_sgd(problem, rep_cfg)
        except Diverged as exc:
            return None, exc.step
        return excess_risk(problem, res.average), None

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            out = list(pool.map(one, range(reps)))
    else:
        out = [one(k) for k in range(reps)]

    bad = [step for _, step in out if step is not None]
    if bad:
        raise ReplicaDivergence(len(bad), reps, min(bad))
    vals = np.array([v for v, _ in out])
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(reps))


def run_record(problem: SpectralProblem, cfg: SGDConfig, reps: int = 1) -> dict:
    """Row with the simulator's output fields."""
    row = {
        "d": problem.dim,
        "a": problem.capacity_exponent,
        "b": problem.source_exponent,
        "sigma2": problem.noise_variance,
        "B": cfg.batch_size,
        "gamma": cfg.learning_rate,
        "D": cfg.data_size,
        "seed": cfg.seed,
    }
    try:
        if reps > 1:
            mean, se = mc_excess_risk(problem, cfg, reps)
            row.update(excess_risk=mean, stderr=se, reps=reps, diverged=False)
        else:
            res = run_minibatch_sgd(problem, cfg)
            row.update(excess_risk=excess_risk(problem, res.average), diverged=False)
    except (Diverged, ReplicaDivergence):
        row.update(excess_risk=float("nan"), diverged=True)
    return row
