"""Exact expected excess risk of averaged mini-batch SGD under Gaussian design.

With ``H`` diagonal, the diagonal of each error covariance evolves on its
own, and the averaged-iterate risk needs nothing else:

    E <H, eta_bar eta_bar^T> = n^-2 sum_i lambda_i sum_s u_{s,i} (1 + 2 sum_{m=1}^{n-1-s} q_i^m)

with ``q_i = 1 - gamma lambda_i``, using ``E[eta_t | eta_s] = (I - gamma H)^(t-s) eta_s``.
The inner geometric sums are carried by a running recurrence, so the whole
evaluation is ``O(n d)`` without divisions by ``gamma lambda_i``.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import kernels
from .problem import SpectralProblem

STABILITY_CONSTANT = 0.5
DEFAULT_BUDGET = 4_000_000_000


class MomentMode(str, enum.Enum):
    EXACT = "exact-gaussian"
    PAPER = "paper-operator"


@dataclass(frozen=True)
class CovState:
    bias_diag: np.ndarray
    variance_diag: np.ndarray
    step: int


@dataclass(frozen=True)
class RiskBreakdown:
    bias: float
    variance: float
    total_excess: float
    kstar: int
    moment_mode: MomentMode
    min_cov_entry: float = 0.0
    init_error_h: float = 0.0  # ||w0 - w*||_H^2, compare against sigma^2


def _mode(mode) -> MomentMode:
    return MomentMode(mode.value if isinstance(mode, MomentMode) else mode)


def kstar(eigenvalues, data_size, gamma, batch_size) -> int:
    """Largest ``k`` with ``lambda_k >= B / (D gamma)``; 0 when there is none."""
    thr = batch_size / (data_size * gamma)
    lam = np.asarray(eigenvalues)
    # lam is nonincreasing, so the qualifying indices form a prefix
    return int(np.count_nonzero(lam >= thr))


def theorem2_bound(problem: SpectralProblem, data_size, gamma, batch_size) -> float:
    """Two-sided rate for the averaged-iterate excess risk, without constants."""
    lam = problem.eigenvalues
    err2 = problem.init_error ** 2
    k = kstar(lam, data_size, gamma, batch_size)
    ratio = batch_size / (data_size * gamma)
    head = ratio ** 2 * float(np.sum(err2[:k] / lam[:k]))
    tail = float(lam[k:] @ err2[k:])
    noise = problem.noise_variance * (k + float(np.sum(lam[k:] ** 2)) / ratio ** 2) / data_size
    return head + tail + noise


def stability_margin(problem: SpectralProblem, batch_size) -> float:
    """``c * min(B / tr H, 1 / lambda_1)`` with ``c = 1/2``."""
    return STABILITY_CONSTANT * min(batch_size / problem.trace, 1.0 / problem.eigenvalues[0])


def fourth_moment_diag(eigenvalues, a_diag, batch_size, mode=MomentMode.EXACT) -> np.ndarray:
    """Diagonal of ``E[G A G]`` for ``G`` the empirical covariance of ``B`` Gaussian draws.

    ``A`` is diagonal. ``batch_size`` may be ``math.inf``.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    a = np.asarray(a_diag, dtype=np.float64)
    if lam.shape != a.shape:
        raise ValueError("eigenvalues and A must have equal lengths")
    trace = float(lam @ a)
    inv_b = 0.0 if math.isinf(batch_size) else 1.0 / batch_size
    if _mode(mode) is MomentMode.EXACT:
        return lam * lam * a * (1.0 + inv_b) + inv_b * trace * lam
    return lam * lam * a + 2.0 * inv_b * trace * lam


def _check_step(problem, data_size, gamma, batch_size, budget):
    if data_size % batch_size:
        raise ValueError(f"batch size {batch_size} does not divide data size {data_size}")
    n = data_size // batch_size
    if n < 1:
        raise ValueError("need at least one step")
    if gamma <= 0:
        raise ValueError("learning rate must be positive")
    if 1.0 - gamma * problem.eigenvalues[0] <= -1.0:
        raise ValueError(f"gamma={gamma} makes the top direction expand (1 - gamma lambda_1 <= -1)")
    limit = stability_margin(problem, batch_size)
    if gamma > limit * (1 + 1e-12):
        raise ValueError(f"gamma={gamma} exceeds the stability margin {limit:.6g} for B={batch_size}")
    if n * problem.dim > budget:
        raise ValueError(f"n*d = {n * problem.dim} exceeds the compute budget {budget}")
    return n


def exact_excess_risk(problem: SpectralProblem, data_size, gamma, batch_size,
                      moment_mode=MomentMode.EXACT, budget=DEFAULT_BUDGET) -> RiskBreakdown:
    n = _check_step(problem, data_size, gamma, batch_size, budget)
    mode = _mode(moment_mode)
    bias, var, min_entry = kernels.oracle_moments(
        problem.eigenvalues, problem.init_error ** 2, gamma, batch_size, n,
        problem.noise_variance, mode is MomentMode.PAPER,
    )
    return RiskBreakdown(
        bias=bias,
        variance=var,
        total_excess=bias + var,
        kstar=kstar(problem.eigenvalues, data_size, gamma, batch_size),
        moment_mode=mode,
        min_cov_entry=min_entry,
        init_error_h=float(problem.eigenvalues @ problem.init_error ** 2),
    )


def cov_iterates(problem: SpectralProblem, data_size, gamma, batch_size,
                 moment_mode=MomentMode.EXACT) -> Iterator[CovState]:
    """Yield the diagonal bias/variance covariances for ``t = 0 .. n-1``."""
    n = _check_step(problem, data_size, gamma, batch_size, DEFAULT_BUDGET)
    mode = _mode(moment_mode)
    lam = problem.eigenvalues
    ub = problem.init_error ** 2
    uv = np.zeros_like(lam)
    src = gamma ** 2 * problem.noise_variance / batch_size * lam
    for t in range(n):
        yield CovState(ub.copy(), uv.copy(), t)
        ub = ub - 2 * gamma * lam * ub + gamma ** 2 * fourth_moment_diag(lam, ub, batch_size, mode)
        uv = uv - 2 * gamma * lam * uv + gamma ** 2 * fourth_moment_diag(lam, uv, batch_size, mode) + src


def cbs_exponent(a: float, b: float) -> float:
    """Data-size exponent of the critical batch size for power-law problems."""
    if a <= 1 or b <= 1:
        raise ValueError("capacity and source exponents must exceed 1")
    if b <= a:
        return 0.0
    return 1.0 - a / min(b, 2 * a + 1)


@dataclass
class OracleCBS:
    critical_batch: int
    best_risk: float
    table: list  # (B, min risk, argmin gamma) per feasible B
    critical_batch_interp: float = float("nan")


def oracle_cbs(problem: SpectralProblem, data_size, overhead, batch_grid: Sequence[int],
               gamma_grid: Sequence[float], moment_mode=MomentMode.EXACT) -> OracleCBS:
    """Largest ``B`` whose best risk over ``gamma_grid`` is within ``(1 + overhead)`` of the best overall.

    Learning rates above the stability margin of a given ``B`` are skipped for
    that ``B``; batch sizes that do not divide ``data_size`` are skipped too.
    """
    if not len(batch_grid) or not len(gamma_grid):
        raise ValueError("batch and learning-rate grids must be nonempty")
    table = []
    for bsz in sorted(set(int(b) for b in batch_grid)):
        if data_size % bsz:
            continue
        limit = stability_margin(problem, bsz) * (1 + 1e-12)
        best = None
        for gamma in gamma_grid:
            if gamma > limit:
                continue
            r = exact_excess_risk(problem, data_size, gamma, bsz, moment_mode).total_excess
            if best is None or r < best[0]:
                best = (r, gamma)
        if best is not None:
            table.append((bsz, best[0], best[1]))
    if not table:
        raise ValueError("no (B, gamma) pair is feasible")
    r_opt = min(r for _, r, _ in table)
    cutoff = (1.0 + overhead) * r_opt
    k = max(i for i, (_, r, _) in enumerate(table) if r <= cutoff)
    return OracleCBS(table[k][0], r_opt, table, _interpolate_crossing(table, k, cutoff))


def _interpolate_crossing(table, k, cutoff) -> float:
    """Refine the grid answer by log-log interpolation towards the next grid point.

    Divisibility pins ``B`` to a coarse (often power-of-two) grid; the
    crossing of ``r(B) = cutoff`` between grid points gives a continuous
    estimate for exponent regressions.
    """
    b0, r0, _ = table[k]
    if k + 1 == len(table):
        return float(b0)
    b1, r1, _ = table[k + 1]
    if r1 <= r0:
        return float(b0)
    frac = math.log(cutoff / r0) / math.log(r1 / r0)
    return float(math.exp(math.log(b0) + frac * (math.log(b1) - math.log(b0))))


def fit_loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)


ORACLE_CSV_FIELDS = ["D", "B", "gamma", "kstar", "bias", "variance", "total", "bound"]


def oracle_row(problem, data_size, gamma, batch_size, moment_mode=MomentMode.EXACT) -> dict:
    rb = exact_excess_risk(problem, data_size, gamma, batch_size, moment_mode)
    return {
        "D": data_size,
        "B": batch_size,
        "gamma": gamma,
        "kstar": rb.kstar,
        "bias": rb.bias,
        "variance": rb.variance,
        "total": rb.total_excess,
        "bound": theorem2_bound(problem, data_size, gamma, batch_size),
    }


def write_oracle_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ORACLE_CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
