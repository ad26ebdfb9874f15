"""Step-law fitting, critical batch size, and CBS scaling laws.

Steps to target follow ``Y(B) = a + b / B**alpha``; fits minimise squared
residuals of ``log Y``. The critical batch size ``B*`` is where the data
consumed, ``Y(B) * B``, exceeds the linear-scaling prediction from
``B_opt`` by a factor ``1 + rho``.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

CHINCHILLA_RATIO = 20.34
CONTEXT_LENGTH = 512
CLAMP_FLOOR = 1e-12
MAX_ITER = 500
REL_TOL = 1e-10
BRACKET_MAX = 1e9


class AlphaMode(str, enum.Enum):
    FIXED_ONE = "fixed-one"
    FREE = "free"


class ScaleKind(str, enum.Enum):
    MODEL = "model-size-millions"
    TOKENS = "tokens"


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class StepObservation:
    batch_size: int
    steps: float
    n_millions: float | None = None
    d_tokens: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not self.steps > 0:
            raise ValueError("steps must be positive")


@dataclass
class StepLawFit:
    a: float
    b: float
    alpha: float
    alpha_mode: AlphaMode
    rss: float
    converged: bool = True
    iterations: int = 0
    warnings: list = field(default_factory=list)

    def steps(self, batch_size):
        return self.a + self.b / np.asarray(batch_size, dtype=float) ** self.alpha


@dataclass
class CBSLawFit:
    constant: float
    coefficient: float
    exponent: float
    scale_kind: ScaleKind = ScaleKind.MODEL
    rss: float = 0.0
    converged: bool = True
    iterations: int = 0


def _gauss_newton(residual, jacobian, p0, free, positive=None):
    """Damped Gauss-Newton.

    Steps are solved in relative units (Jacobian columns scaled by the
    parameter) and halved until the objective does not increase. Entries
    of ``p`` listed in ``free`` are optimised; those flagged in ``positive``
    (default: all) are clamped at ``CLAMP_FLOOR``.
    Returns ``(p, rss, converged, iterations, notes)``.
    """
    p = np.array(p0, dtype=float)
    free = np.asarray(free)
    positive = np.ones(p.size, bool) if positive is None else np.asarray(positive, bool)
    notes = []
    low = positive & (p < CLAMP_FLOOR)
    if low.any():
        p[low] = CLAMP_FLOOR
        notes.append(f"initial guess clamped to {CLAMP_FLOOR}")
    r = residual(p)
    rss = float(r @ r)
    for it in range(1, MAX_ITER + 1):
        # parameters pinned at the floor and pushed further down leave the active set
        active = free.copy()
        while True:
            scale = np.where(np.abs(p[active]) > CLAMP_FLOOR, np.abs(p[active]), 1.0)
            jac = jacobian(p)[:, active] * scale
            delta, *_ = np.linalg.lstsq(jac, -r, rcond=None)
            delta *= scale
            pinned = positive[active] & (p[active] <= CLAMP_FLOOR) & (delta < 0)
            if not pinned.any() or pinned.all():
                break
            active = active[~pinned]
        step = 1.0
        while True:
            trial = p.copy()
            trial[active] += step * delta
            clamped = positive & (trial < CLAMP_FLOOR)
            trial[clamped] = CLAMP_FLOOR
            r_trial = residual(trial)
            rss_trial = float(r_trial @ r_trial)
            if np.isfinite(rss_trial) and rss_trial <= rss:
                break
            step *= 0.5
            if step < 1e-12:
                return p, rss, True, it, notes
        if clamped.any():
            notes.append(f"iteration {it}: clamped negative parameter to {CLAMP_FLOOR}")
        change = np.max(np.abs(trial - p) / np.maximum(np.abs(p), CLAMP_FLOOR))
        p, r, rss = trial, r_trial, rss_trial
        if change < REL_TOL or rss == 0.0:
            return p, rss, True, it, notes
    return p, rss, False, MAX_ITER, notes


def fit_step_law(observations: Sequence[StepObservation], alpha_mode=AlphaMode.FIXED_ONE) -> StepLawFit:
    """Fit ``log Y = log(a + b / B**alpha)`` by damped Gauss-Newton."""
    mode = AlphaMode(alpha_mode)
    bs = np.array([o.batch_size for o in observations], dtype=float)
    ys = np.array([o.steps for o in observations], dtype=float)
    need = 4 if mode is AlphaMode.FREE else 3
    if np.unique(bs).size < need:
        raise FitError(f"need at least {need} distinct batch sizes for alpha_mode={mode.value}")
    log_y = np.log(ys)
    log_b = np.log(bs)

    def model(p):
        return p[0] + p[1] * np.exp(-p[2] * log_b)

    def residual(p):
        return log_y - np.log(model(p))

    def jacobian(p):
        m = model(p)
        pw = np.exp(-p[2] * log_b)
        return np.column_stack([-1.0 / m, -pw / m, p[1] * pw * log_b / m])

    lo, hi = np.argmin(bs), np.argmax(bs)
    a0 = ys[hi]
    b0 = (ys[lo] - a0) * bs[lo]
    p0 = [a0, b0, 1.0]
    free = [0, 1, 2] if mode is AlphaMode.FREE else [0, 1]
    p, rss, ok, its, notes = _gauss_newton(residual, jacobian, p0, free)
    for msg in notes[:1]:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if not ok:
        warnings.warn("step-law fit did not converge; returning best iterate", RuntimeWarning, stacklevel=2)
    return StepLawFit(float(p[0]), float(p[1]), float(p[2]), mode, rss, ok, its, notes)


def plain_rss(fit: StepLawFit, observations: Sequence[StepObservation]) -> float:
    """Residual sum of squares in raw step units (diagnostic only)."""
    bs = np.array([o.batch_size for o in observations], dtype=float)
    ys = np.array([o.steps for o in observations], dtype=float)
    r = ys - fit.steps(bs)
    return float(r @ r)


def critical_batch(fit: StepLawFit, b_opt: float, overhead: float = 0.2) -> float:
    """Solve ``(a + b/B**alpha) * B = (1 + rho) * (a + b/B_opt**alpha) * B_opt`` for ``B > B_opt``.

    ``alpha = 1`` has the closed form ``(1 + rho) B_opt + rho b / a``, which
    is cross-checked against the bracketed root.
    """
    if overhead <= 0:
        raise ValueError("overhead must be positive")
    if b_opt <= 0:
        raise ValueError("B_opt must be positive")
    a, b, alpha = fit.a, fit.b, fit.alpha
    budget = (1.0 + overhead) * (a * b_opt + b * b_opt ** (1.0 - alpha))

    def excess(bsz):
        return a * bsz + b * bsz ** (1.0 - alpha) - budget

    grid = np.geomspace(b_opt, BRACKET_MAX, 4000)
    vals = excess(grid)
    crossings = np.nonzero((vals[:-1] < 0) & (vals[1:] >= 0))[0]
    if crossings.size == 0:
        raise FitError(f"no critical batch size in [{b_opt}, {BRACKET_MAX:g}]")
    if crossings.size > 1:
        warnings.warn("several roots above B_opt; returning the smallest", RuntimeWarning, stacklevel=2)
    k = crossings[0]
    root = optimize.bisect(excess, grid[k], grid[k + 1], xtol=1e-300, rtol=REL_TOL, maxiter=500)
    if alpha == 1.0 and a > 0:
        closed = (1.0 + overhead) * b_opt + overhead * b / a
        if abs(root - closed) > 1e-8 * closed:
            raise AssertionError(f"closed form {closed} disagrees with bisection root {root}")
        return closed
    return float(root)


def _scale_arrays(observations):
    scale = np.array([s for s, _ in observations], dtype=float)
    bstar = np.array([v for _, v in observations], dtype=float)
    if np.any(bstar <= 0):
        raise FitError("critical batch sizes must be positive")
    if np.any(scale <= 0):
        raise FitError("scales must be positive")
    return scale, bstar


def fit_cbs_law(observations, fix_constant: bool = True, scale_kind=ScaleKind.MODEL) -> CBSLawFit:
    """Fit ``log B* = log(c + coefficient * scale**exponent)``; ``c = 0`` when ``fix_constant``."""
    scale, bstar = _scale_arrays(observations)
    need = 2 if fix_constant else 3
    if len(scale) < need:
        raise FitError(f"need at least {need} observations")
    if np.unique(scale).size < 2:
        raise FitError("scales are all identical")
    x, y = np.log(scale), np.log(bstar)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + slope * x)
    if fix_constant:
        return CBSLawFit(0.0, float(np.exp(intercept)), float(slope), ScaleKind(scale_kind),
                         float(resid @ resid))

    def model(p):
        return p[0] + p[1] * np.exp(p[2] * x)

    def residual(p):
        return y - np.log(model(p))

    def jacobian(p):
        m = model(p)
        pw = np.exp(p[2] * x)
        return np.column_stack([-1.0 / m, -pw / m, -p[1] * pw * x / m])

    p0 = [CLAMP_FLOOR, float(np.exp(intercept)), float(slope)]
    p, rss, ok, its, _ = _gauss_newton(residual, jacobian, p0, [0, 1, 2], [True, True, False])
    return CBSLawFit(float(p[0]), float(p[1]), float(p[2]), ScaleKind(scale_kind), rss, ok, its)


def forecast(fit: CBSLawFit, scale) -> float:
    if np.any(np.asarray(scale) <= 0):
        raise ValueError("scale must be positive")
    return fit.constant + fit.coefficient * np.asarray(scale, dtype=float) ** fit.exponent


def chinchilla_steps(n_params, batch_size, ctx_len=CONTEXT_LENGTH, ratio=CHINCHILLA_RATIO) -> int:
    """Steps covering ``ratio * N`` tokens at ``batch_size`` sequences of ``ctx_len`` tokens."""
    if min(n_params, batch_size, ctx_len, ratio) <= 0:
        raise ValueError("all arguments must be positive")
    return int(math.floor(ratio * n_params / (ctx_len * batch_size) + 0.5))


def relative_steps(observations: Sequence[StepObservation], reference_batch: int):
    """``(B, Y / Y_ref)`` pairs sorted by batch size."""
    ref = [o.steps for o in observations if o.batch_size == reference_batch]
    if not ref:
        raise KeyError(f"reference batch size {reference_batch} not among the observations")
    y_ref = ref[0]
    return sorted((o.batch_size, o.steps / y_ref) for o in observations)
