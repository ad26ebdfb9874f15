"""Toy tasks exposing ``loss`` and ``grad`` on a batch.

Each task owns a fixed validation sample drawn from ``val_seed``, which is
independent of the per-run training stream.
"""
from __future__ import annotations

import numpy as np

from ..problem import SpectralProblem, build_powerlaw_problem, make_rng, sample_batch

VAL_SEED = 2_718_281


class LeastSquaresTask:
    """Mean squared error on a :class:`SpectralProblem`, parameters in the eigenbasis."""

    name = "lsq"

    def __init__(self, problem: SpectralProblem, val_size: int = 10_000, val_seed: int = VAL_SEED):
        self.problem = problem
        val = sample_batch(problem, val_size, make_rng([val_seed, 1]))
        self.x_val, self.y_val = val.covariates, val.responses

    @classmethod
    def from_params(cls, d=64, a=2.0, b=3.0, sigma2=0.01, val_size=10_000, val_seed=VAL_SEED):
        return cls(build_powerlaw_problem(d, a, b, sigma2), val_size, val_seed)

    @property
    def n_params(self):
        return self.problem.dim

    def init_params(self, rng):
        return np.array(self.problem.init, dtype=np.float64)

    def sample(self, batch_size, rng):
        batch = sample_batch(self.problem, batch_size, rng)
        return batch.covariates, batch.responses

    def loss(self, params, x, y):
        r = x @ params - y
        return float(r @ r) / y.size

    def grad(self, params, x, y):
        return (2.0 / y.size) * (x.T @ (x @ params - y))

    def val_loss(self, params):
        return self.loss(params, self.x_val, self.y_val)

    def optimum_loss(self):
        """Validation loss of the population minimiser (the task's floor)."""
        return self.val_loss(self.problem.target)


class TeacherStudentTask:
    """Single hidden layer ``f(x) = sum_k a_k tanh(w_k . x)`` fitted to a fixed teacher."""

    name = "teacher-student"

    def __init__(self, d_in=16, width=8, teacher_width=4, noise=0.0,
                 val_size=10_000, val_seed=VAL_SEED):
        self.d_in = d_in
        self.width = width
        self.noise = noise
        trng = make_rng([val_seed, 2])
        self.w_teacher = trng.standard_normal((teacher_width, d_in)) / np.sqrt(d_in)
        self.a_teacher = trng.standard_normal(teacher_width) / np.sqrt(teacher_width)
        self.x_val, self.y_val = self._draw(val_size, make_rng([val_seed, 3]))

    @property
    def n_params(self):
        return self.width * self.d_in + self.width

    def _draw(self, n, rng):
        x = rng.standard_normal((n, self.d_in))
        y = np.tanh(x @ self.w_teacher.T) @ self.a_teacher
        if self.noise:
            y = y + self.noise * rng.standard_normal(n)
        return x, y

    def unpack(self, params):
        k = self.width * self.d_in
        return params[:k].reshape(self.width, self.d_in), params[k:]

    def init_params(self, rng):
        w = rng.standard_normal((self.width, self.d_in)) / np.sqrt(self.d_in)
        a = rng.standard_normal(self.width) / np.sqrt(self.width)
        return np.concatenate([w.ravel(), a])

    def sample(self, batch_size, rng):
        return self._draw(batch_size, rng)

    def forward(self, params, x):
        w, a = self.unpack(params)
        h = np.tanh(x @ w.T)
        return h @ a, h

    def loss(self, params, x, y):
        out, _ = self.forward(params, x)
        r = out - y
        return float(r @ r) / y.size

    def grad(self, params, x, y):
        w, a = self.unpack(params)
        out, h = self.forward(params, x)
        r = (2.0 / y.size) * (out - y)
        g_a = h.T @ r
        g_w = ((r[:, None] * (1.0 - h * h)) * a).T @ x
        return np.concatenate([g_w.ravel(), g_a])

    def val_loss(self, params):
        return self.loss(params, self.x_val, self.y_val)


def make_task(name, **params):
    if name in ("lsq", "least-squares"):
        return LeastSquaresTask.from_params(**params)
    if name in ("teacher-student", "mlp"):
        return TeacherStudentTask(**params)
    raise ValueError(f"unknown task {name!r}")
