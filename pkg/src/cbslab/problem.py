"""Power-law Gaussian least-squares problems.

Everything lives in the eigenbasis of the covariance, so ``H`` is the
diagonal matrix ``diag(eigenvalues)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml


def make_rng(seed) -> np.random.Generator:
    """PCG64 stream for ``seed``; Gaussians come from numpy's ziggurat sampler."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True, eq=False)
class SpectralProblem:
    """Gaussian linear regression ``x ~ N(0, diag(eigenvalues))``, ``y = x.w* + noise``.

    Arrays are copied and marked read-only so instances can be shared
    between concurrent runs.
    """

    eigenvalues: np.ndarray
    target: np.ndarray
    noise_variance: float
    init: np.ndarray | None = None
    capacity_exponent: float | None = None
    source_exponent: float | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=np.float64)
        target = np.array(self.target, dtype=np.float64)
        init = np.zeros_like(lam) if self.init is None else np.array(self.init, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("eigenvalues must be a nonempty vector")
        if target.shape != lam.shape or init.shape != lam.shape:
            raise ValueError("eigenvalues, target and init must have the same length")
        if not np.all(lam > 0):
            raise ValueError("eigenvalues must be strictly positive")
        if np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be nonincreasing")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be nonnegative")
        for arr in (lam, target, init):
            arr.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def trace(self) -> float:
        return float(self.eigenvalues.sum())

    @property
    def init_error(self) -> np.ndarray:
        """``w0 - w*``."""
        return self.init - self.target

    def with_init(self, init) -> SpectralProblem:
        return SpectralProblem(
            self.eigenvalues, self.target, self.noise_variance, init,
            self.capacity_exponent, self.source_exponent, self.seed, dict(self.meta),
        )

    def to_config(self) -> dict:
        if self.capacity_exponent is None or self.source_exponent is None:
            raise ValueError("only power-law problems serialise to a config")
        return {
            "d": self.dim,
            "a": self.capacity_exponent,
            "b": self.source_exponent,
            "sigma2": self.noise_variance,
            "seed": self.seed,
        }

    def spec_hash(self) -> str:
        """Stable digest of the problem definition."""
        h = hashlib.sha256()
        for arr in (self.eigenvalues, self.target, self.init):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(self.noise_variance).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class Batch:
    covariates: np.ndarray
    responses: np.ndarray

    @property
    def size(self) -> int:
        return self.responses.size


def build_powerlaw_problem(d: int, a: float, b: float, sigma2: float, seed: int | None = None) -> SpectralProblem:
    """``lambda_i = i**-a`` and ``w*_i = i**((a - b) / 2)`` so that ``lambda_i w*_i**2 = i**-b``."""
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    if a <= 1:
        raise ValueError(f"capacity exponent must exceed 1, got {a}")
    if b <= 1:
        raise ValueError(f"source exponent must exceed 1, got {b}")
    i = np.arange(1, int(d) + 1, dtype=np.float64)
    lam = i ** (-float(a))
    target = i ** ((float(a) - float(b)) / 2.0)
    return SpectralProblem(lam, target, sigma2, None, float(a), float(b), seed)


def sample_batch(problem: SpectralProblem, batch_size: int, rng: np.random.Generator) -> Batch:
    """Draw ``batch_size`` i.i.d. pairs.

    Stream order: the ``batch_size x d`` standard normals for the covariates
    (row major) first, then ``batch_size`` standard normals for the noise.
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    z = rng.standard_normal((batch_size, problem.dim))
    x = z * np.sqrt(problem.eigenvalues)
    noise = rng.standard_normal(batch_size)
    y = x @ problem.target + np.sqrt(problem.noise_variance) * noise
    return Batch(x, y)


def population_risk(problem: SpectralProblem, w) -> float:
    """``E (x.w - y)^2 = sum_i lambda_i (w_i - w*_i)^2 + sigma^2``."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != problem.target.shape:
        raise ValueError(f"expected a vector of length {problem.dim}, got shape {w.shape}")
    diff = w - problem.target
    return float(problem.eigenvalues @ (diff * diff)) + problem.noise_variance


def excess_risk(problem: SpectralProblem, w) -> float:
    return population_risk(problem, w) - problem.noise_variance


def load_problem_config(path) -> SpectralProblem:
    """Read ``d, a, b, sigma2, seed`` from a YAML or JSON file."""
    text = Path(path).read_text()
    cfg = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    return problem_from_config(cfg)


def problem_from_config(cfg: dict) -> SpectralProblem:
    missing = {"d", "a", "b", "sigma2"} - set(cfg)
    if missing:
        raise ValueError(f"problem config missing keys: {sorted(missing)}")
    return build_powerlaw_problem(int(cfg["d"]), float(cfg["a"]), float(cfg["b"]),
                                  float(cfg["sigma2"]), cfg.get("seed"))


def save_problem_config(problem: SpectralProblem, path) -> None:
    cfg = problem.to_config()
    text = json.dumps(cfg, indent=2) if str(path).endswith(".json") else yaml.safe_dump(cfg, sort_keys=True)
    Path(path).write_text(text)
