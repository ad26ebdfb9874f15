import numpy as np
import pytest

from cbslab import kernels
from cbslab.problem import SpectralProblem, build_powerlaw_problem


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    monkeypatch.setattr(kernels, "BACKEND", request.param)
    return request.param


@pytest.fixture
def small_problem():
    return build_powerlaw_problem(8, 2.0, 3.0, 1.0)


def diag_problem(lam, target, sigma2=1.0, init=None):
    return SpectralProblem(np.asarray(lam, float), np.asarray(target, float), sigma2, init)
