"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``CBSLAB_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKENDS = {"python": _kernels_py}

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    BACKENDS["compiled"] = _compiled

if _compiled is not None and os.environ.get("CBSLAB_PURE_PYTHON") != "1":
    BACKEND = "compiled"
else:
    BACKEND = "python"


def get_backend(name=None):
    """Return the kernel module ``name`` (default: the active backend)."""
    name = BACKEND if name is None else name
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}"
        ) from None


def oracle_moments(lam, u_bias0, gamma, batch, n_steps, sigma2, paper_mode):
    return BACKENDS[BACKEND].oracle_moments(
        lam, u_bias0, float(gamma), int(batch), int(n_steps), float(sigma2), bool(paper_mode)
    )


def sgd_chunk(x, y, w, w_sum, gamma, batch, step0):
    return BACKENDS[BACKEND].sgd_chunk(x, y, w, w_sum, float(gamma), int(batch), int(step0))
