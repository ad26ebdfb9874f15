"""Pure-Python (numpy) versions of the hot loops.

Reference implementation for ``_kernels.pyx`` and the fallback used when the
extension is not built. Loops over time are explicit; work over the
dimension axis is vectorised.
"""
import numpy as np


def oracle_moments(lam, u_bias0, gamma, batch, n_steps, sigma2, paper_mode):
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    ub = np.array(u_bias0, dtype=np.float64)
    uv = np.zeros_like(lam)
    sum_b = np.zeros_like(lam)
    sum_v = np.zeros_like(lam)
    z_b = np.zeros_like(lam)
    z_v = np.zeros_like(lam)
    q = 1.0 - gamma * lam
    q2 = q * q
    if paper_mode:
        c_quad = 0.0
        c_trace = 2.0 * gamma * gamma / batch
    else:
        c_quad = gamma * gamma / batch
        c_trace = gamma * gamma / batch
    contract = q2 + c_quad * lam * lam
    src = gamma * gamma * sigma2 / batch * lam
    lam_trace = c_trace * lam
    min_entry = 0.0

    for t in range(n_steps):
        z_b = sum_b + q * z_b
        z_v = sum_v + q * z_v
        sum_b += ub
        sum_v += uv
        if t == n_steps - 1:
            break
        tb = lam @ ub
        tv = lam @ uv
        ub = contract * ub + lam_trace * tb
        uv = contract * uv + lam_trace * tv + src
        m = min(ub.min(), uv.min())
        if m < min_entry:
            min_entry = m

    norm = float(n_steps) * n_steps
    bias = float(lam @ (sum_b + 2.0 * q * z_b)) / norm
    var = float(lam @ (sum_v + 2.0 * q * z_v)) / norm
    return bias, var, float(min_entry)


def sgd_chunk(x, y, w, w_sum, gamma, batch, step0):
    n_batches = x.shape[0] // batch
    scale = gamma / batch
    # overflow is reported through the return value, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(n_batches):
            xb = x[s * batch:(s + 1) * batch]
            yb = y[s * batch:(s + 1) * batch]
            w_sum += w
            w -= scale * (xb.T @ (xb @ w - yb))
            if not np.isfinite(w).all():
                return step0 + s
    return -1
