"""Central finite-difference gradient checking."""

import numpy as np


def numerical_gradient(f, x, step=1e-5):
    """Central-difference gradient of scalar-valued ``f`` at ``x``.

    ``x`` is perturbed in place coordinate by coordinate and restored,
    so ``f`` may close over it.
    """
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    """Scale-relative max deviation between two gradient arrays."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)
