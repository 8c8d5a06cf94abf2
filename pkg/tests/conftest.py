import numpy as np


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at x (any array shape)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        hi = f(x)
        xf[i] = orig - h
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def relative_gradient_error(analytic, numeric, floor=1e-8):
    """Worst per-coordinate relative error, ignoring coordinates that are ~0 in both."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    err = np.abs(analytic - numeric) / denom
    both_tiny = (np.abs(analytic) < 1e-10) & (np.abs(numeric) < 1e-10)
    err[both_tiny] = 0.0
    return float(err.max()) if err.size else 0.0
