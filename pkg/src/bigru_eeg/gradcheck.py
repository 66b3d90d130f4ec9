"""Central finite differences, used as the independent oracle for gradients."""
from __future__ import annotations

import numpy as np


def numeric_grad(f, arrays, eps=1e-5):
    """Central-difference gradient of scalar ``f()`` w.r.t. each array in ``arrays``.

    The arrays are perturbed in place and restored; ``f`` must read them.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f())
            flat[i] = orig - eps
            down = float(f())
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric) -> float:
    """Norm-wise relative error ``|a - n| / max(|a| + |n|, tiny)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom < 1e-12:
        return float(np.linalg.norm(a - n))
    return float(np.linalg.norm(a - n) / denom)
