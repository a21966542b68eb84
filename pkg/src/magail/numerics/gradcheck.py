from __future__ import annotations

import numpy as np

from .params import ParamStore


def finite_diff_grad(f, params: ParamStore, h: float = 1e-5, names=None) -> dict[str, np.ndarray]:
    """Central-difference gradient of the scalar ``f(params)`` for every coordinate.

    Parameters are perturbed in place and restored exactly afterwards.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    out = {}
    for name in names if names is not None else list(params):
        value = params[name]
        grad = np.zeros_like(value)
        flat, gflat = value.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(params))
            flat[i] = orig - h
            fm = float(f(params))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"f is non-finite near {name}[{i}]")
            gflat[i] = (fp - fm) / (2.0 * h)
        out[name] = grad
    return out


def relative_error(a, b, floor: float = 1e-8) -> float:
    """``|a - b| / max(|a|, |b|, floor)`` using Euclidean norms over all entries."""
    a = np.concatenate([np.ravel(x) for x in a]) if isinstance(a, (list, tuple)) else np.ravel(a)
    b = np.concatenate([np.ravel(x) for x in b]) if isinstance(b, (list, tuple)) else np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / max(na, nb, floor))
