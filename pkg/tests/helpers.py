"""Shared numerical oracles for the test suite.

Everything here is deliberately independent of the package internals:
naive nested loops and central finite differences only.
"""

import numpy as np


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max-abs difference over max-abs magnitude, guarded for zero tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Elementwise central finite differences of a scalar-valued f."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def naive_conv1d(x, weight, bias, stride=1, padding="same"):
    """Direct O(N*Cout*Cin*T*K) cross-correlation, zero padding for "same".

    Left pad is floor(total/2), mirroring the common framework convention.
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    n, cin, t = x.shape
    cout, _, k = weight.shape
    if padding == "same":
        t_out = -(-t // stride)
        total = max((t_out - 1) * stride + k - t, 0)
        left = total // 2
    else:
        t_out = (t - k) // stride + 1
        left = 0
    out = np.zeros((n, cout, t_out))
    for ni in range(n):
        for co in range(cout):
            for to in range(t_out):
                acc = bias[co]
                for ci in range(cin):
                    for kk in range(k):
                        src = to * stride + kk - left
                        if 0 <= src < t:
                            acc += x[ni, ci, src] * weight[co, ci, kk]
                out[ni, co, to] = acc
    return out
