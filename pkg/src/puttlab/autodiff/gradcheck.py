"""Central-difference gradient checking."""

import numpy as np


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def max_relative_error(loss_fn, tensors, h=1e-6, max_coords=None, rng=None, skip=None):
    """Worst elementwise relative error between backprop and finite differences.

    ``loss_fn()`` must rebuild the graph from the current ``tensors`` data
    and return a scalar Tensor. With ``max_coords`` only that many randomly
    chosen coordinates per tensor are probed. ``skip(tensor_index, flat_index)``
    may exclude coordinates (kinks of non-smooth ops).
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for j in coords:
            if skip is not None and skip(ti, j):
                continue
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn().item()
            flat[j] = orig - h
            down = loss_fn().item()
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, float(relative_error(analytic[ti].reshape(-1)[j], numeric)))
    for t in tensors:
        t.grad = None
    return worst
